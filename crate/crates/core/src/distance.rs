//! Visual similarity and distance between synset representatives.
//!
//! For representatives `a` and `b`, let `C(i,j)` count features with value `i`
//! in `a` and `j` in `b`. The similarity is
//!
//! ```text
//! sim = C(1,1) / (C(1,-1) + C(1,0) + C(1,1) + C(0,1) + C(-1,1))
//! ```
//!
//! and the distance is `1 - sim`. The denominator counts every feature that is
//! +1 on at least one side, so `sim` equals the Jaccard index of the two
//! presence sets. The pairwise matrix is computed that way, with popcounts
//! over 64-bit words; [`pair_counts`] keeps the per-feature ternary route for
//! diagnostics and cross-checking. When both presence sets are empty the
//! similarity is taken as 1.
//!
//! `VDMAT1` layout (little-endian):
//!
//! ```text
//! 6 bytes  magic "VDMAT1"
//! u32      S
//! S times: u16 id length + UTF-8 id
//! u16      metric name length + UTF-8 name
//! u32      parameter blob length + UTF-8 "key=value\n" lines
//! S(S-1)/2 f32 condensed upper triangle, row-major
//! ```

use std::collections::BTreeMap;
use std::io::{self, Write};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::binio::{read_all, ByteReader};
use crate::representative::{PresenceBitset, SynsetRepresentative};
use crate::ternary::Ternary;

pub const MATRIX_MAGIC: &[u8; 6] = b"VDMAT1";
pub const VISUAL_METRIC: &str = "visual_distance";

#[derive(Debug, Error)]
pub enum DistanceError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("dimension mismatch: {left} vs {right} features")]
    DimensionMismatch { left: usize, right: usize },
    #[error("need at least 2 synsets, got {0}")]
    TooFewSynsets(usize),
    #[error("synset ids must be strictly increasing: {prev:?} then {next:?}")]
    UnsortedIds { prev: String, next: String },
    #[error("condensed buffer has {actual} values, expected {expected}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("distance {value} at condensed index {index} is outside [0, 1]")]
    ValueOutOfRange { index: usize, value: f32 },
    #[error("bad magic: expected \"VDMAT1\"")]
    BadMagic,
    #[error("truncated matrix file at byte {offset}")]
    Truncated { offset: usize },
    #[error("{0} unexpected bytes after payload")]
    TrailingBytes(usize),
    #[error("corrupt matrix file: {0}")]
    Corrupt(String),
    #[error("could not build thread pool: {0}")]
    ThreadPool(String),
}

/// Counts of feature-value pairs in which at least one side is +1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct PairCounts {
    pub c_1_1: u32,
    pub c_1_0: u32,
    pub c_1_m1: u32,
    pub c_0_1: u32,
    pub c_m1_1: u32,
}

impl PairCounts {
    /// Sum of all five counts: features that are +1 on either side.
    pub fn total(&self) -> u32 {
        self.c_1_m1 + self.c_1_0 + self.c_1_1 + self.c_0_1 + self.c_m1_1
    }

    pub fn similarity(&self) -> f64 {
        ratio_similarity(self.c_1_1, self.total())
    }

    pub fn distance(&self) -> f64 {
        1.0 - self.similarity()
    }
}

#[inline]
fn ratio_similarity(shared: u32, either: u32) -> f64 {
    if either == 0 {
        1.0
    } else {
        shared as f64 / either as f64
    }
}

fn check_dims(a: &SynsetRepresentative, b: &SynsetRepresentative) -> Result<(), DistanceError> {
    if a.n_features() != b.n_features() {
        return Err(DistanceError::DimensionMismatch {
            left: a.n_features(),
            right: b.n_features(),
        });
    }
    Ok(())
}

/// Per-feature count of value pairs involving +1, from the ternary vectors.
pub fn pair_counts(a: &SynsetRepresentative, b: &SynsetRepresentative) -> Result<PairCounts, DistanceError> {
    check_dims(a, b)?;
    let mut c = PairCounts::default();
    for (x, y) in a.ternary().iter().zip(b.ternary().iter()) {
        match (x, y) {
            (Ternary::Present, Ternary::Present) => c.c_1_1 += 1,
            (Ternary::Present, Ternary::Neutral) => c.c_1_0 += 1,
            (Ternary::Present, Ternary::Absent) => c.c_1_m1 += 1,
            (Ternary::Neutral, Ternary::Present) => c.c_0_1 += 1,
            (Ternary::Absent, Ternary::Present) => c.c_m1_1 += 1,
            _ => {}
        }
    }
    Ok(c)
}

#[inline(always)]
fn intersection_union_words(a: &[u64], b: &[u64]) -> (u32, u32) {
    let mut shared = 0u32;
    let mut either = 0u32;
    for (x, y) in a.iter().zip(b) {
        shared += (x & y).count_ones();
        either += (x | y).count_ones();
    }
    (shared, either)
}

#[inline(always)]
fn fill_row_portable(reps: &[SynsetRepresentative], i: usize, out: &mut [f32]) {
    let a = reps[i].presence().words();
    for (slot, b) in out.iter_mut().zip(&reps[i + 1..]) {
        let (shared, either) = intersection_union_words(a, b.presence().words());
        *slot = (1.0 - ratio_similarity(shared, either)) as f32;
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "popcnt")]
unsafe fn fill_row_popcnt(reps: &[SynsetRepresentative], i: usize, out: &mut [f32]) {
    fill_row_portable(reps, i, out)
}

fn fill_row(reps: &[SynsetRepresentative], i: usize, out: &mut [f32]) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("popcnt") {
            // SAFETY: the CPU supports popcnt, checked just above.
            unsafe { fill_row_popcnt(reps, i, out) };
            return;
        }
    }
    fill_row_portable(reps, i, out)
}

/// Jaccard similarity of two presence sets; 1 when both are empty.
pub fn presence_similarity(a: &PresenceBitset, b: &PresenceBitset) -> f64 {
    let (shared, either) = intersection_union_words(a.words(), b.words());
    ratio_similarity(shared, either)
}

pub(crate) fn visual_similarity_unchecked(a: &PresenceBitset, b: &PresenceBitset) -> f64 {
    presence_similarity(a, b)
}

pub fn visual_similarity(a: &SynsetRepresentative, b: &SynsetRepresentative) -> Result<f64, DistanceError> {
    check_dims(a, b)?;
    Ok(presence_similarity(a.presence(), b.presence()))
}

pub fn visual_distance(a: &SynsetRepresentative, b: &SynsetRepresentative) -> Result<f64, DistanceError> {
    Ok(1.0 - visual_similarity(a, b)?)
}

/// Position of pair `(i, j)`, `i < j`, in condensed storage over `s` items.
#[inline]
pub fn condensed_index(s: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < s);
    i * s - i * (i + 1) / 2 + (j - i - 1)
}

/// Symmetric zero-diagonal matrix over sorted synset ids, stored as the
/// condensed upper triangle.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    synset_ids: Vec<String>,
    condensed: Vec<f32>,
    metric_name: String,
    parameters: BTreeMap<String, String>,
}

impl DistanceMatrix {
    pub fn new(
        synset_ids: Vec<String>,
        condensed: Vec<f32>,
        metric_name: impl Into<String>,
        parameters: BTreeMap<String, String>,
    ) -> Result<Self, DistanceError> {
        let s = synset_ids.len();
        if s < 2 {
            return Err(DistanceError::TooFewSynsets(s));
        }
        check_sorted(&synset_ids)?;
        let expected = s * (s - 1) / 2;
        if condensed.len() != expected {
            return Err(DistanceError::ShapeMismatch {
                expected,
                actual: condensed.len(),
            });
        }
        if let Some(index) = condensed.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(DistanceError::ValueOutOfRange {
                index,
                value: condensed[index],
            });
        }
        Ok(DistanceMatrix {
            synset_ids,
            condensed,
            metric_name: metric_name.into(),
            parameters,
        })
    }

    pub fn len(&self) -> usize {
        self.synset_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.synset_ids.is_empty()
    }

    pub fn synset_ids(&self) -> &[String] {
        &self.synset_ids
    }

    pub fn condensed(&self) -> &[f32] {
        &self.condensed
    }

    pub fn metric_name(&self) -> &str {
        &self.metric_name
    }

    pub fn parameters(&self) -> &BTreeMap<String, String> {
        &self.parameters
    }

    pub fn parameters_mut(&mut self) -> &mut BTreeMap<String, String> {
        &mut self.parameters
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.synset_ids.binary_search_by(|x| x.as_str().cmp(id)).ok()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f32 {
        match i.cmp(&j) {
            std::cmp::Ordering::Equal => 0.0,
            std::cmp::Ordering::Less => self.condensed[condensed_index(self.len(), i, j)],
            std::cmp::Ordering::Greater => self.condensed[condensed_index(self.len(), j, i)],
        }
    }

    /// Dense row-major `S x S` copy in double precision.
    pub fn to_dense(&self) -> Vec<f64> {
        let s = self.len();
        let mut full = vec![0f64; s * s];
        for i in 0..s {
            for j in i + 1..s {
                let v = self.condensed[condensed_index(s, i, j)] as f64;
                full[i * s + j] = v;
                full[j * s + i] = v;
            }
        }
        full
    }

    /// The submatrix over `ids`, which must be sorted and present here.
    pub fn subset(&self, ids: &[String]) -> Result<DistanceMatrix, DistanceError> {
        check_sorted(ids)?;
        let pos: Vec<usize> = ids
            .iter()
            .map(|id| {
                self.position(id)
                    .ok_or_else(|| DistanceError::Corrupt(format!("synset {id:?} not in matrix")))
            })
            .collect::<Result<_, _>>()?;
        let mut condensed = Vec::with_capacity(ids.len() * ids.len().saturating_sub(1) / 2);
        for (p, &i) in pos.iter().enumerate() {
            for &j in &pos[p + 1..] {
                condensed.push(self.get(i, j));
            }
        }
        DistanceMatrix::new(
            ids.to_vec(),
            condensed,
            self.metric_name.clone(),
            self.parameters.clone(),
        )
    }
}

pub(crate) fn check_sorted(ids: &[String]) -> Result<(), DistanceError> {
    for w in ids.windows(2) {
        if w[0] >= w[1] {
            return Err(DistanceError::UnsortedIds {
                prev: w[0].clone(),
                next: w[1].clone(),
            });
        }
    }
    Ok(())
}

/// Pairwise visual distances on the current rayon pool.
///
/// Every condensed cell is written by exactly one task, so the output does not
/// depend on scheduling.
pub fn distance_matrix(reps: &[SynsetRepresentative]) -> Result<DistanceMatrix, DistanceError> {
    let s = reps.len();
    if s < 2 {
        return Err(DistanceError::TooFewSynsets(s));
    }
    let m = reps[0].n_features();
    if let Some(bad) = reps.iter().find(|r| r.n_features() != m) {
        return Err(DistanceError::DimensionMismatch {
            left: m,
            right: bad.n_features(),
        });
    }
    let ids: Vec<String> = reps.iter().map(|r| r.synset_id().to_owned()).collect();
    check_sorted(&ids)?;

    let mut condensed = vec![0f32; s * (s - 1) / 2];
    let mut rows: Vec<(usize, &mut [f32])> = Vec::with_capacity(s - 1);
    let mut rest = condensed.as_mut_slice();
    for i in 0..s - 1 {
        let (head, tail) = rest.split_at_mut(s - 1 - i);
        rows.push((i, head));
        rest = tail;
    }
    rows.into_par_iter().for_each(|(i, out)| fill_row(reps, i, out));

    let mut parameters = BTreeMap::new();
    parameters.insert("kernel".into(), "presence_jaccard_popcount".into());
    parameters.insert("empty_pair_similarity".into(), "1".into());
    parameters.insert("mode_tie_rule".into(), "neutral".into());
    parameters.insert("n_features".into(), m.to_string());
    DistanceMatrix::new(ids, condensed, VISUAL_METRIC, parameters)
}

/// Like [`distance_matrix`] but on a dedicated pool of `threads` workers.
pub fn distance_matrix_with_threads(
    reps: &[SynsetRepresentative],
    threads: usize,
) -> Result<DistanceMatrix, DistanceError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| DistanceError::ThreadPool(e.to_string()))?;
    pool.install(|| distance_matrix(reps))
}

fn push_str16(buf: &mut Vec<u8>, s: &str) -> Result<(), DistanceError> {
    let len: u16 = s
        .len()
        .try_into()
        .map_err(|_| DistanceError::Corrupt(format!("string too long for u16 prefix: {s:?}")))?;
    buf.extend_from_slice(&len.to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
    Ok(())
}

pub fn write_matrix<W: Write>(matrix: &DistanceMatrix, mut dest: W) -> Result<(), DistanceError> {
    let mut buf = Vec::with_capacity(64 + 4 * matrix.condensed.len());
    buf.extend_from_slice(MATRIX_MAGIC);
    buf.extend_from_slice(&(matrix.len() as u32).to_le_bytes());
    for id in &matrix.synset_ids {
        push_str16(&mut buf, id)?;
    }
    push_str16(&mut buf, &matrix.metric_name)?;
    let mut blob = String::new();
    for (k, v) in &matrix.parameters {
        if k.contains(['=', '\n']) || v.contains('\n') {
            return Err(DistanceError::Corrupt(format!("parameter {k:?} cannot be encoded")));
        }
        blob.push_str(k);
        blob.push('=');
        blob.push_str(v);
        blob.push('\n');
    }
    buf.extend_from_slice(&(blob.len() as u32).to_le_bytes());
    buf.extend_from_slice(blob.as_bytes());
    for v in &matrix.condensed {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    dest.write_all(&buf)?;
    dest.flush()?;
    Ok(())
}

pub fn read_matrix<R: io::Read>(source: R) -> Result<DistanceMatrix, DistanceError> {
    let bytes = read_all(source)?;
    let mut r = ByteReader::new(&bytes);
    let truncated = |t: crate::binio::Truncated| DistanceError::Truncated { offset: t.offset };
    if r.array::<6>().map_err(|_| DistanceError::BadMagic)? != *MATRIX_MAGIC {
        return Err(DistanceError::BadMagic);
    }
    let s = r.u32().map_err(truncated)? as usize;
    let read_str16 = |r: &mut ByteReader| -> Result<String, DistanceError> {
        let len = r.u16().map_err(truncated)? as usize;
        let raw = r.take(len).map_err(truncated)?;
        String::from_utf8(raw.to_vec()).map_err(|e| DistanceError::Corrupt(format!("non-UTF-8 string: {e}")))
    };
    let mut ids = Vec::with_capacity(s.min(1 << 20));
    for _ in 0..s {
        ids.push(read_str16(&mut r)?);
    }
    let metric_name = read_str16(&mut r)?;
    let blob_len = r.u32().map_err(truncated)? as usize;
    let blob = std::str::from_utf8(r.take(blob_len).map_err(truncated)?)
        .map_err(|e| DistanceError::Corrupt(format!("parameter blob is not UTF-8: {e}")))?;
    let mut parameters = BTreeMap::new();
    for line in blob.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| DistanceError::Corrupt(format!("parameter line without '=': {line:?}")))?;
        parameters.insert(k.to_owned(), v.to_owned());
    }
    let n = s.saturating_mul(s.saturating_sub(1)) / 2;
    let payload = r.take(n.saturating_mul(4)).map_err(truncated)?;
    if r.remaining() > 0 {
        return Err(DistanceError::TrailingBytes(r.remaining()));
    }
    let condensed = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    DistanceMatrix::new(ids, condensed, metric_name, parameters)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ternary::TernaryVector;
    use proptest::prelude::*;

    fn rep(id: &str, vals: &[i8]) -> SynsetRepresentative {
        SynsetRepresentative::new(id, TernaryVector::from_values(vals).unwrap(), 1)
    }

    #[test]
    fn worked_example() {
        let a = rep("a", &[1, 1, 0, -1]);
        let b = rep("b", &[1, -1, 1, 0]);
        let c = pair_counts(&a, &b).unwrap();
        assert_eq!(
            c,
            PairCounts {
                c_1_1: 1,
                c_1_0: 0,
                c_1_m1: 1,
                c_0_1: 1,
                c_m1_1: 0
            }
        );
        assert_eq!(visual_similarity(&a, &b).unwrap(), 1.0 / 3.0);
        assert_eq!(visual_distance(&a, &b).unwrap(), 1.0 - 1.0 / 3.0);
    }

    #[test]
    fn identity_and_extremes() {
        let a = rep("a", &[1, 0, 1, -1, 1]);
        let c = pair_counts(&a, &a).unwrap();
        assert_eq!((c.c_1_1, c.total()), (3, 3));
        assert_eq!(visual_distance(&a, &a).unwrap(), 0.0);

        let neg = rep("n", &[-1; 8]);
        let pos = rep("p", &[1; 8]);
        let c = pair_counts(&neg, &pos).unwrap();
        assert_eq!(
            c,
            PairCounts {
                c_m1_1: 8,
                ..Default::default()
            }
        );
        assert_eq!(visual_similarity(&neg, &pos).unwrap(), 0.0);
        assert_eq!(visual_distance(&neg, &pos).unwrap(), 1.0);
    }

    #[test]
    fn empty_presence_sets() {
        let a = rep("a", &[0, -1, 0]);
        let b = rep("b", &[-1, 0, 0]);
        assert_eq!(visual_similarity(&a, &b).unwrap(), 1.0);
        assert_eq!(visual_distance(&a, &b).unwrap(), 0.0);
        let c = rep("c", &[0, 0, 1]);
        assert_eq!(visual_distance(&a, &c).unwrap(), 1.0);
    }

    #[test]
    fn dimension_mismatch() {
        let a = rep("a", &[1, 0]);
        let b = rep("b", &[1, 0, 0]);
        assert!(matches!(
            visual_distance(&a, &b),
            Err(DistanceError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            pair_counts(&a, &b),
            Err(DistanceError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            distance_matrix(&[a, b]),
            Err(DistanceError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn small_matrices() {
        let d = distance_matrix(&[rep("a", &[1, 0, 1]), rep("b", &[1, 0, 1])]).unwrap();
        assert_eq!(d.condensed(), &[0.0]);
        let d = distance_matrix(&[rep("a", &[1, 0, 0]), rep("b", &[0, 1, 0]), rep("c", &[0, 0, 1])]).unwrap();
        assert_eq!(d.condensed(), &[1.0, 1.0, 1.0]);
        assert!(matches!(
            distance_matrix(&[rep("a", &[1])]),
            Err(DistanceError::TooFewSynsets(1))
        ));
        assert!(matches!(
            distance_matrix(&[rep("b", &[1]), rep("a", &[1])]),
            Err(DistanceError::UnsortedIds { .. })
        ));
    }

    #[test]
    fn condensed_layout() {
        let s = 5;
        let mut k = 0;
        for i in 0..s {
            for j in i + 1..s {
                assert_eq!(condensed_index(s, i, j), k);
                k += 1;
            }
        }
    }

    #[test]
    fn matrix_file_round_trip() {
        let reps = [rep("n1", &[1, 1, 0]), rep("n2", &[1, 0, 1]), rep("n3", &[0, 0, 1])];
        let d = distance_matrix(&reps).unwrap();
        let mut buf = Vec::new();
        write_matrix(&d, &mut buf).unwrap();
        let back = read_matrix(buf.as_slice()).unwrap();
        assert_eq!(back, d);
        let mut again = Vec::new();
        write_matrix(&back, &mut again).unwrap();
        assert_eq!(again, buf);
        assert!(matches!(
            read_matrix(&buf[..buf.len() - 2]),
            Err(DistanceError::Truncated { .. })
        ));
        let mut extra = buf.clone();
        extra.push(0);
        assert!(matches!(
            read_matrix(extra.as_slice()),
            Err(DistanceError::TrailingBytes(1))
        ));
    }

    #[test]
    fn subset_keeps_pair_values() {
        let ids: Vec<String> = ["a", "b", "c", "d"].map(String::from).to_vec();
        let d = DistanceMatrix::new(ids, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6], "x", BTreeMap::new()).unwrap();
        let sub = d.subset(&["a".into(), "c".into(), "d".into()]).unwrap();
        assert_eq!(sub.condensed(), &[0.2, 0.3, 0.6]);
        assert!(d.subset(&["c".into(), "a".into()]).is_err());
        assert!(d.subset(&["a".into(), "z".into()]).is_err());
    }

    #[test]
    fn rejects_out_of_range_values() {
        let ids = vec!["a".to_owned(), "b".to_owned()];
        assert!(DistanceMatrix::new(ids.clone(), vec![1.5], "x", BTreeMap::new()).is_err());
        assert!(DistanceMatrix::new(ids.clone(), vec![f32::NAN], "x", BTreeMap::new()).is_err());
        assert!(DistanceMatrix::new(ids, vec![0.5], "x", BTreeMap::new()).is_ok());
    }

    fn ternary_vec(m: usize) -> impl Strategy<Value = Vec<i8>> {
        prop::collection::vec(-1i8..=1, m)
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(a in ternary_vec(70), b in ternary_vec(70)) {
            let (ra, rb) = (rep("a", &a), rep("b", &b));
            let ab = visual_distance(&ra, &rb).unwrap();
            prop_assert_eq!(ab, visual_distance(&rb, &ra).unwrap());
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(ab, pair_counts(&ra, &rb).unwrap().distance());
        }

        #[test]
        fn absent_entries_do_not_matter(a in ternary_vec(40), b in ternary_vec(40)) {
            let flatten = |v: &[i8]| v.iter().map(|&x| if x == -1 { 0 } else { x }).collect::<Vec<_>>();
            let d = visual_distance(&rep("a", &a), &rep("b", &b)).unwrap();
            let d0 = visual_distance(&rep("a", &flatten(&a)), &rep("b", &b)).unwrap();
            prop_assert_eq!(d, d0);
        }

        #[test]
        fn counts_partition_presence(a in ternary_vec(33), b in ternary_vec(33)) {
            let (ra, rb) = (rep("a", &a), rep("b", &b));
            let c = pair_counts(&ra, &rb).unwrap();
            prop_assert_eq!(c.c_1_1 + c.c_1_0 + c.c_1_m1, ra.presence().count());
            prop_assert_eq!(c.c_1_1 + c.c_0_1 + c.c_m1_1, rb.presence().count());
        }
    }
}
