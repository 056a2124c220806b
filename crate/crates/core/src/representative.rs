//! Per-synset representatives: the per-feature mode over a synset's ternary
//! image rows, together with the bitset of its characteristic-by-presence
//! features.
//!
//! Ties in the mode (two-way or three-way) resolve to 0.
//!
//! `FNEREP1` layout (little-endian):
//!
//! ```text
//! 7 bytes  magic "FNEREP1"
//! u32      synset_count
//! u32      n_features
//! repeated synset_count times:
//!   u16    id length, then UTF-8 id bytes
//!   u32    n_source_samples
//!   ceil(n_features/4) bytes of packed ternary codes
//! ```
//!
//! Presence bitsets are derived on load and never stored.

use std::collections::BTreeMap;
use std::io::{self, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::binio::{read_all, ByteReader};
use crate::fne::TernaryMatrix;
use crate::ternary::{self, packed_len, Ternary, TernaryVector};

pub const REP_MAGIC: &[u8; 7] = b"FNEREP1";

#[derive(Debug, Error)]
pub enum RepresentativeError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("synset {0:?} has no samples")]
    EmptySynset(String),
    #[error("synset {synset:?}: sample index {index} out of range for {n_samples} rows")]
    IndexOutOfRange {
        synset: String,
        index: usize,
        n_samples: usize,
    },
    #[error("bad magic: expected \"FNEREP1\"")]
    BadMagic,
    #[error("truncated representative file at byte {offset}")]
    Truncated { offset: usize },
    #[error("{0} unexpected bytes after payload")]
    TrailingBytes(usize),
    #[error("representative {index}: {reason}")]
    Corrupt { index: usize, reason: String },
    #[error("synset ids must be strictly increasing: {prev:?} then {next:?}")]
    UnsortedIds { prev: String, next: String },
    #[error("synset id {0:?} does not fit a u16 length prefix")]
    IdTooLong(String),
}

/// Set of features whose ternary value is +1, one bit per feature in 64-bit words.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PresenceBitset {
    n_features: usize,
    words: Vec<u64>,
}

impl PresenceBitset {
    pub fn from_indices(n_features: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut words = vec![0u64; n_features.div_ceil(64)];
        for j in indices {
            assert!(j < n_features);
            words[j >> 6] |= 1 << (j & 63);
        }
        PresenceBitset { n_features, words }
    }

    pub(crate) fn from_packed(n_features: usize, packed: &[u8]) -> Self {
        let mut words = vec![0u64; n_features.div_ceil(64)];
        for j in 0..n_features {
            if ternary::get_code(packed, j) == 0b01 {
                words[j >> 6] |= 1 << (j & 63);
            }
        }
        PresenceBitset { n_features, words }
    }

    #[inline]
    pub fn n_features(&self) -> usize {
        self.n_features
    }

    #[inline]
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn contains(&self, j: usize) -> bool {
        j < self.n_features && self.words[j >> 6] >> (j & 63) & 1 == 1
    }

    pub fn count(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_features).filter(move |&j| self.contains(j))
    }
}

pub fn presence_set(v: &TernaryVector) -> PresenceBitset {
    PresenceBitset::from_packed(v.len(), v.packed())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynsetRepresentative {
    synset_id: String,
    ternary: TernaryVector,
    presence: PresenceBitset,
    n_source_samples: usize,
}

impl SynsetRepresentative {
    /// Builds a representative directly from a ternary vector.
    pub fn new(synset_id: impl Into<String>, ternary: TernaryVector, n_source_samples: usize) -> Self {
        assert!(n_source_samples >= 1, "a representative summarizes at least one sample");
        let presence = presence_set(&ternary);
        SynsetRepresentative {
            synset_id: synset_id.into(),
            ternary,
            presence,
            n_source_samples,
        }
    }

    pub fn synset_id(&self) -> &str {
        &self.synset_id
    }

    pub fn ternary(&self) -> &TernaryVector {
        &self.ternary
    }

    pub fn presence(&self) -> &PresenceBitset {
        &self.presence
    }

    pub fn n_source_samples(&self) -> usize {
        self.n_source_samples
    }

    pub fn n_features(&self) -> usize {
        self.ternary.len()
    }
}

/// Mode of one feature column given class counts in `[-1, 0, +1]` order.
#[inline]
fn mode_of(counts: [u32; 3]) -> Ternary {
    let [absent, neutral, present] = counts;
    if present > absent && present > neutral {
        Ternary::Present
    } else if absent > present && absent > neutral {
        Ternary::Absent
    } else {
        // neutral wins outright or some tie exists
        Ternary::Neutral
    }
}

pub fn compute_representative(
    rows: &TernaryMatrix,
    row_indices: &[usize],
    synset_id: &str,
) -> Result<SynsetRepresentative, RepresentativeError> {
    if row_indices.is_empty() {
        return Err(RepresentativeError::EmptySynset(synset_id.to_owned()));
    }
    if let Some(&index) = row_indices.iter().find(|&&i| i >= rows.n_samples()) {
        return Err(RepresentativeError::IndexOutOfRange {
            synset: synset_id.to_owned(),
            index,
            n_samples: rows.n_samples(),
        });
    }
    let m = rows.n_features();
    let mut counts = vec![[0u32; 3]; m];
    for &i in row_indices {
        let packed = rows.row_packed(i);
        for (j, c) in counts.iter_mut().enumerate() {
            c[ternary::get(packed, j).slot()] += 1;
        }
    }
    let mut out = TernaryVector::zeros(m);
    for (j, c) in counts.into_iter().enumerate() {
        let t = mode_of(c);
        if t != Ternary::Neutral {
            out.set(j, t);
        }
    }
    Ok(SynsetRepresentative::new(synset_id, out, row_indices.len()))
}

/// One representative per group, in synset-id order.
pub fn build_all_representatives(
    rows: &TernaryMatrix,
    groups: &BTreeMap<String, Vec<usize>>,
) -> Result<Vec<SynsetRepresentative>, RepresentativeError> {
    let groups: Vec<(&String, &Vec<usize>)> = groups.iter().collect();
    groups
        .into_par_iter()
        .map(|(id, idx)| compute_representative(rows, idx, id))
        .collect()
}

/// Agreement between the full-sample representative and bootstrap resamples.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BootstrapStability {
    pub synset_id: String,
    pub rounds: usize,
    /// Mean fraction of features whose mode is unchanged.
    pub mean_agreement: f64,
    pub min_agreement: f64,
    /// Mean Jaccard similarity between the presence sets.
    pub mean_presence_jaccard: f64,
}

/// Resamples a synset's rows with replacement `rounds` times and measures how
/// much the representative moves.
pub fn bootstrap_stability<R: Rng + ?Sized>(
    rows: &TernaryMatrix,
    row_indices: &[usize],
    synset_id: &str,
    rounds: usize,
    rng: &mut R,
) -> Result<BootstrapStability, RepresentativeError> {
    let full = compute_representative(rows, row_indices, synset_id)?;
    let m = full.n_features() as f64;
    let mut agreements = Vec::with_capacity(rounds);
    let mut jaccards = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let sample: Vec<usize> = (0..row_indices.len())
            .map(|_| row_indices[rng.random_range(0..row_indices.len())])
            .collect();
        let boot = compute_representative(rows, &sample, synset_id)?;
        let same = full
            .ternary
            .iter()
            .zip(boot.ternary.iter())
            .filter(|(a, b)| a == b)
            .count();
        agreements.push(same as f64 / m);
        jaccards.push(crate::distance::visual_similarity_unchecked(
            &full.presence,
            &boot.presence,
        ));
    }
    let mean = |v: &[f64]| {
        if v.is_empty() {
            1.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    Ok(BootstrapStability {
        synset_id: synset_id.to_owned(),
        rounds,
        mean_agreement: mean(&agreements),
        min_agreement: agreements.iter().copied().fold(1.0, f64::min),
        mean_presence_jaccard: mean(&jaccards),
    })
}

pub fn write_representatives<W: Write>(reps: &[SynsetRepresentative], mut dest: W) -> Result<(), RepresentativeError> {
    let n_features = reps.first().map_or(0, SynsetRepresentative::n_features);
    let mut buf = Vec::new();
    buf.extend_from_slice(REP_MAGIC);
    buf.extend_from_slice(&(reps.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(n_features as u32).to_le_bytes());
    for (index, r) in reps.iter().enumerate() {
        if r.n_features() != n_features {
            return Err(RepresentativeError::Corrupt {
                index,
                reason: format!("{} features, expected {n_features}", r.n_features()),
            });
        }
        let id = r.synset_id.as_bytes();
        let len: u16 = id
            .len()
            .try_into()
            .map_err(|_| RepresentativeError::IdTooLong(r.synset_id.clone()))?;
        buf.extend_from_slice(&len.to_le_bytes());
        buf.extend_from_slice(id);
        buf.extend_from_slice(&(r.n_source_samples as u32).to_le_bytes());
        buf.extend_from_slice(r.ternary.packed());
    }
    dest.write_all(&buf)?;
    dest.flush()?;
    Ok(())
}

pub fn read_representatives<R: io::Read>(source: R) -> Result<Vec<SynsetRepresentative>, RepresentativeError> {
    let bytes = read_all(source)?;
    let mut r = ByteReader::new(&bytes);
    let truncated = |t: crate::binio::Truncated| RepresentativeError::Truncated { offset: t.offset };
    if r.array::<7>().map_err(|_| RepresentativeError::BadMagic)? != *REP_MAGIC {
        return Err(RepresentativeError::BadMagic);
    }
    let count = r.u32().map_err(truncated)? as usize;
    let n_features = r.u32().map_err(truncated)? as usize;
    let w = packed_len(n_features);
    let mut reps: Vec<SynsetRepresentative> = Vec::with_capacity(count.min(1 << 20));
    for index in 0..count {
        let len = r.u16().map_err(truncated)? as usize;
        let id = std::str::from_utf8(r.take(len).map_err(truncated)?)
            .map_err(|e| RepresentativeError::Corrupt {
                index,
                reason: format!("id is not UTF-8: {e}"),
            })?
            .to_owned();
        if id.is_empty() {
            return Err(RepresentativeError::Corrupt {
                index,
                reason: "empty synset id".into(),
            });
        }
        let n_source_samples = r.u32().map_err(truncated)? as usize;
        if n_source_samples == 0 {
            return Err(RepresentativeError::Corrupt {
                index,
                reason: "zero source samples".into(),
            });
        }
        let codes = r.take(w).map_err(truncated)?.to_vec();
        let ternary = TernaryVector::from_packed(n_features, codes).ok_or_else(|| RepresentativeError::Corrupt {
            index,
            reason: "invalid ternary code".into(),
        })?;
        if let Some(prev) = reps.last() {
            if prev.synset_id >= id {
                return Err(RepresentativeError::UnsortedIds {
                    prev: prev.synset_id.clone(),
                    next: id,
                });
            }
        }
        reps.push(SynsetRepresentative::new(id, ternary, n_source_samples));
    }
    if r.remaining() > 0 {
        return Err(RepresentativeError::TrailingBytes(r.remaining()));
    }
    Ok(reps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fne::Thresholds;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn matrix(rows: &[&[i8]]) -> TernaryMatrix {
        let rows: Vec<_> = rows.iter().map(|r| TernaryVector::from_values(r).unwrap()).collect();
        TernaryMatrix::from_rows(&rows, Thresholds::default()).unwrap()
    }

    #[test]
    fn mode_of_single_row() {
        let m = matrix(&[&[1, -1, 0]]);
        let r = compute_representative(&m, &[0], "s").unwrap();
        assert_eq!(r.ternary().to_values(), vec![1, -1, 0]);
        assert_eq!(r.n_source_samples(), 1);
    }

    #[test]
    fn mode_majority_and_ties() {
        // columns: [1,1,-1] -> 1; [1,-1,0] -> tie -> 0; [1,1,0] -> 1; [-1,-1,1] -> -1
        let m = matrix(&[&[1, 1, 1, -1], &[1, -1, 1, -1], &[-1, 0, 0, 1]]);
        let r = compute_representative(&m, &[0, 1, 2], "s").unwrap();
        assert_eq!(r.ternary().to_values(), vec![1, 0, 1, -1]);
        // two-way ties
        let m = matrix(&[&[1, -1, 1], &[-1, 0, 0]]);
        let r = compute_representative(&m, &[0, 1], "s").unwrap();
        assert_eq!(r.ternary().to_values(), vec![0, 0, 0]);
    }

    #[test]
    fn errors() {
        let m = matrix(&[&[1, 0]]);
        assert!(matches!(
            compute_representative(&m, &[], "s"),
            Err(RepresentativeError::EmptySynset(_))
        ));
        assert!(matches!(
            compute_representative(&m, &[0, 1], "s"),
            Err(RepresentativeError::IndexOutOfRange { index: 1, .. })
        ));
    }

    #[test]
    fn presence_bits() {
        let v = TernaryVector::from_values(&[1, 0, -1, 1]).unwrap();
        let p = presence_set(&v);
        assert_eq!(p.iter().collect::<Vec<_>>(), vec![0, 3]);
        assert_eq!(p.count(), 2);
        assert_eq!(presence_set(&TernaryVector::zeros(130)).count(), 0);
    }

    #[test]
    fn presence_matches_naive_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let n = rng.random_range(1..300);
            let vals: Vec<i8> = (0..n).map(|_| rng.random_range(-1..=1)).collect();
            let p = presence_set(&TernaryVector::from_values(&vals).unwrap());
            let naive = vals.iter().filter(|&&v| v == 1).count() as u32;
            assert_eq!(p.count(), naive);
            for (j, &v) in vals.iter().enumerate() {
                assert_eq!(p.contains(j), v == 1);
            }
        }
    }

    #[test]
    fn build_all_sorted() {
        let m = matrix(&[&[1, 0], &[0, 1], &[1, 1]]);
        let mut groups = BTreeMap::new();
        groups.insert("b".to_owned(), vec![1]);
        groups.insert("a".to_owned(), vec![0, 2]);
        let reps = build_all_representatives(&m, &groups).unwrap();
        assert_eq!(reps.iter().map(|r| r.synset_id()).collect::<Vec<_>>(), vec!["a", "b"]);
        assert_eq!(reps[0].ternary().to_values(), vec![1, 0]);
        assert_eq!(reps[1].ternary().to_values(), vec![0, 1]);
    }

    #[test]
    fn file_round_trip() {
        let m = matrix(&[&[1, 0, -1, 1, 0], &[0, 1, -1, -1, 1]]);
        let reps = vec![
            compute_representative(&m, &[0], "n01").unwrap(),
            compute_representative(&m, &[0, 1], "n02").unwrap(),
        ];
        let mut buf = Vec::new();
        write_representatives(&reps, &mut buf).unwrap();
        assert_eq!(buf.len(), 15 + 2 * (2 + 3 + 4 + 2));
        assert_eq!(read_representatives(buf.as_slice()).unwrap(), reps);

        let swapped = vec![reps[1].clone(), reps[0].clone()];
        let mut buf2 = Vec::new();
        write_representatives(&swapped, &mut buf2).unwrap();
        assert!(matches!(
            read_representatives(buf2.as_slice()),
            Err(RepresentativeError::UnsortedIds { .. })
        ));
        assert!(matches!(
            read_representatives(&buf[..buf.len() - 1]),
            Err(RepresentativeError::Truncated { .. })
        ));
    }

    #[test]
    fn bootstrap_of_uniform_synset_is_perfect() {
        let m = matrix(&[&[1, 0, -1], &[1, 0, -1], &[1, 0, -1]]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = bootstrap_stability(&m, &[0, 1, 2], "s", 20, &mut rng).unwrap();
        assert_eq!(s.mean_agreement, 1.0);
        assert_eq!(s.min_agreement, 1.0);
        assert_eq!(s.mean_presence_jaccard, 1.0);
    }
}
