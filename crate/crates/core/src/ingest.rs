//! Raw activation matrices, sample manifests and layer layouts.
//!
//! `FNERAW1` layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       7     magic "FNERAW1"
//! 7       4     n_samples (u32)
//! 11      4     n_features (u32)
//! 15      4*N*M row-major f32 values
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use thiserror::Error;

use crate::binio::{read_all, ByteReader};

pub const RAW_MAGIC: &[u8; 7] = b"FNERAW1";
pub const RAW_HEADER_LEN: usize = 15;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("truncated header: {0} bytes available")]
    TruncatedHeader(usize),
    #[error("truncated payload: header declares {declared} bytes, {available} available")]
    TruncatedPayload { declared: u64, available: u64 },
    #[error("{0} unexpected bytes after payload")]
    TrailingBytes(usize),
    #[error("non-finite value {value} at row {row}, column {column}")]
    NonFiniteValue { row: usize, column: usize, value: f32 },
    #[error("matrix dimensions must be positive, got {n_samples}x{n_features}")]
    EmptyMatrix { n_samples: usize, n_features: usize },
    #[error("value buffer has {actual} entries, expected {expected}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("line {line}: duplicate sample index {index}")]
    DuplicateIndex { line: usize, index: usize },
    #[error("sample indices are not contiguous: index {missing} is missing")]
    GapInIndices { missing: usize },
    #[error("layer layout invalid: {0}")]
    InvalidLayout(String),
}

/// Per-image activation rows for one dataset, before post-processing.
#[derive(Clone, Debug, PartialEq)]
pub struct RawEmbeddingMatrix {
    n_samples: usize,
    n_features: usize,
    values: Vec<f32>,
}

impl RawEmbeddingMatrix {
    pub fn new(n_samples: usize, n_features: usize, values: Vec<f32>) -> Result<Self, IngestError> {
        if n_samples == 0 || n_features == 0 {
            return Err(IngestError::EmptyMatrix { n_samples, n_features });
        }
        let expected = n_samples * n_features;
        if values.len() != expected {
            return Err(IngestError::ShapeMismatch {
                expected,
                actual: values.len(),
            });
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(IngestError::NonFiniteValue {
                row: k / n_features,
                column: k % n_features,
                value: values[k],
            });
        }
        Ok(RawEmbeddingMatrix {
            n_samples,
            n_features,
            values,
        })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self, IngestError> {
        let n_features = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != n_features) {
            return Err(IngestError::ShapeMismatch {
                expected: n_features,
                actual: bad.len(),
            });
        }
        Self::new(rows.len(), n_features, rows.concat())
    }

    #[inline]
    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    #[inline]
    pub fn n_features(&self) -> usize {
        self.n_features
    }

    #[inline]
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.n_features..(i + 1) * self.n_features]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.values[i * self.n_features + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.values.chunks_exact(self.n_features)
    }
}

pub fn write_raw_matrix<W: Write>(matrix: &RawEmbeddingMatrix, mut dest: W) -> io::Result<()> {
    let mut buf = Vec::with_capacity(RAW_HEADER_LEN + 4 * matrix.values.len());
    buf.extend_from_slice(RAW_MAGIC);
    buf.extend_from_slice(&(matrix.n_samples as u32).to_le_bytes());
    buf.extend_from_slice(&(matrix.n_features as u32).to_le_bytes());
    for v in &matrix.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    dest.write_all(&buf)?;
    dest.flush()
}

pub fn read_raw_matrix<R: io::Read>(source: R) -> Result<RawEmbeddingMatrix, IngestError> {
    let bytes = read_all(source)?;
    decode_raw_matrix(&bytes)
}

pub fn decode_raw_matrix(bytes: &[u8]) -> Result<RawEmbeddingMatrix, IngestError> {
    let mut r = ByteReader::new(bytes);
    let magic = r
        .array::<7>()
        .map_err(|_| IngestError::BadMagic { expected: "FNERAW1" })?;
    if &magic != RAW_MAGIC {
        return Err(IngestError::BadMagic { expected: "FNERAW1" });
    }
    let n_samples = r.u32().map_err(|_| IngestError::TruncatedHeader(bytes.len()))? as usize;
    let n_features = r.u32().map_err(|_| IngestError::TruncatedHeader(bytes.len()))? as usize;
    if n_samples == 0 || n_features == 0 {
        return Err(IngestError::EmptyMatrix { n_samples, n_features });
    }
    let declared = n_samples as u64 * n_features as u64 * 4;
    let available = r.remaining() as u64;
    if declared > available {
        return Err(IngestError::TruncatedPayload { declared, available });
    }
    if declared < available {
        return Err(IngestError::TrailingBytes((available - declared) as usize));
    }
    let payload = r.take(declared as usize).expect("length checked above");
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    RawEmbeddingMatrix::new(n_samples, n_features, values)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub sample_index: usize,
    pub image_id: String,
    pub synset_id: String,
}

/// Maps matrix rows to images and their synsets. Entries are sorted by
/// `sample_index`, which runs over `0..len()` exactly once.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(mut entries: Vec<ManifestEntry>) -> Result<Self, IngestError> {
        entries.sort_by_key(|e| e.sample_index);
        for w in entries.windows(2) {
            if w[0].sample_index == w[1].sample_index {
                return Err(IngestError::DuplicateIndex {
                    line: 0,
                    index: w[0].sample_index,
                });
            }
        }
        for (expected, e) in entries.iter().enumerate() {
            if e.synset_id.is_empty() {
                return Err(IngestError::MalformedRow {
                    line: 0,
                    reason: format!("empty synset id for sample {}", e.sample_index),
                });
            }
            if e.sample_index != expected {
                return Err(IngestError::GapInIndices { missing: expected });
            }
        }
        Ok(Manifest { entries })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Lines that carry data: non-empty and not `#` comments. Yields 1-based line numbers.
pub(crate) fn tsv_data_lines<R: BufRead>(source: R) -> impl Iterator<Item = Result<(usize, String), io::Error>> {
    source.lines().enumerate().filter_map(|(k, line)| match line {
        Ok(l) => {
            let l = l.strip_suffix('\r').map(str::to_owned).unwrap_or(l);
            if l.trim().is_empty() || l.starts_with('#') {
                None
            } else {
                Some(Ok((k + 1, l)))
            }
        }
        Err(e) => Some(Err(e)),
    })
}

pub fn read_manifest<R: BufRead>(source: R) -> Result<Manifest, IngestError> {
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for item in tsv_data_lines(source) {
        let (line, text) = item?;
        let fields: Vec<&str> = text.split('\t').collect();
        if fields.len() != 3 {
            return Err(IngestError::MalformedRow {
                line,
                reason: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let sample_index: usize = fields[0].trim().parse().map_err(|_| IngestError::MalformedRow {
            line,
            reason: format!("sample index {:?} is not a non-negative integer", fields[0]),
        })?;
        if fields[2].is_empty() {
            return Err(IngestError::MalformedRow {
                line,
                reason: "empty synset id".into(),
            });
        }
        if !seen.insert(sample_index) {
            return Err(IngestError::DuplicateIndex {
                line,
                index: sample_index,
            });
        }
        entries.push(ManifestEntry {
            sample_index,
            image_id: fields[1].to_owned(),
            synset_id: fields[2].to_owned(),
        });
    }
    Manifest::new(entries)
}

pub fn write_manifest<W: Write>(manifest: &Manifest, mut dest: W) -> io::Result<()> {
    for e in &manifest.entries {
        writeln!(dest, "{}\t{}\t{}", e.sample_index, e.image_id, e.synset_id)?;
    }
    dest.flush()
}

/// Sample indices per synset, keyed (and therefore ordered) by synset id.
pub fn group_by_synset(manifest: &Manifest) -> BTreeMap<String, Vec<usize>> {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for e in &manifest.entries {
        groups.entry(e.synset_id.clone()).or_default().push(e.sample_index);
    }
    groups
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LayerKind {
    Convolutional,
    FullyConnected,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Convolutional => "conv",
            LayerKind::FullyConnected => "fc",
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LayerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "conv" => Ok(LayerKind::Convolutional),
            "fc" => Ok(LayerKind::FullyConnected),
            other => Err(format!("unknown layer kind {other:?} (expected conv or fc)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSegment {
    pub layer_name: String,
    pub kind: LayerKind,
    pub start: usize,
    pub end_exclusive: usize,
}

impl LayerSegment {
    pub fn len(&self) -> usize {
        self.end_exclusive - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end_exclusive
    }
}

/// Contiguous feature ranges per network layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerLayout {
    segments: Vec<LayerSegment>,
}

impl LayerLayout {
    pub fn new(segments: Vec<LayerSegment>) -> Result<Self, IngestError> {
        let mut next = 0;
        for s in &segments {
            if s.start != next {
                return Err(IngestError::InvalidLayout(format!(
                    "segment {:?} starts at {} but previous segment ends at {next}",
                    s.layer_name, s.start
                )));
            }
            if s.end_exclusive <= s.start {
                return Err(IngestError::InvalidLayout(format!(
                    "segment {:?} is empty",
                    s.layer_name
                )));
            }
            next = s.end_exclusive;
        }
        if segments.is_empty() {
            return Err(IngestError::InvalidLayout("no segments".into()));
        }
        Ok(LayerLayout { segments })
    }

    pub fn segments(&self) -> &[LayerSegment] {
        &self.segments
    }

    /// Total number of features covered.
    pub fn n_features(&self) -> usize {
        self.segments.last().map_or(0, |s| s.end_exclusive)
    }

    pub fn check_covers(&self, n_features: usize) -> Result<(), IngestError> {
        if self.n_features() != n_features {
            return Err(IngestError::InvalidLayout(format!(
                "layout covers [0, {}) but the matrix has {n_features} features",
                self.n_features()
            )));
        }
        Ok(())
    }
}

pub fn read_layout<R: BufRead>(source: R) -> Result<LayerLayout, IngestError> {
    let mut segments = Vec::new();
    for item in tsv_data_lines(source) {
        let (line, text) = item?;
        let fields: Vec<&str> = text.split('\t').collect();
        let malformed = |reason: String| IngestError::MalformedRow { line, reason };
        if fields.len() != 4 {
            return Err(malformed(format!(
                "expected 4 tab-separated fields, found {}",
                fields.len()
            )));
        }
        let kind = fields[1].parse().map_err(malformed)?;
        let start = fields[2]
            .parse()
            .map_err(|_| malformed(format!("bad start {:?}", fields[2])))?;
        let end_exclusive = fields[3]
            .parse()
            .map_err(|_| malformed(format!("bad end {:?}", fields[3])))?;
        segments.push(LayerSegment {
            layer_name: fields[0].to_owned(),
            kind,
            start,
            end_exclusive,
        });
    }
    LayerLayout::new(segments)
}

pub fn write_layout<W: Write>(layout: &LayerLayout, mut dest: W) -> io::Result<()> {
    for s in &layout.segments {
        writeln!(dest, "{}\t{}\t{}\t{}", s.layer_name, s.kind, s.start, s.end_exclusive)?;
    }
    dest.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn encode(m: &RawEmbeddingMatrix) -> Vec<u8> {
        let mut out = Vec::new();
        write_raw_matrix(m, &mut out).unwrap();
        out
    }

    #[test]
    fn smallest_matrix_layout() {
        let m = RawEmbeddingMatrix::new(1, 1, vec![0.0]).unwrap();
        let bytes = encode(&m);
        assert_eq!(bytes.len(), RAW_HEADER_LEN + 4);
        assert_eq!(&bytes[..7], b"FNERAW1");
        assert_eq!(&bytes[7..15], &[1, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&bytes[15..], &[0, 0, 0, 0]);
    }

    #[test]
    fn zeros_payload() {
        let m = RawEmbeddingMatrix::new(2, 3, vec![0.0; 6]).unwrap();
        let bytes = encode(&m);
        assert_eq!(bytes.len(), RAW_HEADER_LEN + 24);
        assert!(bytes[RAW_HEADER_LEN..].iter().all(|&b| b == 0));
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode(&RawEmbeddingMatrix::new(1, 2, vec![1.0, 2.0]).unwrap());
        bytes[0] = b'X';
        assert!(matches!(decode_raw_matrix(&bytes), Err(IngestError::BadMagic { .. })));
        assert!(matches!(decode_raw_matrix(b"FNE"), Err(IngestError::BadMagic { .. })));
    }

    #[test]
    fn truncated_payload() {
        let mut bytes = Vec::from(&RAW_MAGIC[..]);
        bytes.extend_from_slice(&10u32.to_le_bytes());
        bytes.extend_from_slice(&10u32.to_le_bytes());
        bytes.extend(std::iter::repeat_n(0u8, 399));
        match decode_raw_matrix(&bytes) {
            Err(IngestError::TruncatedPayload { declared, available }) => {
                assert_eq!((declared, available), (400, 399));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            decode_raw_matrix(&bytes[..10]),
            Err(IngestError::TruncatedHeader(10))
        ));
    }

    #[test]
    fn non_finite_reports_position() {
        let mut bytes = encode(&RawEmbeddingMatrix::new(2, 3, vec![0.0; 6]).unwrap());
        let off = RAW_HEADER_LEN + 4 * 5;
        bytes[off..off + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        match decode_raw_matrix(&bytes) {
            Err(IngestError::NonFiniteValue { row, column, .. }) => assert_eq!((row, column), (1, 2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn manifest_single_row() {
        let m = read_manifest("0\timg_a\tn02084071\n".as_bytes()).unwrap();
        assert_eq!(
            m.entries(),
            &[ManifestEntry {
                sample_index: 0,
                image_id: "img_a".into(),
                synset_id: "n02084071".into()
            }]
        );
    }

    #[test]
    fn manifest_errors() {
        assert!(matches!(
            read_manifest("0\ta\ts\n2\tb\ts\n".as_bytes()),
            Err(IngestError::GapInIndices { missing: 1 })
        ));
        assert!(matches!(
            read_manifest("0\ta\ts\n0\tb\ts\n".as_bytes()),
            Err(IngestError::DuplicateIndex { line: 2, index: 0 })
        ));
        assert!(matches!(
            read_manifest("# header\n0\ta\n".as_bytes()),
            Err(IngestError::MalformedRow { line: 2, .. })
        ));
        assert!(matches!(
            read_manifest("x\ta\ts\n".as_bytes()),
            Err(IngestError::MalformedRow { line: 1, .. })
        ));
        assert!(matches!(
            read_manifest("0\ta\t\n".as_bytes()),
            Err(IngestError::MalformedRow { line: 1, .. })
        ));
    }

    #[test]
    fn manifest_sorted_by_index() {
        let m = read_manifest("2\tc\ts2\n# comment\n0\ta\ts0\n1\tb\ts1\n".as_bytes()).unwrap();
        let idx: Vec<_> = m.entries().iter().map(|e| e.sample_index).collect();
        assert_eq!(idx, vec![0, 1, 2]);
        assert_eq!(m.entries()[2].image_id, "c");
    }

    #[test]
    fn grouping() {
        let m = read_manifest("0\ti0\ta\n1\ti1\ta\n2\ti2\tb\n".as_bytes()).unwrap();
        let g = group_by_synset(&m);
        assert_eq!(g.len(), 2);
        assert_eq!(g["a"], vec![0, 1]);
        assert_eq!(g["b"], vec![2]);

        let same = read_manifest("0\ti0\tz\n1\ti1\tz\n2\ti2\tz\n".as_bytes()).unwrap();
        assert_eq!(group_by_synset(&same)["z"].len(), 3);
        assert!(group_by_synset(&Manifest::default()).is_empty());
    }

    #[test]
    fn layout_parse_and_validate() {
        let l = read_layout("conv1\tconv\t0\t64\nfc7\tfc\t64\t100\n".as_bytes()).unwrap();
        assert_eq!(l.n_features(), 100);
        assert!(l.check_covers(100).is_ok());
        assert!(l.check_covers(101).is_err());
        assert!(read_layout("a\tconv\t0\t4\nb\tfc\t5\t8\n".as_bytes()).is_err());
        assert!(read_layout("a\tpool\t0\t4\n".as_bytes()).is_err());
        let mut out = Vec::new();
        write_layout(&l, &mut out).unwrap();
        assert_eq!(read_layout(out.as_slice()).unwrap(), l);
    }

    fn matrix_strategy() -> impl Strategy<Value = RawEmbeddingMatrix> {
        (1usize..8, 1usize..8).prop_flat_map(|(n, m)| {
            prop::collection::vec(-1e6f32..1e6f32, n * m).prop_map(move |v| RawEmbeddingMatrix::new(n, m, v).unwrap())
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn raw_round_trip(m in matrix_strategy()) {
            let bytes = encode(&m);
            let back = decode_raw_matrix(&bytes).unwrap();
            prop_assert_eq!(&back, &m);
            prop_assert_eq!(encode(&back), bytes);
        }

        #[test]
        fn grouping_partitions(labels in prop::collection::vec(0u8..5, 0..40)) {
            let entries = labels.iter().enumerate().map(|(i, l)| ManifestEntry {
                sample_index: i,
                image_id: format!("img{i}"),
                synset_id: format!("s{l}"),
            }).collect();
            let groups = group_by_synset(&Manifest::new(entries).unwrap());
            let mut all: Vec<usize> = groups.values().flatten().copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        }
    }
}
