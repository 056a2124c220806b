//! Full-network embedding post-processing: per-feature standardisation and
//! ternary discretisation, plus feature-type proportion diagnostics.
//!
//! `FNETER1` layout (little-endian):
//!
//! ```text
//! offset  size        field
//! 0       7           magic "FNETER1"
//! 7       4           n_samples (u32)
//! 11      4           n_features (u32)
//! 15      4           ft_minus (f32)
//! 19      4           ft_plus (f32)
//! 23      N*ceil(M/4) packed rows, 2 bits per feature
//! ```

use std::io::{self, BufRead, Write};

use serde::Serialize;
use thiserror::Error;

use crate::binio::{read_all, ByteReader};
use crate::ingest::{tsv_data_lines, LayerKind, LayerLayout, RawEmbeddingMatrix};
use crate::ternary::{self, packed_len, Ternary, TernaryVector};

pub const TERNARY_MAGIC: &[u8; 7] = b"FNETER1";
pub const TERNARY_HEADER_LEN: usize = 23;

#[derive(Debug, Error)]
pub enum FneError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("dimension mismatch: expected {expected} features, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid thresholds: need ft_minus <= 0 <= ft_plus, got ({ft_minus}, {ft_plus})")]
    InvalidThresholds { ft_minus: f32, ft_plus: f32 },
    #[error("layer layout covers {layout} features but the matrix has {matrix}")]
    LayoutMismatch { layout: usize, matrix: usize },
    #[error("bad magic: expected \"FNETER1\"")]
    BadMagic,
    #[error("truncated ternary file at byte {offset}")]
    Truncated { offset: usize },
    #[error("{0} unexpected bytes after payload")]
    TrailingBytes(usize),
    #[error("invalid ternary code in row {row} near feature {feature}")]
    InvalidCode { row: usize, feature: usize },
    #[error("matrix dimensions must be positive, got {n_samples}x{n_features}")]
    EmptyMatrix { n_samples: usize, n_features: usize },
    #[error("line {line}: malformed statistics row: {reason}")]
    MalformedStats { line: usize, reason: String },
}

/// Per-feature mean and population standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct StandardizationStats {
    pub means: Vec<f64>,
    pub stddevs: Vec<f64>,
}

impl StandardizationStats {
    pub fn n_features(&self) -> usize {
        self.means.len()
    }
}

/// Discretisation thresholds on standardized values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Thresholds {
    ft_minus: f32,
    ft_plus: f32,
}

impl Thresholds {
    pub const DEFAULT_FT_MINUS: f32 = -0.25;
    pub const DEFAULT_FT_PLUS: f32 = 0.15;

    pub fn new(ft_minus: f32, ft_plus: f32) -> Result<Self, FneError> {
        if !(ft_minus <= 0.0 && ft_plus >= 0.0) {
            return Err(FneError::InvalidThresholds { ft_minus, ft_plus });
        }
        Ok(Thresholds { ft_minus, ft_plus })
    }

    pub fn ft_minus(&self) -> f32 {
        self.ft_minus
    }

    pub fn ft_plus(&self) -> f32 {
        self.ft_plus
    }

    /// Maps one standardized value. The absence rule is checked first, so with
    /// `ft_minus == ft_plus == 0` a value of exactly 0 becomes -1.
    #[inline]
    pub fn classify(&self, v: f32) -> Ternary {
        if v <= self.ft_minus {
            Ternary::Absent
        } else if v >= self.ft_plus {
            Ternary::Present
        } else {
            Ternary::Neutral
        }
    }
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            ft_minus: Self::DEFAULT_FT_MINUS,
            ft_plus: Self::DEFAULT_FT_PLUS,
        }
    }
}

/// Z-scores every feature column against the dataset itself.
///
/// Constant columns (zero population stddev) map to 0.
pub fn standardize(matrix: &RawEmbeddingMatrix) -> (RawEmbeddingMatrix, StandardizationStats) {
    let m = matrix.n_features();
    let n = matrix.n_samples() as f64;
    let mut means = vec![0f64; m];
    for row in matrix.rows() {
        for (acc, &v) in means.iter_mut().zip(row) {
            *acc += v as f64;
        }
    }
    means.iter_mut().for_each(|s| *s /= n);
    let mut var = vec![0f64; m];
    for row in matrix.rows() {
        for ((acc, &v), mu) in var.iter_mut().zip(row).zip(&means) {
            let d = v as f64 - mu;
            *acc += d * d;
        }
    }
    let stddevs: Vec<f64> = var.into_iter().map(|s| (s / n).sqrt()).collect();
    let stats = StandardizationStats { means, stddevs };
    let out = transform(matrix, &stats);
    (out, stats)
}

/// Standardizes `matrix` with statistics computed elsewhere (e.g. a reference set).
pub fn apply_standardization(
    matrix: &RawEmbeddingMatrix,
    stats: &StandardizationStats,
) -> Result<RawEmbeddingMatrix, FneError> {
    if stats.means.len() != matrix.n_features() || stats.stddevs.len() != matrix.n_features() {
        return Err(FneError::DimensionMismatch {
            expected: matrix.n_features(),
            actual: stats.means.len(),
        });
    }
    Ok(transform(matrix, stats))
}

fn transform(matrix: &RawEmbeddingMatrix, stats: &StandardizationStats) -> RawEmbeddingMatrix {
    let values: Vec<f32> = matrix
        .rows()
        .flat_map(|row| {
            row.iter()
                .zip(&stats.means)
                .zip(&stats.stddevs)
                .map(
                    |((&v, &mu), &sd)| {
                        if sd > 0.0 {
                            ((v as f64 - mu) / sd) as f32
                        } else {
                            0.0
                        }
                    },
                )
        })
        .collect();
    RawEmbeddingMatrix::new(matrix.n_samples(), matrix.n_features(), values)
        .expect("standardizing finite values with positive stddev stays finite")
}

pub fn write_stats<W: Write>(stats: &StandardizationStats, mut dest: W) -> io::Result<()> {
    writeln!(dest, "# feature\tmean\tstddev")?;
    for (j, (mu, sd)) in stats.means.iter().zip(&stats.stddevs).enumerate() {
        writeln!(dest, "{j}\t{mu}\t{sd}")?;
    }
    dest.flush()
}

pub fn read_stats<R: BufRead>(source: R) -> Result<StandardizationStats, FneError> {
    let mut means = Vec::new();
    let mut stddevs = Vec::new();
    for item in tsv_data_lines(source) {
        let (line, text) = item?;
        let bad = |reason: &str| FneError::MalformedStats {
            line,
            reason: reason.to_owned(),
        };
        let fields: Vec<&str> = text.split('\t').collect();
        if fields.len() != 3 {
            return Err(bad("expected 3 fields"));
        }
        if fields[0].parse::<usize>().ok() != Some(means.len()) {
            return Err(bad("feature indices must run 0, 1, 2, ..."));
        }
        let mu: f64 = fields[1].parse().map_err(|_| bad("bad mean"))?;
        let sd: f64 = fields[2].parse().map_err(|_| bad("bad stddev"))?;
        if !mu.is_finite() || !sd.is_finite() || sd < 0.0 {
            return Err(bad("mean must be finite and stddev finite and non-negative"));
        }
        means.push(mu);
        stddevs.push(sd);
    }
    Ok(StandardizationStats { means, stddevs })
}

/// Discretised embedding: one packed ternary row per image.
#[derive(Clone, Debug, PartialEq)]
pub struct TernaryMatrix {
    n_samples: usize,
    n_features: usize,
    thresholds: Thresholds,
    codes: Vec<u8>,
}

impl TernaryMatrix {
    /// Assembles a matrix from equal-length rows.
    pub fn from_rows(rows: &[TernaryVector], thresholds: Thresholds) -> Result<Self, FneError> {
        let n_features = rows.first().map_or(0, TernaryVector::len);
        if rows.is_empty() || n_features == 0 {
            return Err(FneError::EmptyMatrix {
                n_samples: rows.len(),
                n_features,
            });
        }
        let mut codes = Vec::with_capacity(rows.len() * packed_len(n_features));
        for r in rows {
            if r.len() != n_features {
                return Err(FneError::DimensionMismatch {
                    expected: n_features,
                    actual: r.len(),
                });
            }
            codes.extend_from_slice(r.packed());
        }
        Ok(TernaryMatrix {
            n_samples: rows.len(),
            n_features,
            thresholds,
            codes,
        })
    }

    #[inline]
    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    #[inline]
    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn thresholds(&self) -> Thresholds {
        self.thresholds
    }

    #[inline]
    pub fn row_bytes(&self) -> usize {
        packed_len(self.n_features)
    }

    #[inline]
    pub fn row_packed(&self, i: usize) -> &[u8] {
        let w = self.row_bytes();
        &self.codes[i * w..(i + 1) * w]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Ternary {
        assert!(j < self.n_features);
        ternary::get(self.row_packed(i), j)
    }

    pub fn row(&self, i: usize) -> TernaryVector {
        TernaryVector::from_packed(self.n_features, self.row_packed(i).to_vec())
            .expect("rows are validated on construction")
    }
}

/// Maps standardized values into {-1, 0, +1}.
pub fn discretize(standardized: &RawEmbeddingMatrix, t: Thresholds) -> TernaryMatrix {
    let m = standardized.n_features();
    let w = packed_len(m);
    let mut codes = vec![0u8; standardized.n_samples() * w];
    for (row, out) in standardized.rows().zip(codes.chunks_exact_mut(w)) {
        for (j, &v) in row.iter().enumerate() {
            ternary::set_code(out, j, t.classify(v));
        }
    }
    TernaryMatrix {
        n_samples: standardized.n_samples(),
        n_features: m,
        thresholds: t,
        codes,
    }
}

pub fn write_ternary<W: Write>(matrix: &TernaryMatrix, mut dest: W) -> io::Result<()> {
    let mut buf = Vec::with_capacity(TERNARY_HEADER_LEN + matrix.codes.len());
    buf.extend_from_slice(TERNARY_MAGIC);
    buf.extend_from_slice(&(matrix.n_samples as u32).to_le_bytes());
    buf.extend_from_slice(&(matrix.n_features as u32).to_le_bytes());
    buf.extend_from_slice(&matrix.thresholds.ft_minus.to_le_bytes());
    buf.extend_from_slice(&matrix.thresholds.ft_plus.to_le_bytes());
    buf.extend_from_slice(&matrix.codes);
    dest.write_all(&buf)?;
    dest.flush()
}

pub fn read_ternary<R: io::Read>(source: R) -> Result<TernaryMatrix, FneError> {
    let bytes = read_all(source)?;
    let mut r = ByteReader::new(&bytes);
    let truncated = |t: crate::binio::Truncated| FneError::Truncated { offset: t.offset };
    if r.array::<7>().map_err(|_| FneError::BadMagic)? != *TERNARY_MAGIC {
        return Err(FneError::BadMagic);
    }
    let n_samples = r.u32().map_err(truncated)? as usize;
    let n_features = r.u32().map_err(truncated)? as usize;
    let ft_minus = r.f32().map_err(truncated)?;
    let ft_plus = r.f32().map_err(truncated)?;
    let thresholds = Thresholds::new(ft_minus, ft_plus)?;
    if n_samples == 0 || n_features == 0 {
        return Err(FneError::EmptyMatrix { n_samples, n_features });
    }
    let w = packed_len(n_features);
    let codes = r.take(n_samples * w).map_err(truncated)?.to_vec();
    if r.remaining() > 0 {
        return Err(FneError::TrailingBytes(r.remaining()));
    }
    for (i, row) in codes.chunks_exact(w).enumerate() {
        if let Some(feature) = ternary::first_invalid(row, n_features) {
            return Err(FneError::InvalidCode { row: i, feature });
        }
    }
    Ok(TernaryMatrix {
        n_samples,
        n_features,
        thresholds,
        codes,
    })
}

/// Fractions of each feature class within one scope.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ClassProportions {
    pub absent: f64,
    pub neutral: f64,
    pub present: f64,
    pub cells: u64,
}

impl ClassProportions {
    fn from_counts(counts: [u64; 3]) -> Self {
        let cells: u64 = counts.iter().sum();
        let frac = |c: u64| if cells == 0 { 0.0 } else { c as f64 / cells as f64 };
        ClassProportions {
            absent: frac(counts[0]),
            neutral: frac(counts[1]),
            present: frac(counts[2]),
            cells,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerProportions {
    pub layer_name: String,
    pub kind: &'static str,
    pub proportions: ClassProportions,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProportionReport {
    pub overall: ClassProportions,
    pub layers: Vec<LayerProportions>,
    /// Aggregated over all layers of each kind.
    pub by_kind: Vec<LayerProportions>,
}

pub fn feature_type_proportions(
    matrix: &TernaryMatrix,
    layout: Option<&LayerLayout>,
) -> Result<ProportionReport, FneError> {
    let m = matrix.n_features();
    if let Some(l) = layout {
        if l.n_features() != m {
            return Err(FneError::LayoutMismatch {
                layout: l.n_features(),
                matrix: m,
            });
        }
    }
    // per-feature class counts; layers are contiguous ranges over these
    let mut per_feature = vec![[0u64; 3]; m];
    for i in 0..matrix.n_samples() {
        let row = matrix.row_packed(i);
        for (j, c) in per_feature.iter_mut().enumerate() {
            c[ternary::get(row, j).slot()] += 1;
        }
    }
    let sum = |range: std::ops::Range<usize>| {
        per_feature[range].iter().fold([0u64; 3], |mut acc, c| {
            acc.iter_mut().zip(c).for_each(|(a, b)| *a += b);
            acc
        })
    };
    let overall = ClassProportions::from_counts(sum(0..m));
    let mut layers = Vec::new();
    let mut by_kind = Vec::new();
    if let Some(l) = layout {
        let mut kind_counts: Vec<(LayerKind, [u64; 3])> = Vec::new();
        for seg in l.segments() {
            let c = sum(seg.start..seg.end_exclusive);
            layers.push(LayerProportions {
                layer_name: seg.layer_name.clone(),
                kind: seg.kind.as_str(),
                proportions: ClassProportions::from_counts(c),
            });
            match kind_counts.iter_mut().find(|(k, _)| *k == seg.kind) {
                Some((_, acc)) => acc.iter_mut().zip(c).for_each(|(a, b)| *a += b),
                None => kind_counts.push((seg.kind, c)),
            }
        }
        kind_counts.sort_by_key(|(k, _)| *k);
        by_kind = kind_counts
            .into_iter()
            .map(|(k, c)| LayerProportions {
                layer_name: k.as_str().to_owned(),
                kind: k.as_str(),
                proportions: ClassProportions::from_counts(c),
            })
            .collect();
    }
    Ok(ProportionReport {
        overall,
        layers,
        by_kind,
    })
}
