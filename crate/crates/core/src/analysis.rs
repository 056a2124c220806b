//! Distance-matrix analytics: correlation between matrices, average-linkage
//! clustering, 2-D projections and the presence co-occurrence diagnostic.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;
use thiserror::Error;

use crate::distance::{presence_similarity, DistanceMatrix};
use crate::eigen::{jacobi_eigen, EigenError};
use crate::fne::TernaryMatrix;
use crate::lexical::{LexicalError, Taxonomy};
use crate::representative::{PresenceBitset, SynsetRepresentative};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("matrices share {0} synset ids, need at least 3")]
    InsufficientOverlap(usize),
    #[error("vectors have lengths {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 observations, got {0}")]
    TooFewObservations(usize),
    #[error("zero variance")]
    ZeroVariance,
    #[error("degenerate input: {0}")]
    DegenerateMatrix(String),
    #[error("need at least {needed} items, got {got}")]
    TooFewItems { needed: usize, got: usize },
    #[error("cluster count {k} not in 1..={n}")]
    InvalidClusterCount { k: usize, n: usize },
    #[error("representatives disagree on feature count: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("unknown synset {0:?}")]
    UnknownSynset(String),
    #[error("sample index {0} out of range")]
    IndexOutOfRange(usize),
    #[error(transparent)]
    Eigen(#[from] EigenError),
    #[error(transparent)]
    Lexical(#[from] LexicalError),
}

/// Condensed distances of both matrices restricted to their shared ids, in
/// the same pair order.
pub fn align_matrices(a: &DistanceMatrix, b: &DistanceMatrix) -> Result<(Vec<f64>, Vec<f64>), AnalysisError> {
    let shared: Vec<(usize, usize)> = a
        .synset_ids()
        .iter()
        .enumerate()
        .filter_map(|(i, id)| b.position(id).map(|j| (i, j)))
        .collect();
    if shared.len() < 3 {
        return Err(AnalysisError::InsufficientOverlap(shared.len()));
    }
    let n = shared.len() * (shared.len() - 1) / 2;
    let (mut x, mut y) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for (p, &(ai, bi)) in shared.iter().enumerate() {
        for &(aj, bj) in &shared[p + 1..] {
            x.push(a.get(ai, aj) as f64);
            y.push(b.get(bi, bj) as f64);
        }
    }
    Ok((x, y))
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<(), AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(AnalysisError::TooFewObservations(x.len()));
    }
    Ok(())
}

/// Product-moment correlation, clamped into [-1, 1].
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, AnalysisError> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(AnalysisError::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based fractional ranks; tied values share their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0f64; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = rank;
        }
        start = end;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, AnalysisError> {
    check_pair(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorrelationReport {
    pub pearson: f64,
    pub spearman: f64,
    pub n_pairs: usize,
    pub shared_ids: usize,
}

pub fn compare_matrices(a: &DistanceMatrix, b: &DistanceMatrix) -> Result<CorrelationReport, AnalysisError> {
    let (x, y) = align_matrices(a, b)?;
    let n_pairs = x.len();
    // n_pairs = k(k-1)/2
    let shared_ids = ((1.0 + (1.0 + 8.0 * n_pairs as f64).sqrt()) / 2.0).round() as usize;
    Ok(CorrelationReport {
        pearson: pearson(&x, &y)?,
        spearman: spearman(&x, &y)?,
        n_pairs,
        shared_ids,
    })
}

/// One agglomeration step. Leaves are `0..S`; the cluster formed at step `k`
/// gets id `S + k`. `left < right`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dendrogram {
    pub n_leaves: usize,
    pub merges: Vec<Merge>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Linkage {
    Average,
}

/// Average-linkage (UPGMA) clustering.
///
/// Among equally close cluster pairs the lexicographically smallest
/// `(min id, max id)` merges first. Uses per-cluster nearest-neighbour caching
/// with Lance-Williams updates.
pub fn agglomerative_cluster(d: &DistanceMatrix, linkage: Linkage) -> Dendrogram {
    let Linkage::Average = linkage;
    let s = d.len();
    let mut dist = d.to_dense();
    let mut active = vec![true; s];
    let mut cluster_id: Vec<usize> = (0..s).collect();
    let mut size = vec![1usize; s];
    let mut nn = vec![(f64::INFINITY, usize::MAX); s];

    // nearest active neighbour of slot i: smallest distance, then smallest cluster id
    let nearest = |dist: &[f64], active: &[bool], cluster_id: &[usize], i: usize| {
        let mut best = (f64::INFINITY, usize::MAX);
        for j in 0..s {
            if j == i || !active[j] {
                continue;
            }
            let v = dist[i * s + j];
            if v < best.0 || (v == best.0 && (best.1 == usize::MAX || cluster_id[j] < cluster_id[best.1])) {
                best = (v, j);
            }
        }
        best
    };
    for (i, slot) in nn.iter_mut().enumerate() {
        *slot = nearest(&dist, &active, &cluster_id, i);
    }

    let mut merges = Vec::with_capacity(s.saturating_sub(1));
    for step in 0..s.saturating_sub(1) {
        let mut pick: Option<(f64, usize, usize)> = None;
        for i in 0..s {
            if !active[i] {
                continue;
            }
            let (v, j) = nn[i];
            let key = (cluster_id[i].min(cluster_id[j]), cluster_id[i].max(cluster_id[j]));
            let better = match pick {
                None => true,
                Some((bv, bi, bj)) => {
                    let bkey = (cluster_id[bi].min(cluster_id[bj]), cluster_id[bi].max(cluster_id[bj]));
                    v < bv || (v == bv && key < bkey)
                }
            };
            if better {
                pick = Some((v, i, j));
            }
        }
        let (height, a, b) = pick.expect("at least two active clusters");
        let (na, nb) = (size[a], size[b]);
        let (left, right) = (cluster_id[a].min(cluster_id[b]), cluster_id[a].max(cluster_id[b]));
        merges.push(Merge {
            left,
            right,
            height,
            size: na + nb,
        });

        // merged cluster lives in slot a
        active[b] = false;
        for k in 0..s {
            if active[k] && k != a {
                let v = (na as f64 * dist[a * s + k] + nb as f64 * dist[b * s + k]) / (na + nb) as f64;
                dist[a * s + k] = v;
                dist[k * s + a] = v;
            }
        }
        size[a] = na + nb;
        cluster_id[a] = s + step;

        nn[a] = nearest(&dist, &active, &cluster_id, a);
        for k in 0..s {
            if !active[k] || k == a {
                continue;
            }
            if nn[k].1 == a || nn[k].1 == b {
                nn[k] = nearest(&dist, &active, &cluster_id, k);
            } else if dist[k * s + a] < nn[k].0 {
                // the new id is larger than every other, so it only wins strictly
                nn[k] = (dist[k * s + a], a);
            }
        }
    }
    Dendrogram { n_leaves: s, merges }
}

impl Dendrogram {
    /// Flat labels after undoing the last `k - 1` merges. Labels are numbered
    /// by first appearance in leaf order.
    pub fn cut(&self, k: usize) -> Result<Vec<usize>, AnalysisError> {
        let n = self.n_leaves;
        if k == 0 || k > n {
            return Err(AnalysisError::InvalidClusterCount { k, n });
        }
        let mut parent: Vec<usize> = (0..2 * n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for (step, m) in self.merges.iter().take(n - k).enumerate() {
            let id = n + step;
            let l = find(&mut parent, m.left);
            let r = find(&mut parent, m.right);
            parent[l] = id;
            parent[r] = id;
        }
        let mut label_of = HashMap::new();
        Ok((0..n)
            .map(|leaf| {
                let root = find(&mut parent, leaf);
                let next = label_of.len();
                *label_of.entry(root).or_insert(next)
            })
            .collect())
    }

    /// Newick text with leaf names; branch lengths are merge-height differences.
    pub fn to_newick(&self, names: &[String]) -> String {
        let n = self.n_leaves;
        if n == 1 {
            return format!("{};", quote_newick(&names[0]));
        }
        let mut nodes: Vec<Option<(String, f64)>> = names.iter().map(|s| Some((quote_newick(s), 0.0))).collect();
        for m in &self.merges {
            let (l, lh) = nodes[m.left].take().expect("each cluster merges once");
            let (r, rh) = nodes[m.right].take().expect("each cluster merges once");
            nodes.push(Some((
                format!("({l}:{},{r}:{})", m.height - lh, m.height - rh),
                m.height,
            )));
        }
        let (root, _) = nodes.pop().flatten().expect("root exists");
        format!("{root};")
    }
}

fn quote_newick(s: &str) -> String {
    if s.chars().any(|c| "()[]':;, \t".contains(c)) {
        format!("'{}'", s.replace('\'', "''"))
    } else {
        s.to_owned()
    }
}

/// Adjusted Rand index between two flat labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64, AnalysisError> {
    if a.len() != b.len() {
        return Err(AnalysisError::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    let choose2 = |x: u64| (x * x.saturating_sub(1) / 2) as f64;
    let mut table: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut rows: BTreeMap<usize, u64> = BTreeMap::new();
    let mut cols: BTreeMap<usize, u64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sum_a: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sum_b: f64 = cols.values().map(|&c| choose2(c)).sum();
    let total = choose2(n as u64);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sum_a * sum_b / total;
    let max = (sum_a + sum_b) / 2.0;
    if max == expected {
        // both partitions trivial (all singletons or one block): identical structure
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionMethod {
    Mds,
    Pca,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProjectionDiagnostics {
    /// Eigenvalues of the Gram matrix, descending (all of them).
    pub eigenvalues: Vec<f64>,
    /// Fraction of total (positive) variance per retained axis.
    pub explained: Vec<f64>,
    /// MDS: Kruskal stress-1 between input and embedded distances.
    pub stress: Option<f64>,
    /// MDS: |sum of negative eigenvalues| / sum of |eigenvalues|.
    pub negative_mass: Option<f64>,
    /// MDS: number of retained axes whose eigenvalue was clamped to 0.
    pub clamped_axes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Projection {
    pub ids: Vec<String>,
    /// `dims` coordinates per id.
    pub coords: Vec<Vec<f64>>,
    pub method: ProjectionMethod,
    pub diagnostics: ProjectionDiagnostics,
}

impl Projection {
    pub fn diagnostic_summary(&self) -> String {
        let d = &self.diagnostics;
        let explained: Vec<String> = d.explained.iter().map(|e| format!("{e:.6}")).collect();
        let mut parts = vec![format!("explained={}", explained.join("/"))];
        if let Some(s) = d.stress {
            parts.push(format!("stress={s:.6}"));
        }
        if let Some(m) = d.negative_mass {
            parts.push(format!("negative_mass={m:.6}"));
            parts.push(format!("clamped_axes={}", d.clamped_axes));
        }
        parts.join(";")
    }
}

/// Coordinates, full spectrum, and the number of retained axes clamped to 0.
type Embedding = (Vec<Vec<f64>>, Vec<f64>, usize);

fn embed_gram(gram: &[f64], s: usize, dims: usize) -> Result<Embedding, AnalysisError> {
    let eig = jacobi_eigen(gram, s)?;
    let mut coords = vec![vec![0f64; dims]; s];
    let mut clamped = 0;
    for k in 0..dims.min(s) {
        let lambda = eig.values[k];
        if lambda <= 0.0 {
            clamped += 1;
            continue;
        }
        let scale = lambda.sqrt();
        for (i, c) in coords.iter_mut().enumerate() {
            c[k] = eig.vector(k)[i] * scale;
        }
    }
    Ok((coords, eig.values, clamped))
}

/// Classical (Torgerson) MDS of a distance matrix into `dims` dimensions.
///
/// Negative eigenvalues, expected for non-Euclidean inputs, are clamped to 0
/// and their share of the spectrum is reported.
pub fn classical_mds(d: &DistanceMatrix, dims: usize) -> Result<Projection, AnalysisError> {
    let s = d.len();
    if dims == 0 || s < 2 || dims > s {
        return Err(AnalysisError::TooFewItems {
            needed: dims.max(2),
            got: s,
        });
    }
    if d.condensed().iter().all(|&v| v == 0.0) {
        return Err(AnalysisError::DegenerateMatrix("all distances are zero".into()));
    }
    let dense = d.to_dense();
    let sq: Vec<f64> = dense.iter().map(|v| v * v).collect();
    let row_mean: Vec<f64> = (0..s)
        .map(|i| sq[i * s..(i + 1) * s].iter().sum::<f64>() / s as f64)
        .collect();
    let grand = row_mean.iter().sum::<f64>() / s as f64;
    let mut gram = vec![0f64; s * s];
    for i in 0..s {
        for j in 0..s {
            gram[i * s + j] = -0.5 * (sq[i * s + j] - row_mean[i] - row_mean[j] + grand);
        }
    }
    let (coords, eigenvalues, clamped_axes) = embed_gram(&gram, s, dims)?;

    let positive: f64 = eigenvalues.iter().filter(|v| **v > 0.0).sum();
    let negative: f64 = eigenvalues.iter().filter(|v| **v < 0.0).map(|v| -v).sum();
    let explained = eigenvalues[..dims]
        .iter()
        .map(|&v| if positive > 0.0 { v.max(0.0) / positive } else { 0.0 })
        .collect();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..s {
        for j in i + 1..s {
            let e: f64 = coords[i]
                .iter()
                .zip(&coords[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let t = dense[i * s + j];
            num += (t - e) * (t - e);
            den += t * t;
        }
    }
    Ok(Projection {
        ids: d.synset_ids().to_vec(),
        coords,
        method: ProjectionMethod::Mds,
        diagnostics: ProjectionDiagnostics {
            eigenvalues,
            explained,
            stress: Some((num / den).sqrt()),
            negative_mass: Some(negative / (positive + negative)),
            clamped_axes,
        },
    })
}

/// PCA of the representatives' ternary values (as reals), via the Gram matrix
/// of the mean-centred data. Scores equal projections onto the top principal axes.
pub fn pca_projection(reps: &[SynsetRepresentative], dims: usize) -> Result<Projection, AnalysisError> {
    let s = reps.len();
    if dims == 0 || s < dims + 1 {
        return Err(AnalysisError::TooFewItems {
            needed: dims + 1,
            got: s,
        });
    }
    let m = reps[0].n_features();
    if let Some(r) = reps.iter().find(|r| r.n_features() != m) {
        return Err(AnalysisError::DimensionMismatch(m, r.n_features()));
    }
    let data: Vec<Vec<f64>> = reps
        .iter()
        .map(|r| r.ternary().iter().map(|t| t.value() as f64).collect())
        .collect();
    let mut mean = vec![0f64; m];
    for row in &data {
        mean.iter_mut().zip(row).for_each(|(a, v)| *a += v);
    }
    mean.iter_mut().for_each(|a| *a /= s as f64);
    let centred: Vec<Vec<f64>> = data
        .iter()
        .map(|row| row.iter().zip(&mean).map(|(v, mu)| v - mu).collect())
        .collect();
    let mut gram = vec![0f64; s * s];
    for i in 0..s {
        for j in i..s {
            let g: f64 = centred[i].iter().zip(&centred[j]).map(|(a, b)| a * b).sum();
            gram[i * s + j] = g;
            gram[j * s + i] = g;
        }
    }
    let total: f64 = (0..s).map(|i| gram[i * s + i]).sum();
    if total <= 0.0 {
        return Err(AnalysisError::DegenerateMatrix(
            "representatives have zero variance".into(),
        ));
    }
    let (coords, eigenvalues, _) = embed_gram(&gram, s, dims)?;
    let explained = eigenvalues[..dims].iter().map(|&v| v.max(0.0) / total).collect();
    Ok(Projection {
        ids: reps.iter().map(|r| r.synset_id().to_owned()).collect(),
        coords,
        method: ProjectionMethod::Pca,
        diagnostics: ProjectionDiagnostics {
            eigenvalues,
            explained,
            stress: None,
            negative_mass: None,
            clamped_axes: 0,
        },
    })
}

pub const CONSISTENCY_STATISTIC: &str = "mean pairwise Jaccard similarity of per-image presence sets";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SynsetConsistency {
    pub synset_id: String,
    pub depth: u32,
    pub n_images: usize,
    /// `None` for synsets with fewer than two images.
    pub consistency: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConsistencyReport {
    pub statistic: &'static str,
    pub synsets: Vec<SynsetConsistency>,
    /// Spearman correlation of consistency against depth, when defined.
    pub spearman_vs_depth: Option<f64>,
}

/// Within-synset co-occurrence of presence features versus taxonomy depth.
pub fn consistency_vs_specificity(
    ternary: &TernaryMatrix,
    groups: &BTreeMap<String, Vec<usize>>,
    taxonomy: &Taxonomy,
) -> Result<ConsistencyReport, AnalysisError> {
    let mut synsets = Vec::with_capacity(groups.len());
    for (id, idx) in groups {
        if !taxonomy.contains(id) {
            return Err(AnalysisError::UnknownSynset(id.clone()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= ternary.n_samples()) {
            return Err(AnalysisError::IndexOutOfRange(bad));
        }
        let sets: Vec<PresenceBitset> = idx
            .iter()
            .map(|&i| PresenceBitset::from_packed(ternary.n_features(), ternary.row_packed(i)))
            .collect();
        let consistency = (sets.len() >= 2).then(|| {
            let mut sum = 0.0;
            let mut pairs = 0usize;
            for p in 0..sets.len() {
                for q in p + 1..sets.len() {
                    sum += presence_similarity(&sets[p], &sets[q]);
                    pairs += 1;
                }
            }
            sum / pairs as f64
        });
        synsets.push(SynsetConsistency {
            synset_id: id.clone(),
            depth: taxonomy.depth(id)?,
            n_images: idx.len(),
            consistency,
        });
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = synsets
        .iter()
        .filter_map(|s| s.consistency.map(|c| (c, s.depth as f64)))
        .unzip();
    let spearman_vs_depth = spearman(&xs, &ys).ok();
    Ok(ConsistencyReport {
        statistic: CONSISTENCY_STATISTIC,
        synsets,
        spearman_vs_depth,
    })
}
