//! WordNet hypernym taxonomy and lexical similarity measures.
//!
//! Conventions used throughout:
//!
//! * depth is the node count of the longest root-to-synset hypernym path, so
//!   roots have depth 1;
//! * the least common subsumer (LCS) is the deepest common ancestor (a synset
//!   is its own ancestor), with ties broken by the smallest id;
//! * path similarity is `1 / (1 + d)` with `d` the shortest undirected edge
//!   distance between the two synsets;
//! * Wu-Palmer is `2 depth(lcs) / (depth(a) + depth(b))`;
//! * Lin is `2 IC(lcs) / (IC(a) + IC(b))`;
//! * distances are `1 - similarity`.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::distance::{condensed_index, DistanceError, DistanceMatrix};
use crate::ingest::tsv_data_lines;

#[derive(Debug, Error)]
pub enum LexicalError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("hypernym cycle: {}", .0.join(" -> "))]
    CycleDetected(Vec<String>),
    #[error("empty taxonomy")]
    Empty,
    #[error("unknown synset {0:?}")]
    UnknownSynset(String),
    #[error("{0:?} and {1:?} share no common ancestor")]
    NoCommonAncestor(String, String),
    #[error("no information content for {0:?}")]
    MissingIC(String),
    #[error("IC({0:?}) + IC({1:?}) is zero")]
    ZeroDenominator(String, String),
    #[error("{measure} similarity for ({a:?}, {b:?}) is {value}, outside [0, 1]")]
    SimilarityOutOfRange {
        measure: Measure,
        a: String,
        b: String,
        value: f64,
    },
    #[error("pair ({a:?}, {b:?})")]
    Pair {
        a: String,
        b: String,
        #[source]
        source: Box<LexicalError>,
    },
    #[error("need at least 2 distinct synsets, got {0}")]
    TooFewSynsets(usize),
    #[error("the lin measure needs an information-content table")]
    ICRequired,
    #[error(transparent)]
    Matrix(#[from] DistanceError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Measure {
    Path,
    WuPalmer,
    Lin,
}

impl Measure {
    pub fn as_str(self) -> &'static str {
        match self {
            Measure::Path => "path",
            Measure::WuPalmer => "wup",
            Measure::Lin => "lin",
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Measure {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "path" => Ok(Measure::Path),
            "wup" => Ok(Measure::WuPalmer),
            "lin" => Ok(Measure::Lin),
            other => Err(format!("unknown measure {other:?} (expected path, wup or lin)")),
        }
    }
}

/// Validated hypernym DAG. Node indices follow lexicographic id order.
#[derive(Clone, Debug)]
pub struct Taxonomy {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    depth: Vec<u32>,
    /// Sorted ancestor indices, including the node itself.
    ancestors: Vec<Vec<usize>>,
}

impl Taxonomy {
    /// Builds a taxonomy from `(child, parent)` edges plus optional isolated nodes.
    pub fn from_edges<I, S>(edges: I, extra_nodes: &[String]) -> Result<Self, LexicalError>
    where
        I: IntoIterator<Item = (S, S)>,
        S: Into<String>,
    {
        let edges: BTreeSet<(String, String)> = edges.into_iter().map(|(c, p)| (c.into(), p.into())).collect();
        let mut names: BTreeSet<String> = extra_nodes.iter().cloned().collect();
        for (c, p) in &edges {
            names.insert(c.clone());
            names.insert(p.clone());
        }
        if names.is_empty() {
            return Err(LexicalError::Empty);
        }
        let ids: Vec<String> = names.into_iter().collect();
        let index: HashMap<String, usize> = ids.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        let n = ids.len();
        let mut parents = vec![Vec::new(); n];
        let mut children = vec![Vec::new(); n];
        for (c, p) in &edges {
            let (ci, pi) = (index[c], index[p]);
            parents[ci].push(pi);
            children[pi].push(ci);
        }
        let order = topological_order(&ids, &parents)?;
        let mut depth = vec![0u32; n];
        let mut ancestors: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &v in &order {
            depth[v] = 1 + parents[v].iter().map(|&p| depth[p]).max().unwrap_or(0);
            let mut anc: Vec<usize> = parents[v].iter().flat_map(|&p| ancestors[p].iter().copied()).collect();
            anc.push(v);
            anc.sort_unstable();
            anc.dedup();
            ancestors[v] = anc;
        }
        Ok(Taxonomy {
            ids,
            index,
            parents,
            children,
            depth,
            ancestors,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn roots(&self) -> Vec<&str> {
        (0..self.len())
            .filter(|&i| self.parents[i].is_empty())
            .map(|i| self.ids[i].as_str())
            .collect()
    }

    pub fn parents(&self, id: &str) -> Result<Vec<&str>, LexicalError> {
        let i = self.idx(id)?;
        Ok(self.parents[i].iter().map(|&p| self.ids[p].as_str()).collect())
    }

    pub fn edges(&self) -> impl Iterator<Item = (&str, &str)> {
        self.parents
            .iter()
            .enumerate()
            .flat_map(move |(c, ps)| ps.iter().map(move |&p| (self.ids[c].as_str(), self.ids[p].as_str())))
    }

    fn idx(&self, id: &str) -> Result<usize, LexicalError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| LexicalError::UnknownSynset(id.to_owned()))
    }

    pub fn depth(&self, id: &str) -> Result<u32, LexicalError> {
        Ok(self.depth[self.idx(id)?])
    }

    pub fn ancestors(&self, id: &str) -> Result<Vec<&str>, LexicalError> {
        let i = self.idx(id)?;
        Ok(self.ancestors[i].iter().map(|&a| self.ids[a].as_str()).collect())
    }

    fn lcs_index(&self, a: usize, b: usize) -> Option<usize> {
        let (xs, ys) = (&self.ancestors[a], &self.ancestors[b]);
        let (mut p, mut q) = (0, 0);
        let mut best: Option<usize> = None;
        // both lists are sorted by index, which is id order; ties keep the first (smallest id)
        while p < xs.len() && q < ys.len() {
            match xs[p].cmp(&ys[q]) {
                std::cmp::Ordering::Less => p += 1,
                std::cmp::Ordering::Greater => q += 1,
                std::cmp::Ordering::Equal => {
                    let c = xs[p];
                    if best.is_none_or(|b| self.depth[c] > self.depth[b]) {
                        best = Some(c);
                    }
                    p += 1;
                    q += 1;
                }
            }
        }
        best
    }

    pub fn lcs(&self, a: &str, b: &str) -> Result<&str, LexicalError> {
        let (i, j) = (self.idx(a)?, self.idx(b)?);
        self.lcs_index(i, j)
            .map(|c| self.ids[c].as_str())
            .ok_or_else(|| LexicalError::NoCommonAncestor(a.to_owned(), b.to_owned()))
    }

    /// Undirected edge distances from `src` to every node (`u32::MAX` if unreachable).
    fn bfs(&self, src: usize) -> Vec<u32> {
        let mut dist = vec![u32::MAX; self.len()];
        dist[src] = 0;
        let mut queue = VecDeque::from([src]);
        while let Some(v) = queue.pop_front() {
            let next = dist[v] + 1;
            for &w in self.parents[v].iter().chain(&self.children[v]) {
                if dist[w] == u32::MAX {
                    dist[w] = next;
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    pub fn path_similarity(&self, a: &str, b: &str) -> Result<f64, LexicalError> {
        let (i, j) = (self.idx(a)?, self.idx(b)?);
        if self.lcs_index(i, j).is_none() {
            return Err(LexicalError::NoCommonAncestor(a.to_owned(), b.to_owned()));
        }
        Ok(path_from_edges(self.bfs(i)[j]))
    }

    fn wup_index(&self, i: usize, j: usize) -> Option<f64> {
        let c = self.lcs_index(i, j)?;
        Some(2.0 * self.depth[c] as f64 / (self.depth[i] + self.depth[j]) as f64)
    }

    pub fn wup_similarity(&self, a: &str, b: &str) -> Result<f64, LexicalError> {
        let (i, j) = (self.idx(a)?, self.idx(b)?);
        self.wup_index(i, j)
            .ok_or_else(|| LexicalError::NoCommonAncestor(a.to_owned(), b.to_owned()))
    }

    pub fn lin_similarity(&self, ic: &InformationContent, a: &str, b: &str) -> Result<f64, LexicalError> {
        let c = self.lcs(a, b)?;
        let ic_a = ic.get(a)?;
        let ic_b = ic.get(b)?;
        let ic_c = ic.get(c)?;
        let denom = ic_a + ic_b;
        if denom == 0.0 {
            return Err(LexicalError::ZeroDenominator(a.to_owned(), b.to_owned()));
        }
        Ok(2.0 * ic_c / denom)
    }

    pub fn similarity(
        &self,
        measure: Measure,
        ic: Option<&InformationContent>,
        a: &str,
        b: &str,
    ) -> Result<f64, LexicalError> {
        match measure {
            Measure::Path => self.path_similarity(a, b),
            Measure::WuPalmer => self.wup_similarity(a, b),
            Measure::Lin => self.lin_similarity(ic.ok_or(LexicalError::ICRequired)?, a, b),
        }
    }
}

fn path_from_edges(d: u32) -> f64 {
    1.0 / (1.0 + d as f64)
}

/// Kahn order over child->parent edges, parents first. On failure reports one cycle.
fn topological_order(ids: &[String], parents: &[Vec<usize>]) -> Result<Vec<usize>, LexicalError> {
    let n = ids.len();
    let mut pending: Vec<usize> = parents.iter().map(Vec::len).collect();
    let mut children = vec![Vec::new(); n];
    for (c, ps) in parents.iter().enumerate() {
        for &p in ps {
            children[p].push(c);
        }
    }
    let mut queue: VecDeque<usize> = (0..n).filter(|&v| pending[v] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(v) = queue.pop_front() {
        order.push(v);
        for &c in &children[v] {
            pending[c] -= 1;
            if pending[c] == 0 {
                queue.push_back(c);
            }
        }
    }
    if order.len() == n {
        return Ok(order);
    }
    // every unplaced node still has an unplaced parent; follow parents until one repeats
    let start = (0..n).find(|&v| pending[v] > 0).expect("some node is unplaced");
    let mut seen = HashMap::new();
    let mut path = Vec::new();
    let mut v = start;
    while !seen.contains_key(&v) {
        seen.insert(v, path.len());
        path.push(v);
        v = *parents[v]
            .iter()
            .find(|&&p| pending[p] > 0)
            .expect("unplaced node has unplaced parent");
    }
    let mut cycle: Vec<String> = path[seen[&v]..].iter().map(|&i| ids[i].clone()).collect();
    cycle.push(ids[v].clone());
    Err(LexicalError::CycleDetected(cycle))
}

/// Parses `child<TAB>parent` lines. A line with a single id declares a node
/// without parents. Duplicate edges are ignored.
pub fn parse_taxonomy<R: BufRead>(source: R) -> Result<Taxonomy, LexicalError> {
    let mut edges = Vec::new();
    let mut lone = Vec::new();
    for item in tsv_data_lines(source) {
        let (line, text) = item?;
        let fields: Vec<&str> = text.split('\t').map(str::trim).collect();
        match fields.as_slice() {
            [id] if !id.is_empty() => lone.push((*id).to_owned()),
            [c, p] if !c.is_empty() && !p.is_empty() => edges.push(((*c).to_owned(), (*p).to_owned())),
            _ => {
                return Err(LexicalError::MalformedRow {
                    line,
                    reason: format!("expected child<TAB>parent, got {text:?}"),
                })
            }
        }
    }
    Taxonomy::from_edges(edges, &lone)
}

pub fn write_taxonomy<W: Write>(t: &Taxonomy, mut dest: W) -> io::Result<()> {
    for i in 0..t.len() {
        if t.parents[i].is_empty() && t.children[i].is_empty() {
            writeln!(dest, "{}", t.ids[i])?;
        }
        for &p in &t.parents[i] {
            writeln!(dest, "{}\t{}", t.ids[i], t.ids[p])?;
        }
    }
    dest.flush()
}

/// Precomputed information content, `-log p(c)`, per synset.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InformationContent {
    ic: BTreeMap<String, f64>,
}

impl InformationContent {
    pub fn new(ic: BTreeMap<String, f64>) -> Result<Self, LexicalError> {
        if let Some((k, v)) = ic.iter().find(|(_, v)| !v.is_finite() || **v < 0.0) {
            return Err(LexicalError::MalformedRow {
                line: 0,
                reason: format!("IC for {k:?} must be finite and non-negative, got {v}"),
            });
        }
        Ok(InformationContent { ic })
    }

    pub fn get(&self, id: &str) -> Result<f64, LexicalError> {
        self.ic
            .get(id)
            .copied()
            .ok_or_else(|| LexicalError::MissingIC(id.to_owned()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.ic.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

pub fn parse_ic<R: BufRead>(source: R) -> Result<InformationContent, LexicalError> {
    let mut ic = BTreeMap::new();
    for item in tsv_data_lines(source) {
        let (line, text) = item?;
        let bad = |reason: String| LexicalError::MalformedRow { line, reason };
        let (id, value) = text
            .split_once('\t')
            .ok_or_else(|| bad("expected synset_id<TAB>ic_value".into()))?;
        let v: f64 = value
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad IC value {value:?}")))?;
        if !v.is_finite() || v < 0.0 {
            return Err(bad(format!("IC must be finite and non-negative, got {v}")));
        }
        ic.insert(id.trim().to_owned(), v);
    }
    InformationContent::new(ic)
}

pub fn write_ic<W: Write>(ic: &InformationContent, mut dest: W) -> io::Result<()> {
    for (k, v) in ic.iter() {
        writeln!(dest, "{k}\t{v}")?;
    }
    dest.flush()
}

/// `1 - similarity` over all pairs of `ids` (sorted and deduplicated first).
pub fn lexical_distance_matrix(
    t: &Taxonomy,
    ids: &[String],
    measure: Measure,
    ic: Option<&InformationContent>,
) -> Result<DistanceMatrix, LexicalError> {
    let ids: Vec<String> = ids.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let s = ids.len();
    if s < 2 {
        return Err(LexicalError::TooFewSynsets(s));
    }
    if measure == Measure::Lin && ic.is_none() {
        return Err(LexicalError::ICRequired);
    }
    let nodes: Vec<usize> = ids.iter().map(|id| t.idx(id)).collect::<Result<_, _>>()?;
    let pair_err = |i: usize, j: usize, e: LexicalError| LexicalError::Pair {
        a: ids[i].clone(),
        b: ids[j].clone(),
        source: Box::new(e),
    };

    let rows: Vec<Vec<f32>> = (0..s - 1)
        .into_par_iter()
        .map(|i| {
            let edges = (measure == Measure::Path).then(|| t.bfs(nodes[i]));
            (i + 1..s)
                .map(|j| {
                    let sim = match &edges {
                        Some(dist) => {
                            if t.lcs_index(nodes[i], nodes[j]).is_none() {
                                Err(LexicalError::NoCommonAncestor(ids[i].clone(), ids[j].clone()))
                            } else {
                                Ok(path_from_edges(dist[nodes[j]]))
                            }
                        }
                        None => t.similarity(measure, ic, &ids[i], &ids[j]),
                    }
                    .map_err(|e| pair_err(i, j, e))?;
                    if !(0.0..=1.0).contains(&sim) {
                        return Err(LexicalError::SimilarityOutOfRange {
                            measure,
                            a: ids[i].clone(),
                            b: ids[j].clone(),
                            value: sim,
                        });
                    }
                    Ok((1.0 - sim) as f32)
                })
                .collect()
        })
        .collect::<Result<_, LexicalError>>()?;
    let mut condensed = Vec::with_capacity(s * (s - 1) / 2);
    for r in rows {
        condensed.extend(r);
    }
    debug_assert_eq!(condensed.len(), condensed_index(s, s - 2, s - 1) + 1);

    let mut params = BTreeMap::new();
    params.insert("measure".into(), measure.as_str().into());
    params.insert("similarity_to_distance".into(), "1-sim".into());
    params.insert("depth".into(), "longest_root_path_root_is_1".into());
    params.insert("lcs_tie".into(), "smallest_id".into());
    if measure == Measure::Path {
        params.insert("path".into(), "1/(1+undirected_edges)".into());
    }
    Ok(DistanceMatrix::new(ids, condensed, measure.as_str(), params)?)
}
