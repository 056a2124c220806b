use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vd_core::lexical::lexical_distance_matrix;
use vd_core::{InformationContent, Measure, Taxonomy};

/// Random DAG over `n` nodes; node 0 is the only root, later nodes pick 1-2 earlier parents.
fn random_dag(rng: &mut ChaCha8Rng, n: usize) -> Vec<(usize, usize)> {
    let mut edges = BTreeSet::new();
    for k in 1..n {
        edges.insert((k, rng.random_range(0..k)));
        if rng.random_bool(0.3) {
            edges.insert((k, rng.random_range(0..k)));
        }
    }
    edges.into_iter().collect()
}

fn name(k: usize) -> String {
    format!("w{k:03}")
}

struct Naive {
    parents: Vec<Vec<usize>>,
    neighbours: Vec<Vec<usize>>,
}

impl Naive {
    fn depth(&self, v: usize) -> u32 {
        1 + self.parents[v].iter().map(|&p| self.depth(p)).max().unwrap_or(0)
    }

    fn ancestors(&self, v: usize, out: &mut BTreeSet<usize>) {
        if out.insert(v) {
            for &p in &self.parents[v] {
                self.ancestors(p, out);
            }
        }
    }

    // names sort like indices, so smallest index is smallest id
    fn lcs(&self, a: usize, b: usize) -> usize {
        let (mut sa, mut sb) = (BTreeSet::new(), BTreeSet::new());
        self.ancestors(a, &mut sa);
        self.ancestors(b, &mut sb);
        let mut best = usize::MAX;
        for &c in sa.intersection(&sb) {
            if best == usize::MAX || self.depth(c) > self.depth(best) {
                best = c;
            }
        }
        best
    }

    fn edges_between(&self, a: usize, b: usize) -> u32 {
        let mut dist = vec![u32::MAX; self.parents.len()];
        dist[a] = 0;
        let mut q = VecDeque::from([a]);
        while let Some(v) = q.pop_front() {
            for &w in &self.neighbours[v] {
                if dist[w] == u32::MAX {
                    dist[w] = dist[v] + 1;
                    q.push_back(w);
                }
            }
        }
        dist[b]
    }
}

#[test]
fn matrices_match_naive_measures() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for round in 0..20 {
        let n = 25;
        let edges = random_dag(&mut rng, n);
        let mut naive = Naive {
            parents: vec![Vec::new(); n],
            neighbours: vec![Vec::new(); n],
        };
        for &(c, p) in &edges {
            naive.parents[c].push(p);
            naive.neighbours[c].push(p);
            naive.neighbours[p].push(c);
        }
        let t = Taxonomy::from_edges(edges.iter().map(|&(c, p)| (name(c), name(p))), &[]).unwrap();
        // IC grows along every edge so lin stays within [0, 1]
        let mut ic_values = vec![0f64; n];
        for k in 1..n {
            let top = naive.parents[k].iter().map(|&p| ic_values[p]).fold(0.0, f64::max);
            ic_values[k] = top + rng.random_range(0.1..1.0);
        }
        let ic = InformationContent::new((0..n).map(|k| (name(k), ic_values[k])).collect::<BTreeMap<_, _>>()).unwrap();

        let chosen: Vec<usize> = (1..n).filter(|_| rng.random_bool(0.5)).collect();
        if chosen.len() < 2 {
            continue;
        }
        let ids: Vec<String> = chosen.iter().rev().map(|&k| name(k)).collect();
        for measure in [Measure::Path, Measure::WuPalmer, Measure::Lin] {
            let d = lexical_distance_matrix(&t, &ids, measure, Some(&ic)).unwrap();
            assert_eq!(
                d.synset_ids(),
                chosen.iter().map(|&k| name(k)).collect::<Vec<_>>().as_slice()
            );
            for (i, &a) in chosen.iter().enumerate() {
                for (j, &b) in chosen.iter().enumerate().skip(i + 1) {
                    let c = naive.lcs(a, b);
                    let sim = match measure {
                        Measure::Path => 1.0 / (1.0 + naive.edges_between(a, b) as f64),
                        Measure::WuPalmer => 2.0 * naive.depth(c) as f64 / (naive.depth(a) + naive.depth(b)) as f64,
                        Measure::Lin => 2.0 * ic_values[c] / (ic_values[a] + ic_values[b]),
                    };
                    assert_eq!(d.get(i, j), (1.0 - sim) as f32, "round {round} {measure} ({a}, {b})");
                }
            }
        }
    }
}
