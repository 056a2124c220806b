//! Seeded synthetic datasets for tests and benchmarks.
//!
//! Synsets form a random recursive tree under a single root. Each synset has
//! an activation prototype derived from its parent's, and images are noisy
//! copies of their synset's prototype. Noise shrinks with depth, so deeper
//! synsets produce more consistent presence sets.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::ingest::{LayerKind, LayerLayout, LayerSegment, Manifest, ManifestEntry, RawEmbeddingMatrix};
use crate::lexical::{InformationContent, Taxonomy};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_samples: usize,
    pub n_features: usize,
    pub n_synsets: usize,
}

#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub raw: RawEmbeddingMatrix,
    pub manifest: Manifest,
    pub layout: LayerLayout,
    pub taxonomy: Taxonomy,
    pub ic: InformationContent,
}

pub fn synset_id(k: usize) -> String {
    format!("n{k:08}")
}

pub fn generate(cfg: &SynthConfig) -> SynthDataset {
    assert!(cfg.n_samples >= 1 && cfg.n_features >= 1 && cfg.n_synsets >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

    // node 0 is the unlabeled root; nodes 1..=n_synsets carry images
    let n_nodes = cfg.n_synsets + 1;
    let mut parent = vec![usize::MAX; n_nodes];
    let mut depth = vec![1u32; n_nodes];
    let mut prototypes: Vec<Vec<f64>> = Vec::with_capacity(n_nodes);
    prototypes.push((0..cfg.n_features).map(|_| normal(&mut rng)).collect());
    for k in 1..n_nodes {
        let p = rng.random_range(0..k);
        parent[k] = p;
        depth[k] = depth[p] + 1;
        let proto = prototypes[p].iter().map(|v| 0.8 * v + 0.6 * normal(&mut rng)).collect();
        prototypes.push(proto);
    }

    let mut values = Vec::with_capacity(cfg.n_samples * cfg.n_features);
    let mut entries = Vec::with_capacity(cfg.n_samples);
    for i in 0..cfg.n_samples {
        let k = 1 + i % cfg.n_synsets;
        let noise = 1.5 / depth[k] as f64;
        values.extend(prototypes[k].iter().map(|v| (v + noise * normal(&mut rng)) as f32));
        entries.push(ManifestEntry {
            sample_index: i,
            image_id: format!("img_{i:06}"),
            synset_id: synset_id(k),
        });
    }

    let mut subtree = vec![1usize; n_nodes];
    for k in (1..n_nodes).rev() {
        subtree[parent[k]] += subtree[k];
    }
    let ic: BTreeMap<String, f64> = (0..n_nodes)
        .map(|k| (synset_id(k), (n_nodes as f64 / subtree[k] as f64).ln()))
        .collect();
    let taxonomy = Taxonomy::from_edges(
        (1..n_nodes).map(|k| (synset_id(k), synset_id(parent[k]))),
        &[synset_id(0)],
    )
    .expect("a recursive tree is acyclic");

    SynthDataset {
        raw: RawEmbeddingMatrix::new(cfg.n_samples, cfg.n_features, values).expect("normal samples are finite"),
        manifest: Manifest::new(entries).expect("indices are contiguous"),
        layout: synthetic_layout(cfg.n_features),
        taxonomy,
        ic: InformationContent::new(ic).expect("log ratios are non-negative"),
    }
}

/// Up to six equal segments; roughly the last third are fully connected.
fn synthetic_layout(m: usize) -> LayerLayout {
    let parts = m.min(6);
    let fc_from = parts - parts.div_ceil(3);
    let segments = (0..parts)
        .map(|p| {
            let (kind, name) = if p < fc_from || parts == 1 {
                (LayerKind::Convolutional, format!("conv{}", p + 1))
            } else {
                (LayerKind::FullyConnected, format!("fc{}", p - fc_from + 1))
            };
            LayerSegment {
                layer_name: name,
                kind,
                start: p * m / parts,
                end_exclusive: (p + 1) * m / parts,
            }
        })
        .collect();
    LayerLayout::new(segments).expect("segments tile [0, m)")
}
