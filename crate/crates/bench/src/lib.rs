//! Inputs shared by the benchmarks.

use vd_core::synth::{generate, SynthConfig};
use vd_core::{
    build_all_representatives, discretize, group_by_synset, standardize, RawEmbeddingMatrix, SynsetRepresentative,
    TernaryMatrix, Thresholds,
};

/// A synthetic raw matrix of `samples x features` over `synsets` classes.
pub fn raw(samples: usize, features: usize, synsets: usize) -> (RawEmbeddingMatrix, vd_core::Manifest) {
    let d = generate(&SynthConfig {
        seed: 0xBE7C,
        n_samples: samples,
        n_features: features,
        n_synsets: synsets,
    });
    (d.raw, d.manifest)
}

pub fn ternary(samples: usize, features: usize, synsets: usize) -> (TernaryMatrix, vd_core::Manifest) {
    let (raw, manifest) = raw(samples, features, synsets);
    let (z, _) = standardize(&raw);
    (discretize(&z, Thresholds::default()), manifest)
}

/// One representative per synset, each built from a single image.
pub fn representatives(synsets: usize, features: usize) -> Vec<SynsetRepresentative> {
    let (t, manifest) = ternary(synsets, features, synsets);
    build_all_representatives(&t, &group_by_synset(&manifest)).expect("every synset has an image")
}
