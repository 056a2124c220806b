//! Visual distance between WordNet synsets.
//!
//! The pipeline turns per-image CNN activation matrices into ternary
//! full-network embeddings, collapses each synset's images into a
//! mode-based representative, and measures synset dissimilarity as the
//! Jaccard distance between the representatives' characteristic-by-presence
//! features. The resulting matrices can be compared against WordNet lexical
//! similarities (path, Wu-Palmer, Lin) with correlation, clustering and 2-D
//! projection.
//!
//! Stages and their modules:
//!
//! * [`ingest`]: raw activation matrices, sample manifests, layer layouts.
//! * [`fne`]: feature standardisation and ternary discretisation.
//! * [`representative`]: per-synset mode representatives and presence bitsets.
//! * [`distance`]: pair counts, visual similarity/distance, pairwise matrices.
//! * [`lexical`]: hypernym taxonomy and lexical similarity measures.
//! * [`analysis`]: correlation, UPGMA clustering, MDS/PCA projection.

pub mod analysis;
pub mod distance;
pub mod eigen;
pub mod fne;
pub mod ingest;
pub mod lexical;
pub mod representative;
pub mod synth;
pub mod ternary;

mod binio;

pub use distance::{distance_matrix, visual_distance, visual_similarity, DistanceError, DistanceMatrix, PairCounts};
pub use fne::{discretize, standardize, FneError, StandardizationStats, TernaryMatrix, Thresholds};
pub use ingest::{group_by_synset, IngestError, LayerLayout, Manifest, RawEmbeddingMatrix};
pub use lexical::{InformationContent, LexicalError, Measure, Taxonomy};
pub use representative::{
    build_all_representatives, compute_representative, PresenceBitset, RepresentativeError, SynsetRepresentative,
};
pub use ternary::{Ternary, TernaryVector};
