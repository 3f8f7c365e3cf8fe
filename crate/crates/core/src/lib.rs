//! Motif convolutional networks for semi-supervised node classification.
//!
//! The pipeline: count motif instances over an undirected graph to get
//! weighted motif-induced adjacencies, normalize them with one of five matrix
//! functions, raise them to K steps, and let a per-node policy (trained by
//! reinforcement) pick which motif/step neighborhood each node propagates
//! over, with per-neighbor self-attention inside the chosen neighborhood.
//! Plain graph-convolution and graph-attention models fall out as degenerate
//! configurations.

pub mod checkpoint;
pub mod config;
pub mod dense;
pub mod error;
pub mod graph;
pub mod model;
pub mod motifs;
pub mod psi;
pub mod rng;
pub mod sparse;
pub mod synth;
pub mod training;
pub mod wl;

pub use dense::DenseMatrix;
pub use error::{McnError, Result};
pub use graph::{Dataset, FeatureMatrix, Graph, LabelSet, SplitSpec};
pub use motifs::{MotifAdjacency, MotifCountMatrix, MotifKind};
pub use psi::{MatrixBank, MotifMatrix, PsiKind};
pub use sparse::CsrMatrix;
