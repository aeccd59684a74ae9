//! Multi-scale vision-language out-of-distribution detection over precomputed
//! embeddings.
//!
//! An image is represented by a global embedding plus `n×n` mid-scale and
//! `2n×2n` high-scale patch embeddings. A residual adapter and per-scale text
//! biases are trained with cross-entropy on entropy-filtered per-scale
//! predictions and with entropy maximisation on hard pseudo-OOD embeddings
//! mined from high-scale patches. At inference, the maximum softmax
//! probability of the averaged per-scale prediction scores ID-ness.
//!
//! All math is generic over [`Scalar`] (`f32` or `f64`); the aliases below fix
//! the default `f64` instantiation.

pub mod alignment;
pub mod detector;
pub mod embedding_store;
pub mod error;
pub mod gradcheck;
pub mod hierarchy;
pub mod linalg;
pub mod objective;
pub mod pseudo_ood;
pub mod scalar;
pub mod trainer;

pub use alignment::{AlignmentConfig, PredictionSet};
pub use detector::{EvalReport, ScoredItem};
pub use embedding_store::{
    generate_synthetic, load_bundle, write_bundle, Bundle, BundleManifest, ImageEmbeddings,
    SyntheticSpec, TextBank,
};
pub use error::{Error, Result};
pub use hierarchy::{HierarchyState, ModelParams};
pub use linalg::Mat;
pub use objective::{Ablations, Gradients, LossBreakdown, ObjectiveConfig};
pub use pseudo_ood::PseudoOodSet;
pub use scalar::Scalar;
pub use trainer::{Checkpoint, TrainConfig};

/// Default scalar for training and evaluation.
pub type Real = f64;

pub type Params = ModelParams<Real>;
pub type Grads = Gradients<Real>;
pub type Embeddings = ImageEmbeddings<Real>;
pub type Texts = TextBank<Real>;
pub type EmbeddingBundle = Bundle<Real>;
pub type Hierarchy = HierarchyState<Real>;
pub type Predictions = PredictionSet<Real>;
pub type PseudoOod = PseudoOodSet<Real>;
pub type Losses = LossBreakdown<Real>;
pub type Matrix = Mat<Real>;

pub type Params32 = ModelParams<f32>;
pub type Embeddings32 = ImageEmbeddings<f32>;
pub type EmbeddingBundle32 = Bundle<f32>;
