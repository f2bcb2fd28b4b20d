//! Desk-scale laboratory for studying what small-magnitude pre-trained
//! weights contribute to downstream tasks.
//!
//! The crate provides:
//!
//! - [`tensor`]: deterministic dense `f64` tensors and matrix kernels;
//! - [`rng`]: seeded, platform-stable random draws;
//! - [`model`]: a tiny transformer with exact analytic gradients;
//! - [`task`]: synthetic task families with controllable difficulty knobs,
//!   plus score-table ingestion;
//! - [`prune`]: importance criteria (magnitude, activation-aware,
//!   second-order) and mask builders (unstructured global/layerwise, N:M);
//! - [`transfer`]: the four fine-tuning regimes (dense, partial freezing,
//!   sparse, sparse-to-dense) as deterministic training loops;
//! - [`analysis`]: task-difficulty scores, dense-normalized records, linear
//!   interpolation curves with loss barriers, and layer-collapse reports;
//! - [`checkpoint`]: bit-exact binary serialization of parameter sets.

pub mod analysis;
mod binio;
pub mod checkpoint;
pub mod error;
pub mod model;
pub mod prune;
pub mod rng;
pub mod task;
pub mod tensor;
pub mod transfer;

pub use error::{Error, Result};
pub use model::{Batch, GradSet, HeadKind, Labels, ModelConfig, ParamSet};
pub use prune::{Criterion, ImportanceScores, MaskPattern, PruneMask};
pub use rng::Rng;
pub use tensor::Tensor;
