//! View-specific embedding networks for cross-camera re-identification.
//!
//! Each camera view gets its own small dense feature extractor. The networks
//! are trained jointly with per-view softmax classification plus two
//! cross-view constraints: a Euclidean constraint between same-identity
//! embeddings from different views, and a center loss with per-view and
//! global class centers. The two constraints are trained in alternating
//! phases, and a one-to-others reduction handles more than two views.
//!
//! Modules, bottom up:
//!
//! - [`math`]: dense kernels and the seeded random stream.
//! - [`dataset`]: synthetic multi-view generation, CSV ingest, splits.
//! - [`network`]: view networks with hand-written backprop and checkpoints.
//! - [`losses`]: loss values and analytic gradients.
//! - [`trainer`]: optimizer, phase training, iterative and multi-view drivers.
//! - [`eval`]: distance matrices, CMC, mAP, evaluation protocols.
//! - [`gradcheck`]: finite-difference verification of every analytic gradient.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod losses;
pub mod math;
pub mod network;
pub mod trainer;

pub use dataset::{Dataset, GenSpec, Sample, SplitMode, SplitSpec};
pub use error::{Error, Result};
pub use eval::{EvalOptions, EvalReport, NetSet, Protocol};
pub use losses::{CenterBank, IdentityGroup, LossReport, Phase};
pub use math::{Matrix, SeededRng};
pub use network::{ParamGrads, ViewLabel, ViewNetwork};
pub use trainer::{TrainConfig, TrainLog};

