//! Recursive identification of nonlinear multi-input multi-output systems.
//!
//! A nominal linear-in-parameters predictor `Θ φ(t)` is refined by a sparse
//! latent-variable term `Z γ(t)`, where `γ(t)` is a Laplace-operator basis
//! expansion of the regressor. Both parts are learned from a convex,
//! tuning-free criterion obtained by majorizing the marginal likelihood:
//!
//! * [`lava::LavaSolver`] solves it recursively, one sample at a time;
//! * [`mm`] holds the batch likelihood machinery (exact cost, majorizer,
//!   closed-form nuisance updates, the full majorization-minimization loop).
//!
//! [`predictor::Model`] is the deployable result, and [`experiments`] contains
//! the two-input two-output saturation benchmark used to compare against an
//! affine ARX fit.

// Negated comparisons such as `!(x > 0.0)` also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod experiments;
pub mod lava;
pub mod mm;
pub mod predictor;
pub mod regressors;
pub mod rls;

pub use dataset::{Dataset, RsSignalSpec};
pub use error::{LavaError, Result};
pub use lava::{CrossProducts, LavaConfig, LavaSolver, WeightMode};
pub use mm::{LatentStats, MlParams};
pub use predictor::{Model, ZEntry};
pub use regressors::RegressorConfig;
pub use rls::RlsState;

pub use nalgebra::{DMatrix, DVector};
