//! Estimation of causal excursion effects on binary proximal outcomes in
//! micro-randomized trials (MRTs).
//!
//! An MRT randomizes each participant among treatment options at many
//! decision points. The binary proximal outcome for decision point `t` is
//! defined over a window of `delta` decision points and satisfies the
//! maximum property: it equals the maximum of the `delta` sub-outcomes
//! observed in that window. Because additional randomizations fall inside
//! the window, estimating the excursion effect requires inverse probability
//! weighting over the in-window treatment assignments.
//!
//! This crate provides:
//!
//! - the per-decision weighted estimator (pd-EMEE), which truncates the
//!   weight product at the first decision point where the event has already
//!   occurred, together with the full-product comparator (EMEE) and the
//!   reference-regime-K generalizations ([`estimator`], [`weights`]);
//! - log-link GEE comparators with independent and exchangeable working
//!   correlation ([`gee`]);
//! - sandwich variance with small-sample corrections (leverage-adjusted
//!   residuals and t critical values) ([`inference`]);
//! - a seeded generative model with closed-form oracles for the true
//!   effects ([`simgen`]);
//! - a replication harness producing bias/SD/RMSE/coverage tables and
//!   relative-efficiency curves, plus the closed-form asymptotic relative
//!   efficiency for the simplified single-outcome setting ([`bench`]).
//!
//! Numeric code is generic over the scalar type via [`scalar::Real`]
//! (any `num_traits::Float`); the weight kernels are generic over the
//! weaker [`scalar::WeightScalar`] so they can also be evaluated in exact
//! rational arithmetic. Concrete `f64` aliases are exported at the crate
//! root.

pub mod bench;
pub mod data;
pub mod dist;
pub mod error;
pub mod estimator;
pub mod gee;
pub mod inference;
pub mod linalg;
pub mod outcomes;
pub mod scalar;
pub mod simgen;
pub mod weights;

pub use error::{Error, Result};

/// Default-precision dataset.
pub type Dataset = data::MrtDataset<f64>;
/// Default-precision weight set.
pub type Weights = weights::WeightSet<f64>;
/// Default-precision estimator specification.
pub type Spec = estimator::EstimatorSpec<f64>;
/// Default-precision fit result.
pub type Fit = estimator::FitResult<f64>;
/// Default-precision dense matrix.
pub type Matrix = linalg::Mat<f64>;
/// Default-precision generative configuration.
pub type GenConfig = simgen::GenerativeConfig<f64>;
/// Default-precision simulation report.
pub type Report = bench::SimulationReport<f64>;
