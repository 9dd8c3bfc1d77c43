//! Spatially clustered contamination risk estimation and risk-adaptive
//! sampling design for binary well-test data.
//!
//! The pipeline runs in four stages:
//!
//! 1. [`ingest`]: load raw test records, binarize at the contaminant level and
//!    collapse repeated measurements into one observation per location.
//! 2. [`graph`]: build a spatial neighbourhood graph over the observations.
//! 3. [`estimator`]: fit a graph fused-lasso logistic model by proximal
//!    gradient with an ADMM inner solver, choosing the penalty weight by BIC.
//! 4. [`sizing`] and [`design`]: turn per-cluster probabilities into sample
//!    sizes and thin a candidate well population into a sampling plan.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod design;
pub mod error;
pub mod estimator;
pub mod geometry;
pub mod graph;
pub mod ingest;
pub mod simulate;
pub mod sizing;

pub use error::{Error, Result};
pub use geometry::{CountyPolygon, Point};
