//! Covariate-adjusted Fisher randomization tests for the average treatment
//! effect under complete, cluster, stratified and rerandomized designs.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dataset;
pub mod designs;
pub mod error;
pub mod estimators;
pub mod frt;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod perm_lm;
pub mod rng;
pub mod sim;

pub use dataset::Dataset;
pub use error::{Error, Result};
pub use estimators::{Adjustment, EstimateTriple, StatisticSpec, Studentization};
