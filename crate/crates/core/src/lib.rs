//! Softmax temperature calibration for T5-style relative-position attention.
//!
//! Attention distributions flatten as the input grows past the training
//! length. This crate measures that flattening on an instrumented toy
//! encoder, picks an extrapolation temperature by aligning either the
//! average maximum probability or the average entropy with the training
//! length, and provides closed-form solvers under a Gaussian logit model
//! together with Monte-Carlo oracles for every approximation involved.
//!
//! Modules:
//! - [`rpe_bias`]: relative position buckets and bias matrices
//! - [`softmax_stats`]: temperature softmax, max-probability and entropy
//! - [`encoder`]: minimal instrumented encoder
//! - [`calibration`]: grid-search temperature alignment and the log baseline
//! - [`analytic`]: Gaussian fits, closed-form solvers, QQ check, MC oracles
//! - [`tasks`]: synthetic retrieval tasks and the needle model
//! - [`format`]: number formatting for CSV output

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod calibration;
pub mod encoder;
pub mod error;
pub mod format;
pub mod rpe_bias;
pub mod softmax_stats;
pub mod tasks;

pub use error::{Error, Result};
