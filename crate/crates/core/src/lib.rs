//! Stochastic Armijo line-search optimizers over a small reverse-mode
//! autodiff core.
//!
//! The crate provides:
//!
//! * [`autodiff`]: define-by-run tape over dense `f64` tensors.
//! * [`line_search`]: Armijo backtracking and the step-size reset rule.
//! * [`optim`]: the Adam baseline, SGD and Adam line-search optimizers, and
//!   the per-layer variant that keeps one step size per parameter unit.
//! * [`models`]: logistic regression, MLP and a single-head transformer
//!   encoder with named, partitionable parameters.
//! * [`data`]: seeded synthetic tasks, batching and CSV ingestion.
//! * [`harness`]: multi-seed experiment driver with CSV output.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod data;
pub mod error;
pub mod harness;
pub mod line_search;
pub mod models;
pub mod optim;

pub use error::{Error, Result};
