//! Multiscale sparse Gaussian-process regression.
//!
//! Training points are reduced to a set of cluster centers by greedy covering
//! at a ladder of scales `h_s = h1 * beta^(s-1)`. Each center carries a Gaussian
//! basis function with its own width, and regression runs either in the
//! D-dimensional weight space ([`regression::MethodDModel`]) or in the N×N
//! function space ([`regression::MethodNModel`]). Both paths produce the same
//! predictive mean, variance and log-marginal likelihood.
//!
//! With the default `parallel` feature, design-matrix assembly, batch
//! prediction and multi-start optimization run on rayon; without it every
//! loop runs sequentially and produces identical results.

// `!(x > 0.0)` is used on purpose: it rejects NaN along with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod clustering;
pub mod dataset;
mod error;
pub mod hyperopt;
pub mod kernel;
pub mod linalg;
pub mod model_file;
mod par;
pub mod pipeline;
pub mod regression;

pub use error::{Error, Result};
