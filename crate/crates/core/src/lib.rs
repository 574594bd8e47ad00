//! Norm-based analysis of transformer attention.
//!
//! Attention output for query `i` is the sum over sources `j` of
//! `alpha_ij * f(x_j)`, with `f(x) = (x W_V + b_V) W_O`. This crate computes
//! those per-source contributions and their norms, aggregates them over
//! corpora (token categories, word frequency), extracts word alignments from
//! source-target attention and scores them by alignment error rate.

pub mod alignment;
pub mod attention;
pub mod bert_analysis;
pub mod cli;
pub mod error;
pub mod io_formats;
pub mod linalg;
pub mod stats;

pub use error::{Error, Result};
