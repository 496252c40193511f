//! Interpretable signed graph neural network for functional-connectivity
//! classification.

// `!(x > 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval;
pub mod explain;
pub mod graphs;
pub mod labels;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
pub use numerics::{DenseMatrix, RngStream, Scalar};

/// Double-precision matrix, the default element type everywhere.
pub type Matrix = DenseMatrix<f64>;
pub type Matrix32 = DenseMatrix<f32>;
pub type Params = model::ModelParams<f64>;
pub type Params32 = model::ModelParams<f32>;
pub type Graph = graphs::SignedGraph<f64>;
pub type Graph32 = graphs::SignedGraph<f32>;
pub type Dataset = graphs::GraphDataset<f64>;
pub type Dataset32 = graphs::GraphDataset<f32>;
