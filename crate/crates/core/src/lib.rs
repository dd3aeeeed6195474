//! Station-level and origin-destination metro ridership forecasting with a
//! physical-virtual collaboration graph network: multi-graph convolutional
//! GRUs fused with a network-wide GRU inside a two-layer encoder/decoder.

pub mod autodiff;
pub mod config;
pub mod error;
pub mod eval;
pub mod graphs;
pub mod ingest;
pub mod matrix;
pub mod model;
pub mod od;
pub mod scalar;
pub mod train;

pub use error::{Error, Result};
pub use matrix::{CsrMatrix, Matrix};
pub use scalar::Scalar;

/// Double-precision parameters, used for training.
pub type Params64 = model::PvcgnParams<f64>;
/// Single-precision parameters for inference-only deployment.
pub type Params32 = model::PvcgnParams<f32>;
pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
