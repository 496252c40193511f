//! Dense matrices, the scalar abstraction and seeded random streams.

mod matrix;
mod rng;
mod scalar;

pub use matrix::DenseMatrix;
pub use rng::RngStream;
pub use scalar::Scalar;
