//! Smoothers: penalized regression spline bases (cubic, cyclic cubic, tensor
//! product) and LOESS local polynomial regression.

mod loess;
mod spline;

pub use loess::{loess, loess_at};
pub use spline::{validate_penalty, SplineBasis, SplineKind, TensorBasis};
