//! Two-stage spatio-temporal modelling of block-maxima extremes.
//!
//! Stage one fits covariate-dependent GEV margins with a penalized additive
//! structure (linear terms, cubic and cyclic splines, random slopes) selected
//! by spatio-temporal cross-validation. Stage two transforms the maxima to
//! uniform margins and fits a max-infinitely divisible copula whose mean
//! measure and spatial range vary with a seasonal temperature covariate,
//! estimated by pairwise composite likelihood.

pub mod empirical;
pub mod error;
pub mod evd;
pub mod gam;
pub mod geo;
pub mod ingest;
pub mod maxid;
pub mod num;
pub mod optim;
pub mod quad;
pub mod sim;
pub mod smooth;
pub mod table;

pub use error::{ExtvalError, Result};
