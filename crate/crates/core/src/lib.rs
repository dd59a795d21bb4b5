//! Maximum-likelihood estimation for matrix-variate normal and matrix-variate
//! t distributions, and Bayes-rule discriminant analysis built on them.
//!
//! * [`mxvn_fit`] alternates closed-form row/column scatter updates.
//! * [`ecme`] fits `t_{p,q}(ν, M, Σ, Ω)` by ECME over a Wishart augmentation.
//! * [`classifier`] trains per-group models and predicts by `argmax log η_i f_i(X)`.

pub mod classifier;
pub mod datamodel;
pub mod distributions;
pub mod ecme;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod mxvn_fit;
pub mod rng;
pub mod satimage;
mod optim;
mod updates;
pub mod specfun;

pub use datamodel::{
    normalize_identifiability, MatrixStack, MeanStructure, MxvnParams, MxvtParams, ScatterStructure,
    StructureSpec, SufficientStats,
};
pub use error::{Error, Result};
pub use rng::RngSeed;
