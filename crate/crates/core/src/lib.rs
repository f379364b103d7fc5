//! Manifold-aware path attribution.
//!
//! The crate trains small variational autoencoders and classifiers, computes
//! geodesics under the pullback metric of the decoder, and attributes
//! classifier outputs along those geodesics. Baseline attribution methods,
//! attributional attacks, and explanation metrics live alongside.

pub mod attacks;
pub mod attribution;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod experiment;
pub mod geodesic;
pub mod gradcheck;
pub mod io;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod tensor;

pub use autodiff::{Graph, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;
