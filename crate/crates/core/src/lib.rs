//! Asymptotic theory and finite-size simulation of hard and soft transfer
//! learning for generalized linear models with Gaussian features.

pub mod asymptotic;
pub mod empirical;
pub mod error;
pub mod experiment;
pub mod model;
pub mod phase;
pub mod prox;
pub mod quadrature;

pub use error::{Error, Result};
