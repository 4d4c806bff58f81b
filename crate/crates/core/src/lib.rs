//! Bayesian multiple imputation for incompletely observed tensors.
//!
//! The engines fit a rank-R CP factorization by Gibbs sampling, either
//! with i.i.d. Gaussian residuals ([`indep`]) or with a separable
//! (Kronecker-structured) residual covariance ([`separable`]), and return
//! posterior draws for every missing entry. Supporting modules cover the
//! frequentist ALS/EM baseline, cross-validated rank selection and
//! convergence checks, simulation designs, and diversity analysis of
//! compositional fibers.

pub mod als;
pub mod analysis;
pub mod draws;
pub mod error;
pub mod indep;
pub mod io;
pub mod linalg;
pub mod random;
pub mod select;
pub mod separable;
pub mod sim;
pub mod tensor;

pub use als::{als_fit, em_impute, AlsConfig, AlsFit, AlsInit, EmConfig, EmFit};
pub use draws::{ChainTrace, ImputationDraws, InitStrategy, McmcConfig, RunOutput};
pub use error::{Error, Result};
pub use linalg::CholeskyFactor;
pub use random::RngStream;
pub use tensor::{CpModel, DenseTensor, MaskedTensor};

pub use nalgebra;
