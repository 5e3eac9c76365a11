//! Finite-strain elastoplasticity with mixed isotropic/kinematic hardening.
//!
//! The constitutive update is driven by four hardening potentials (isotropic
//! and kinematic free energy, isotropic and kinematic dissipation), each
//! either a classical phenomenological form or a constraint-satisfying
//! feedforward network. A uniaxial driver produces cyclic stress-strain
//! series, and the training module fits potential parameters to such series
//! with Adam, differentiating through the implicit return mapping.

pub mod config;
pub mod constitutive;
pub mod dataio;
pub mod diff;
pub mod driver;
pub mod error;
pub mod icnn;
pub mod linalg;
pub mod potentials;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor2;
