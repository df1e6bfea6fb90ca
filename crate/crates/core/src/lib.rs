//! Spectral gap decisions for model ends of tame hyperbolic 3-manifolds,
//! reduced to finite-dimensional linear algebra and ODE numerics.

pub mod cli;
pub mod derivative;
pub mod json;
pub mod lagrangian;
pub mod linalg;
pub mod mapping_torus;
pub mod poly;
pub mod profile;
pub mod symplectic;
pub mod tube;
pub mod zorich;
