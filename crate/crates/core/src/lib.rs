//! Numerical laboratory for gradient blow-up in the regularized Saint-Venant
//! and regularized Burgers equations.

pub mod cli;
pub mod grid;
pub mod holder;
pub mod nonlocal;
pub mod pde;
pub mod profile;
pub mod selfsim;
pub mod verify;
