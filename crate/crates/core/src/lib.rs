pub mod bench;
pub mod error;
pub mod experiment;
pub mod hamiltonian;
pub mod matrix;
pub mod gradcheck;
pub mod ode;
pub mod optim;
pub mod problems;
pub mod projection;
pub mod subspace;
pub mod svd;
pub mod verify;

pub use error::{Error, Result};
pub use matrix::{frobenius_inner, frobenius_norm, Matrix};
