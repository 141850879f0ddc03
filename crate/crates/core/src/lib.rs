//! Low-rank assembly and solution of adaptively refined THB-spline Galerkin
//! systems for the Poisson problem on the unit cube, entirely in tensor-train
//! form, together with a dense brute-force reference and an experiment harness.

pub mod assembly;
pub mod cuboids;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod hierarchy;
pub mod oracle;
pub mod quadrature;
pub mod solver;
pub mod splines;
pub mod tt;

pub use error::{Error, Result};
pub use tt::{DenseTensor, TTMatrix, TTVector};
