//! PDE-constrained functionals: torsional rigidity by the method of
//! fundamental solutions and Neumann eigenvalues by RBF-Galerkin.

pub mod mfs;
pub mod rbf;

pub use mfs::{torsion, MfsConfig};
pub use rbf::{neumann_eigs, neumann_eigs_with, NeumannEigs, RbfBasis, RbfConfig};
