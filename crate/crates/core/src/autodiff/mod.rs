//! Reverse-mode differentiation of scalar losses with respect to network
//! parameters.
//!
//! A [`Tape`] records elementary scalar operations with their local partials
//! and coarse "block" operations (linear algebra, quadrature passes) with a
//! custom adjoint rule. Tapes are single-writer; independent bodies record on
//! independent tapes.

mod matrix;
mod real;
mod tape;

pub use matrix::{
    cholesky_values, eigen_clusters, lstsq, sym_eig_values, SymEig, VarMatrix,
    DEFAULT_DEGENERACY_GAP,
};
pub(crate) use matrix::to_row_major;
pub use real::{dot, dot_const, sum, Real};
pub use tape::{Adjoints, Tape, Var, Vjp};
