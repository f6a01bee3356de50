//! Sampling Blaschke–Santaló diagrams with smooth gauge networks.
//!
//! Convex bodies are images of the unit ball under maps built from
//! log-sum-exp gauges; shape functionals are pulled back to the ball and
//! differentiated in reverse mode, and an interacting particle system spreads
//! the bodies' diagram coordinates out by minimizing a Riesz energy.

pub mod autodiff;
pub mod baseline;
pub mod checks;
pub mod diagram;
pub mod error;
pub mod evaluate;
pub mod fit;
pub mod functionals;
pub mod gauge;
pub mod io;
pub mod geometry;
pub mod optim;
pub mod pde;
pub mod quadrature;
pub mod sampler;

pub use error::{Error, Result};
pub use evaluate::{Discretization, Evaluator};
