//! Fixtures shared by the benchmarks.

use santalo::evaluate::{Discretization, Evaluator};
use santalo::gauge::GaugeNetwork;
use santalo::quadrature::QuadratureConfig;

/// A jittered 2D network of the default size.
pub fn network_2d(seed: u64) -> GaugeNetwork {
    GaugeNetwork::init_random_with_jitter(2, GaugeNetwork::default_directions(2), seed, 1.0, 0.5).expect("valid network")
}

/// Evaluator on a lattice of spacing `h`.
pub fn evaluator_2d(h: f64) -> Evaluator {
    let mut disc = Discretization::default_for(2);
    disc.quadrature = QuadratureConfig {
        volume_h: h,
        boundary_m: 256,
    };
    Evaluator::new(2, &disc).expect("valid discretization")
}
