//! Deterministic node/weight sets on the reference ball and sphere.
//!
//! Volume integrals use the cell-center rule on a regular grid offset by half
//! a cell (so no node sits on the origin, where the gauge map is not smooth);
//! boundary integrals use equispaced angles in 2D and a Fibonacci lattice in 3D.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Resolution of a [`Quadrature`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureConfig {
    /// Lattice spacing on the ball.
    pub volume_h: f64,
    /// Number of sphere nodes.
    pub boundary_m: usize,
}

impl QuadratureConfig {
    pub fn default_for(dim: usize) -> Self {
        match dim {
            2 => Self {
                volume_h: 0.01,
                boundary_m: 512,
            },
            _ => Self {
                volume_h: 0.05,
                boundary_m: 2048,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.volume_h > 0.0 && self.volume_h < 1.0) {
            return Err(Error::Validation(format!(
                "quadrature: volume_h must lie in (0, 1), got {}",
                self.volume_h
            )));
        }
        if self.boundary_m < 8 {
            return Err(Error::Validation(format!(
                "quadrature: boundary_m must be at least 8, got {}",
                self.boundary_m
            )));
        }
        Ok(())
    }
}

/// Node sets on the unit ball `B` and the unit sphere `∂B`.
#[derive(Clone, Debug)]
pub struct Quadrature {
    dim: usize,
    volume_nodes: Vec<f64>,
    volume_weights: Vec<f64>,
    boundary_nodes: Vec<f64>,
    boundary_weights: Vec<f64>,
}

impl Quadrature {
    pub fn new(dim: usize, config: QuadratureConfig) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::Validation(format!("quadrature: dim must be 2 or 3, got {dim}")));
        }
        config.validate()?;
        let (volume_nodes, volume_weights) = ball_lattice(dim, config.volume_h);
        let (boundary_nodes, boundary_weights) = sphere_nodes(dim, config.boundary_m);
        Ok(Self {
            dim,
            volume_nodes,
            volume_weights,
            boundary_nodes,
            boundary_weights,
        })
    }

    pub fn with_defaults(dim: usize) -> Result<Self> {
        Self::new(dim, QuadratureConfig::default_for(dim))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn volume_len(&self) -> usize {
        self.volume_weights.len()
    }

    pub fn boundary_len(&self) -> usize {
        self.boundary_weights.len()
    }

    pub fn volume_node(&self, i: usize) -> &[f64] {
        &self.volume_nodes[i * self.dim..(i + 1) * self.dim]
    }

    pub fn boundary_node(&self, i: usize) -> &[f64] {
        &self.boundary_nodes[i * self.dim..(i + 1) * self.dim]
    }

    pub fn volume_nodes(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.volume_nodes
            .chunks_exact(self.dim)
            .zip(self.volume_weights.iter().copied())
    }

    pub fn boundary_nodes(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.boundary_nodes
            .chunks_exact(self.dim)
            .zip(self.boundary_weights.iter().copied())
    }

    pub fn volume_weights(&self) -> &[f64] {
        &self.volume_weights
    }

    pub fn boundary_weights(&self) -> &[f64] {
        &self.boundary_weights
    }
}

/// Measure of the unit ball.
pub fn ball_volume(dim: usize) -> f64 {
    match dim {
        2 => PI,
        3 => 4.0 * PI / 3.0,
        _ => unimplemented!("dimension {dim}"),
    }
}

/// Measure of the unit sphere.
pub fn sphere_area(dim: usize) -> f64 {
    match dim {
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        _ => unimplemented!("dimension {dim}"),
    }
}

/// Cell centers of the grid `(h/2 + hℤ)^dim` lying strictly inside the unit
/// ball, each weighted by the cell volume `h^dim`. Nodes are flattened.
pub fn ball_lattice(dim: usize, h: f64) -> (Vec<f64>, Vec<f64>) {
    let k = (1.0 / h).ceil() as i64 + 1;
    let coords: Vec<f64> = (-k..k).map(|i| (i as f64 + 0.5) * h).collect();
    let w = h.powi(dim as i32);
    let mut nodes = Vec::new();
    let mut push = |p: &[f64]| {
        if p.iter().map(|c| c * c).sum::<f64>() < 1.0 {
            nodes.extend_from_slice(p);
        }
    };
    match dim {
        2 => {
            for &x in &coords {
                for &y in &coords {
                    push(&[x, y]);
                }
            }
        }
        3 => {
            for &x in &coords {
                for &y in &coords {
                    for &z in &coords {
                        push(&[x, y, z]);
                    }
                }
            }
        }
        _ => unimplemented!("dimension {dim}"),
    }
    let n = nodes.len() / dim;
    (nodes, vec![w; n])
}

/// `m` nodes on the unit sphere with equal weights summing to its measure.
/// 2D: angles `2πk/m`; 3D: the Fibonacci spiral lattice.
pub fn sphere_nodes(dim: usize, m: usize) -> (Vec<f64>, Vec<f64>) {
    let nodes = sphere_directions(dim, m);
    (nodes, vec![sphere_area(dim) / m as f64; m])
}

/// Unweighted sphere directions, flattened; see [`sphere_nodes`].
pub fn sphere_directions(dim: usize, m: usize) -> Vec<f64> {
    let mut nodes = Vec::with_capacity(dim * m);
    match dim {
        2 => {
            for k in 0..m {
                let t = 2.0 * PI * k as f64 / m as f64;
                nodes.extend_from_slice(&[t.cos(), t.sin()]);
            }
        }
        3 => {
            let golden = PI * (3.0 - 5.0f64.sqrt());
            for k in 0..m {
                let z = 1.0 - (2 * k + 1) as f64 / m as f64;
                let r = (1.0 - z * z).max(0.0).sqrt();
                let t = golden * k as f64;
                let p = [r * t.cos(), r * t.sin(), z];
                let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                nodes.extend_from_slice(&[p[0] / n, p[1] / n, p[2] / n]);
            }
        }
        _ => unimplemented!("dimension {dim}"),
    }
    nodes
}
