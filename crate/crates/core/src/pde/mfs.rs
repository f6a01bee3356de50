//! Torsion by the method of fundamental solutions.
//!
//! With `u` the torsion function (`−Δu = 1`, `u = 0` on `∂Ω`), the function
//! `v = u + x₁²/2` is harmonic with boundary values `x₁²/2`. We expand `v` in
//! free-space Laplace kernels centered outside `Ω`, fit the boundary values
//! in the least-squares sense, and integrate `u = v − x₁²/2` over `Ω`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::autodiff::{lstsq, Tape, Var, VarMatrix};
use crate::error::{Error, Result};
use crate::functionals::{sum_nodes, unit, BodyVars};
use crate::gauge::Gauge;
use crate::quadrature::{sphere_directions, Quadrature};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MfsConfig {
    pub n_sources: usize,
    pub n_collocation: usize,
    /// Sources sit at `(1 + delta)` times boundary points.
    pub delta: f64,
    /// 2D only: space collocation points and sources evenly in arc length
    /// of the current body instead of evenly in angle. Elongated bodies far
    /// from the origin are badly resolved otherwise.
    #[serde(default)]
    pub arc_length: bool,
}

impl MfsConfig {
    pub fn default_for(dim: usize) -> Self {
        match dim {
            2 => Self {
                n_sources: 64,
                n_collocation: 256,
                delta: 0.5,
                arc_length: true,
            },
            _ => Self {
                n_sources: 200,
                n_collocation: 800,
                delta: 0.5,
                arc_length: false,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sources == 0 {
            return Err(Error::Validation("mfs: n_sources must be positive".into()));
        }
        if self.n_collocation < 2 * self.n_sources {
            return Err(Error::Validation(format!(
                "mfs: n_collocation ({}) must be at least twice n_sources ({})",
                self.n_collocation, self.n_sources
            )));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::Validation(format!("mfs: delta must be positive, got {}", self.delta)));
        }
        Ok(())
    }

    fn directions<G: Gauge>(&self, gauge: &G, m: usize) -> Vec<f64> {
        if self.arc_length && gauge.dim() == 2 {
            arc_length_directions(gauge, m)
        } else {
            sphere_directions(gauge.dim(), m)
        }
    }
}

/// `m` unit directions whose boundary points are evenly spaced in arc length.
/// The spacing is computed on a fine polygonal approximation of the boundary.
pub fn arc_length_directions<G: Gauge>(gauge: &G, m: usize) -> Vec<f64> {
    const FINE: usize = 4096;
    let b = gauge.boundary_points(&sphere_directions(2, FINE));
    let mut cum = vec![0.0; FINE + 1];
    for k in 0..FINE {
        let j = (k + 1) % FINE;
        cum[k + 1] = cum[k] + (b[2 * j] - b[2 * k]).hypot(b[2 * j + 1] - b[2 * k + 1]);
    }
    let total = cum[FINE];
    let mut out = Vec::with_capacity(2 * m);
    let mut k = 0;
    for i in 0..m {
        let s = total * i as f64 / m as f64;
        while k + 1 < FINE && cum[k + 1] < s {
            k += 1;
        }
        let t = (s - cum[k]) / (cum[k + 1] - cum[k]);
        let a = std::f64::consts::TAU * (k as f64 + t) / FINE as f64;
        out.push(a.cos());
        out.push(a.sin());
    }
    out
}

/// Fundamental solution of `−Δ` evaluated at `r = x − y`, with its gradient
/// in `x` written to `grad`.
pub fn kernel(dim: usize, r: &[f64], grad: &mut [f64]) -> f64 {
    let r2: f64 = r.iter().map(|c| c * c).sum();
    if dim == 2 {
        let c = -1.0 / (2.0 * std::f64::consts::PI);
        for (g, ri) in grad.iter_mut().zip(r) {
            *g = c * ri / r2;
        }
        0.5 * c * r2.ln()
    } else {
        let c = 1.0 / (4.0 * std::f64::consts::PI);
        let rn = r2.sqrt();
        for (g, ri) in grad.iter_mut().zip(r) {
            *g = -c * ri / (r2 * rn);
        }
        c / rn
    }
}

fn kernel_value(dim: usize, r: &[f64]) -> f64 {
    let mut g = [0.0; 3];
    kernel(dim, r, &mut g[..dim])
}

/// Least-squares coefficients of the kernel expansion matching `rhs` at the
/// collocation points (plain values, no recording).
pub fn fit(dim: usize, collocation: &[f64], sources: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let m = collocation.len() / dim;
    let n = sources.len() / dim;
    let mut a = DMatrix::zeros(m, n);
    let mut r = [0.0; 3];
    for (j, z) in collocation.chunks_exact(dim).enumerate() {
        for (i, y) in sources.chunks_exact(dim).enumerate() {
            for k in 0..dim {
                r[k] = z[k] - y[k];
            }
            a[(j, i)] = kernel_value(dim, &r[..dim]);
        }
    }
    let qr = a.clone().qr();
    let rr = qr.r();
    let dmax = (0..n).fold(0.0f64, |acc, i| acc.max(rr[(i, i)].abs()));
    let rank = (0..n).filter(|&i| rr[(i, i)].abs() > 1e-13 * dmax).count();
    if rank < n {
        return Err(Error::MfsIllPosed(format!("rank {rank} < {n}")));
    }
    let qtb = qr.q().transpose() * DVector::from_column_slice(rhs);
    let c = rr
        .solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::MfsIllPosed("singular triangular factor".into()))?;
    Ok(c.as_slice().to_vec())
}

/// `Σ cᵢ ψ(x − yᵢ)`.
pub fn evaluate(dim: usize, sources: &[f64], coef: &[f64], x: &[f64]) -> f64 {
    let mut r = [0.0; 3];
    sources
        .chunks_exact(dim)
        .zip(coef)
        .map(|(y, c)| {
            for k in 0..dim {
                r[k] = x[k] - y[k];
            }
            c * kernel_value(dim, &r[..dim])
        })
        .sum()
}

/// Boundary points `φ(x̂)·scale` for the given directions, recorded with
/// their Jacobian in `θ`.
fn mapped_points<'t, G: Gauge>(body: &BodyVars<'t, '_, G>, dirs: &[f64], scale: f64) -> Result<Vec<Var<'t>>> {
    let d = body.dim();
    let p = body.n_params();
    let n = dirs.len() / d;
    let mut values = Vec::with_capacity(n * d);
    let mut jac = vec![0.0; n * d * p];
    let mut dh = vec![0.0; p];
    for (j, u) in dirs.chunks_exact(d).enumerate() {
        let h = body.gauge.eval(u, None);
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::SingularBoundaryJacobian { node: j });
        }
        dh.iter_mut().for_each(|v| *v = 0.0);
        body.gauge.vjp(u, 1.0, None, &mut dh);
        for a in 0..d {
            values.push(scale * u[a] / h);
            let c = -scale * u[a] / (h * h);
            let row = &mut jac[(j * d + a) * p..(j * d + a + 1) * p];
            for (r, g) in row.iter_mut().zip(&dh) {
                *r = c * g;
            }
        }
    }
    Ok(body.tape.block_jacobian("boundary_points", &body.theta, &values, jac))
}

/// Recorded kernel matrix `A_ji = ψ(z_j − y_i)`.
fn kernel_matrix<'t>(tape: &'t Tape, dim: usize, z: &[Var<'t>], y: &[Var<'t>]) -> VarMatrix<'t> {
    let m = z.len() / dim;
    let n = y.len() / dim;
    let zv: Vec<f64> = z.iter().map(|v| v.value()).collect();
    let yv: Vec<f64> = y.iter().map(|v| v.value()).collect();
    let mut values = Vec::with_capacity(m * n);
    let mut grads = Vec::with_capacity(m * n * dim);
    let mut r = [0.0; 3];
    let mut g = [0.0; 3];
    for j in 0..m {
        for i in 0..n {
            for k in 0..dim {
                r[k] = zv[j * dim + k] - yv[i * dim + k];
            }
            values.push(kernel(dim, &r[..dim], &mut g[..dim]));
            grads.extend_from_slice(&g[..dim]);
        }
    }
    let mut inputs = z.to_vec();
    inputs.extend_from_slice(y);
    let split = z.len();
    let out = tape.block(
        "mfs_matrix",
        &inputs,
        &values,
        Box::new(move |out_adj, in_adj| {
            for j in 0..m {
                for i in 0..n {
                    let a = out_adj[j * n + i];
                    if a == 0.0 {
                        continue;
                    }
                    for k in 0..dim {
                        let gk = a * grads[(j * n + i) * dim + k];
                        in_adj[j * dim + k] += gk;
                        in_adj[split + i * dim + k] -= gk;
                    }
                }
            }
        }),
    );
    VarMatrix::new(m, n, out)
}

/// Torsional rigidity `T(Ω) = ∫_Ω u`.
pub fn torsion<'t, G: Gauge>(body: &BodyVars<'t, '_, G>, quad: &Quadrature, cfg: &MfsConfig) -> Result<Var<'t>> {
    cfg.validate()?;
    let d = body.dim();
    let tape = body.tape;
    let z = mapped_points(body, &cfg.directions(body.gauge, cfg.n_collocation), 1.0)?;
    let y = mapped_points(body, &cfg.directions(body.gauge, cfg.n_sources), 1.0 + cfg.delta)?;
    let a = kernel_matrix(tape, d, &z, &y);
    let b: Vec<Var<'t>> = z.chunks_exact(d).map(|p| p[0] * p[0] * 0.5).collect();
    let c = lstsq(&a, &b).map_err(|e| match e {
        Error::RankDeficient { rank, cols } => Error::MfsIllPosed(format!("rank {rank} < {cols}")),
        e => e,
    })?;

    let ns = cfg.n_sources;
    let p = body.n_params();
    let cv: Vec<f64> = c.iter().map(|v| v.value()).collect();
    let yv: Vec<f64> = y.iter().map(|v| v.value()).collect();
    let theta_off = ns + ns * d;
    let g = body.gauge;
    let total = sum_nodes(quad.volume_len(), 1, theta_off + p, p, |v, acc| {
        let x = quad.volume_node(v);
        let w = quad.volume_weights()[v];
        let mut u = [0.0; 3];
        unit(x, &mut u[..d]);
        let h = g.eval(&u[..d], None);
        let jac = h.powi(-(d as i32));
        if !(h > 0.0 && jac.is_finite()) {
            return Err(Error::NonFiniteJacobian { node: v });
        }
        let mut phi = [0.0; 3];
        for k in 0..d {
            phi[k] = x[k] / h;
        }
        let wj = w * jac;
        let mut value = -0.5 * phi[0] * phi[0];
        let mut phi_bar = [0.0; 3];
        phi_bar[0] = -wj * phi[0];
        let mut r = [0.0; 3];
        let mut gr = [0.0; 3];
        for i in 0..ns {
            for k in 0..d {
                r[k] = phi[k] - yv[i * d + k];
            }
            let psi = kernel(d, &r[..d], &mut gr[..d]);
            value += cv[i] * psi;
            acc.jac[i] += wj * psi;
            for k in 0..d {
                acc.jac[ns + i * d + k] -= wj * cv[i] * gr[k];
                phi_bar[k] += wj * cv[i] * gr[k];
            }
        }
        acc.values[0] += wj * value;
        let mut h_bar = -(d as f64) * wj * value / h;
        for k in 0..d {
            h_bar -= phi_bar[k] * phi[k] / h;
        }
        acc.scratch.iter_mut().for_each(|s| *s = 0.0);
        g.vjp(&u[..d], 1.0, None, &mut acc.scratch);
        acc.spread_at(0, theta_off, h_bar);
        Ok(())
    })?;
    let mut inputs = c;
    inputs.extend_from_slice(&y);
    inputs.extend_from_slice(&body.theta);
    Ok(tape.block_jacobian("torsion_integral", &inputs, &total.values, total.jac)[0])
}
