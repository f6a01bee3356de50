//! Neumann eigenvalues of `−Δ` on `Ω` by an RBF-Galerkin method pulled back
//! to the unit ball.
//!
//! With Gaussian basis functions `bᵢ` on `B`, the weak form on `Ω = φ(B)`
//! becomes `K v = μ M v` with
//! `K_ij = ∫_B ∇bᵢ · A ∇b_j`, `A = J Dφ⁻¹ Dφ⁻ᵀ`, and `M_ij = ∫_B J bᵢ b_j`.
//! The pencil is reduced with the Cholesky factor of `M` and solved as a
//! symmetric eigenproblem.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{to_row_major, Var, VarMatrix};
use crate::error::{Error, Result};
use crate::functionals::{unit, BodyVars, CHUNK};
use crate::gauge::{tangential, Gauge};
use crate::quadrature::{ball_lattice, Quadrature};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RbfConfig {
    /// Lattice spacing of the centers in the reference ball.
    pub spacing: f64,
    /// Kernel value at distance `spacing`; fixes the shape parameter.
    pub kernel_at_spacing: f64,
    /// Centers fill a ball of radius `1 + center_margin·spacing`, so the
    /// basis can represent constants up to the boundary.
    pub center_margin: f64,
    /// Relative diagonal shift added to the mass matrix.
    pub mass_jitter: f64,
}

impl RbfConfig {
    pub fn default_for(dim: usize) -> Self {
        Self {
            spacing: if dim == 2 { 0.12 } else { 0.25 },
            kernel_at_spacing: 0.5,
            center_margin: 2.0,
            mass_jitter: 1e-10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.spacing > 0.0 && self.spacing < 1.0) {
            return Err(Error::Validation(format!("rbf: spacing must lie in (0, 1), got {}", self.spacing)));
        }
        if !(self.kernel_at_spacing > 0.0 && self.kernel_at_spacing < 1.0) {
            return Err(Error::Validation("rbf: kernel_at_spacing must lie in (0, 1)".into()));
        }
        if !(self.center_margin >= 0.0 && self.center_margin.is_finite()) {
            return Err(Error::Validation("rbf: center_margin must be non-negative".into()));
        }
        if !(self.mass_jitter >= 0.0) {
            return Err(Error::Validation("rbf: mass_jitter must be non-negative".into()));
        }
        Ok(())
    }

    /// `ε²` in `exp(−ε² r²)`.
    pub fn epsilon2(&self) -> f64 {
        -self.kernel_at_spacing.ln() / (self.spacing * self.spacing)
    }
}

/// Basis values and gradients at the volume nodes; independent of `θ`, so
/// built once per quadrature and shared.
#[derive(Debug)]
pub struct RbfBasis {
    dim: usize,
    config: RbfConfig,
    centers: Vec<f64>,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// `n_centers × n_nodes`.
    values_t: DMatrix<f64>,
    grads_t: Vec<DMatrix<f64>>,
}

impl RbfBasis {
    pub fn new(quad: &Quadrature, config: RbfConfig) -> Result<Arc<Self>> {
        config.validate()?;
        let d = quad.dim();
        let radius = 1.0 + config.center_margin * config.spacing;
        let (mut centers, _) = ball_lattice(d, config.spacing / radius);
        centers.iter_mut().for_each(|c| *c *= radius);
        let nb = centers.len() / d;
        let nv = quad.volume_len();
        let e2 = config.epsilon2();
        let mut values_t = DMatrix::zeros(nb, nv);
        let mut grads_t = vec![DMatrix::zeros(nb, nv); d];
        let mut nodes = Vec::with_capacity(nv * d);
        for v in 0..nv {
            let x = quad.volume_node(v);
            nodes.extend_from_slice(x);
            for (i, c) in centers.chunks_exact(d).enumerate() {
                let mut r2 = 0.0;
                for a in 0..d {
                    r2 += (x[a] - c[a]).powi(2);
                }
                let b = (-e2 * r2).exp();
                values_t[(i, v)] = b;
                for a in 0..d {
                    grads_t[a][(i, v)] = -2.0 * e2 * (x[a] - c[a]) * b;
                }
            }
        }
        Ok(Arc::new(Self {
            dim: d,
            config,
            centers,
            nodes,
            weights: quad.volume_weights().to_vec(),
            values_t,
            grads_t,
        }))
    }

    pub fn n_centers(&self) -> usize {
        self.centers.len() / self.dim
    }

    pub fn config(&self) -> &RbfConfig {
        &self.config
    }
}

/// Per-node geometry needed by the assembly and its adjoint.
struct NodeGeometry {
    u: Vec<f64>,
    h: Vec<f64>,
    q: Vec<f64>,
}

fn node_geometry<G: Gauge>(gauge: &G, basis: &RbfBasis) -> Result<NodeGeometry> {
    let d = basis.dim;
    let nv = basis.weights.len();
    let parts: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..nv.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let (mut us, mut hs, mut qs) = (Vec::new(), Vec::new(), Vec::new());
            let mut u = [0.0; 3];
            let mut g = [0.0; 3];
            for v in c * CHUNK..((c + 1) * CHUNK).min(nv) {
                unit(&basis.nodes[v * d..(v + 1) * d], &mut u[..d]);
                let h = gauge.eval(&u[..d], Some(&mut g[..d]));
                if !(h > 0.0 && h.is_finite()) {
                    return Err(Error::NonFiniteJacobian { node: v });
                }
                us.extend_from_slice(&u[..d]);
                hs.push(h);
                qs.extend(tangential(&u[..d], &g[..d]));
            }
            Ok((us, hs, qs))
        })
        .collect::<Result<_>>()?;
    let mut out = NodeGeometry {
        u: Vec::with_capacity(nv * d),
        h: Vec::with_capacity(nv),
        q: Vec::with_capacity(nv * d),
    };
    for (u, h, q) in parts {
        out.u.extend(u);
        out.h.extend(h);
        out.q.extend(q);
    }
    Ok(out)
}

/// `A = h^{-d} [h² I + h (u qᵀ + q uᵀ) + |q|² u uᵀ]` (row-major).
fn metric(d: usize, u: &[f64], h: f64, q: &[f64]) -> [f64; 9] {
    let hd = h.powi(-(d as i32));
    let q2: f64 = q.iter().map(|c| c * c).sum();
    let mut a = [0.0; 9];
    for i in 0..d {
        for j in 0..d {
            let id = if i == j { h * h } else { 0.0 };
            a[i * d + j] = hd * (id + h * (u[i] * q[j] + q[i] * u[j]) + q2 * u[i] * u[j]);
        }
    }
    a
}

fn scale_columns(m: &DMatrix<f64>, s: &[f64]) -> DMatrix<f64> {
    let mut out = m.clone();
    for (mut col, &c) in out.column_iter_mut().zip(s) {
        col *= c;
    }
    out
}

/// `(Σ_i a_iv b_iv)_v`: column-wise dot products.
fn column_dots(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    a.column_iter().zip(b.column_iter()).map(|(x, y)| x.dot(&y)).collect()
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Recorded stiffness and mass matrices.
fn assemble<'t, G: Gauge + Clone + 'static>(
    body: &BodyVars<'t, '_, G>,
    basis: &Arc<RbfBasis>,
) -> Result<(VarMatrix<'t>, VarMatrix<'t>)> {
    let d = basis.dim;
    let nb = basis.n_centers();
    let nv = basis.weights.len();
    let geo = node_geometry(body.gauge, basis)?;
    let mut metrics = vec![[0.0; 9]; nv];
    let mut wj = vec![0.0; nv];
    for v in 0..nv {
        let h = geo.h[v];
        let w = basis.weights[v];
        let m = metric(d, &geo.u[v * d..(v + 1) * d], h, &geo.q[v * d..(v + 1) * d]);
        metrics[v] = m.map(|x| w * x);
        wj[v] = w * h.powi(-(d as i32));
    }
    let mut k = DMatrix::<f64>::zeros(nb, nb);
    for a in 0..d {
        let mut ht = DMatrix::<f64>::zeros(nb, nv);
        for b in 0..d {
            let s: Vec<f64> = metrics.iter().map(|m| m[a * d + b]).collect();
            ht += scale_columns(&basis.grads_t[b], &s);
        }
        k += &basis.grads_t[a] * ht.transpose();
    }
    let k = symmetrize(k);
    let m = symmetrize(scale_columns(&basis.values_t, &wj) * basis.values_t.transpose());

    let mut outputs = to_row_major(&k);
    outputs.extend(to_row_major(&m));
    let gauge = body.gauge.clone();
    let basis = Arc::clone(basis);
    let out = body.tape.block(
        "rbf_assembly",
        &body.theta,
        &outputs,
        Box::new(move |out_adj, in_adj| {
            let kbar = symmetrize(DMatrix::from_row_slice(nb, nb, &out_adj[..nb * nb]));
            let mbar = symmetrize(DMatrix::from_row_slice(nb, nb, &out_adj[nb * nb..]));
            // S_v[a][b] = w_v Σ_ij K̄_ij ∂_a b_i ∂_b b_j and J̄_v = w_v Σ_ij M̄_ij b_i b_j
            let rt: Vec<DMatrix<f64>> = basis.grads_t.iter().map(|g| &kbar * g).collect();
            let mut s = vec![[0.0; 9]; nv];
            for a in 0..d {
                for b in 0..d {
                    for (v, x) in column_dots(&basis.grads_t[a], &rt[b]).into_iter().enumerate() {
                        s[v][a * d + b] = x;
                    }
                }
            }
            let jbar = column_dots(&basis.values_t, &(&mbar * &basis.values_t));
            for v in 0..nv {
                let w = basis.weights[v];
                let u = &geo.u[v * d..(v + 1) * d];
                let q = &geo.q[v * d..(v + 1) * d];
                let h = geo.h[v];
                let hd = h.powi(-(d as i32));
                let mut sv = [0.0; 9];
                for a in 0..d {
                    for b in 0..d {
                        sv[a * d + b] = 0.5 * w * (s[v][a * d + b] + s[v][b * d + a]);
                    }
                }
                let tr: f64 = (0..d).map(|a| sv[a * d + a]).sum();
                let su: Vec<f64> = (0..d).map(|a| (0..d).map(|b| sv[a * d + b] * u[b]).sum()).collect();
                let usu: f64 = su.iter().zip(u).map(|(x, y)| x * y).sum();
                let usq: f64 = su.iter().zip(q).map(|(x, y)| x * y).sum();
                let q2: f64 = q.iter().map(|c| c * c).sum();
                let contraction = hd * (h * h * tr + 2.0 * h * usq + q2 * usu);
                let mut h_bar = -(d as f64) * contraction / h + hd * (2.0 * h * tr + 2.0 * usq);
                h_bar += w * jbar[v] * (-(d as f64)) * hd / h;
                let dq: Vec<f64> = (0..d).map(|a| hd * (2.0 * h * su[a] + 2.0 * usu * q[a])).collect();
                let g_bar = tangential(u, &dq);
                gauge.vjp(u, h_bar, Some(&g_bar), in_adj);
            }
        }),
    );
    let (kv, mv) = out.split_at(nb * nb);
    Ok((VarMatrix::new(nb, nb, kv.to_vec()), VarMatrix::new(nb, nb, mv.to_vec())))
}

/// The two smallest nonzero Neumann eigenvalues and the (near-zero) constant
/// mode's eigenvalue.
#[derive(Clone, Copy, Debug)]
pub struct NeumannEigs<'t> {
    pub mu0: f64,
    pub mu1: Var<'t>,
    pub mu2: Var<'t>,
}

/// Neumann eigenvalues with a basis built on the fly.
pub fn neumann_eigs<'t, G: Gauge + Clone + 'static>(
    body: &BodyVars<'t, '_, G>,
    quad: &Quadrature,
    cfg: &RbfConfig,
) -> Result<NeumannEigs<'t>> {
    let basis = RbfBasis::new(quad, *cfg)?;
    neumann_eigs_with(body, &basis)
}

pub fn neumann_eigs_with<'t, G: Gauge + Clone + 'static>(
    body: &BodyVars<'t, '_, G>,
    basis: &Arc<RbfBasis>,
) -> Result<NeumannEigs<'t>> {
    if body.dim() != basis.dim {
        return Err(Error::Shape {
            op: "neumann_eigs",
            detail: format!("gauge dim {} vs basis dim {}", body.dim(), basis.dim),
        });
    }
    let nb = basis.n_centers();
    let (k, m) = assemble(body, basis)?;
    let mut trace = m.get(0, 0);
    for i in 1..nb {
        trace = trace + m.get(i, i);
    }
    let shift = trace * (basis.config.mass_jitter / nb as f64);
    let mut entries = m.entries().to_vec();
    for i in 0..nb {
        entries[i * nb + i] = entries[i * nb + i] + shift;
    }
    let m = VarMatrix::new(nb, nb, entries);
    let l = m.cholesky().map_err(|e| match e {
        Error::NotPositiveDefinite { pivot } => Error::MassNotSpd { pivot },
        e => e,
    })?;
    let li = l.inverse()?;
    let c = li.matmul(&k)?.matmul(&li.transpose())?;
    let eig = c.sym_eig()?;
    let lambda = eig.eigenvalues;
    let (mu0, mu1) = (lambda[0].value(), lambda[1].value());
    if !(mu0.abs() < 1e-3 * mu1) {
        return Err(Error::ConstantModeUnresolved { mu0, mu1 });
    }
    Ok(NeumannEigs {
        mu0,
        mu1: lambda[1],
        mu2: lambda[2],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::gauge::{GaugeNetwork, LinearGauge};
    use crate::quadrature::QuadratureConfig;

    /// Square of the first positive zero of J₁'.
    const DISK_MU1: f64 = 1.841_183_781_340_659 * 1.841_183_781_340_659;

    #[test]
    fn disk_eigenvalues() {
        let q = Quadrature::with_defaults(2).unwrap();
        let tape = Tape::new();
        let disk = LinearGauge::identity(2);
        let body = BodyVars::new(&tape, &disk);
        let e = neumann_eigs(&body, &q, &RbfConfig::default_for(2)).unwrap();
        assert!((e.mu1.value() / DISK_MU1 - 1.0).abs() <= 2e-2, "{}", e.mu1.value());
        assert!((e.mu2.value() / DISK_MU1 - 1.0).abs() <= 2e-2, "{}", e.mu2.value());
        assert!(e.mu0.abs() <= 1e-3 * e.mu1.value());
    }

    #[test]
    fn scaling_law() {
        let q = Quadrature::new(2, QuadratureConfig { volume_h: 0.03, boundary_m: 64 }).unwrap();
        let basis = RbfBasis::new(&q, RbfConfig::default_for(2)).unwrap();
        let net = GaugeNetwork::init_random_with_jitter(2, 16, 1, 1.0, 0.5).unwrap();
        let eval = |g: &GaugeNetwork| {
            let tape = Tape::new();
            let body = BodyVars::new(&tape, g);
            let e = neumann_eigs_with(&body, &basis).unwrap();
            (e.mu1.value(), e.mu2.value())
        };
        let (a, b) = eval(&net);
        let (a2, b2) = eval(&net.scaled(2.0));
        assert!((a2 * 4.0 / a - 1.0).abs() < 1e-3);
        assert!((b2 * 4.0 / b - 1.0).abs() < 1e-3);
        assert!(a <= b);
    }
}
