//! Geometric shape functionals of `Ω = φ(B)`, integrated on the reference
//! ball and recorded on a tape.
//!
//! The heavy quadrature sums are recorded as single blocks whose Jacobian with
//! respect to `θ` is assembled while summing (each node contributes through
//! the closed-form dependence on `h`, `∇h` at its direction).

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tape, Var, VarMatrix};
use crate::error::{Error, Result};
use crate::gauge::{map_condition, map_jacobian, norm, tangential, Gauge};
use crate::quadrature::Quadrature;

/// Nodes per work unit; partial sums are reduced in chunk order so results do
/// not depend on the thread count.
pub(crate) const CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Functional {
    Vol,
    Per,
    W,
    E,
    T,
    Mu1,
    Mu2,
}

impl Functional {
    /// Exponent `k` with `F(tΩ) = t^k F(Ω)`.
    pub fn homogeneity(self, dim: usize) -> i32 {
        let d = dim as i32;
        match self {
            Functional::Vol => d,
            Functional::Per => d - 1,
            Functional::W | Functional::T => d + 2,
            Functional::E => d - 3,
            Functional::Mu1 | Functional::Mu2 => -2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Functional::Vol => "vol",
            Functional::Per => "per",
            Functional::W => "w",
            Functional::E => "e",
            Functional::T => "t",
            Functional::Mu1 => "mu1",
            Functional::Mu2 => "mu2",
        }
    }
}

impl fmt::Display for Functional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FunctionalValue<'t> {
    pub kind: Functional,
    pub value: Var<'t>,
}

/// A gauge together with its parameters recorded as leaves of a tape.
pub struct BodyVars<'t, 'g, G> {
    pub tape: &'t Tape,
    pub gauge: &'g G,
    pub theta: Vec<Var<'t>>,
}

impl<'t, 'g, G: Gauge> BodyVars<'t, 'g, G> {
    pub fn new(tape: &'t Tape, gauge: &'g G) -> Self {
        let theta = tape.vars(gauge.params());
        Self { tape, gauge, theta }
    }

    pub fn dim(&self) -> usize {
        self.gauge.dim()
    }

    pub fn n_params(&self) -> usize {
        self.theta.len()
    }
}

/// Per-chunk accumulator of `k` output values and their `k×P` Jacobian.
pub(crate) struct Accum {
    pub values: Vec<f64>,
    pub jac: Vec<f64>,
    pub scratch: Vec<f64>,
    p: usize,
}

impl Accum {
    fn new(k: usize, p: usize, scratch: usize) -> Self {
        Self {
            values: vec![0.0; k],
            jac: vec![0.0; k * p],
            scratch: vec![0.0; scratch],
            p,
        }
    }

    /// Add `coef[i]·scratch` to row `i` of the Jacobian.
    pub fn spread(&mut self, coef: &[f64]) {
        for (i, &c) in coef.iter().enumerate() {
            if c != 0.0 {
                let row = &mut self.jac[i * self.p..(i + 1) * self.p];
                for (r, s) in row.iter_mut().zip(&self.scratch) {
                    *r += c * s;
                }
            }
        }
    }

    /// Add `coef·scratch` to row `row` starting at column `offset`.
    pub fn spread_at(&mut self, row: usize, offset: usize, coef: f64) {
        let start = row * self.p + offset;
        let dst = &mut self.jac[start..start + self.scratch.len()];
        for (r, s) in dst.iter_mut().zip(&self.scratch) {
            *r += coef * s;
        }
    }

    fn merge(&mut self, other: &Accum) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
        for (a, b) in self.jac.iter_mut().zip(&other.jac) {
            *a += b;
        }
    }
}

/// Sum `node(i, acc)` over `n` nodes in parallel chunks and record the result
/// as one block of `k` outputs depending on `theta`.
pub(crate) fn quadrature_block<'t, F>(
    tape: &'t Tape,
    kind: &'static str,
    theta: &[Var<'t>],
    n: usize,
    k: usize,
    node: F,
) -> Result<Vec<Var<'t>>>
where
    F: Fn(usize, &mut Accum) -> Result<()> + Sync,
{
    let total = sum_nodes(n, k, theta.len(), theta.len(), node)?;
    Ok(tape.block_jacobian(kind, theta, &total.values, total.jac))
}

/// Chunked parallel sum of per-node contributions to `k` values and a `k×p`
/// Jacobian; `scratch` sizes the per-chunk work buffer.
pub(crate) fn sum_nodes<F>(n: usize, k: usize, p: usize, scratch: usize, node: F) -> Result<Accum>
where
    F: Fn(usize, &mut Accum) -> Result<()> + Sync,
{
    let chunks: Vec<Accum> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = Accum::new(k, p, scratch);
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                node(i, &mut acc)?;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = Accum::new(k, p, 0);
    for c in &chunks {
        total.merge(c);
    }
    Ok(total)
}

pub(crate) fn unit(x: &[f64], out: &mut [f64]) -> f64 {
    let r = norm(x);
    for (o, c) in out.iter_mut().zip(x) {
        *o = c / r;
    }
    r
}

/// `∫_B J`, `∫_B φ J` and `∫_B |φ|² J` with `J = det Dφ = h^{-d}`.
fn raw_moments<'t, G: Gauge>(body: &BodyVars<'t, '_, G>, quad: &Quadrature) -> Result<Vec<Var<'t>>> {
    let d = body.dim();
    check_dims(body, quad)?;
    let g = body.gauge;
    quadrature_block(body.tape, "volume_moments", &body.theta, quad.volume_len(), d + 2, |i, acc| {
        let x = quad.volume_node(i);
        let w = quad.volume_weights()[i];
        let mut u = [0.0; 3];
        unit(x, &mut u[..d]);
        let h = g.eval(&u[..d], None);
        let jac = h.powi(-(d as i32));
        if !(h > 0.0 && jac.is_finite()) {
            return Err(Error::NonFiniteJacobian { node: i });
        }
        let mut phi = [0.0; 3];
        for a in 0..d {
            phi[a] = x[a] / h;
        }
        let phi2: f64 = phi[..d].iter().map(|c| c * c).sum();
        acc.values[0] += w * jac;
        for a in 0..d {
            acc.values[1 + a] += w * jac * phi[a];
        }
        acc.values[d + 1] += w * jac * phi2;
        // derivatives with respect to h at this node
        let mut coef = [0.0; 5];
        coef[0] = -(d as f64) * w * jac / h;
        for a in 0..d {
            coef[1 + a] = -((d + 1) as f64) * w * jac * phi[a] / h;
        }
        coef[d + 1] = -((d + 2) as f64) * w * jac * phi2 / h;
        acc.scratch.iter_mut().for_each(|s| *s = 0.0);
        g.vjp(&u[..d], 1.0, None, &mut acc.scratch);
        acc.spread(&coef[..d + 2]);
        Ok(())
    })
}

fn check_dims<G: Gauge>(body: &BodyVars<'_, '_, G>, quad: &Quadrature) -> Result<()> {
    if body.dim() != quad.dim() {
        return Err(Error::Shape {
            op: "functionals",
            detail: format!("gauge dim {} vs quadrature dim {}", body.dim(), quad.dim()),
        });
    }
    Ok(())
}

/// Volume, centroid and central second moment in one pass.
#[derive(Clone, Debug)]
pub struct Moments<'t> {
    pub volume: Var<'t>,
    pub centroid: Vec<Var<'t>>,
    pub inertia: Var<'t>,
}

pub fn moments<'t, G: Gauge>(body: &BodyVars<'t, '_, G>, quad: &Quadrature) -> Result<Moments<'t>> {
    let d = body.dim();
    let raw = raw_moments(body, quad)?;
    let vol = raw[0];
    let centroid: Vec<Var<'t>> = raw[1..=d].iter().map(|&m| m / vol).collect();
    // ∫|φ − c|² J = ∫|φ|² J − Vol |c|²
    let mut c2 = centroid[0] * raw[1];
    for a in 1..d {
        c2 = c2 + centroid[a] * raw[1 + a];
    }
    let inertia = raw[d + 1] - c2;
    Ok(Moments {
        volume: vol,
        centroid,
        inertia,
    })
}

pub fn volume<'t, G: Gauge>(body: &BodyVars<'t, '_, G>, quad: &Quadrature) -> Result<Var<'t>> {
    Ok(moments(body, quad)?.volume)
}

pub fn centroid_and_inertia<'t, G: Gauge>(
    body: &BodyVars<'t, '_, G>,
    quad: &Quadrature,
) -> Result<(Vec<Var<'t>>, Var<'t>)> {
    let m = moments(body, quad)?;
    Ok((m.centroid, m.inertia))
}

/// `∫_{∂B} J |Dφ^{-T} n|` with the closed form `h^{-d} √(h² + |q|²)`.
pub fn perimeter<'t, G: Gauge>(body: &BodyVars<'t, '_, G>, quad: &Quadrature) -> Result<Var<'t>> {
    let d = body.dim();
    check_dims(body, quad)?;
    let g = body.gauge;
    let out = quadrature_block(body.tape, "perimeter", &body.theta, quad.boundary_len(), 1, |i, acc| {
        let u = quad.boundary_node(i);
        let w = quad.boundary_weights()[i];
        let mut grad = [0.0; 3];
        let h = g.eval(u, Some(&mut grad[..d]));
        let q = tangential(u, &grad[..d]);
        let s = (h * h + q.iter().map(|c| c * c).sum::<f64>()).sqrt();
        let hd = h.powi(-(d as i32));
        if !(h > 0.0 && hd.is_finite() && s.is_finite()) {
            return Err(Error::SingularBoundaryJacobian { node: i });
        }
        acc.values[0] += w * hd * s;
        let h_bar = w * (-(d as f64) * hd * s / h + hd * h / s);
        let g_bar: Vec<f64> = q.iter().map(|c| w * hd * c / s).collect();
        acc.scratch.iter_mut().for_each(|s| *s = 0.0);
        g.vjp(u, h_bar, Some(&g_bar), &mut acc.scratch);
        acc.spread(&[1.0]);
        Ok(())
    })?;
    Ok(out[0])
}

/// Mean curvature of `∂Ω` at `φ(u)` and `|∇p(u)|`, from the profile jet at a
/// unit vector `u`.
///
/// With `M = (h − u·g) I + ∇²h` the gauge Hessian at the boundary point is
/// `h P M P` (`P` the projector off `u`), the normal is `(h u + q)/|h u + q|`,
/// and the divergence of the normal reduces to
/// `h (tr(PM) − qᵀMq/|∇p|²) / ((d−1)|∇p|)`.
pub fn mean_curvature<T: Real>(u: &[f64], h: T, g: &[T], hess: &[T]) -> (T, T) {
    let d = u.len();
    let mut ug = g[0] * u[0];
    for a in 1..d {
        ug = ug + g[a] * u[a];
    }
    let q: Vec<T> = (0..d).map(|a| g[a] - ug * u[a]).collect();
    let mut q2 = q[0] * q[0];
    for a in 1..d {
        q2 = q2 + q[a] * q[a];
    }
    let grad_p2 = h * h + q2;
    let grad_p = grad_p2.sqrt();
    let shift = h - ug;
    let mut tr = hess[0];
    for a in 1..d {
        tr = tr + hess[a * d + a];
    }
    let mut uhu = hess[0] * (u[0] * u[0]);
    let mut qhq = hess[0] * q[0] * q[0];
    for a in 0..d {
        for b in 0..d {
            if a + b == 0 {
                continue;
            }
            uhu = uhu + hess[a * d + b] * (u[a] * u[b]);
            qhq = qhq + hess[a * d + b] * q[a] * q[b];
        }
    }
    let tr_pm = shift * ((d - 1) as f64) + tr - uhu;
    let qmq = shift * q2 + qhq;
    let curvature = h * (tr_pm - qmq / grad_p2) / (grad_p * ((d - 1) as f64));
    (curvature, grad_p)
}

/// `∫_{∂Ω} H²`, pulled back to the sphere. Each node is differentiated on its
/// own scratch tape through the recorded profile jet.
pub fn willmore<'t, G: Gauge>(body: &BodyVars<'t, '_, G>, quad: &Quadrature) -> Result<Var<'t>> {
    let d = body.dim();
    check_dims(body, quad)?;
    let g = body.gauge;
    let theta0 = g.params();
    let out = quadrature_block(body.tape, "willmore", &body.theta, quad.boundary_len(), 1, |i, acc| {
        let u = quad.boundary_node(i);
        let w = quad.boundary_weights()[i];
        let local = Tape::new();
        let th = local.vars(theta0);
        let jet = g.jet(&th, local.constant(0.0), u, true);
        if !(jet.h.value() > 0.0) {
            return Err(Error::SingularBoundaryJacobian { node: i });
        }
        let (curv, grad_p) = mean_curvature(u, jet.h, &jet.grad, &jet.hess);
        let e = curv * curv * grad_p * jet.h.powi(-(d as i32)) * w;
        if !e.value().is_finite() {
            return Err(Error::SingularBoundaryJacobian { node: i });
        }
        acc.values[0] += e.value();
        if !th.is_empty() {
            let grad = local.grad(e, &th)?;
            acc.scratch.copy_from_slice(&grad);
            acc.spread(&[1.0]);
        }
        Ok(())
    })?;
    Ok(out[0])
}

/// Largest condition number of `Dφ` over the volume nodes, recorded through
/// the singular values of `Dφ` at the maximizing node.
pub fn max_condition<'t, G: Gauge>(body: &BodyVars<'t, '_, G>, quad: &Quadrature) -> Result<Var<'t>> {
    let d = body.dim();
    check_dims(body, quad)?;
    let g = body.gauge;
    let n = quad.volume_len();
    let per_chunk: Vec<(f64, usize)> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut best = (f64::NEG_INFINITY, usize::MAX);
            let mut u = [0.0; 3];
            let mut grad = [0.0; 3];
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                unit(quad.volume_node(i), &mut u[..d]);
                let h = g.eval(&u[..d], Some(&mut grad[..d]));
                let k = map_condition(h, &tangential(&u[..d], &grad[..d]));
                if !k.is_finite() {
                    return Err(Error::NonFiniteJacobian { node: i });
                }
                if k > best.0 {
                    best = (k, i);
                }
            }
            Ok(best)
        })
        .collect::<Result<_>>()?;
    let (_, node) = per_chunk
        .into_iter()
        .fold((f64::NEG_INFINITY, usize::MAX), |a, b| if b.0 > a.0 { b } else { a });
    let mut u = vec![0.0; d];
    unit(quad.volume_node(node), &mut u);
    condition_at(body, &u)
}

/// `cond Dφ(u)` recorded through `singular_values`.
pub fn condition_at<'t, G: Gauge>(body: &BodyVars<'t, '_, G>, u: &[f64]) -> Result<Var<'t>> {
    let jet = body.gauge.jet(&body.theta, body.tape.constant(0.0), u, false);
    let mut ug = jet.grad[0] * u[0];
    for a in 1..u.len() {
        ug = ug + jet.grad[a] * u[a];
    }
    let q: Vec<Var<'t>> = jet.grad.iter().zip(u).map(|(&g, &c)| g - ug * c).collect();
    let m = VarMatrix::new(u.len(), u.len(), map_jacobian(jet.h, u, &q));
    let s = m.singular_values()?;
    Ok(s[0] / s[s.len() - 1])
}

/// `Dφ(x)` as a recorded matrix.
pub fn spatial_jacobian_var<'t, G: Gauge>(body: &BodyVars<'t, '_, G>, x: &[f64]) -> VarMatrix<'t> {
    let d = x.len();
    let mut u = vec![0.0; d];
    unit(x, &mut u);
    let jet = body.gauge.jet(&body.theta, body.tape.constant(0.0), &u, false);
    let mut ug = jet.grad[0] * u[0];
    for a in 1..d {
        ug = ug + jet.grad[a] * u[a];
    }
    let q: Vec<Var<'t>> = jet.grad.iter().zip(&u).map(|(&g, &c)| g - ug * c).collect();
    VarMatrix::new(d, d, map_jacobian(jet.h, &u, &q))
}

/// Plain values of the geometric functionals, for reporting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GeometricValues {
    pub vol: f64,
    pub per: f64,
    pub w: f64,
    pub e: Option<f64>,
}

pub fn geometric_values<G: Gauge>(gauge: &G, quad: &Quadrature, with_willmore: bool) -> Result<GeometricValues> {
    let tape = Tape::new();
    let body = BodyVars::new(&tape, gauge);
    let m = moments(&body, quad)?;
    let per = perimeter(&body, quad)?;
    let e = if with_willmore {
        Some(willmore(&body, quad)?.value())
    } else {
        None
    };
    Ok(GeometricValues {
        vol: m.volume.value(),
        per: per.value(),
        w: m.inertia.value(),
        e,
    })
}
