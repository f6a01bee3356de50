//! Convex bodies as images of the unit ball under gauge maps.
//!
//! A body is described by an *ambient profile* `h : ℝᵈ → ℝ`, from which the
//! gauge is `p(x) = |x|·h(x/|x|)` and the ball-to-body map is
//! `φ(x) = x / h(x/|x|)`. For the log-sum-exp network `h(v) = β·LSE(Wᵀv)`.
//! Everything downstream (Jacobians, normals, curvature) is a closed-form
//! expression in `h` and its ambient gradient and Hessian at a unit vector.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::error::{Error, Result};
use crate::quadrature::sphere_directions;

/// Number of sphere directions used by the positivity check.
pub const POSITIVITY_SAMPLES: usize = 4096;

/// Value, ambient gradient and (optionally) ambient Hessian of a profile at a
/// point; the Hessian is row-major `d×d`, empty when not requested.
#[derive(Clone, Debug)]
pub struct Jet<T> {
    pub h: T,
    pub grad: Vec<T>,
    pub hess: Vec<T>,
}

/// A parametrized ambient profile `h`; see the module docs.
pub trait Gauge: Send + Sync {
    fn dim(&self) -> usize;

    /// Current parameter vector `θ`.
    fn params(&self) -> &[f64];

    /// A copy with parameters replaced.
    fn with_params(&self, theta: &[f64]) -> Self
    where
        Self: Sized;

    /// `h(v)`, writing `∇h(v)` into `grad` when provided.
    fn eval(&self, v: &[f64], grad: Option<&mut [f64]>) -> f64;

    /// Accumulate `h̄·∂h/∂θ + ḡ·∂(∇h)/∂θ` at `v` into `out`.
    fn vjp(&self, v: &[f64], h_bar: f64, g_bar: Option<&[f64]>, out: &mut [f64]);

    /// The jet at `v` with `θ` supplied as recorded scalars. `zero` only says
    /// where constants live (it matters for parameter-free profiles).
    fn jet<T: Real>(&self, theta: &[T], zero: T, v: &[f64], hessian: bool) -> Jet<T>
    where
        Self: Sized;

    /// The gauge `p(x) = |x| h(x/|x|)`.
    fn gauge(&self, x: &[f64]) -> f64 {
        let r = norm(x);
        if r == 0.0 {
            return 0.0;
        }
        let u: Vec<f64> = x.iter().map(|c| c / r).collect();
        r * self.eval(&u, None)
    }

    /// `φ(x) = x / h(x/|x|)`, with `φ(0) = 0`.
    fn body_map(&self, x: &[f64]) -> Vec<f64> {
        let r = norm(x);
        if r == 0.0 {
            return vec![0.0; x.len()];
        }
        let u: Vec<f64> = x.iter().map(|c| c / r).collect();
        let h = self.eval(&u, None);
        x.iter().map(|c| c / h).collect()
    }

    /// Closed-form `Dφ(x)` for `x ≠ 0`.
    fn spatial_jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let d = x.len();
        let r = norm(x);
        assert!(r > 0.0, "spatial Jacobian requested at the origin");
        let u: Vec<f64> = x.iter().map(|c| c / r).collect();
        let mut g = vec![0.0; d];
        let h = self.eval(&u, Some(&mut g));
        let q = tangential(&u, &g);
        DMatrix::from_row_slice(d, d, &map_jacobian(h, &u, &q))
    }

    /// Minimum of `h` over [`POSITIVITY_SAMPLES`] sphere directions.
    fn min_on_sphere(&self) -> f64 {
        let d = self.dim();
        sphere_directions(d, POSITIVITY_SAMPLES)
            .chunks_exact(d)
            .map(|u| self.eval(u, None))
            .fold(f64::INFINITY, f64::min)
    }

    fn check_positive(&self) -> Result<()> {
        let min = self.min_on_sphere();
        if min > 0.0 && min.is_finite() {
            Ok(())
        } else {
            Err(Error::GaugeNotPositive { min })
        }
    }

    /// Boundary points `φ(x̂)` for flattened unit directions.
    fn boundary_points(&self, directions: &[f64]) -> Vec<f64> {
        let d = self.dim();
        directions
            .chunks_exact(d)
            .flat_map(|u| {
                let h = self.eval(u, None);
                u.iter().map(move |c| c / h).collect::<Vec<_>>()
            })
            .collect()
    }

    /// Mean of `1/h` over the sphere: the mean radius of the body.
    fn mean_radius(&self) -> f64 {
        let d = self.dim();
        let m = if d == 2 { 512 } else { 1024 };
        let dirs = sphere_directions(d, m);
        dirs.chunks_exact(d).map(|u| 1.0 / self.eval(u, None)).sum::<f64>() / m as f64
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// `P_u g = g − (u·g) u`.
pub fn tangential(u: &[f64], g: &[f64]) -> Vec<f64> {
    let ug: f64 = u.iter().zip(g).map(|(a, b)| a * b).sum();
    u.iter().zip(g).map(|(a, b)| b - ug * a).collect()
}

/// `Dφ = (I − u qᵀ/h)/h` at a unit vector, row-major.
pub fn map_jacobian<T: Real>(h: T, u: &[f64], q: &[T]) -> Vec<T> {
    let d = u.len();
    let inv = h.recip();
    let mut out = Vec::with_capacity(d * d);
    for a in 0..d {
        for b in 0..d {
            let t = q[b] * inv * (-u[a]);
            let t = if a == b { t + 1.0 } else { t };
            out.push(t * inv);
        }
    }
    out
}

/// `Dφ⁻¹ = h I + u qᵀ`, row-major.
pub fn map_jacobian_inverse(h: f64, u: &[f64], q: &[f64]) -> Vec<f64> {
    let d = u.len();
    let mut out = vec![0.0; d * d];
    for a in 0..d {
        for b in 0..d {
            out[a * d + b] = u[a] * q[b] + if a == b { h } else { 0.0 };
        }
    }
    out
}

/// Condition number of `Dφ` at a unit vector. Since `Dφ` is a rank-one
/// perturbation of a multiple of the identity, its singular values are
/// `1/h` (multiplicity `d−2`) and the pair solving a 2×2 problem in the plane
/// spanned by `u` and `q`.
pub fn map_condition(h: f64, q: &[f64]) -> f64 {
    // Dφ·h = I − u (q/h)ᵀ with u ⟂ q: singular values of [[1, −t], [0, 1]]
    let t = norm(q) / h;
    let s = (t * t + 4.0).sqrt();
    let big = 0.5 * (s + t);
    let small = 0.5 * (s - t);
    big / small
}

/// The log-sum-exp gauge network `h(v) = β·LSE(Wᵀv)`.
///
/// Parameters are packed as `θ = [ln β, W₁, …, W_N]` with each column of `W`
/// stored contiguously.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaugeNetwork {
    dim: usize,
    directions: usize,
    theta: Vec<f64>,
}

impl GaugeNetwork {
    pub fn new(dim: usize, log_beta: f64, w_columns: &[Vec<f64>]) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::Validation(format!("gauge: dim must be 2 or 3, got {dim}")));
        }
        if w_columns.iter().any(|c| c.len() != dim) {
            return Err(Error::Validation("gauge: direction of wrong length".into()));
        }
        let mut theta = vec![log_beta];
        for c in w_columns {
            theta.extend_from_slice(c);
        }
        Self::from_params(dim, theta)
    }

    pub fn from_params(dim: usize, theta: Vec<f64>) -> Result<Self> {
        if theta.is_empty() || (theta.len() - 1) % dim != 0 {
            return Err(Error::Validation(format!(
                "gauge: parameter vector of length {} does not fit dim {dim}",
                theta.len()
            )));
        }
        let directions = (theta.len() - 1) / dim;
        if directions < dim + 1 {
            return Err(Error::Validation(format!(
                "gauge: need at least {} directions, got {directions}",
                dim + 1
            )));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::Validation("gauge: non-finite parameter".into()));
        }
        Ok(Self {
            dim,
            directions,
            theta,
        })
    }

    /// Default direction count per dimension.
    pub fn default_directions(dim: usize) -> usize {
        if dim == 2 {
            16
        } else {
            48
        }
    }

    pub fn init_random(dim: usize, directions: usize, seed: u64, scale: f64) -> Result<Self> {
        Self::init_random_with_jitter(dim, directions, seed, scale, 0.3)
    }

    /// Unit directions (equispaced in 2D, Fibonacci in 3D) plus Gaussian
    /// jitter, with `β` chosen so that the mean radius equals `scale`.
    pub fn init_random_with_jitter(
        dim: usize,
        directions: usize,
        seed: u64,
        scale: f64,
        jitter: f64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with_rng(dim, directions, &mut rng, scale, jitter)
    }

    pub fn init_with_rng(
        dim: usize,
        directions: usize,
        rng: &mut ChaCha8Rng,
        scale: f64,
        jitter: f64,
    ) -> Result<Self> {
        if directions < dim + 1 {
            return Err(Error::Validation(format!(
                "gauge: need at least {} directions, got {directions}",
                dim + 1
            )));
        }
        if !(scale > 0.0) {
            return Err(Error::Validation(format!("gauge: scale must be positive, got {scale}")));
        }
        let base = sphere_directions(dim, directions);
        let mut sigma = jitter;
        let mut last = f64::NAN;
        for _ in 0..=5 {
            let normal = Normal::new(0.0, sigma.max(0.0)).expect("finite jitter");
            let theta: Vec<f64> = std::iter::once(0.0)
                .chain(base.iter().map(|&c| c + normal.sample(rng)))
                .collect();
            let mut net = Self::from_params(dim, theta)?;
            match net.check_positive() {
                Ok(()) => {
                    net.theta[0] = (net.mean_radius() / scale).ln();
                    return Ok(net);
                }
                Err(Error::GaugeNotPositive { min }) => last = min,
                Err(e) => return Err(e),
            }
            sigma *= 0.5;
        }
        Err(Error::GaugeNotPositive { min: last })
    }

    pub fn directions(&self) -> usize {
        self.directions
    }

    pub fn beta(&self) -> f64 {
        self.theta[0].exp()
    }

    pub fn log_beta(&self) -> f64 {
        self.theta[0]
    }

    /// Column `k` of `W`.
    pub fn column(&self, k: usize) -> &[f64] {
        &self.theta[1 + k * self.dim..1 + (k + 1) * self.dim]
    }

    /// The same body dilated by `t` (β ← β/t).
    pub fn scaled(&self, t: f64) -> Self {
        let mut out = self.clone();
        out.theta[0] -= t.ln();
        out
    }

    /// Largest `w_k·v`, the log-sum-exp shift.
    fn shift(&self, v: &[f64]) -> f64 {
        let mut m = f64::NEG_INFINITY;
        for k in 0..self.directions {
            m = m.max(dot(self.column(k), v));
        }
        m
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Gauge for GaugeNetwork {
    fn dim(&self) -> usize {
        self.dim
    }

    fn params(&self) -> &[f64] {
        &self.theta
    }

    fn with_params(&self, theta: &[f64]) -> Self {
        assert_eq!(theta.len(), self.theta.len());
        Self {
            dim: self.dim,
            directions: self.directions,
            theta: theta.to_vec(),
        }
    }

    fn eval(&self, v: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let beta = self.beta();
        let m = self.shift(v);
        let mut s = 0.0;
        match grad {
            None => {
                for k in 0..self.directions {
                    s += (dot(self.column(k), v) - m).exp();
                }
            }
            Some(g) => {
                g.iter_mut().for_each(|c| *c = 0.0);
                for k in 0..self.directions {
                    let w = self.column(k);
                    let e = (dot(w, v) - m).exp();
                    s += e;
                    for (ga, wa) in g.iter_mut().zip(w) {
                        *ga += e * wa;
                    }
                }
                g.iter_mut().for_each(|c| *c *= beta / s);
            }
        }
        beta * (s.ln() + m)
    }

    fn vjp(&self, v: &[f64], h_bar: f64, g_bar: Option<&[f64]>, out: &mut [f64]) {
        let beta = self.beta();
        let d = self.dim;
        let m = self.shift(v);
        let mut s = 0.0;
        for k in 0..self.directions {
            s += (dot(self.column(k), v) - m).exp();
        }
        let lse = s.ln() + m;
        let sigma = |k: usize| (dot(self.column(k), v) - m).exp() / s;
        match g_bar {
            None => {
                out[0] += h_bar * beta * lse;
                let c = h_bar * beta;
                for k in 0..self.directions {
                    let zb = c * sigma(k);
                    for a in 0..d {
                        out[1 + k * d + a] += zb * v[a];
                    }
                }
            }
            Some(gb) => {
                // S = Σ σ_j σ̄_j and ḡ·g, both needed before the per-column pass
                let mut ss = 0.0;
                let mut gg = 0.0;
                for k in 0..self.directions {
                    let w = self.column(k);
                    let sk = sigma(k);
                    let gw = dot(gb, w);
                    ss += sk * beta * gw;
                    gg += beta * sk * gw;
                }
                out[0] += h_bar * beta * lse + gg;
                for k in 0..self.directions {
                    let w = self.column(k);
                    let sk = sigma(k);
                    let sb = beta * dot(gb, w);
                    let zb = h_bar * beta * sk + sk * (sb - ss);
                    for a in 0..d {
                        out[1 + k * d + a] += beta * sk * gb[a] + zb * v[a];
                    }
                }
            }
        }
    }

    fn jet<T: Real>(&self, theta: &[T], _zero: T, v: &[f64], hessian: bool) -> Jet<T> {
        let d = self.dim;
        let n = self.directions;
        let beta = theta[0].exp();
        let col = |k: usize| &theta[1 + k * d..1 + (k + 1) * d];
        let z: Vec<T> = (0..n)
            .map(|k| {
                let c = col(k);
                let mut acc = c[0] * v[0];
                for a in 1..d {
                    acc = acc + c[a] * v[a];
                }
                acc
            })
            .collect();
        let m = z.iter().map(|t| t.value()).fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<T> = z.iter().map(|&t| (t - m).exp()).collect();
        let mut s = e[0];
        for &ek in &e[1..] {
            s = s + ek;
        }
        let inv_s = s.recip();
        let sigma: Vec<T> = e.iter().map(|&ek| ek * inv_s).collect();
        let h = beta * (s.ln() + m);
        let mean: Vec<T> = (0..d)
            .map(|a| {
                let mut acc = sigma[0] * col(0)[a];
                for k in 1..n {
                    acc = acc + sigma[k] * col(k)[a];
                }
                acc
            })
            .collect();
        let grad: Vec<T> = mean.iter().map(|&c| beta * c).collect();
        let mut hess = Vec::new();
        if hessian {
            hess.reserve(d * d);
            for a in 0..d {
                for b in 0..d {
                    if b < a {
                        let t = hess[b * d + a];
                        hess.push(t);
                        continue;
                    }
                    let mut acc = sigma[0] * col(0)[a] * col(0)[b];
                    for k in 1..n {
                        acc = acc + sigma[k] * col(k)[a] * col(k)[b];
                    }
                    hess.push(beta * (acc - mean[a] * mean[b]));
                }
            }
        }
        Jet { h, grad, hess }
    }
}

/// A finite group of orthogonal matrices, stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetryGroup {
    dim: usize,
    elements: Vec<Vec<f64>>,
}

const GROUP_TOL: f64 = 1e-12;

impl SymmetryGroup {
    pub fn new(dim: usize, elements: Vec<Vec<f64>>) -> Result<Self> {
        let g = Self { dim, elements };
        g.validate()?;
        Ok(g)
    }

    pub fn trivial(dim: usize) -> Self {
        Self {
            dim,
            elements: vec![identity(dim)],
        }
    }

    /// All sign flips of the coordinate axes.
    pub fn axis_reflections(dim: usize) -> Self {
        let elements = (0..1usize << dim)
            .map(|mask| {
                let mut m = vec![0.0; dim * dim];
                for a in 0..dim {
                    m[a * dim + a] = if mask >> a & 1 == 1 { -1.0 } else { 1.0 };
                }
                m
            })
            .collect();
        Self { dim, elements }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn is_trivial(&self) -> bool {
        self.elements.len() == 1
    }

    pub fn elements(&self) -> &[Vec<f64>] {
        &self.elements
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim;
        let bad = |msg: String| Err(Error::InvalidGroup(msg));
        if self.elements.is_empty() {
            return bad("empty".into());
        }
        for (i, g) in self.elements.iter().enumerate() {
            if g.len() != d * d {
                return bad(format!("element {i} is not {d}x{d}"));
            }
            if max_diff(&matmul_t(g, g, d, true), &identity(d)) > GROUP_TOL {
                return bad(format!("element {i} is not orthogonal"));
            }
        }
        if !self.contains(&identity(d)) {
            return bad("identity missing".into());
        }
        for (i, a) in self.elements.iter().enumerate() {
            if !self.contains(&transpose(a, d)) {
                return bad(format!("inverse of element {i} missing"));
            }
            for (j, b) in self.elements.iter().enumerate() {
                if !self.contains(&matmul_t(a, b, d, false)) {
                    return bad(format!("product of elements {i} and {j} missing"));
                }
            }
        }
        Ok(())
    }

    fn contains(&self, m: &[f64]) -> bool {
        self.elements.iter().any(|e| max_diff(e, m) <= GROUP_TOL)
    }
}

fn identity(d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for a in 0..d {
        m[a * d + a] = 1.0;
    }
    m
}

fn transpose(m: &[f64], d: usize) -> Vec<f64> {
    let mut t = vec![0.0; d * d];
    for a in 0..d {
        for b in 0..d {
            t[b * d + a] = m[a * d + b];
        }
    }
    t
}

/// `aᵀb` when `ta`, else `ab`.
fn matmul_t(a: &[f64], b: &[f64], d: usize, ta: bool) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = (0..d)
                .map(|k| if ta { a[k * d + i] } else { a[i * d + k] } * b[k * d + j])
                .sum();
        }
    }
    out
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `y = gᵀv`.
fn apply_t(g: &[f64], v: &[f64], out: &mut [f64]) {
    let d = v.len();
    for a in 0..d {
        out[a] = (0..d).map(|b| g[b * d + a] * v[b]).sum();
    }
}

/// `y = g v`.
fn apply(g: &[f64], v: &[f64], out: &mut [f64]) {
    let d = v.len();
    for a in 0..d {
        out[a] = (0..d).map(|b| g[a * d + b] * v[b]).sum();
    }
}

/// The group average `h^G(v) = Σ_g h(gᵀv)` of a network, whose body map is
/// equivariant under the group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetrizedGauge {
    net: GaugeNetwork,
    group: SymmetryGroup,
}

impl SymmetrizedGauge {
    pub fn new(net: GaugeNetwork, group: SymmetryGroup) -> Result<Self> {
        if net.dim != group.dim {
            return Err(Error::InvalidGroup(format!(
                "group acts on dimension {}, network on {}",
                group.dim, net.dim
            )));
        }
        group.validate()?;
        Ok(Self { net, group })
    }

    pub fn trivial(net: GaugeNetwork) -> Self {
        let dim = net.dim;
        Self {
            net,
            group: SymmetryGroup::trivial(dim),
        }
    }

    pub fn network(&self) -> &GaugeNetwork {
        &self.net
    }

    pub fn group(&self) -> &SymmetryGroup {
        &self.group
    }

    /// Rescale `β` so that the symmetrized body has the given mean radius.
    pub fn normalize_scale(&mut self, scale: f64) {
        let r = self.mean_radius();
        self.net.theta[0] += (r / scale).ln();
    }

    pub fn scaled(&self, t: f64) -> Self {
        Self {
            net: self.net.scaled(t),
            group: self.group.clone(),
        }
    }
}

impl Gauge for SymmetrizedGauge {
    fn dim(&self) -> usize {
        self.net.dim
    }

    fn params(&self) -> &[f64] {
        &self.net.theta
    }

    fn with_params(&self, theta: &[f64]) -> Self {
        Self {
            net: self.net.with_params(theta),
            group: self.group.clone(),
        }
    }

    fn eval(&self, v: &[f64], grad: Option<&mut [f64]>) -> f64 {
        if self.group.is_trivial() {
            return self.net.eval(v, grad);
        }
        let d = v.len();
        let mut w = [0.0; 3];
        let mut gl = [0.0; 3];
        let mut gg = [0.0; 3];
        let mut total = 0.0;
        match grad {
            None => {
                for g in &self.group.elements {
                    apply_t(g, v, &mut w[..d]);
                    total += self.net.eval(&w[..d], None);
                }
            }
            Some(out) => {
                out.iter_mut().for_each(|c| *c = 0.0);
                for g in &self.group.elements {
                    apply_t(g, v, &mut w[..d]);
                    total += self.net.eval(&w[..d], Some(&mut gl[..d]));
                    apply(g, &gl[..d], &mut gg[..d]);
                    for a in 0..d {
                        out[a] += gg[a];
                    }
                }
            }
        }
        total
    }

    fn vjp(&self, v: &[f64], h_bar: f64, g_bar: Option<&[f64]>, out: &mut [f64]) {
        if self.group.is_trivial() {
            return self.net.vjp(v, h_bar, g_bar, out);
        }
        let d = v.len();
        let mut w = [0.0; 3];
        let mut gb = [0.0; 3];
        for g in &self.group.elements {
            apply_t(g, v, &mut w[..d]);
            match g_bar {
                None => self.net.vjp(&w[..d], h_bar, None, out),
                Some(b) => {
                    apply_t(g, b, &mut gb[..d]);
                    self.net.vjp(&w[..d], h_bar, Some(&gb[..d]), out);
                }
            }
        }
    }

    fn jet<T: Real>(&self, theta: &[T], zero: T, v: &[f64], hessian: bool) -> Jet<T> {
        if self.group.is_trivial() {
            return self.net.jet(theta, zero, v, hessian);
        }
        let d = v.len();
        let mut acc: Option<Jet<T>> = None;
        let mut w = [0.0; 3];
        for g in &self.group.elements {
            apply_t(g, v, &mut w[..d]);
            let j = self.net.jet(theta, zero, &w[..d], hessian);
            // rotate back: grad ← g ∇h, hess ← g H gᵀ
            let grad: Vec<T> = (0..d)
                .map(|a| {
                    let mut s = j.grad[0] * g[a * d];
                    for b in 1..d {
                        s = s + j.grad[b] * g[a * d + b];
                    }
                    s
                })
                .collect();
            let hess: Vec<T> = if hessian {
                let mut out = Vec::with_capacity(d * d);
                for a in 0..d {
                    for b in 0..d {
                        let mut s = zero;
                        for k in 0..d {
                            for l in 0..d {
                                let c = g[a * d + k] * g[b * d + l];
                                if c != 0.0 {
                                    s = s + j.hess[k * d + l] * c;
                                }
                            }
                        }
                        out.push(s);
                    }
                }
                out
            } else {
                Vec::new()
            };
            acc = Some(match acc {
                None => Jet { h: j.h, grad, hess },
                Some(a) => Jet {
                    h: a.h + j.h,
                    grad: a.grad.iter().zip(&grad).map(|(&x, &y)| x + y).collect(),
                    hess: a.hess.iter().zip(&hess).map(|(&x, &y)| x + y).collect(),
                },
            });
        }
        acc.expect("group is non-empty")
    }
}

/// The body `A(B)` for an invertible matrix `A`: `h(v) = |A⁻¹v|`.
/// Parameter free; used as an exactly known reference body.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearGauge {
    dim: usize,
    /// `A⁻¹`, row-major.
    inv: Vec<f64>,
}

impl LinearGauge {
    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            inv: identity(dim),
        }
    }

    pub fn diagonal(axes: &[f64]) -> Self {
        let d = axes.len();
        let mut inv = vec![0.0; d * d];
        for (a, &s) in axes.iter().enumerate() {
            inv[a * d + a] = 1.0 / s;
        }
        Self { dim: d, inv }
    }

    pub fn from_matrix(a: &DMatrix<f64>) -> Result<Self> {
        let d = a.nrows();
        let inv = a
            .clone()
            .try_inverse()
            .ok_or(Error::Singular { op: "linear gauge" })?;
        Ok(Self {
            dim: d,
            inv: (0..d * d).map(|k| inv[(k / d, k % d)]).collect(),
        })
    }

    fn inv_apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        apply(&self.inv, v, &mut out);
        out
    }
}

impl Gauge for LinearGauge {
    fn dim(&self) -> usize {
        self.dim
    }

    fn params(&self) -> &[f64] {
        &[]
    }

    fn with_params(&self, theta: &[f64]) -> Self {
        assert!(theta.is_empty());
        self.clone()
    }

    fn eval(&self, v: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let y = self.inv_apply(v);
        let h = norm(&y);
        if let Some(g) = grad {
            // A⁻ᵀ y / |y|
            for (a, ga) in g.iter_mut().enumerate() {
                *ga = (0..self.dim).map(|b| self.inv[b * self.dim + a] * y[b]).sum::<f64>() / h;
            }
        }
        h
    }

    fn vjp(&self, _v: &[f64], _h_bar: f64, _g_bar: Option<&[f64]>, _out: &mut [f64]) {}

    fn jet<T: Real>(&self, _theta: &[T], zero: T, v: &[f64], hessian: bool) -> Jet<T> {
        let d = self.dim;
        let mut g = vec![0.0; d];
        let h = self.eval(v, Some(&mut g));
        let mut hess = Vec::new();
        if hessian {
            // (A⁻ᵀA⁻¹ − g gᵀ)/h
            for a in 0..d {
                for b in 0..d {
                    let bab: f64 = (0..d).map(|k| self.inv[k * d + a] * self.inv[k * d + b]).sum();
                    hess.push(zero + (bab - g[a] * g[b]) / h);
                }
            }
        }
        Jet {
            h: zero + h,
            grad: g.iter().map(|&c| zero + c).collect(),
            hess,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_net(dim: usize, seed: u64) -> GaugeNetwork {
        GaugeNetwork::init_random_with_jitter(dim, GaugeNetwork::default_directions(dim), seed, 1.0, 0.8)
            .unwrap()
    }

    fn random_point(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
        (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()
    }

    #[test]
    fn lse_of_zeros_is_ln2() {
        let net = GaugeNetwork::new(2, 0.0, &[vec![0.0, 0.0], vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        // three zero columns give ln 3; the two-column case is below the direction minimum
        assert!((net.gauge(&[1.0, 0.0]) - 3f64.ln()).abs() < 1e-15);
        let two = GaugeNetwork {
            dim: 2,
            directions: 2,
            theta: vec![0.0; 5],
        };
        assert!((two.gauge(&[1.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn homogeneity_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for dim in [2, 3] {
            let net = random_net(dim, 3);
            for _ in 0..200 {
                let x = random_point(&mut rng, dim);
                let x2: Vec<f64> = x.iter().map(|c| 2.0 * c).collect();
                let (a, b) = (net.gauge(&x), net.gauge(&x2));
                assert!((b - 2.0 * a).abs() <= 1e-14 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn sublinearity_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = random_net(2, 5);
        for _ in 0..10_000 {
            let x = random_point(&mut rng, 2);
            let y = random_point(&mut rng, 2);
            let s: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
            assert!(net.gauge(&s) <= net.gauge(&x) + net.gauge(&y) + 1e-12);
        }
    }

    #[test]
    fn boundary_round_trip() {
        for dim in [2, 3] {
            let net = random_net(dim, 11);
            for u in sphere_directions(dim, 300).chunks(dim) {
                let y = net.body_map(u);
                assert!((net.gauge(&y) - 1.0).abs() < 1e-12);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            for _ in 0..100 {
                let mut x = random_point(&mut rng, dim);
                let r = norm(&x);
                x.iter_mut().for_each(|c| *c *= rng.random_range(0.0..1.0) / r);
                assert!((net.gauge(&net.body_map(&x)) - norm(&x)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_gauge_is_identity_map() {
        let g = LinearGauge::identity(2);
        let x = [0.3, -0.4];
        assert_eq!(g.body_map(&x), x.to_vec());
        let j = g.spatial_jacobian(&x);
        assert!((j - DMatrix::identity(2, 2)).abs().max() < 1e-15);
    }

    #[test]
    fn spatial_jacobian_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for dim in [2, 3] {
            let net = random_net(dim, 21);
            for _ in 0..20 {
                let x = random_point(&mut rng, dim);
                let j = net.spatial_jacobian(&x);
                let eps = 1e-6;
                for b in 0..dim {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[b] += eps;
                    xm[b] -= eps;
                    let (fp, fm) = (net.body_map(&xp), net.body_map(&xm));
                    for a in 0..dim {
                        let fd = (fp[a] - fm[a]) / (2.0 * eps);
                        assert!((fd - j[(a, b)]).abs() < 1e-6, "{fd} vs {}", j[(a, b)]);
                    }
                }
                // det Dφ = h^{-d}
                let r = norm(&x);
                let u: Vec<f64> = x.iter().map(|c| c / r).collect();
                let h = net.eval(&u, None);
                assert!((j.determinant() - h.powi(-(dim as i32))).abs() < 1e-10 * h.powi(-(dim as i32)));
            }
        }
    }

    #[test]
    fn convex_boundary_polyline() {
        for seed in 0..10 {
            let net = random_net(2, seed);
            let pts = net.boundary_points(&sphere_directions(2, 1024));
            let p: Vec<[f64; 2]> = pts.chunks(2).map(|c| [c[0], c[1]]).collect();
            assert!(crate::geometry::is_convex_polygon(&p, 1e-12));
        }
    }

    #[test]
    fn init_is_deterministic_and_symmetric_without_jitter() {
        let a = GaugeNetwork::init_random(2, 16, 9, 1.0).unwrap();
        let b = GaugeNetwork::init_random(2, 16, 9, 1.0).unwrap();
        assert_eq!(a.params(), b.params());
        let z = GaugeNetwork::init_random_with_jitter(2, 4, 9, 1.0, 0.0).unwrap();
        let vals: Vec<f64> = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]]
            .iter()
            .map(|u| z.eval(u, None))
            .collect();
        for v in &vals {
            assert!((v - vals[0]).abs() < 1e-12);
        }
        assert!((a.mean_radius() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn init_always_positive() {
        for seed in 0..50 {
            for dim in [2, 3] {
                let net = GaugeNetwork::init_random(dim, GaugeNetwork::default_directions(dim), seed, 1.0).unwrap();
                assert!(net.min_on_sphere() > 0.0);
            }
        }
    }

    #[test]
    fn group_validation() {
        assert!(SymmetryGroup::axis_reflections(2).validate().is_ok());
        assert!(SymmetryGroup::axis_reflections(3).validate().is_ok());
        // a lone reflection without identity
        let bad = SymmetryGroup::new(2, vec![vec![-1.0, 0.0, 0.0, 1.0]]);
        assert!(matches!(bad, Err(Error::InvalidGroup(_))));
        // not closed: rotation by 90° without its powers
        let r = vec![0.0, -1.0, 1.0, 0.0];
        assert!(SymmetryGroup::new(2, vec![identity(2), r]).is_err());
        // not orthogonal
        assert!(SymmetryGroup::new(2, vec![identity(2), vec![2.0, 0.0, 0.0, 1.0]]).is_err());
    }

    #[test]
    fn trivial_group_changes_nothing() {
        let net = random_net(2, 12);
        let sym = SymmetrizedGauge::trivial(net.clone());
        for u in sphere_directions(2, 50).chunks(2) {
            assert_eq!(sym.body_map(u), net.body_map(u));
        }
    }

    #[test]
    fn reflections_are_equivariant() {
        let sym = SymmetrizedGauge::new(random_net(2, 13), SymmetryGroup::axis_reflections(2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x = random_point(&mut rng, 2);
            for g in sym.group().elements() {
                let mut gx = vec![0.0; 2];
                apply(g, &x, &mut gx);
                let lhs = sym.body_map(&gx);
                let mut rhs = vec![0.0; 2];
                apply(g, &sym.body_map(&x), &mut rhs);
                assert!(max_diff(&lhs, &rhs) < 1e-12);
            }
        }
    }

    /// Finite-difference check of `vjp` against `eval`.
    fn check_vjp<G: Gauge>(gauge: &G, v: &[f64], h_bar: f64, g_bar: &[f64]) {
        let d = v.len();
        let theta = gauge.params().to_vec();
        let mut out = vec![0.0; theta.len()];
        gauge.vjp(v, h_bar, Some(g_bar), &mut out);
        let f = |t: &[f64]| {
            let g = gauge.with_params(t);
            let mut gr = vec![0.0; d];
            let h = g.eval(v, Some(&mut gr));
            h_bar * h + gr.iter().zip(g_bar).map(|(a, b)| a * b).sum::<f64>()
        };
        let eps = 1e-6;
        let fd: Vec<f64> = (0..theta.len())
            .map(|i| {
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[i] += eps;
                tm[i] -= eps;
                (f(&tp) - f(&tm)) / (2.0 * eps)
            })
            .collect();
        let err = out.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = fd.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(err <= 1e-6 * scale.max(1.0), "vjp error {err} (scale {scale})");
    }

    #[test]
    fn vjp_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for dim in [2, 3] {
            let net = random_net(dim, 31);
            let sym = SymmetrizedGauge::new(net.clone(), SymmetryGroup::axis_reflections(dim)).unwrap();
            for _ in 0..10 {
                let v = random_point(&mut rng, dim);
                let gb = random_point(&mut rng, dim);
                let hb = rng.random_range(-1.0..1.0);
                check_vjp(&net, &v, hb, &gb);
                check_vjp(&sym, &v, hb, &gb);
            }
        }
    }

    #[test]
    fn recorded_jet_agrees_with_closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for dim in [2, 3] {
            let sym = SymmetrizedGauge::new(random_net(dim, 41), SymmetryGroup::axis_reflections(dim)).unwrap();
            let v = random_point(&mut rng, dim);
            let gb = random_point(&mut rng, dim);
            let tape = Tape::new();
            let theta = tape.vars(sym.params());
            let jet = sym.jet(&theta, tape.constant(0.0), &v, true);
            let mut g = vec![0.0; dim];
            let h = sym.eval(&v, Some(&mut g));
            assert!((jet.h.value() - h).abs() < 1e-12 * h.abs().max(1.0));
            for a in 0..dim {
                assert!((jet.grad[a].value() - g[a]).abs() < 1e-12 * h.abs().max(1.0));
            }
            // tape gradient of h̄h + ḡ·g equals the hand-written vjp
            let mut loss = jet.h * 0.7;
            for a in 0..dim {
                loss = loss + jet.grad[a] * gb[a];
            }
            let tg = tape.grad(loss, &theta).unwrap();
            let mut hand = vec![0.0; theta.len()];
            sym.vjp(&v, 0.7, Some(&gb), &mut hand);
            for (a, b) in tg.iter().zip(&hand) {
                assert!((a - b).abs() < 1e-10 * b.abs().max(1.0));
            }
            // hessian against differences of the gradient
            let eps = 1e-6;
            for b in 0..dim {
                let mut vp = v.clone();
                let mut vm = v.clone();
                vp[b] += eps;
                vm[b] -= eps;
                let (mut gp, mut gm) = (vec![0.0; dim], vec![0.0; dim]);
                sym.eval(&vp, Some(&mut gp));
                sym.eval(&vm, Some(&mut gm));
                for a in 0..dim {
                    let fd = (gp[a] - gm[a]) / (2.0 * eps);
                    assert!((fd - jet.hess[a * dim + b].value()).abs() < 1e-5 * fd.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn linear_gauge_jet_hessian() {
        let g = LinearGauge::diagonal(&[1.0, 0.5]);
        let v = [0.6, 0.8];
        let jet = g.jet::<f64>(&[], 0.0, &v, true);
        let eps = 1e-6;
        for b in 0..2 {
            let mut vp = v;
            let mut vm = v;
            vp[b] += eps;
            vm[b] -= eps;
            let (mut gp, mut gm) = ([0.0; 2], [0.0; 2]);
            g.eval(&vp, Some(&mut gp));
            g.eval(&vm, Some(&mut gm));
            for a in 0..2 {
                assert!(((gp[a] - gm[a]) / (2.0 * eps) - jet.hess[a * 2 + b]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn condition_number_closed_form() {
        let g = LinearGauge::diagonal(&[2.0, 1.0]);
        for u in sphere_directions(2, 16).chunks(2) {
            let mut gr = [0.0; 2];
            let h = g.eval(u, Some(&mut gr));
            let sv = g.spatial_jacobian(u).singular_values();
            let expect = sv.max() / sv.min();
            assert!((map_condition(h, &tangential(u, &gr)) - expect).abs() < 1e-12 * expect);
        }
        let net = random_net(3, 2);
        let u = [0.0, 0.6, 0.8];
        let mut gr = [0.0; 3];
        let h = net.eval(&u, Some(&mut gr));
        let sv = net.spatial_jacobian(&u).singular_values();
        let expect = sv.max() / sv.min();
        assert!((map_condition(h, &tangential(&u, &gr)) - expect).abs() < 1e-10 * expect);
    }

    proptest! {
        #[test]
        fn prop_sublinear_and_homogeneous(seed in 0u64..1000, t in 0.1f64..10.0,
                                          x in prop::array::uniform3(-3.0f64..3.0),
                                          y in prop::array::uniform3(-3.0f64..3.0)) {
            let net = random_net(3, seed);
            let s = [x[0] + y[0], x[1] + y[1], x[2] + y[2]];
            prop_assert!(net.gauge(&s) <= net.gauge(&x) + net.gauge(&y) + 1e-12);
            let tx = [t * x[0], t * x[1], t * x[2]];
            let a = net.gauge(&tx);
            prop_assert!((a - t * net.gauge(&x)).abs() <= 1e-13 * a.abs().max(1.0));
        }

        #[test]
        fn prop_distinct_directions_distinct_points(seed in 0u64..1000) {
            let net = random_net(2, seed);
            let pts = net.boundary_points(&sphere_directions(2, 256));
            let p: Vec<&[f64]> = pts.chunks(2).collect();
            let mut min = f64::INFINITY;
            for i in 0..p.len() {
                let j = (i + 1) % p.len();
                min = min.min(((p[i][0] - p[j][0]).powi(2) + (p[i][1] - p[j][1]).powi(2)).sqrt());
            }
            prop_assert!(min > 0.0);
        }
    }
}
