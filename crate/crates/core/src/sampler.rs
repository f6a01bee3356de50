//! The interacting particle system: each particle is a gauge network, and
//! their diagram coordinates repel each other through a Riesz energy.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::diagram::DiagramId;
use crate::error::{Error, Result};
use crate::evaluate::{Discretization, Evaluator};
use crate::functionals::{max_condition, BodyVars, Functional};
use crate::gauge::{Gauge, GaugeNetwork, SymmetrizedGauge, SymmetryGroup};
use crate::optim::{minimize, IterationRecord, LbfgsConfig, Termination};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    /// Riesz exponent.
    pub s: f64,
    /// Weight of the condition-number regularizer.
    pub alpha: f64,
    /// Distance floor inside the pair energy.
    pub eps_dist: f64,
    /// Bodies whose map condition number exceeds this are infeasible.
    pub cond_limit: f64,
    /// Directions per gauge network.
    pub directions: usize,
    pub init_jitter: f64,
    pub init_scale: f64,
    pub lbfgs: LbfgsConfig,
    pub discretization: Discretization,
}

impl SamplerConfig {
    pub fn default_for(dim: usize) -> Self {
        Self {
            s: 3.0,
            alpha: 100.0,
            eps_dist: 1e-9,
            cond_limit: 1e3,
            directions: GaugeNetwork::default_directions(dim),
            init_jitter: 0.3,
            init_scale: 1.0,
            lbfgs: LbfgsConfig::default(),
            discretization: Discretization::default_for(dim),
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.s > 2.0 && self.s.is_finite()) {
            return Err(Error::Validation(format!("sampler: s must exceed 2, got {}", self.s)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Validation(format!("sampler: alpha must be non-negative, got {}", self.alpha)));
        }
        if !(self.eps_dist >= 0.0 && self.eps_dist.is_finite()) {
            return Err(Error::Validation("sampler: eps_dist must be non-negative".into()));
        }
        if !(self.cond_limit > 1.0) {
            return Err(Error::Validation(format!("sampler: cond_limit must exceed 1, got {}", self.cond_limit)));
        }
        if self.directions < dim + 1 {
            return Err(Error::Validation(format!(
                "sampler: need at least {} directions, got {}",
                dim + 1,
                self.directions
            )));
        }
        if !(self.init_jitter >= 0.0 && self.init_scale > 0.0) {
            return Err(Error::Validation("sampler: init_jitter ≥ 0 and init_scale > 0 required".into()));
        }
        self.lbfgs.validate()?;
        self.discretization.validate()
    }
}

/// Raw functional values of one body; absent ones are not needed by the
/// diagram.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RawValues {
    pub vol: Option<f64>,
    pub per: Option<f64>,
    pub w: Option<f64>,
    pub e: Option<f64>,
    pub t: Option<f64>,
    pub mu1: Option<f64>,
    pub mu2: Option<f64>,
}

impl RawValues {
    pub fn set(&mut self, kind: Functional, v: f64) {
        let slot = match kind {
            Functional::Vol => &mut self.vol,
            Functional::Per => &mut self.per,
            Functional::W => &mut self.w,
            Functional::E => &mut self.e,
            Functional::T => &mut self.t,
            Functional::Mu1 => &mut self.mu1,
            Functional::Mu2 => &mut self.mu2,
        };
        *slot = Some(v);
    }

    /// In column order: vol, per, w, e, t, mu1, mu2.
    pub fn columns(&self) -> [Option<f64>; 7] {
        [self.vol, self.per, self.w, self.e, self.t, self.mu1, self.mu2]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagramPoint {
    pub particle_id: usize,
    pub x: f64,
    pub y: f64,
    pub values: RawValues,
}

/// Everything a run produces.
#[derive(Clone, Debug)]
pub struct DiagramResult {
    pub diagram: DiagramId,
    pub seed: u64,
    pub config: SamplerConfig,
    pub points: Vec<DiagramPoint>,
    pub particles: Vec<SymmetrizedGauge>,
    pub log: Vec<IterationRecord>,
    pub termination: Termination,
    pub final_loss: f64,
    pub failure: Option<String>,
}

impl DiagramResult {
    pub fn converged(&self) -> bool {
        self.termination != Termination::LineSearchFailed
    }
}

/// One particle evaluated on its own tape: coordinates, regularizer and the
/// `3×P` Jacobian of `(x, y, cond)` (row-major).
struct ParticleEval {
    x: f64,
    y: f64,
    cond: f64,
    jac: Vec<f64>,
}

/// `Σ_{i≠j} (|Fᵢ − Fⱼ|² + ε²)^{−s/2} + α Σᵢ r(condᵢ)` with
/// `r(c) = −L ln(1 − c/L)`: `r(c) ≈ c` well below the limit `L`, and the
/// barrier keeps iterates strictly inside it. An infinite `L` gives `r(c) = c`.
pub fn riesz_loss<'t>(
    tape: &'t Tape,
    points: &[(Var<'t>, Var<'t>)],
    conds: &[Var<'t>],
    s: f64,
    alpha: f64,
    eps_dist: f64,
    cond_limit: f64,
) -> Result<Var<'t>> {
    let n = points.len();
    if n < 2 {
        return Err(Error::Validation("sampler: N ≥ 2 required".into()));
    }
    let mut energy = tape.constant(0.0);
    let mut closest = (f64::INFINITY, 0, 1);
    for i in 0..n {
        for j in i + 1..n {
            let dx = points[i].0 - points[j].0;
            let dy = points[i].1 - points[j].1;
            let r2 = dx * dx + dy * dy;
            if r2.value() < closest.0 {
                closest = (r2.value(), i, j);
            }
            // both ordered pairs
            energy = energy + (r2 + eps_dist * eps_dist).powf(-0.5 * s) * 2.0;
        }
    }
    for &c in conds {
        let r = if cond_limit.is_finite() {
            (1.0 - c / cond_limit).ln() * (-cond_limit)
        } else {
            c
        };
        energy = energy + r * alpha;
    }
    if !energy.value().is_finite() {
        return Err(Error::NonFiniteLoss {
            i: closest.1,
            j: closest.2,
            distance: closest.0.sqrt(),
        });
    }
    Ok(energy)
}

/// The particle system of one diagram run.
pub struct ParticleSystem {
    pub diagram: DiagramId,
    pub config: SamplerConfig,
    evaluator: Evaluator,
    template: Vec<SymmetrizedGauge>,
}

impl ParticleSystem {
    /// Particles initialized from per-particle streams of a seeded generator.
    pub fn new(diagram: DiagramId, n: usize, seed: u64, config: SamplerConfig) -> Result<Self> {
        if n < 2 {
            return Err(Error::Validation("sampler: N ≥ 2 required".into()));
        }
        let dim = diagram.dim();
        config.validate(dim)?;
        let group = diagram.symmetry().unwrap_or_else(|| SymmetryGroup::trivial(dim));
        let template = (0..n)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                let net = GaugeNetwork::init_with_rng(dim, config.directions, &mut rng, config.init_scale, config.init_jitter)
                    .map_err(|e| e.for_particle(i))?;
                let mut g = SymmetrizedGauge::new(net, group.clone())?;
                g.normalize_scale(config.init_scale);
                g.check_positive().map_err(|e| e.for_particle(i))?;
                Ok(g)
            })
            .collect::<Result<Vec<_>>>()?;
        let evaluator = Evaluator::new(dim, &config.discretization)?;
        Ok(Self {
            diagram,
            config,
            evaluator,
            template,
        })
    }

    pub fn len(&self) -> usize {
        self.template.len()
    }

    pub fn is_empty(&self) -> bool {
        self.template.is_empty()
    }

    pub fn n_params(&self) -> usize {
        self.template[0].params().len()
    }

    pub fn evaluator(&self) -> &Evaluator {
        &self.evaluator
    }

    /// Current parameters of all particles, concatenated.
    pub fn initial_params(&self) -> Vec<f64> {
        self.template.iter().flat_map(|g| g.params().iter().copied()).collect()
    }

    pub fn particles(&self, x: &[f64]) -> Vec<SymmetrizedGauge> {
        let p = self.n_params();
        self.template
            .iter()
            .enumerate()
            .map(|(i, g)| g.with_params(&x[i * p..(i + 1) * p]))
            .collect()
    }

    fn eval_particle(&self, gauge: &SymmetrizedGauge) -> Result<ParticleEval> {
        gauge.check_positive()?;
        let tape = Tape::new();
        let body = BodyVars::new(&tape, gauge);
        let values = self.evaluator.record(&body, self.diagram.functionals())?;
        let (x, y) = self.diagram.coordinates(&values);
        let c = max_condition(&body, self.evaluator.quadrature())?;
        if !(c.value() < self.config.cond_limit) {
            return Err(Error::Distorted {
                cond: c.value(),
                limit: self.config.cond_limit,
            });
        }
        let cond = (self.config.alpha > 0.0).then_some(c);
        let mut jac = tape.grad(x, &body.theta)?;
        jac.extend(tape.grad(y, &body.theta)?);
        match cond {
            Some(c) => jac.extend(tape.grad(c, &body.theta)?),
            None => jac.extend(std::iter::repeat_n(0.0, body.n_params())),
        }
        Ok(ParticleEval {
            x: x.value(),
            y: y.value(),
            cond: cond.map_or(0.0, |c| c.value()),
            jac,
        })
    }

    /// Total loss and its gradient with respect to all parameters.
    pub fn loss_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let p = self.n_params();
        let particles = self.particles(x);
        let evals: Vec<ParticleEval> = particles
            .par_iter()
            .enumerate()
            .map(|(i, g)| self.eval_particle(g).map_err(|e| e.for_particle(i)))
            .collect::<Result<_>>()?;
        let tape = Tape::new();
        let mut points = Vec::with_capacity(evals.len());
        let mut conds = Vec::with_capacity(evals.len());
        let mut inputs = Vec::with_capacity(3 * evals.len());
        for e in &evals {
            let v = tape.vars(&[e.x, e.y, e.cond]);
            points.push((v[0], v[1]));
            conds.push(v[2]);
            inputs.extend(v);
        }
        let c = &self.config;
        let loss = riesz_loss(&tape, &points, &conds, c.s, c.alpha, c.eps_dist, c.cond_limit)?;
        let adj = tape.grad(loss, &inputs)?;
        let mut grad = vec![0.0; x.len()];
        for (i, e) in evals.iter().enumerate() {
            let out = &mut grad[i * p..(i + 1) * p];
            for r in 0..3 {
                let a = adj[3 * i + r];
                for (o, j) in out.iter_mut().zip(&e.jac[r * p..(r + 1) * p]) {
                    *o += a * j;
                }
            }
        }
        Ok((loss.value(), grad))
    }

    /// Coordinates and raw functional values of every particle.
    pub fn points(&self, x: &[f64]) -> Result<Vec<DiagramPoint>> {
        let kinds = self.diagram.functionals();
        self.particles(x)
            .par_iter()
            .enumerate()
            .map(|(i, g)| {
                let v = self.evaluator.values(g, kinds).map_err(|e| e.for_particle(i))?;
                let (px, py) = self.diagram.coordinates(&v);
                let mut values = RawValues::default();
                for (&k, &val) in kinds.iter().zip(&v) {
                    values.set(k, val);
                }
                Ok(DiagramPoint {
                    particle_id: i,
                    x: px,
                    y: py,
                    values,
                })
            })
            .collect()
    }
}

/// Runs L-BFGS on the particle system. `observe` sees every accepted
/// iteration.
pub fn run_sampler_with<O>(
    diagram: DiagramId,
    n: usize,
    seed: u64,
    config: SamplerConfig,
    mut observe: O,
) -> Result<DiagramResult>
where
    O: FnMut(&IterationRecord),
{
    let system = ParticleSystem::new(diagram, n, seed, config)?;
    let x0 = system.initial_params();
    let min = minimize(
        |x| system.loss_and_gradient(x),
        &x0,
        &config.lbfgs,
        |rec, _| observe(rec),
    )?;
    let points = system.points(&min.x)?;
    Ok(DiagramResult {
        diagram,
        seed,
        config,
        points,
        particles: system.particles(&min.x),
        log: min.log,
        termination: min.termination,
        final_loss: min.f,
        failure: min.failure,
    })
}

pub fn run_sampler(diagram: DiagramId, n: usize, seed: u64, config: SamplerConfig) -> Result<DiagramResult> {
    run_sampler_with(diagram, n, seed, config, |_| {})
}
