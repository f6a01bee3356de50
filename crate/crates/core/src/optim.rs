//! Limited-memory BFGS with a strong Wolfe line search.
//!
//! Objectives may return `+∞` (or an error) for infeasible points; the line
//! search treats both as "too far" and shrinks the step.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub c1: f64,
    pub c2: f64,
    /// Stop once the largest gradient component is at most this.
    pub gtol: f64,
    pub max_iters: usize,
    /// Function evaluations allowed per line search.
    pub max_line_search: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            c1: 1e-4,
            c2: 0.9,
            gtol: 1e-6,
            max_iters: 500,
            max_line_search: 30,
        }
    }
}

impl LbfgsConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(format!("lbfgs: {m}")));
        if self.memory == 0 {
            return bad("memory must be at least 1");
        }
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return bad("need 0 < c1 < c2 < 1");
        }
        if !(self.gtol >= 0.0) {
            return bad("gtol must be non-negative");
        }
        if self.max_line_search < 2 {
            return bad("max_line_search must be at least 2");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub loss: f64,
    pub grad_inf: f64,
    pub step: f64,
    pub evals: usize,
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub g: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    pub log: Vec<IterationRecord>,
    /// Why the final line search gave up, when it did.
    pub failure: Option<String>,
}

impl Minimum {
    pub fn converged(&self) -> bool {
        self.termination != Termination::LineSearchFailed
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

struct Point {
    alpha: f64,
    f: f64,
    dg: f64,
    g: Vec<f64>,
}

struct Search<'a, F> {
    f: &'a mut F,
    x: &'a [f64],
    d: &'a [f64],
    evals: usize,
    last_error: Option<String>,
}

impl<F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>> Search<'_, F> {
    fn at(&mut self, alpha: f64) -> Point {
        self.evals += 1;
        let xt: Vec<f64> = self.x.iter().zip(self.d).map(|(x, d)| x + alpha * d).collect();
        match (self.f)(&xt) {
            Ok((f, g)) if f.is_finite() && g.iter().all(|v| v.is_finite()) => Point {
                alpha,
                f,
                dg: dot(&g, self.d),
                g,
            },
            Ok(_) => self.infeasible(alpha),
            Err(e) => {
                self.last_error = Some(e.to_string());
                self.infeasible(alpha)
            }
        }
    }

    fn infeasible(&self, alpha: f64) -> Point {
        Point {
            alpha,
            f: f64::INFINITY,
            dg: f64::NAN,
            g: Vec::new(),
        }
    }
}

/// Minimizer of the cubic interpolating two points, safeguarded to the
/// interior of their interval; falls back to bisection.
fn interpolate(lo: &Point, hi: &Point) -> f64 {
    let (a, b) = (lo.alpha, hi.alpha);
    let mid = 0.5 * (a + b);
    if !(hi.f.is_finite() && hi.dg.is_finite()) {
        return mid;
    }
    let d1 = lo.dg + hi.dg - 3.0 * (lo.f - hi.f) / (a - b);
    let disc = d1 * d1 - lo.dg * hi.dg;
    if disc < 0.0 {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (hi.dg + d2 - d1) / (hi.dg - lo.dg + 2.0 * d2);
    let (lo_b, hi_b) = (a.min(b), a.max(b));
    let margin = 0.1 * (hi_b - lo_b);
    if t.is_finite() && t > lo_b + margin && t < hi_b - margin {
        t
    } else {
        mid
    }
}

/// Strong Wolfe line search (bracketing then zoom). Returns the accepted
/// point or `None` after `budget` evaluations.
fn line_search<F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>>(
    search: &mut Search<'_, F>,
    f0: f64,
    dg0: f64,
    alpha0: f64,
    cfg: &LbfgsConfig,
) -> Option<Point> {
    let armijo = |p: &Point| p.f <= f0 + cfg.c1 * p.alpha * dg0;
    let curvature = |p: &Point| p.dg.abs() <= -cfg.c2 * dg0;
    let mut prev = Point {
        alpha: 0.0,
        f: f0,
        dg: dg0,
        g: Vec::new(),
    };
    let mut alpha = alpha0;
    let (lo, hi) = loop {
        if search.evals >= cfg.max_line_search {
            return None;
        }
        let cur = search.at(alpha);
        if !armijo(&cur) || (prev.alpha > 0.0 && cur.f >= prev.f) {
            break (prev, cur);
        }
        if curvature(&cur) {
            return Some(cur);
        }
        if cur.dg >= 0.0 {
            break (cur, prev);
        }
        alpha = 2.0 * cur.alpha;
        prev = cur;
    };
    let (mut lo, mut hi) = (lo, hi);
    loop {
        if search.evals >= cfg.max_line_search {
            return None;
        }
        let a = interpolate(&lo, &hi);
        if (a - lo.alpha).abs() <= f64::EPSILON * lo.alpha.abs().max(1e-300) {
            return None;
        }
        let cur = search.at(a);
        if !armijo(&cur) || cur.f >= lo.f {
            hi = cur;
        } else {
            if curvature(&cur) {
                return Some(cur);
            }
            if cur.dg * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }
}

/// Minimize `f` from `x0`; `f` returns the value and gradient. `observe` is
/// called after every accepted iteration.
pub fn minimize<F, O>(mut f: F, x0: &[f64], cfg: &LbfgsConfig, mut observe: O) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    O: FnMut(&IterationRecord, &[f64]),
{
    cfg.validate()?;
    let mut x = x0.to_vec();
    let (mut fx, mut g) = f(&x)?;
    if !fx.is_finite() {
        return Err(Error::Optimizer(format!("objective is not finite at the start ({fx})")));
    }
    let mut evaluations = 1;
    let mut memory = cfg.memory;
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut log = Vec::new();
    let mut failure = None;
    let mut termination = Termination::MaxIterations;
    let mut iter = 0;
    while iter < cfg.max_iters {
        if inf_norm(&g) <= cfg.gtol {
            termination = Termination::GradientTolerance;
            break;
        }
        let mut retried = false;
        let accepted = loop {
            let mut d = direction(&g, &history);
            let mut dg = dot(&d, &g);
            if !(dg < 0.0) {
                history.clear();
                d = g.iter().map(|v| -v).collect();
                dg = dot(&d, &g);
            }
            let alpha0 = if history.is_empty() {
                1.0 / dot(&d, &d).sqrt().max(1.0)
            } else {
                1.0
            };
            let mut search = Search {
                f: &mut f,
                x: &x,
                d: &d,
                evals: 0,
                last_error: None,
            };
            let found = line_search(&mut search, fx, dg, alpha0, cfg);
            let Search {
                evals, last_error, ..
            } = search;
            evaluations += evals;
            match found {
                Some(p) => break Some((p, d, evals)),
                None if !retried => {
                    retried = true;
                    memory = (memory / 2).max(1);
                    while history.len() > memory {
                        history.pop_front();
                    }
                    if history.is_empty() && last_error.is_none() {
                        // nothing left to discard: steepest descent already failed
                        failure = Some("line search failed along steepest descent".into());
                        break None;
                    }
                }
                None => {
                    failure = Some(match last_error {
                        Some(e) => format!("line search failed; last objective error: {e}"),
                        None => "line search failed to satisfy the strong Wolfe conditions".into(),
                    });
                    break None;
                }
            }
        };
        let Some((p, d, evals)) = accepted else {
            termination = Termination::LineSearchFailed;
            break;
        };
        let s: Vec<f64> = d.iter().map(|v| p.alpha * v).collect();
        let y: Vec<f64> = p.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if history.len() == memory {
                history.pop_front();
            }
            history.push_back((s.clone(), y, 1.0 / sy));
        }
        for (xi, si) in x.iter_mut().zip(&s) {
            *xi += si;
        }
        fx = p.f;
        g = p.g;
        iter += 1;
        let rec = IterationRecord {
            iter,
            loss: fx,
            grad_inf: inf_norm(&g),
            step: p.alpha,
            evals,
        };
        observe(&rec, &x);
        log.push(rec);
    }
    if termination == Termination::MaxIterations && inf_norm(&g) <= cfg.gtol {
        termination = Termination::GradientTolerance;
    }
    Ok(Minimum {
        x,
        f: fx,
        g,
        iterations: iter,
        evaluations,
        termination,
        log,
        failure,
    })
}

/// Two-loop recursion for `−H g`.
fn direction(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let n = x.len();
        let mut f = 0.0;
        let mut g = vec![0.0; n];
        for i in 0..n - 1 {
            let a = x[i + 1] - x[i] * x[i];
            let b = 1.0 - x[i];
            f += 100.0 * a * a + b * b;
            g[i] += -400.0 * x[i] * a - 2.0 * b;
            g[i + 1] += 200.0 * a;
        }
        Ok((f, g))
    }

    #[test]
    fn solves_rosenbrock() {
        let cfg = LbfgsConfig {
            max_iters: 1000,
            ..Default::default()
        };
        let m = minimize(rosenbrock, &[-1.2, 1.0, -0.5, 0.8], &cfg, |_, _| {}).unwrap();
        assert_eq!(m.termination, Termination::GradientTolerance);
        for v in &m.x {
            assert!((v - 1.0).abs() < 1e-5, "{:?}", m.x);
        }
    }

    #[test]
    fn accepted_steps_never_increase_loss() {
        let mut losses = vec![];
        let m = minimize(rosenbrock, &[-1.5, 2.0], &LbfgsConfig::default(), |r, _| losses.push(r.loss)).unwrap();
        assert!(m.iterations > 5);
        assert!(losses.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn infeasible_region_shrinks_the_step() {
        // minimum of (x−2)² lies outside the feasible half-line x < 1
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            if x[0] >= 1.0 {
                Ok((f64::INFINITY, vec![0.0]))
            } else {
                Ok(((x[0] - 2.0).powi(2), vec![2.0 * (x[0] - 2.0)]))
            }
        };
        let cfg = LbfgsConfig {
            max_iters: 50,
            ..Default::default()
        };
        let m = minimize(f, &[0.0], &cfg, |_, _| {}).unwrap();
        assert!(m.x[0] < 1.0 && m.x[0] > 0.9, "{:?}", m.x);
        assert!(m.f.is_finite());
    }

    #[test]
    fn quadratic_converges_exactly() {
        let diag = [1.0, 10.0, 100.0];
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let g: Vec<f64> = x.iter().zip(&diag).map(|(a, d)| d * a).collect();
            Ok((0.5 * dot(x, &g), g))
        };
        let m = minimize(f, &[1.0, 1.0, 1.0], &LbfgsConfig::default(), |_, _| {}).unwrap();
        assert_eq!(m.termination, Termination::GradientTolerance);
        assert!(m.iterations < 30);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = LbfgsConfig {
            c1: 0.95,
            ..Default::default()
        };
        assert!(minimize(rosenbrock, &[0.0, 0.0], &cfg, |_, _| {}).is_err());
    }
}
