//! Self-checks against closed forms and finite differences, shared by the
//! CLI's `check` command and the test suites.

use std::f64::consts::PI;
use std::fmt;

use serde::Serialize;

use crate::error::Result;
use crate::evaluate::{Discretization, Evaluator};
use crate::functionals::Functional;
use crate::gauge::{Gauge, GaugeNetwork, LinearGauge};

/// Square of the first positive zero of `J₁'`.
pub const DISK_NEUMANN_MU1: f64 = 1.841_183_781_340_659 * 1.841_183_781_340_659;

/// Entrywise relative error `|a − f| / max(|f|, floor·‖f‖∞)`; the floor keeps
/// near-zero entries of a gradient from dominating.
pub fn relative_error(ad: &[f64], fd: &[f64], floor: f64) -> f64 {
    let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    ad.iter()
        .zip(fd)
        .map(|(a, f)| {
            let den = f.abs().max(floor * scale).max(f64::MIN_POSITIVE);
            (a - f).abs() / den
        })
        .fold(0.0, f64::max)
}

/// Reverse-mode gradients of `kinds` compared with central differences in the
/// parameter entries `indices`; returns the worst relative error per kind.
pub fn gradient_errors<G: Gauge + Clone + 'static>(
    eval: &Evaluator,
    gauge: &G,
    kinds: &[Functional],
    indices: &[usize],
    step: f64,
) -> Result<Vec<f64>> {
    let ad = eval.values_and_gradients(gauge, kinds)?;
    let theta = gauge.params().to_vec();
    let mut fd = vec![Vec::with_capacity(indices.len()); kinds.len()];
    for &i in indices {
        let mut tp = theta.clone();
        tp[i] += step;
        let up = eval.values(&gauge.with_params(&tp), kinds)?;
        tp[i] = theta[i] - step;
        let dn = eval.values(&gauge.with_params(&tp), kinds)?;
        for k in 0..kinds.len() {
            fd[k].push((up[k] - dn[k]) / (2.0 * step));
        }
    }
    Ok(kinds
        .iter()
        .enumerate()
        .map(|(k, _)| {
            let a: Vec<f64> = indices.iter().map(|&i| ad[k].1[i]).collect();
            relative_error(&a, &fd[k], 1e-2)
        })
        .collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckLine {
    pub name: String,
    pub value: f64,
    pub expected: f64,
    pub error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckLine {
    pub fn relative(name: impl Into<String>, value: f64, expected: f64, tolerance: f64) -> Self {
        let error = (value / expected - 1.0).abs();
        Self {
            name: name.into(),
            value,
            expected,
            error,
            tolerance,
            pass: error <= tolerance,
        }
    }

    /// A pass/fail line for a quantity that must not exceed `tolerance`.
    pub fn bound(name: impl Into<String>, error: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value: error,
            expected: 0.0,
            error,
            tolerance,
            pass: error <= tolerance,
        }
    }
}

impl fmt::Display for CheckLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} rel.err ≤ {:.0e}: {} (got {:.3e})",
            self.name,
            self.tolerance,
            if self.pass { "PASS" } else { "FAIL" },
            self.error
        )
    }
}

/// Modules the `check` command knows about.
pub const CHECK_MODULES: &[&str] = &["functionals", "pde-functionals", "gradients", "3d"];

/// Identity disk functionals against their closed forms.
pub fn functionals_2d() -> Result<Vec<CheckLine>> {
    let eval = Evaluator::new(2, &Discretization::default_for(2))?;
    let kinds = [Functional::Vol, Functional::Per, Functional::W, Functional::E];
    let v = eval.values(&LinearGauge::identity(2), &kinds)?;
    Ok(vec![
        CheckLine::relative("vol(disk)", v[0], PI, 2e-3),
        CheckLine::relative("per(disk)", v[1], 2.0 * PI, 2e-3),
        CheckLine::relative("w(disk)", v[2], PI / 2.0, 2e-3),
        CheckLine::relative("e(disk)", v[3], 2.0 * PI, 2e-3),
    ])
}

pub fn pde_2d() -> Result<Vec<CheckLine>> {
    let eval = Evaluator::new(2, &Discretization::default_for(2))?;
    let v = eval.values(
        &LinearGauge::identity(2),
        &[Functional::T, Functional::Mu1, Functional::Mu2],
    )?;
    Ok(vec![
        CheckLine::relative("torsion(disk)", v[0], PI / 8.0, 1e-3),
        CheckLine::relative("mu1(disk)", v[1], DISK_NEUMANN_MU1, 2e-2),
        CheckLine::relative("mu2(disk)", v[2], DISK_NEUMANN_MU1, 2e-2),
    ])
}

pub fn functionals_3d() -> Result<Vec<CheckLine>> {
    let eval = Evaluator::new(3, &Discretization::default_for(3))?;
    let kinds = [Functional::Vol, Functional::Per, Functional::E, Functional::T];
    let v = eval.values(&LinearGauge::identity(3), &kinds)?;
    Ok(vec![
        CheckLine::relative("vol(ball)", v[0], 4.0 * PI / 3.0, 5e-3),
        CheckLine::relative("per(ball)", v[1], 4.0 * PI, 5e-3),
        CheckLine::relative("e(ball)", v[2], 4.0 * PI, 5e-3),
        CheckLine::relative("torsion(ball)", v[3], 4.0 * PI / 45.0, 5e-3),
    ])
}

/// Gradient tolerances: tight for the closed-form quadratures, looser where
/// second derivatives or PDE solves are involved.
pub fn gradient_tolerance(kind: Functional) -> f64 {
    match kind {
        Functional::Vol | Functional::Per | Functional::W => 1e-5,
        _ => 1e-3,
    }
}

/// Gradient checks on `nets` random 2D networks over a coarse discretization.
pub fn gradients_2d(nets: usize, seed: u64) -> Result<Vec<CheckLine>> {
    let mut disc = Discretization::default_for(2);
    disc.quadrature.volume_h = 0.04;
    disc.quadrature.boundary_m = 256;
    let eval = Evaluator::new(2, &disc)?;
    let kinds = [
        Functional::Vol,
        Functional::Per,
        Functional::W,
        Functional::E,
        Functional::T,
        Functional::Mu1,
    ];
    let mut worst = vec![0.0f64; kinds.len()];
    for n in 0..nets {
        let net = GaugeNetwork::init_random_with_jitter(2, 8, seed + n as u64, 1.0, 0.5)?;
        let p = net.params().len();
        let indices: Vec<usize> = (0..p).step_by(3).collect();
        let errs = gradient_errors(&eval, &net, &kinds, &indices, 1e-5)?;
        for (w, e) in worst.iter_mut().zip(errs) {
            *w = w.max(e);
        }
    }
    Ok(kinds
        .iter()
        .zip(worst)
        .map(|(&k, e)| CheckLine::bound(format!("grad {k} vs central differences"), e, gradient_tolerance(k)))
        .collect())
}

pub fn run_module(module: &str) -> Result<Vec<CheckLine>> {
    match module {
        "functionals" => {
            let mut lines = functionals_2d()?;
            lines.extend(pde_2d()?);
            Ok(lines)
        }
        "pde-functionals" => pde_2d(),
        "gradients" => gradients_2d(3, 0),
        "3d" => functionals_3d(),
        other => Err(crate::Error::Validation(format!(
            "unknown check module {other:?}; expected one of {}",
            CHECK_MODULES.join(", ")
        ))),
    }
}
