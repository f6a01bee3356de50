//! Fitting a gauge network to the boundary of a given convex body.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauge::{norm, Gauge, GaugeNetwork};
use crate::geometry::{hausdorff_points, hausdorff_polylines, is_convex_polygon, CONVEXITY_TOL};
use crate::optim::{minimize, LbfgsConfig, Minimum};
use crate::quadrature::sphere_directions;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub lbfgs: LbfgsConfig,
    /// Directions at which the fitted boundary is sampled for the report.
    pub report_directions: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            lbfgs: LbfgsConfig {
                gtol: 1e-10,
                max_iters: 3000,
                ..LbfgsConfig::default()
            },
            report_directions: 1024,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitReport {
    pub net: GaugeNetwork,
    /// Mean squared radial mismatch at the target points.
    pub loss: f64,
    pub hausdorff: f64,
    /// 2D only: the sampled fitted boundary is in convex position.
    pub convex: Option<bool>,
    pub minimum: Minimum,
}

/// `(1/n) Σ (1/h(uₖ) − |yₖ|)²` and its gradient.
pub fn radial_mismatch<G: Gauge>(gauge: &G, target: &[f64]) -> (f64, Vec<f64>) {
    let d = gauge.dim();
    let n = target.len() / d;
    let mut grad = vec![0.0; gauge.params().len()];
    let mut loss = 0.0;
    let mut u = vec![0.0; d];
    for y in target.chunks_exact(d) {
        let r = norm(y);
        for (a, c) in u.iter_mut().zip(y) {
            *a = c / r;
        }
        let h = gauge.eval(&u, None);
        let e = 1.0 / h - r;
        loss += e * e / n as f64;
        // ∂(1/h) = −∂h / h²
        gauge.vjp(&u, -2.0 * e / (n as f64 * h * h), None, &mut grad);
    }
    (loss, grad)
}

/// Checks the target cloud: nonzero points; in 2D, convex position around
/// the origin once sorted by angle.
pub fn validate_target(dim: usize, target: &[f64]) -> Result<()> {
    if target.is_empty() || target.len() % dim != 0 {
        return Err(Error::Validation(format!(
            "fit: target of length {} is not a list of {dim}D points",
            target.len()
        )));
    }
    if let Some(k) = target.chunks_exact(dim).position(|y| !(norm(y) > 1e-12) || y.iter().any(|c| !c.is_finite())) {
        return Err(Error::Validation(format!("fit: target point {k} is at the origin or not finite")));
    }
    if dim == 2 {
        let poly = sorted_by_angle(target);
        if poly.len() >= 3 && !is_convex_polygon(&poly, 1e-9) {
            return Err(Error::Validation("fit: target is not in convex position around the origin".into()));
        }
    }
    Ok(())
}

fn sorted_by_angle(points: &[f64]) -> Vec<[f64; 2]> {
    let mut p: Vec<[f64; 2]> = points.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
    p.sort_by(|a, b| a[1].atan2(a[0]).total_cmp(&b[1].atan2(b[0])));
    p
}

/// L-BFGS on the radial mismatch, starting from `net`.
pub fn fit_to_target(net: GaugeNetwork, target: &[f64], cfg: &FitConfig) -> Result<FitReport> {
    let d = net.dim();
    validate_target(d, target)?;
    let minimum = minimize(
        |theta| {
            let g = net.with_params(theta);
            Ok(radial_mismatch(&g, target))
        },
        net.params(),
        &cfg.lbfgs,
        |_, _| {},
    )?;
    let fitted = net.with_params(&minimum.x);
    fitted.check_positive()?;
    let dirs = sphere_directions(d, cfg.report_directions);
    let boundary = fitted.boundary_points(&dirs);
    let (hausdorff, convex) = if d == 2 {
        let a: Vec<[f64; 2]> = boundary.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        (hausdorff_polylines(&a, &sorted_by_angle(target)), Some(is_convex_polygon(&a, CONVEXITY_TOL)))
    } else {
        (hausdorff_points(&boundary, target, d), None)
    };
    Ok(FitReport {
        net: fitted,
        loss: minimum.f,
        hausdorff,
        convex,
        minimum,
    })
}

/// Points along the closed polygon with `per_edge` samples per edge.
pub fn polygon_boundary(vertices: &[[f64; 2]], per_edge: usize) -> Vec<f64> {
    let n = vertices.len();
    let mut out = Vec::with_capacity(2 * n * per_edge);
    for k in 0..n {
        let (a, b) = (vertices[k], vertices[(k + 1) % n]);
        for i in 0..per_edge {
            let t = i as f64 / per_edge as f64;
            out.push(a[0] + t * (b[0] - a[0]));
            out.push(a[1] + t * (b[1] - a[1]));
        }
    }
    out
}

/// Named 2D targets for the CLI and tests.
pub fn named_target(name: &str) -> Result<Vec<f64>> {
    match name {
        "circle" => Ok(sphere_directions(2, 512)),
        "square" => Ok(polygon_boundary(&[[1.0, -1.0], [1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0]], 128)),
        "triangle" => {
            let s = 3f64.sqrt();
            Ok(polygon_boundary(&[[1.0, 0.0], [-0.5, 0.5 * s], [-0.5, -0.5 * s]], 170))
        }
        "ellipse" => Ok(sphere_directions(2, 512)
            .chunks_exact(2)
            .flat_map(|c| [c[0], 0.5 * c[1]])
            .collect()),
        other => Err(Error::Validation(format!(
            "fit: unknown target {other:?}; expected circle, square, triangle or ellipse"
        ))),
    }
}
