//! Monte-Carlo baseline: uniform random convex polygons (Valtr's
//! construction) and their exact functionals.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagram::DiagramId;
use crate::error::{Error, Result};
use crate::functionals::Functional;
use crate::geometry::is_strictly_convex_ccw;
use crate::pde::{mfs, MfsConfig};
use crate::sampler::{DiagramPoint, RawValues};

/// Vertices in counter-clockwise order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexPolygon {
    pub vertices: Vec<[f64; 2]>,
}

impl ConvexPolygon {
    pub fn new(vertices: Vec<[f64; 2]>) -> Result<Self> {
        if !is_strictly_convex_ccw(&vertices) {
            return Err(Error::Validation(
                "baseline: vertices are not in strict counter-clockwise convex position".into(),
            ));
        }
        Ok(Self { vertices })
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn area(&self) -> f64 {
        let v = &self.vertices;
        let n = v.len();
        0.5 * (0..n).map(|i| cross(v[i], v[(i + 1) % n])).sum::<f64>()
    }

    pub fn perimeter(&self) -> f64 {
        let v = &self.vertices;
        let n = v.len();
        (0..n).map(|i| dist(v[i], v[(i + 1) % n])).sum()
    }

    pub fn centroid(&self) -> [f64; 2] {
        let v = &self.vertices;
        let n = v.len();
        let mut c = [0.0; 2];
        let mut a = 0.0;
        for i in 0..n {
            let (p, q) = (v[i], v[(i + 1) % n]);
            let w = cross(p, q);
            a += w;
            c[0] += (p[0] + q[0]) * w;
            c[1] += (p[1] + q[1]) * w;
        }
        [c[0] / (3.0 * a), c[1] / (3.0 * a)]
    }

    /// Vertices relative to the centroid.
    pub fn centered(&self) -> Vec<[f64; 2]> {
        let c = self.centroid();
        self.vertices.iter().map(|p| [p[0] - c[0], p[1] - c[1]]).collect()
    }

    /// Polar second moment about the centroid, summed over the fan of
    /// triangles `(c, vᵢ, vᵢ₊₁)`.
    pub fn polar_moment(&self) -> f64 {
        let v = self.centered();
        let n = v.len();
        (0..n)
            .map(|i| {
                let (a, b) = (v[i], v[(i + 1) % n]);
                cross(a, b) / 12.0 * (dot(a, a) + dot(a, b) + dot(b, b))
            })
            .sum()
    }

    /// `∫ x₁²` about the centroid.
    fn moment_xx(v: &[[f64; 2]]) -> f64 {
        let n = v.len();
        (0..n)
            .map(|i| {
                let (a, b) = (v[i], v[(i + 1) % n]);
                cross(a, b) / 12.0 * (a[0] * a[0] + a[0] * b[0] + b[0] * b[0])
            })
            .sum()
    }

    /// Torsional rigidity by the method of fundamental solutions: collocation
    /// by arc length on the edges, sources on the polygon dilated by
    /// `1 + delta` about the centroid, and the interior integral by a
    /// collapsed Gauss rule on the fan triangles.
    pub fn torsion(&self, cfg: &MfsConfig) -> Result<f64> {
        cfg.validate()?;
        let v = self.centered();
        let z = arc_length_points(&v, cfg.n_collocation);
        let scaled: Vec<[f64; 2]> = v.iter().map(|p| [(1.0 + cfg.delta) * p[0], (1.0 + cfg.delta) * p[1]]).collect();
        let y = arc_length_points(&scaled, cfg.n_sources);
        let rhs: Vec<f64> = z.chunks_exact(2).map(|p| 0.5 * p[0] * p[0]).collect();
        let c = mfs::fit(2, &z, &y, &rhs)?;
        let (gx, gw) = gauss_legendre(GAUSS_ORDER);
        let n = v.len();
        let mut harmonic = 0.0;
        for i in 0..n {
            let (a, b) = (v[i], v[(i + 1) % n]);
            let area2 = cross(a, b);
            // x = s (a + t (b − a)), dx = s |a × b| ds dt on [0,1]²
            for (si, &s) in gx.iter().enumerate() {
                for (ti, &t) in gx.iter().enumerate() {
                    let x = [s * (a[0] + t * (b[0] - a[0])), s * (a[1] + t * (b[1] - a[1]))];
                    harmonic += gw[si] * gw[ti] * s * area2 * mfs::evaluate(2, &y, &c, &x);
                }
            }
        }
        Ok(harmonic - 0.5 * Self::moment_xx(&v))
    }

    /// Values of the requested functionals.
    pub fn values(&self, kinds: &[Functional], mfs_cfg: &MfsConfig) -> Result<RawValues> {
        let mut out = RawValues::default();
        for &k in kinds {
            let v = match k {
                Functional::Vol => self.area(),
                Functional::Per => self.perimeter(),
                Functional::W => self.polar_moment(),
                Functional::T => self.torsion(mfs_cfg)?,
                other => {
                    return Err(Error::Validation(format!("baseline: {other} is not available for polygons")));
                }
            };
            out.set(k, v);
        }
        Ok(out)
    }
}

const GAUSS_ORDER: usize = 12;

fn cross(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// `m` points equally spaced by arc length along the closed polygon.
fn arc_length_points(v: &[[f64; 2]], m: usize) -> Vec<f64> {
    let n = v.len();
    let lens: Vec<f64> = (0..n).map(|i| dist(v[i], v[(i + 1) % n])).collect();
    let total: f64 = lens.iter().sum();
    let mut out = Vec::with_capacity(2 * m);
    let (mut edge, mut start) = (0, 0.0);
    for k in 0..m {
        let s = total * k as f64 / m as f64;
        while edge + 1 < n && s >= start + lens[edge] {
            start += lens[edge];
            edge += 1;
        }
        let t = ((s - start) / lens[edge]).clamp(0.0, 1.0);
        let (a, b) = (v[edge], v[(edge + 1) % n]);
        out.push(a[0] + t * (b[0] - a[0]));
        out.push(a[1] + t * (b[1] - a[1]));
    }
    out
}

/// Gauss–Legendre nodes and weights on `[0, 1]` (Newton on `Pₙ`).
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = 0.5 * (1.0 - z);
        w[i] = 1.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

/// Valtr's construction: `n` points in convex position in the unit square.
pub fn valtr_polygon_with<R: Rng>(n: usize, rng: &mut R) -> Result<ConvexPolygon> {
    if n < 3 {
        return Err(Error::Validation(format!("baseline: polygon needs n ≥ 3 vertices, got {n}")));
    }
    loop {
        let mut xs = split_increments(n, rng);
        let ys = split_increments(n, rng);
        xs.shuffle(rng);
        let mut vecs: Vec<[f64; 2]> = xs.into_iter().zip(ys).map(|(x, y)| [x, y]).collect();
        vecs.sort_by(|a, b| a[1].atan2(a[0]).total_cmp(&b[1].atan2(b[0])));
        let mut pts = Vec::with_capacity(n);
        let mut p = [0.0, 0.0];
        for e in &vecs {
            pts.push(p);
            p = [p[0] + e[0], p[1] + e[1]];
        }
        let lo = pts.iter().fold([f64::INFINITY; 2], |m, q| [m[0].min(q[0]), m[1].min(q[1])]);
        let hi = pts.iter().fold([f64::NEG_INFINITY; 2], |m, q| [m[0].max(q[0]), m[1].max(q[1])]);
        // Bounding box has the sorted coordinate ranges, which lie in [0, 1].
        let shift = [lo[0] - (1.0 - (hi[0] - lo[0])) * 0.5, lo[1] - (1.0 - (hi[1] - lo[1])) * 0.5];
        for q in &mut pts {
            q[0] -= shift[0];
            q[1] -= shift[1];
        }
        // Ties in angle or zero increments happen with probability zero but
        // would break strictness; draw again.
        if let Ok(poly) = ConvexPolygon::new(pts) {
            return Ok(poly);
        }
    }
}

pub fn valtr_polygon(n: usize, seed: u64) -> Result<ConvexPolygon> {
    valtr_polygon_with(n, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Sorted uniform samples, extremes fixed, interior split randomly into two
/// chains; returns the signed steps of the closed walk min → max → min.
fn split_increments<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    v.sort_by(f64::total_cmp);
    let (min, max) = (v[0], v[n - 1]);
    let (mut last1, mut last2) = (min, min);
    let mut out = Vec::with_capacity(n);
    for &c in &v[1..n - 1] {
        if rng.random::<bool>() {
            out.push(c - last1);
            last1 = c;
        } else {
            out.push(last2 - c);
            last2 = c;
        }
    }
    out.push(max - last1);
    out.push(last2 - max);
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    pub min_vertices: usize,
    pub max_vertices: usize,
    pub mfs: MfsConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            min_vertices: 3,
            max_vertices: 30,
            mfs: MfsConfig::default_for(2),
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_vertices < 3 || self.max_vertices < self.min_vertices {
            return Err(Error::Validation(format!(
                "baseline: vertex range {}..={} must satisfy 3 ≤ min ≤ max",
                self.min_vertices, self.max_vertices
            )));
        }
        self.mfs.validate()
    }
}

#[derive(Clone, Debug)]
pub struct BaselineResult {
    pub diagram: DiagramId,
    pub seed: u64,
    pub samples: usize,
    pub config: BaselineConfig,
    /// `particle_id` is the sample index.
    pub points: Vec<DiagramPoint>,
    pub polygons: Vec<ConvexPolygon>,
    /// `(sample, message)` for skipped samples.
    pub failures: Vec<(usize, String)>,
}

/// Diagram point of a polygon.
pub fn polygon_point(diagram: DiagramId, poly: &ConvexPolygon, mfs_cfg: &MfsConfig) -> Result<(f64, f64, RawValues)> {
    let values = poly.values(diagram.functionals(), mfs_cfg)?;
    let cols = values.columns();
    let args: Vec<f64> = diagram
        .functionals()
        .iter()
        .map(|&k| cols[k as usize].expect("requested above"))
        .collect();
    let (x, y) = diagram.coordinates(&args);
    Ok((x, y, values))
}

/// `samples` Valtr polygons with vertex counts uniform in the configured
/// range, each drawn from its own stream of `seed`.
pub fn monte_carlo_diagram(
    diagram: DiagramId,
    samples: usize,
    seed: u64,
    config: &BaselineConfig,
) -> Result<BaselineResult> {
    if !matches!(diagram, DiagramId::VPW2 | DiagramId::VPT2) {
        return Err(Error::Validation(format!(
            "baseline: {diagram} is not available for polygons; use VPW2 or VPT2"
        )));
    }
    config.validate()?;
    let outcomes: Vec<_> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let n = rng.random_range(config.min_vertices..=config.max_vertices);
            let poly = valtr_polygon_with(n, &mut rng)?;
            let (x, y, values) = polygon_point(diagram, &poly, &config.mfs)?;
            Ok((DiagramPoint { particle_id: i, x, y, values }, poly))
        })
        .collect();
    let mut points = Vec::new();
    let mut polygons = Vec::new();
    let mut failures = Vec::new();
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok((p, poly)) => {
                points.push(p);
                polygons.push(poly);
            }
            Err::<_, Error>(e) => failures.push((i, format!("baseline: sample {i}: {e}"))),
        }
    }
    Ok(BaselineResult {
        diagram,
        seed,
        samples,
        config: *config,
        points,
        polygons,
        failures,
    })
}

/// Number of occupied cells of a `cells × cells` grid over `[0, 1]²`;
/// points outside the square are ignored.
pub fn covered_cells(points: &[(f64, f64)], cells: usize) -> usize {
    let mut seen = vec![false; cells * cells];
    for &(x, y) in points {
        if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
            continue;
        }
        let i = ((x * cells as f64) as usize).min(cells - 1);
        let j = ((y * cells as f64) as usize).min(cells - 1);
        seen[j * cells + i] = true;
    }
    seen.iter().filter(|&&b| b).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_rule_integrates_polynomials() {
        let (x, w) = gauss_legendre(GAUSS_ORDER);
        for p in 0..2 * GAUSS_ORDER {
            let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(p as i32)).sum();
            assert!((q - 1.0 / (p as f64 + 1.0)).abs() < 1e-14, "degree {p}: {q}");
        }
    }

    #[test]
    fn increments_close_up() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 3..12 {
            let inc = split_increments(n, &mut rng);
            assert_eq!(inc.len(), n);
            assert!(inc.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_small_n() {
        assert!(valtr_polygon(2, 0).is_err());
    }

    #[test]
    fn covered_cells_counts_distinct() {
        let pts = [(0.01, 0.01), (0.015, 0.015), (0.99, 0.5), (1.0, 1.0), (1.5, 0.2)];
        assert_eq!(covered_cells(&pts, 50), 3);
    }
}
