//! Catalogue of normalized coordinate pairs and their known inequalities.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::checks::DISK_NEUMANN_MU1;
use crate::error::{Error, Result};
use crate::functionals::Functional;
use crate::gauge::SymmetryGroup;

#[allow(non_camel_case_types)]
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DiagramId {
    VPW2,
    VPW2_SYM,
    VPW3,
    VPT2,
    VMU2,
    VPE2,
    VPE3,
}

pub const ALL_DIAGRAMS: [DiagramId; 7] = [
    DiagramId::VPW2,
    DiagramId::VPW2_SYM,
    DiagramId::VPW3,
    DiagramId::VPT2,
    DiagramId::VMU2,
    DiagramId::VPE2,
    DiagramId::VPE3,
];

impl DiagramId {
    pub fn name(self) -> &'static str {
        match self {
            DiagramId::VPW2 => "VPW2",
            DiagramId::VPW2_SYM => "VPW2_SYM",
            DiagramId::VPW3 => "VPW3",
            DiagramId::VPT2 => "VPT2",
            DiagramId::VMU2 => "VMU2",
            DiagramId::VPE2 => "VPE2",
            DiagramId::VPE3 => "VPE3",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            DiagramId::VPW3 | DiagramId::VPE3 => 3,
            _ => 2,
        }
    }

    /// Functionals needed by [`DiagramId::coordinates`], in argument order.
    pub fn functionals(self) -> &'static [Functional] {
        use Functional::*;
        match self {
            DiagramId::VPW2 | DiagramId::VPW2_SYM | DiagramId::VPW3 => &[Vol, Per, W],
            DiagramId::VPT2 => &[Vol, Per, T],
            DiagramId::VMU2 => &[Vol, Mu1, Mu2],
            DiagramId::VPE2 | DiagramId::VPE3 => &[Vol, Per, E],
        }
    }

    /// Symmetry imposed on every body of the diagram.
    pub fn symmetry(self) -> Option<SymmetryGroup> {
        match self {
            DiagramId::VPW2_SYM => Some(SymmetryGroup::axis_reflections(2)),
            _ => None,
        }
    }

    /// `(x, y)` from the values of [`DiagramId::functionals`].
    pub fn coordinates<T: Real>(self, v: &[T]) -> (T, T) {
        match self {
            DiagramId::VPW2 | DiagramId::VPW2_SYM => {
                let (vol, per, w) = (v[0], v[1], v[2]);
                (vol * vol / w / (2.0 * PI), vol / (per * per) * (4.0 * PI))
            }
            DiagramId::VPW3 => {
                let (vol, per, w) = (v[0], v[1], v[2]);
                let c = 0.75f64.powf(5.0 / 3.0) * 4.0 / (5.0 * PI.powf(2.0 / 3.0));
                (vol.powf(5.0 / 3.0) / w * c, vol / per.powf(1.5) * (6.0 * PI.sqrt()))
            }
            DiagramId::VPT2 => {
                let (vol, per, t) = (v[0], v[1], v[2]);
                (vol.sqrt() / per * (2.0 * PI.sqrt()), t / (vol * vol) * (8.0 * PI))
            }
            DiagramId::VMU2 => {
                let (vol, mu1, mu2) = (v[0], v[1], v[2]);
                let b = PI * DISK_NEUMANN_MU1;
                (vol * mu1 / b, vol * mu2 / (2.0 * b))
            }
            DiagramId::VPE2 => {
                let (vol, per, e) = (v[0], v[1], v[2]);
                (vol / (per * per) * (4.0 * PI), (per * e).recip() * (2.0 * PI * PI))
            }
            DiagramId::VPE3 => {
                let (vol, per, e) = (v[0], v[1], v[2]);
                (vol * vol / per.powi(3) * (36.0 * PI), e.recip() * (4.0 * PI))
            }
        }
    }

    /// Known inequalities; `hard` ones must hold for every body.
    pub fn bounds(self) -> Vec<Bound> {
        use Curve::*;
        let unit_square = [
            Bound::new("x ≤ 1", Relation::Below, Vertical(1.0), true),
            Bound::new("y ≤ 1", Relation::Below, Horizontal(1.0), true),
        ];
        let polya = Bound::new("Pólya: y < (π²/6) x", Relation::Below, Linear(PI * PI / 6.0), true);
        let mut out = match self {
            DiagramId::VPW2 => vec![
                polya,
                Bound::new("conjecture: y ≥ (2π²/27) x", Relation::Above, Linear(2.0 * PI * PI / 27.0), false),
            ],
            DiagramId::VPW2_SYM => vec![
                polya,
                Bound::new("symmetric: y ≥ (π²/12) x", Relation::Above, Linear(PI * PI / 12.0), true),
            ],
            DiagramId::VPW3 | DiagramId::VPE3 => vec![],
            DiagramId::VPT2 => vec![
                Bound::new("y ≥ (2/3) x²", Relation::Above, Quadratic(2.0 / 3.0), true),
                Bound::new("y ≤ (4/3) x²", Relation::Below, Quadratic(4.0 / 3.0), true),
            ],
            DiagramId::VMU2 => vec![
                Bound::new("x ≤ 2y", Relation::Above, Linear(0.5), true),
                Bound::new("Szegö: y ≤ x/(4x − 2)", Relation::Below, Szego, true),
            ],
            DiagramId::VPE2 => vec![Bound::new("Gage: y ≤ x", Relation::Below, Linear(1.0), true)],
        };
        out.extend(unit_square);
        out
    }

    /// Hard bounds violated by `(x, y)` with slack `tol`.
    pub fn violations(self, x: f64, y: f64, tol: f64) -> Vec<Bound> {
        self.bounds()
            .into_iter()
            .filter(|b| b.hard && !b.holds(x, y, tol))
            .collect()
    }
}

impl fmt::Display for DiagramId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DiagramId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ALL_DIAGRAMS
            .iter()
            .copied()
            .find(|d| d.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let names: Vec<&str> = ALL_DIAGRAMS.iter().map(|d| d.name()).collect();
                Error::Validation(format!("diagram: unknown id {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    /// Points lie on or below the curve.
    Below,
    Above,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Curve {
    /// `y = a x`.
    Linear(f64),
    /// `y = a x²`.
    Quadratic(f64),
    Horizontal(f64),
    Vertical(f64),
    /// `y = x/(4x − 2)`, meaningful for `x > 1/2`.
    Szego,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bound {
    pub name: &'static str,
    pub relation: Relation,
    pub curve: Curve,
    pub hard: bool,
}

impl Bound {
    fn new(name: &'static str, relation: Relation, curve: Curve, hard: bool) -> Self {
        Self {
            name,
            relation,
            curve,
            hard,
        }
    }

    /// Whether `(x, y)` satisfies the bound up to `tol` in diagram units.
    pub fn holds(&self, x: f64, y: f64, tol: f64) -> bool {
        let below = self.relation == Relation::Below;
        match self.curve {
            Curve::Linear(a) => {
                if below {
                    y < a * x + tol
                } else {
                    y >= a * x - tol
                }
            }
            Curve::Quadratic(a) => {
                if below {
                    y <= a * x * x + tol
                } else {
                    y >= a * x * x - tol
                }
            }
            Curve::Horizontal(c) => {
                if below {
                    y <= c + tol
                } else {
                    y >= c - tol
                }
            }
            Curve::Vertical(c) => {
                if below {
                    x <= c + tol
                } else {
                    x >= c - tol
                }
            }
            Curve::Szego => {
                // only informative away from the pole at x = 1/2
                if x <= 0.5 + tol {
                    return true;
                }
                let c = x / (4.0 * x - 2.0);
                if below {
                    y <= c + tol
                } else {
                    y >= c - tol
                }
            }
        }
    }

    /// The curve sampled inside the unit square, for plotting.
    pub fn polyline(&self, samples: usize) -> Vec<[f64; 2]> {
        let n = samples.max(2);
        let xs = (0..n).map(|i| i as f64 / (n - 1) as f64);
        let inside = |p: &[f64; 2]| p[1] >= 0.0 && p[1] <= 1.0;
        match self.curve {
            Curve::Linear(a) => xs.map(|x| [x, a * x]).filter(inside).collect(),
            Curve::Quadratic(a) => xs.map(|x| [x, a * x * x]).filter(inside).collect(),
            Curve::Horizontal(c) => vec![[0.0, c], [1.0, c]],
            Curve::Vertical(c) => vec![[c, 0.0], [c, 1.0]],
            Curve::Szego => (0..n)
                .map(|i| 0.5 + 0.5 * (i as f64 + 1.0) / n as f64)
                .map(|x| [x, x / (4.0 * x - 2.0)])
                .filter(inside)
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balls_map_to_one() {
        // exact ball values (Vol, Per, W) and (Vol, Per, E)
        let disk = (PI, 2.0 * PI, PI / 2.0);
        let (x, y) = DiagramId::VPW2.coordinates(&[disk.0, disk.1, disk.2]);
        assert!((x - 1.0).abs() < 1e-14 && (y - 1.0).abs() < 1e-14);
        let ball = (4.0 * PI / 3.0, 4.0 * PI, 4.0 * PI / 5.0);
        let (x, y) = DiagramId::VPW3.coordinates(&[ball.0, ball.1, ball.2]);
        assert!((x - 1.0).abs() < 1e-14 && (y - 1.0).abs() < 1e-14, "{x} {y}");
        let (x, y) = DiagramId::VPT2.coordinates(&[PI, 2.0 * PI, PI / 8.0]);
        assert!((x - 1.0).abs() < 1e-14 && (y - 1.0).abs() < 1e-14);
        let (x, y) = DiagramId::VMU2.coordinates(&[PI, DISK_NEUMANN_MU1, DISK_NEUMANN_MU1]);
        assert!((x - 1.0).abs() < 1e-14 && (y - 0.5).abs() < 1e-14);
        let (x, y) = DiagramId::VPE3.coordinates(&[ball.0, ball.1, 4.0 * PI]);
        assert!((x - 1.0).abs() < 1e-14 && (y - 1.0).abs() < 1e-14);
        let (x, y) = DiagramId::VPE2.coordinates(&[PI, 2.0 * PI, 2.0 * PI]);
        assert!((x - 1.0).abs() < 1e-14 && (y - 0.5).abs() < 1e-14);
    }

    #[test]
    fn square_on_vpw2() {
        let (x, y) = DiagramId::VPW2.coordinates(&[4.0, 8.0, 8.0 / 3.0]);
        assert!((x - 3.0 / PI).abs() < 1e-14);
        assert!((y - PI / 4.0).abs() < 1e-14);
    }

    #[test]
    fn scale_invariance() {
        for id in ALL_DIAGRAMS {
            let d = id.dim() as i32;
            let v = [1.3, 4.1, 0.7];
            let t = 1.7f64;
            let scaled: Vec<f64> = id
                .functionals()
                .iter()
                .zip(v)
                .map(|(f, x)| x * t.powi(f.homogeneity(d as usize)))
                .collect();
            let (a, b) = id.coordinates(&v);
            let (c, e) = id.coordinates(&scaled);
            assert!((a / c - 1.0).abs() < 1e-12 && (b / e - 1.0).abs() < 1e-12, "{id}");
        }
    }

    #[test]
    fn parse_and_bounds() {
        assert_eq!("vpw2_sym".parse::<DiagramId>().unwrap(), DiagramId::VPW2_SYM);
        assert!("VPX".parse::<DiagramId>().is_err());
        assert!(DiagramId::VPW2.violations(0.5, 0.9, 0.02).iter().any(|b| b.name.starts_with("Pólya")));
        assert!(DiagramId::VPW2.violations(0.5, 0.5, 0.02).is_empty());
        assert!(!DiagramId::VMU2.violations(0.9, 0.9, 0.02).is_empty());
        assert!(DiagramId::VMU2.violations(0.4, 0.9, 0.02).is_empty());
        let line = DiagramId::VPW2.bounds()[0].polyline(11);
        assert!(line.iter().all(|p| p[1] <= 1.0));
    }
}
