//! One entry point that records any subset of the shape functionals for a
//! body, sharing intermediate results (moments, eigenvalues) between them.

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::functionals::{moments, perimeter, willmore, BodyVars, Functional};
use crate::gauge::Gauge;
use crate::pde::{neumann_eigs_with, torsion, MfsConfig, RbfBasis, RbfConfig};
use crate::quadrature::{Quadrature, QuadratureConfig};

/// Discretization settings of every functional.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Discretization {
    pub quadrature: QuadratureConfig,
    pub mfs: MfsConfig,
    pub rbf: RbfConfig,
}

impl Discretization {
    pub fn default_for(dim: usize) -> Self {
        Self {
            quadrature: QuadratureConfig::default_for(dim),
            mfs: MfsConfig::default_for(dim),
            rbf: RbfConfig::default_for(dim),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.quadrature.validate()?;
        self.mfs.validate()?;
        self.rbf.validate()
    }
}

#[derive(Clone, Debug)]
pub struct Evaluator {
    dim: usize,
    quad: Arc<Quadrature>,
    mfs: MfsConfig,
    rbf: RbfConfig,
    basis: OnceLock<Arc<RbfBasis>>,
}

impl Evaluator {
    pub fn new(dim: usize, disc: &Discretization) -> Result<Self> {
        disc.validate()?;
        Ok(Self {
            dim,
            quad: Arc::new(Quadrature::new(dim, disc.quadrature)?),
            mfs: disc.mfs,
            rbf: disc.rbf,
            basis: OnceLock::new(),
        })
    }

    /// The RBF basis, built on first use.
    pub fn basis(&self) -> Result<Arc<RbfBasis>> {
        if let Some(b) = self.basis.get() {
            return Ok(Arc::clone(b));
        }
        let b = RbfBasis::new(&self.quad, self.rbf)?;
        Ok(Arc::clone(self.basis.get_or_init(|| b)))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn quadrature(&self) -> &Quadrature {
        &self.quad
    }

    /// Records the requested functionals, in order.
    pub fn record<'t, G: Gauge + Clone + 'static>(
        &self,
        body: &BodyVars<'t, '_, G>,
        kinds: &[Functional],
    ) -> Result<Vec<Var<'t>>> {
        let mut mom = None;
        let mut eigs = None;
        let mut out = Vec::with_capacity(kinds.len());
        for &kind in kinds {
            let v = match kind {
                Functional::Vol | Functional::W => {
                    if mom.is_none() {
                        mom = Some(moments(body, &self.quad)?);
                    }
                    let m = mom.as_ref().expect("moments computed");
                    if kind == Functional::Vol {
                        m.volume
                    } else {
                        m.inertia
                    }
                }
                Functional::Per => perimeter(body, &self.quad)?,
                Functional::E => willmore(body, &self.quad)?,
                Functional::T => torsion(body, &self.quad, &self.mfs)?,
                Functional::Mu1 | Functional::Mu2 => {
                    if eigs.is_none() {
                        eigs = Some(neumann_eigs_with(body, &self.basis()?)?);
                    }
                    let e = eigs.expect("eigenvalues computed");
                    if kind == Functional::Mu1 {
                        e.mu1
                    } else {
                        e.mu2
                    }
                }
            };
            out.push(v);
        }
        Ok(out)
    }

    /// Plain values, without keeping the tape.
    pub fn values<G: Gauge + Clone + 'static>(&self, gauge: &G, kinds: &[Functional]) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let body = BodyVars::new(&tape, gauge);
        Ok(self.record(&body, kinds)?.iter().map(|v| v.value()).collect())
    }

    /// Values and parameter gradients of each requested functional.
    pub fn values_and_gradients<G: Gauge + Clone + 'static>(
        &self,
        gauge: &G,
        kinds: &[Functional],
    ) -> Result<Vec<(f64, Vec<f64>)>> {
        let tape = Tape::new();
        let body = BodyVars::new(&tape, gauge);
        let vars = self.record(&body, kinds)?;
        vars.iter()
            .map(|&v| Ok((v.value(), tape.grad(v, &body.theta)?)))
            .collect()
    }
}
