use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// Messages name the module that failed and, where one exists, the particle or
/// sample index so that a failing run can be traced back to a single body.
#[derive(Debug, Error)]
pub enum Error {
    #[error("autodiff: non-finite adjoint produced by `{kind}`")]
    NonFiniteAdjoint { kind: &'static str },

    #[error("autodiff: matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("autodiff: matrix is singular in `{op}`")]
    Singular { op: &'static str },

    #[error("autodiff: least squares matrix is rank deficient (rank {rank} < {cols})")]
    RankDeficient { rank: usize, cols: usize },

    #[error("autodiff: shape mismatch in `{op}`: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("gauge: gauge not positive (min value {min:.3e}); directions do not positively span")]
    GaugeNotPositive { min: f64 },

    #[error("gauge: invalid symmetry group: {0}")]
    InvalidGroup(String),

    #[error("functionals: non-finite Jacobian at quadrature node {node}")]
    NonFiniteJacobian { node: usize },

    #[error("functionals: singular spatial Jacobian at boundary node {node}")]
    SingularBoundaryJacobian { node: usize },

    #[error("pde: MFS ill-posed; increase delta or reduce sources ({0})")]
    MfsIllPosed(String),

    #[error("pde: mass matrix not SPD (pivot {pivot})")]
    MassNotSpd { pivot: usize },

    #[error("pde: constant mode not resolved; refine centers (mu0 = {mu0:.3e}, mu1 = {mu1:.3e})")]
    ConstantModeUnresolved { mu0: f64, mu1: f64 },

    #[error("optimizer: {0}")]
    Optimizer(String),

    #[error("sampler: particle {particle}: {source}")]
    Particle {
        particle: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("sampler: body map too distorted (cond {cond:.3e} > limit {limit:.3e})")]
    Distorted { cond: f64, limit: f64 },

    #[error("sampler: non-finite loss; closest pair ({i}, {j}) at distance {distance:.3e}")]
    NonFiniteLoss { i: usize, j: usize, distance: f64 },

    #[error("config: {0}")]
    Validation(String),

    #[error("io: run version mismatch: file has {found}, this build reads {expected}")]
    VersionMismatch { found: String, expected: String },

    #[error("io: {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn for_particle(self, particle: usize) -> Self {
        match self {
            e @ Error::Particle { .. } => e,
            e => Error::Particle {
                particle,
                source: Box::new(e),
            },
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl std::fmt::Display) -> Self {
        Error::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
