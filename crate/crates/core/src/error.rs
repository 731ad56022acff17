use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point {point:?} is outside the chart domain: {reason}")]
    Domain { point: Vec<f64>, reason: String },

    #[error("invalid metric: {0}")]
    InvalidMetric(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("Newton iteration diverged after {iterations} iterations (residual {residual:.3e})")]
    Divergence { iterations: usize, residual: f64 },

    #[error("loop collapsed to a point (length {length:.3e})")]
    Collapse { length: f64 },

    #[error("chart transition failed: {0}")]
    ChartTransition(String),

    #[error("normal-bundle holonomy is not the identity (deviation {0:.3e})")]
    Holonomy(f64),

    #[error("integrator failure: {0}")]
    Integrator(String),

    #[error("geodesic {id} is not super-rigid: nullity {nullity:?}, eigen gap {eigen_gap:.3e}")]
    NotSuperRigid {
        id: usize,
        nullity: Vec<usize>,
        eigen_gap: f64,
    },

    #[error("perturbation trials disagree on the weight: {values:?}")]
    AmbiguousWeight { values: Vec<i64>, diagnostics: String },

    #[error("length {length} is within {gap:.1e} of the length spectrum point {spectrum_point}")]
    SpectrumCollision {
        length: f64,
        spectrum_point: f64,
        gap: f64,
    },

    #[error("continuation stalled at t = {t} (step {step:.3e})")]
    Stall { t: f64, step: f64 },

    #[error("unresolved event cluster near t = {0}")]
    UnresolvedCluster(f64),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
