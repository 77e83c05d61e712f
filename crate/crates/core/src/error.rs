use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("projector onto the orthogonal complement is singular (zero-norm state)")]
    SingularProjector,

    #[error("spin {index} is not unit length (|S| = {norm})")]
    NonUnitSpin { index: usize, norm: f64 },

    #[error("stereographic singularity at vertex {index} (S^z = {sz})")]
    SouthPole { index: usize, sz: f64 },

    #[error("south pole approached at t = {t} (vertex {index})")]
    SouthPoleAt { t: f64, index: usize },

    #[error("integration diverged at step {step} (t = {t})")]
    Divergence { step: usize, t: f64 },

    #[error("steady state is not isolated: augmented Jacobian singular (cond = {cond:e})")]
    NonIsolatedSteadyState { cond: f64 },

    #[error("steady-state solve did not converge (residual {residual:e} at t = {t})")]
    NotConverged { residual: f64, t: f64 },

    #[error("sample {sample}: {source}")]
    Sample {
        sample: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("edge ({0}, {1}) is not in the graph")]
    MissingEdge(usize, usize),

    #[error("degenerate input: first-layer output has zero norm")]
    DegenerateInput,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}
