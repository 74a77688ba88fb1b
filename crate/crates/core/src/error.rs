use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unknown distribution family `{0}`")]
    UnknownFamily(String),

    #[error("parameter `{name}` = {value} out of range: {expected}")]
    ParamRange {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("family `{family}` expects {expected} parameters, got {got}")]
    ParamCount {
        family: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("support points must be nonnegative and strictly increasing (index {index})")]
    NonMonotonePoints { index: usize },

    #[error("points and masses differ in length ({points} vs {masses})")]
    LengthMismatch { points: usize, masses: usize },

    #[error("masses do not normalize: log total mass = {log_total}")]
    Normalization { log_total: f64 },

    #[error("log-tail increases at grid index {index}")]
    IncreasingTail { index: usize },

    #[error("grid must start at log-tail 0, got {0}")]
    GridStart(f64),

    #[error("grid step must be positive, got {0}")]
    GridStep(f64),

    #[error("x = {x} outside evaluable range [0, {max}]")]
    OutOfRange { x: f64, max: f64 },

    #[error("degenerate distribution: {0}")]
    Degenerate(&'static str),

    #[error("mean is infinite")]
    InfiniteMean,

    #[error("Laplace transform is infinite at gamma = {0}")]
    InfiniteTransform(f64),

    #[error("budget `{name}` exceeded: need {needed}, limit {limit}")]
    Budget {
        name: &'static str,
        needed: usize,
        limit: usize,
    },

    #[error("quadrature bracket {width:e} exceeds tolerance {tol:e} at x = {x} (estimate {estimate:e})")]
    Tolerance {
        x: f64,
        width: f64,
        tol: f64,
        estimate: f64,
    },

    #[error("counterexample needs at least 3 atoms, got {0}")]
    TooFewAtoms(usize),

    #[error("no exceedance found below horizon {horizon}: tail looks light (level {level})")]
    LightTail { level: usize, horizon: f64 },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("invalid distribution spec: {0}")]
    Spec(String),
}
