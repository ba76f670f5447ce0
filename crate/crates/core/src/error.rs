use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("small-jump second moment is not integrable: {0}")]
    NonIntegrableSecondMoment(String),
    #[error("large-jump mass is infinite: {0}")]
    InfiniteLargeMass(String),
    #[error("small-jump mass is infinite (infinite activity is not supported): {0}")]
    InfiniteActivity(String),
    #[error("invalid measure component: {0}")]
    InvalidMeasure(String),
    #[error("time grid needs at least two stamps, got {0}")]
    EmptyGrid(usize),
    #[error("time grid is not strictly increasing at index {0}")]
    NonIncreasingGrid(usize),
    #[error("negative covariance eigenvalue {value} at index {index}")]
    NegativeEigenvalue { index: usize, value: f64 },
    #[error("mismatched configurations: {0}")]
    MismatchedSpecs(String),
    #[error("point r = {0} lies outside [0, 1]")]
    OutOfDomain(f64),
    #[error("negative time argument {0}")]
    NegativeTime(f64),
    #[error("evolution family needs t >= s, got t = {t}, s = {s}")]
    TimeOrder { t: f64, s: f64 },
    #[error("degenerate dissipation probes: {0}")]
    DegenerateProbes(String),
    #[error("probe with zero initial field")]
    ZeroProbe,
    #[error("dissipation envelope violated at t - s = {gap}: ratio {ratio:e} > bound {bound:e}")]
    EnvelopeViolated { gap: f64, ratio: f64, bound: f64 },
    #[error("non-finite state at t = {0}")]
    NonFinite(f64),
    #[error("Picard iteration diverged after {iterations} iterations (last gap {last_gap:e})")]
    Divergence { iterations: usize, last_gap: f64 },
    #[error("samples do not cover [{lo}, {hi}]")]
    CoverageGap { lo: f64, hi: f64 },
    #[error("level-set inequality ({which}) violated at r = {r}, eps = {eps}: {detail}")]
    LevelSetViolation {
        which: char,
        r: f64,
        eps: f64,
        detail: String,
    },
    #[error("nonpositive constant {name} = {value}")]
    NonPositiveConstant { name: &'static str, value: f64 },
    #[error("declared Lipschitz constant {declared} exceeded by {observed} in `{inequality}` (pair {pair})")]
    LipschitzExceeded {
        declared: f64,
        observed: f64,
        inequality: &'static str,
        pair: usize,
    },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
