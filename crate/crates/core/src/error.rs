use thiserror::Error;

/// Every failure the laboratory reports. Messages name the offending values.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeclabError {
    #[error("too short to test convexity: {len} terms")]
    TooShort { len: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("Lemma constants need large N: N = {n} < N0 = {n0}")]
    NeedsLargeN { n: u64, n0: u64 },
    #[error("rescaled sequence invalid: {0}")]
    Rescale(String),
    #[error("cell {cell} is not contained in its enclosing fat AP")]
    Containment { cell: usize },
    #[error("non-nested atom at frequency {freq}")]
    NonNestedAtom { freq: f64 },
    #[error("insufficient padding: need {required} samples, have {available}")]
    Padding { required: usize, available: usize },
    #[error("unbounded region: {0}")]
    UnboundedRegion(String),
    #[error("zero right-hand side in {0}")]
    ZeroRhs(String),
    #[error("non-transversal pair ({0}, {1})")]
    NotTransversal(usize, usize),
    #[error("unsupported exponent combination: {0}")]
    Unsupported(String),
    #[error("memory estimate {bytes} bytes exceeds budget {budget} bytes")]
    MemoryBudget { bytes: u64, budget: u64 },
    #[error("fit needs at least 4 points, got {0}")]
    TooFewPoints(usize),
    #[error("budget overflow: {0}")]
    Budget(String),
    #[error("unknown name: {0}")]
    Unknown(String),
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, DeclabError>;

impl From<std::io::Error> for DeclabError {
    fn from(e: std::io::Error) -> Self {
        DeclabError::Io(e.to_string())
    }
}
