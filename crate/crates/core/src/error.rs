use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("negative weight {value} at index {index}")]
    NegativeWeight { index: usize, value: f64 },
    #[error("total mass is zero")]
    ZeroTotalMass,
    #[error("point {index} has norm {norm} outside the ball of radius {radius}")]
    PointOutsideDomain { index: usize, norm: f64, radius: f64 },
    #[error("density vanishes on every grid node")]
    AllZeroDensity,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("measures live on different domains")]
    DomainMismatch,
    #[error("expected dimension {expected}, found {found}")]
    WrongDimension { expected: usize, found: usize },
    #[error("problem size {entries} exceeds the cap {cap}")]
    SizeCapExceeded { entries: usize, cap: usize },
    #[error("solver did not converge: {0}")]
    SolverNotConverged(String),
    #[error("no convergence after {iterations} iterations")]
    NotConverged { iterations: usize },
    #[error("numerical underflow; increase epsilon")]
    NumericalUnderflow,
    #[error("plan row {row} splits mass across several targets")]
    NonDeterministicPlan { row: usize },
    #[error("potential is not optimal (duality residual {residual:e})")]
    NonOptimalPotential { residual: f64 },
    #[error("overlap graph is disconnected (lambda2 = {lambda2:e})")]
    DisconnectedSupport { lambda2: f64 },
    #[error("sample ({x}, {y}) is not positive")]
    NonPositiveSample { x: f64, y: f64 },
    #[error("parameter outside the regime of the family: {0}")]
    OutOfRegime(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
