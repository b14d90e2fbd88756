use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("element with zero impedance cannot be inverted")]
    SingularElement,
    #[error("voltage must be positive, got {0}")]
    InvalidVoltage(f64),
    #[error("bus index {index} outside 1..={n}")]
    BusOutOfRange { index: usize, n: usize },
    #[error("line connects bus {0} to itself")]
    SelfLoop(usize),
    #[error("more than one line between buses {0} and {1}")]
    DuplicateLine(usize, usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no convergence after {iterations} iterations, residual {residual:e}")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("singular jacobian")]
    SingularJacobian,
    #[error("voltage magnitude at bus {bus} is not positive ({magnitude})")]
    NonPositiveVoltage { bus: usize, magnitude: f64 },
    #[error("zero voltage magnitude makes the linearization singular")]
    SingularLinearization,
    #[error("eigenvalue iteration did not converge")]
    EigenNoConvergence,
}
