use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("space has zero dimension")]
    ZeroDimension,
    #[error("mode index {index} out of range for a space with {modes} modes")]
    InvalidMode { index: usize, modes: usize },
    #[error("qubit index {index} out of range for a space with {qubits} qubits")]
    InvalidQubit { index: usize, qubits: usize },
    #[error("subsystem index {index} out of range ({count} subsystems)")]
    InvalidSubsystem { index: usize, count: usize },
    #[error("space mismatch: {0}")]
    SpaceMismatch(String),
    #[error("wrong space shape: {0}")]
    WrongSpaceShape(String),
    #[error("photon cutoff {cutoff} below the required minimum {required}")]
    CutoffTooSmall { cutoff: usize, required: usize },
    #[error("matrix is not Hermitian (max deviation {deviation:.3e}){context}")]
    NonHermitian { deviation: f64, context: String },
    #[error("norm drift {drift:.3e} exceeds tolerance {tolerance:.1e}")]
    NormDrift { drift: f64, tolerance: f64 },
    #[error("negative rate for channel {0}")]
    NegativeRate(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no root of the k-r resonance relation in (0, 2) for k = {k}")]
    NoRoot { k: u32 },
    #[error("resonance residual {residual:.3e} exceeds tolerance {tolerance:.1e}")]
    ResonanceResidual { residual: f64, tolerance: f64 },
    #[error("degenerate eigenvalues {e1} and {e2} (levels {i} and {j})")]
    DegenerateSpectrum { i: usize, j: usize, e1: f64, e2: f64 },
    #[error("density matrix invariant violated: {0}")]
    InvalidDensityMatrix(String),
    #[error("invalid input state: {0}")]
    InvalidInput(String),
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("invalid coupler schedule: {0}")]
    InvalidSchedule(String),
    #[error(
        "density matrix of dimension {dimension} needs about {required_bytes} bytes, \
         over the budget of {budget_bytes}; reduce the number of bath modes N"
    )]
    MemoryBudget { dimension: usize, required_bytes: usize, budget_bytes: usize },
    #[error("sector {0} is empty")]
    EmptySector(&'static str),
    #[error("integrator failed to converge: {0}")]
    Convergence(String),
}
