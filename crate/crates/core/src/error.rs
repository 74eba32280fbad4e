use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing input file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("i/o error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}: record {record}: {message}")]
    Parse {
        file: String,
        record: String,
        message: String,
    },

    #[error("line {line} references undefined bus {bus}")]
    DanglingBus { line: String, bus: String },

    #[error("customer {customer} references undefined bus {bus}")]
    DanglingCustomer { customer: String, bus: String },

    #[error("impedance matrix of {0} is not symmetric")]
    NonSymmetricImpedance(String),

    #[error("topology is not radial: cycle through lines {}", .0.join(", "))]
    Cycle(Vec<String>),

    #[error("buses not reachable from the root: {}", .0.join(", "))]
    Disconnected(Vec<String>),

    #[error("root bus {root} must feed exactly one line (found {count})")]
    RootBranch { root: String, count: usize },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("target resolution {target} min is not a multiple of source resolution {source_res} min")]
    Resolution { target: u32, source_res: u32 },

    #[error("period {period} out of range (series has {len} periods)")]
    PeriodOutOfRange { period: usize, len: usize },

    #[error("scenario references unknown customer index {0}")]
    UnknownCustomer(usize),

    #[error("invalid phase assignment: {0}")]
    InvalidAssignment(String),

    #[error("zero voltage magnitude on phase {phase} at bus {bus}")]
    ZeroVoltage { bus: String, phase: char },

    #[error("power flow did not converge in {iterations} iterations (last mismatch {mismatch:e})")]
    NonConvergence { iterations: usize, mismatch: f64 },

    #[error("voltage collapse at bus {bus}: |V| = {magnitude:.4} p.u.")]
    VoltageCollapse { bus: String, magnitude: f64 },

    #[error("unknown slack mode {0:?}")]
    UnknownSlackMode(String),

    #[error("rank-deficient fitting sample set for phase {0}")]
    RankDeficientFit(char),

    #[error("singular linear system (condition estimate {condition:e})")]
    SingularSystem { condition: f64 },

    #[error("{candidates} candidates exceed the exhaustive budget of {budget}; use branch-and-bound or local search")]
    BudgetExceeded { candidates: u128, budget: u128 },

    #[error("formulation {0} has no partial-assignment bound")]
    NoBound(&'static str),

    #[error("outcome {0} carries no verified power-flow voltages")]
    MissingVerified(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }
}
