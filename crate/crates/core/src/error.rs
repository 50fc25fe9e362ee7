use std::path::PathBuf;

use crate::model::StratumId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("every stratum has zero weight (n_i * sigma_i = 0)")]
    AllZeroWeights,

    #[error("population is empty")]
    EmptyPopulation,

    #[error("infeasible budget: {requested} units requested but strata can hold only {available}")]
    InfeasibleBudget { requested: f64, available: f64 },

    #[error("allocation vector is all zeros")]
    ZeroVector,

    #[error("allocations cover different strata")]
    MismatchedStrata,

    #[error("no stratum has a sample to evict")]
    NothingToEvict,

    #[error("target {target} exceeds current total sample size {total}")]
    InfeasibleTarget { target: f64, total: f64 },

    #[error("instance too large for exhaustive search: {0}")]
    InstanceTooLarge(String),

    #[error("stratum {stratum}: allocation {requested} exceeds {available} available records")]
    AllocationInfeasible {
        stratum: StratumId,
        requested: u64,
        available: u64,
    },

    #[error("sampler has not been initialized")]
    NotInitialized,

    #[error("variance undefined: stratum {0} has spread but no sample")]
    UndefinedVariance(StratumId),

    #[error("stratum {0} is in scope but has no sample to estimate from")]
    EmptyScopeStratum(StratumId),

    #[error("exact answer is zero; relative error undefined")]
    ZeroExact,

    #[error("query scope contains no records")]
    EmptyScope,

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
