//! Crate-wide error type. Every fallible public operation returns
//! [`Result`]; variant names identify the contract that was violated.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    // --- ingestion -------------------------------------------------------
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("negative event time at line {line}")]
    NegativeTime { line: u64 },
    #[error("patient {patient} has more than one death outcome event")]
    DuplicateDeath { patient: String },
    #[error("unknown patient {patient}")]
    UnknownPatient { patient: String },

    // --- configuration and specification ---------------------------------
    #[error("bad specification: {0}")]
    BadSpec(String),
    #[error("bad protocol: {0}")]
    BadProtocol(String),
    #[error("bad configuration: {0}")]
    BadConfig(String),

    // --- causal graph -----------------------------------------------------
    #[error("graph contains a directed cycle")]
    CyclicGraph,
    #[error("unknown graph node {node}")]
    UnknownNode { node: String },
    #[error("node {node} is the treatment or outcome and cannot be adjusted for")]
    ReservedNode { node: String },
    #[error("adjustment set rejected: {detail}")]
    AdjustmentRejected { detail: String },

    // --- cohort and features ----------------------------------------------
    #[error("no patients satisfy the protocol")]
    EmptyCohort,
    #[error("code {code} never appears in the event store")]
    UnknownCode { code: String },
    #[error("column mismatch: {0}")]
    ColumnMismatch(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    // --- nuisance models ---------------------------------------------------
    #[error("normal equations are singular")]
    SingularSystem,
    #[error("labels contain a single class")]
    SingleClass,
    #[error("cross-validation fold {fold} is too small or single-class")]
    FoldTooSmall { fold: usize },
    #[error("no hyperparameter candidate could be fitted")]
    NoViableCandidate,

    // --- estimators --------------------------------------------------------
    #[error("both treatment arms must be non-empty")]
    SingleArm,
    #[error("control potential-outcome mean is zero; risk ratio undefined")]
    ZeroControlMean,
    #[error("treatment residuals are degenerate; partialled-out estimator undefined")]
    DegenerateTreatmentResiduals,
    #[error("no matched pairs inside the caliper")]
    NoMatches,
    #[error("bootstrap replicate {replicate} failed after repeated redraws")]
    ResampleFailure { replicate: usize },

    // --- heterogeneity -----------------------------------------------------
    #[error("subgroup {group}, stratum {stratum}, is empty")]
    EmptyStratum { group: String, stratum: bool },

    // --- passthrough -------------------------------------------------------
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
