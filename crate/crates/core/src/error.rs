use std::fmt;
use std::path::PathBuf;

/// A single violated input invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Issue {
    TooFewAssays { rows: usize },
    NoVariables,
    NonFinite { row: usize, col: usize, value: f64 },
    AssayIdCount { ids: usize, rows: usize },
    VariableIdCount { ids: usize, cols: usize },
    DuplicateAssayId { id: String, first: usize, second: usize },
    DuplicateVariableId { id: String, first: usize, second: usize },
    DuplicateSampleId { id: String },
    EmptyMapping,
    MappingLength { mapping: usize, rows: usize },
    SampleIndexOutOfRange { row: usize, sample: usize, samples: usize },
    UnassayedSample { sample: String },
    ReplicateSetsInconsistent { sample: usize },
    NoControls,
    UnsortedControls { position: usize },
    DuplicateControl { index: usize },
    ControlOutOfRange { index: usize, cols: usize },
    UnknownAssayId { id: String },
    UnknownVariableIds { ids: Vec<String> },
    Other(String),
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Issue::*;
        match self {
            TooFewAssays { rows } => write!(f, "matrix has {rows} assay rows, need at least 2"),
            NoVariables => write!(f, "matrix has no variable columns"),
            NonFinite { row, col, value } => {
                write!(f, "non-finite value {value} at row {row}, column {col}")
            }
            AssayIdCount { ids, rows } => write!(f, "{ids} assay ids for {rows} rows"),
            VariableIdCount { ids, cols } => write!(f, "{ids} variable ids for {cols} columns"),
            DuplicateAssayId { id, first, second } => {
                write!(f, "assay id '{id}' appears at rows {first} and {second}")
            }
            DuplicateVariableId { id, first, second } => {
                write!(f, "variable id '{id}' appears at columns {first} and {second}")
            }
            DuplicateSampleId { id } => write!(f, "sample id '{id}' listed twice"),
            EmptyMapping => write!(f, "mapping has no assays"),
            MappingLength { mapping, rows } => {
                write!(f, "mapping covers {mapping} assays but matrix has {rows} rows")
            }
            SampleIndexOutOfRange { row, sample, samples } => {
                write!(f, "assay {row} maps to sample {sample}, only {samples} samples")
            }
            UnassayedSample { sample } => write!(f, "sample '{sample}' has no assays"),
            ReplicateSetsInconsistent { sample } => {
                write!(f, "replicate set of sample {sample} disagrees with assay mapping")
            }
            NoControls => write!(f, "control set is empty"),
            UnsortedControls { position } => {
                write!(f, "control indices not increasing at position {position}")
            }
            DuplicateControl { index } => write!(f, "control index {index} listed twice"),
            ControlOutOfRange { index, cols } => {
                write!(f, "control index {index} out of range for {cols} columns")
            }
            UnknownAssayId { id } => write!(f, "unknown assay id '{id}'"),
            UnknownVariableIds { ids } => write!(f, "unknown variable ids: {}", ids.join(", ")),
            Other(msg) => f.write_str(msg),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input:\n  {}", join_issues(.0))]
    Invalid(Vec<Issue>),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("k = {k} out of range, must satisfy 1 <= k <= {max}")]
    KOutOfRange { k: usize, max: usize },

    #[error(
        "control regression at k = {k} is singular: smallest pivot {smallest_pivot:.3e}, \
         reciprocal condition {rcond:.3e}; try a smaller k or more negative controls"
    )]
    IllConditioned { k: usize, smallest_pivot: f64, rcond: f64 },

    #[error("replicate residuals carry no variation; nothing to estimate")]
    NoResidualVariation,

    #[error("{what} did not converge within {iterations} iterations")]
    NoConvergence { what: &'static str, iterations: usize },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:.3e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("no pseudo-replicate set could be formed: {0}")]
    EmptyPlan(String),

    #[error("invalid pseudo-replicate plan: {0}")]
    Plan(String),

    #[error("invalid simulation scenario: {}", .0.join("; "))]
    Scenario(Vec<String>),

    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn join_issues(issues: &[Issue]) -> String {
    issues
        .iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join("\n  ")
}

/// Broad failure class, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Numerical,
    Io,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Invalid(_)
            | Error::Dimension(_)
            | Error::KOutOfRange { .. }
            | Error::EmptyPlan(_)
            | Error::Plan(_)
            | Error::Scenario(_)
            | Error::Parse { .. } => ErrorClass::Validation,
            Error::IllConditioned { .. }
            | Error::NoResidualVariation
            | Error::NoConvergence { .. }
            | Error::NotSymmetric { .. } => ErrorClass::Numerical,
            Error::Io { .. } => ErrorClass::Io,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Validation => 2,
            ErrorClass::Numerical => 3,
            ErrorClass::Io => 4,
        }
    }

    pub fn issues(&self) -> &[Issue] {
        match self {
            Error::Invalid(issues) => issues,
            _ => &[],
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
