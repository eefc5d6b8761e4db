use thiserror::Error;

/// Errors raised while loading data or fitting models.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum NmaError {
    #[error("row {row}: {message}")]
    MalformedRow { row: usize, message: String },

    #[error("row {row}: non-positive standard error ({se})")]
    NonPositiveSe { row: usize, se: f64 },

    #[error("row {row}: study compares a treatment with itself ({treatment})")]
    SelfComparison { row: usize, treatment: String },

    #[error("duplicate study_id `{0}`")]
    DuplicateStudy(String),

    #[error("unknown study_id `{0}`")]
    UnknownStudy(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("unknown treatment `{0}`")]
    UnknownTreatment(String),

    #[error("invalid treatment label `{0}`")]
    InvalidTreatment(String),

    #[error("unknown effect measure `{0}`")]
    UnknownMeasure(String),

    #[error("disconnected network: {}", format_components(.0))]
    Disconnected(Vec<Vec<String>>),

    #[error("exclusion removes every study of treatment `{0}`")]
    TreatmentRemoved(String),

    #[error("degenerate 2x2 table")]
    DegenerateTable,

    #[error("invalid arm-level data: {0}")]
    InvalidArms(String),

    #[error("matrix not positive definite")]
    NotPositiveDefinite,

    #[error("rank-deficient design")]
    RankDeficient,

    #[error("no residual degrees of freedom (m = {m}, n - 1 = {params})")]
    NoResidualDf { m: usize, params: usize },

    #[error("zero degrees of freedom")]
    ZeroDf,

    #[error("non-finite objective value at {0}")]
    NonFinite(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{0}")]
    Io(String),
}

fn format_components(components: &[Vec<String>]) -> String {
    components
        .iter()
        .map(|c| format!("{{{}}}", c.join(",")))
        .collect::<Vec<_>>()
        .join(" | ")
}

pub type Result<T> = std::result::Result<T, NmaError>;
