use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    InvalidOp { op: &'static str, msg: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("unknown sensor id {id:?} on line {line}; valid ids: {valid:?}")]
    UnknownSensor {
        id: String,
        line: usize,
        valid: Vec<String>,
    },

    #[error("column {0:?} contains no observed values")]
    ColumnAllMissing(String),

    #[error("series too short: need at least {required} rows, got {actual}")]
    TooShort { required: usize, actual: usize },

    #[error("unknown cluster {name:?}; known clusters: {known:?}")]
    UnknownCluster { name: String, known: Vec<String> },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("model container: {0}")]
    Container(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
