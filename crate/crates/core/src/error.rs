use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input shape mismatch for {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("layer index {layer} out of range 1..={max}")]
    LayerIndex { layer: usize, max: usize },

    #[error("empty data: {0}")]
    EmptyData(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("monitor construction failed: {0}")]
    Construction(String),

    #[error("feature {} lies outside the box", .index.map_or_else(|| "vector".to_string(), |i| format!("#{i}")))]
    OutOfBox { index: Option<usize> },

    #[error("dimension {dim} block is not a corner block (expected all zeros or all ones)")]
    NotACorner { dim: usize },

    #[error("bit string has length {got}, expected {expected}")]
    BitLength { expected: usize, got: usize },

    #[error("exhaustive corner enumeration capped at {cap} dimensions, monitor has {dims}")]
    EnumerationCap { dims: usize, cap: usize },

    #[error("BDD variable {var} out of range 1..={count}")]
    VariableIndex { var: usize, count: usize },

    #[error("BDD handles from different managers cannot be combined")]
    ManagerMismatch,

    #[error("box index {index} out of range (monitor has {count} boxes)")]
    BoxIndex { index: usize, count: usize },

    #[error("{context}: row {row}: {message}")]
    Parse {
        context: String,
        row: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 1 = domain error, 2 = I/O or parse, 3 = configuration.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) | Error::Json(_) | Error::Parse { .. } => 2,
            Error::Config(_) | Error::LayerIndex { .. } | Error::BoxIndex { .. } => 3,
            _ => 1,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, row: usize, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            row,
            message: message.to_string(),
        }
    }
}
