use crate::grid::{Action, Cell};

/// Errors surfaced by the core library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cell ({0}, {1}) is outside a {2}x{3} grid", .cell.x, .cell.y, .width, .height)]
    OutOfBounds { cell: Cell, width: u32, height: u32 },

    #[error("action {action:?} is not legal in state ({0}, {1})", .state.x, .state.y)]
    IllegalAction { state: Cell, action: Action },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("grid cannot host the requested special cells: need {needed}, have {available}")]
    UnsatisfiableGrid { needed: usize, available: usize },

    #[error("goal unreachable from start")]
    UnreachableGoal,

    #[error("training failed: {0}")]
    Training(String),

    #[error("Q-table has no entry for state ({0}, {1}) action {action:?}", .state.x, .state.y)]
    UncoveredState { state: Cell, action: Action },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed trajectory log at line {line}: {message}")]
    MalformedLog { line: usize, message: String },

    #[error("model checksum mismatch for {0} matrix")]
    ChecksumMismatch(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
