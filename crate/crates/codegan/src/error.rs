use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: lhs {lhs:?}, rhs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("backward requires a scalar root, got shape {shape:?}")]
    NonScalarBackward { shape: Vec<usize> },

    #[error("grammar error at line {line}: {msg}")]
    Grammar { line: usize, msg: String },

    #[error("ill-typed AST at {path}: {msg}")]
    IllTypedAst { path: String, msg: String },

    #[error("illegal action at step {step}: expected {expected}, got {got}")]
    IllegalAction {
        step: usize,
        expected: String,
        got: String,
    },

    #[error("incomplete derivation: {pending} frontier slot(s) still open")]
    IncompleteDerivation { pending: usize },

    #[error("trailing actions after derivation completed at step {step}")]
    TrailingActions { step: usize },

    #[error("code parse error at offset {offset}: {msg}")]
    CodeParse { offset: usize, msg: String },

    #[error("corpus error in record {record}: {msg}")]
    Corpus { record: String, msg: String },

    #[error("config error in field `{field}`: {msg}")]
    Config { field: String, msg: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(CheckpointError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("internal error: {0}")]
    Internal(String),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes (not a checkpoint file)")]
    BadMagic,
    #[error("unsupported format version {0}")]
    Version(u32),
    #[error("truncated file while reading {0}")]
    Truncated(String),
    #[error("grammar hash mismatch: checkpoint {file:#018x}, active grammar {active:#018x}")]
    GrammarHash { file: u64, active: u64 },
}

impl From<CheckpointError> for Error {
    fn from(e: CheckpointError) -> Self {
        Error::Checkpoint(e)
    }
}
