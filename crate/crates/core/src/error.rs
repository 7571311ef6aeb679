use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("parameter error: {0}")]
    Param(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("label error: {0}")]
    Label(String),
    #[error("alignment error: teacher has {teacher} frames, student has {student}")]
    Alignment { teacher: usize, student: usize },
    #[error("CTC infeasible: {frames} frames cannot emit {labels} labels with {repeats} repeats")]
    Feasibility {
        frames: usize,
        labels: usize,
        repeats: usize,
    },
    #[error("batch error: {0}")]
    Batch(String),
    #[error("corpus spec error: {0}")]
    Spec(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("scoring error: {0}")]
    Scoring(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
