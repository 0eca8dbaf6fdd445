use thiserror::Error;

use crate::instruction::ParseError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid contour: {0}")]
    InvalidContour(String),

    #[error("mask has no foreground pixels")]
    EmptyMask,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("infeasible constraint: {0}")]
    InfeasibleConstraint(String),

    #[error("layout generation failed: {0}")]
    LayoutGeneration(String),

    #[error("degenerate vector: {0}")]
    DegenerateVector(String),

    #[error("oracle protocol violation: {message} (raw response: {raw:?})")]
    OracleProtocol { message: String, raw: String },

    #[error("oracle backend: {0}")]
    OracleBackend(String),

    #[error("template input: {0}")]
    TemplateInput(String),

    #[error("coordinate encoding: {0}")]
    Encoding(String),

    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}
