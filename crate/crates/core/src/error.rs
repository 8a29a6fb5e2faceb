use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: output size would be non-positive (input {input:?})")]
    EmptyOutput { op: &'static str, input: Vec<usize> },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("invalid model config: {0}")]
    Config(String),

    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("graph is not topologically ordered at node {0}")]
    Cycle(usize),

    #[error("parameter {0} has no gradient")]
    MissingGradient(usize),

    #[error("region {region:?} lies outside a {width}x{height} image")]
    OutOfBounds { region: [usize; 4], width: usize, height: usize },

    #[error("mask values must be 0 or 1")]
    NonBinary,

    #[error("ground truth contains a single class; AUC is undefined")]
    SingleClass,

    #[error("mask has no authentic pixels")]
    AllFake,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("training diverged at epoch {epoch}, step {step}: loss is {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape { op, detail: detail.into() }
}
