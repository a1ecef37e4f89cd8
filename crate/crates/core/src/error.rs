use crate::ctensor::ContainerError;

/// Errors raised by tensor, layer, model and training operations.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("tensor contains a non-finite value")]
    NonFinite,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("label {label} out of range for {num_classes} classes")]
    Label { label: usize, num_classes: usize },

    #[error("loss must be a single element, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("loss must be real, imaginary part is {0}")]
    NonRealLoss(f64),

    #[error("backward already ran on this graph")]
    BackwardTwice,

    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error(transparent)]
    Container(#[from] ContainerError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
