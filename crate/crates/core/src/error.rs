use alloc::string::String;

/// Errors raised by the scene-graph toolkit.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("point set is empty")]
    EmptyPointSet,
    #[error("scene has no objects")]
    EmptyScene,
    #[error("region has no children")]
    EmptyRegion,
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("object {0} has neither points nor a centroid")]
    MissingGeometry(u64),
    #[error("duplicate object id {0}")]
    DuplicateObjectId(u64),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("scene has {n} objects but at most {max} are allowed")]
    TooManyObjects { n: usize, max: usize },
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("unknown class {0:?}")]
    UnknownClass(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in tensor")]
    NonFinite,
    #[error("target {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },
    #[error("token id {id} out of vocabulary of size {size}")]
    IndexOutOfVocab { id: usize, size: usize },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("no embedding for label {0:?}")]
    MissingLabel(String),
    #[error("no valid targets to score")]
    NoValidTargets,
    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),
    #[error("index {index} out of range for {classes} classes")]
    IndexOutOfRange { index: usize, classes: usize },
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("duplicate parameter name {0:?}")]
    DuplicateParameter(String),
    #[error("unknown parameter {0:?}")]
    UnknownParameter(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
