use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("failed to access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// JSON syntax or schema error; the message carries line and column.
    #[error("failed to parse {context}: {source}")]
    Parse {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("unknown image id {0}")]
    UnknownImage(u64),

    #[error("unknown category id {0}")]
    UnknownCategory(u64),

    #[error("duplicate {kind} id {id}")]
    DuplicateId { kind: &'static str, id: u64 },

    #[error("image {image_id}: score {score} is outside [0, 1]")]
    ScoreOutOfRange { image_id: u64, score: f64 },

    #[error("image {image_id}: invalid size {width}x{height}")]
    InvalidImageSize {
        image_id: u64,
        width: f64,
        height: f64,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("class index {class_idx} is out of range for a model trained on {num_classes} classes")]
    ClassCountMismatch { class_idx: usize, num_classes: usize },

    #[error("class {class_idx} has {count} detections; exhaustive search is limited to {limit}")]
    InstanceTooLarge {
        class_idx: usize,
        count: usize,
        limit: usize,
    },

    #[error("non-finite gradient in tensor `{0}`")]
    NonFiniteGradient(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged {
        epoch: usize,
        reason: String,
        last_good: Box<crate::model::RescoringModel>,
    },

    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("image {image_id}: detections before and after rescoring are not aligned ({reason})")]
    Misaligned { image_id: u64, reason: String },
}

impl Error {
    /// Stable snake_case name of the variant, for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Io { .. } => "io",
            Self::Parse { .. } => "parse",
            Self::UnknownImage(_) => "unknown_image",
            Self::UnknownCategory(_) => "unknown_category",
            Self::DuplicateId { .. } => "duplicate_id",
            Self::ScoreOutOfRange { .. } => "score_out_of_range",
            Self::InvalidImageSize { .. } => "invalid_image_size",
            Self::InvalidConfig(_) => "invalid_config",
            Self::VersionMismatch { .. } => "version_mismatch",
            Self::ShapeMismatch { .. } => "shape_mismatch",
            Self::CorruptCheckpoint(_) => "corrupt_checkpoint",
            Self::ClassCountMismatch { .. } => "class_count_mismatch",
            Self::InstanceTooLarge { .. } => "instance_too_large",
            Self::NonFiniteGradient(_) => "non_finite_gradient",
            Self::Diverged { .. } => "diverged",
            Self::EmptyTrainingSet => "empty_training_set",
            Self::Misaligned { .. } => "misaligned",
        }
    }
}
