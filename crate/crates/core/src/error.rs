use thiserror::Error;

/// Errors surfaced by the core pipeline.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("degenerate motion: relative translations too small to observe scale")]
    DegenerateMotion,
    #[error("invalid scale factor {0} (must be > 0)")]
    InvalidScale(f64),
    #[error("step index {index} out of range (0..{len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("need at least {required} views, got {got}")]
    InsufficientViews { required: usize, got: usize },
    #[error("views do not share camera intrinsics")]
    IntrinsicsMismatch,
    #[error("image dimensions mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("augmentation window {start}..{end} outside pre-grasp segment 0..{pre_grasp_end}")]
    WindowOutOfRange {
        start: usize,
        end: usize,
        pre_grasp_end: usize,
    },
    #[error("object placement failed after {0} rejection attempts")]
    PlacementFailure(usize),
    #[error("episode failed: {0}")]
    EpisodeFailed(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("observation resolution {0}x{1} does not match policy input {2}x{3}")]
    ResolutionMismatch(usize, usize, usize, usize),
    #[error("parse error in {path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("image codec error: {0}")]
    Image(String),
}

impl From<image::ImageError> for CoreError {
    fn from(e: image::ImageError) -> Self {
        CoreError::Image(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
