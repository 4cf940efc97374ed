use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("image too small: {width}x{height} (need at least {min}x{min})")]
    ImageTooSmall { width: usize, height: usize, min: usize },
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("contrast parameter k must be positive, got {0}")]
    NonPositiveK(f64),
    #[error("scale space has {got} levels, need at least {need}")]
    TooFewLevels { got: usize, need: usize },
    #[error("keypoint kind does not match {0}")]
    KindMismatch(&'static str),
    #[error("keypoint ({x}, {y}) lies outside a {width}x{height} image")]
    OutOfBounds { x: f32, y: f32, width: usize, height: usize },
    #[error("top-N percent must lie in (0, 100], got {0}")]
    InvalidPercent(f64),
    #[error("keypoint list is empty")]
    EmptyKeypointList,
    #[error("beta must lie in (0, 1), got {0}")]
    InvalidBeta(f64),
    #[error("score list is empty")]
    EmptyList,
    #[error("invalid bounding box: {0}")]
    InvalidBox(String),
    #[error("need at least {need} distinct descriptors, got {got}")]
    TooFewDescriptors { got: usize, need: usize },
    #[error("fusion weight must lie in [0, 1], got {0}")]
    InvalidWeight(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("linear program failed: {0}")]
    Lp(String),
    #[error("simplex iteration limit ({0}) reached")]
    IterationLimit(usize),
    #[error("training set needs at least two classes")]
    SingleClass,
    #[error("invalid training set: {0}")]
    InvalidDataset(String),
    #[error("dataset root {0} does not exist")]
    MissingRoot(PathBuf),
    #[error("class folder {0} contains no images")]
    EmptyClass(PathBuf),
    #[error("unreadable annotation {path}: {reason}")]
    UnreadableAnnotation { path: PathBuf, reason: String },
    #[error("class {class} has {available} images, need more than {needed}")]
    ClassTooSmall { class: String, available: usize, needed: usize },
    #[error("no annotations available for a keypoint overlap experiment")]
    NoAnnotations,
    #[error("lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("failed to decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },
    #[error("bad cache record: {0}")]
    Cache(String),
    #[error("bad codebook file: {0}")]
    CodebookFormat(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
