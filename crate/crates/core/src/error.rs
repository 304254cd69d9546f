use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point lies behind the camera (depth {depth})")]
    PointBehindCamera { depth: f64 },
    #[error("image too small: {width}x{height}, need at least {min}x{min}")]
    ImageTooSmall { width: usize, height: usize, min: usize },
    #[error("region of interest too small: side {side} < {min}")]
    RoiTooSmall { side: f64, min: f64 },
    #[error("need at least 2 samples for a covariance, got {0}")]
    TooFewSamples(usize),
    #[error("matrix is not positive definite (min eigenvalue {min_eigenvalue})")]
    NotPositiveDefinite { min_eigenvalue: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),
    #[error("tracks have differing lengths ({first} vs {other})")]
    RaggedTracks { first: usize, other: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("image size mismatch: {0:?} vs {1:?}")]
    SizeMismatch((usize, usize), (usize, usize)),
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("need at least {needed} descriptors, got {got}")]
    TooFewDescriptors { needed: usize, got: usize },
    #[error("degenerate point configuration for pose estimation")]
    DegenerateConfiguration,
    #[error("need at least {needed} correspondences, got {got}")]
    TooFewCorrespondences { needed: usize, got: usize },
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    VersionUnsupported(u32),
    #[error("corrupt table '{table}' at byte offset {offset}")]
    CorruptTable { table: &'static str, offset: u64 },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
