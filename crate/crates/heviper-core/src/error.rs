use std::path::PathBuf;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by the retrieval engine and its supporting math.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("kernel count {kernels} does not match channel count {channels}")]
    KernelCountMismatch { kernels: usize, channels: usize },

    #[error("dilation {0} is outside the implementable index range")]
    DilationOutOfRange(usize),

    #[error("patch count {0} is not a perfect square")]
    NonSquarePatchCount(usize),

    #[error("dimension mismatch: {context}: expected {expected}, got {got}")]
    DimMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("negative variance {0} passed to center mask")]
    NegativeVariance(f32),

    #[error("GeM power must be >= 1, got {0}")]
    InvalidGemPower(f32),

    #[error("cannot normalize a zero-norm vector")]
    ZeroVector,

    #[error("height {height} m outside the partition range [{min}, {max}) m")]
    HeightOutOfRange { height: f32, min: f32, max: f32 },

    #[error("invalid height partition: {0}")]
    InvalidPartition(String),

    #[error("image dimensions {width}x{height} not divisible by the {grid}x{grid} patch grid")]
    PatchGridMismatch {
        width: usize,
        height: usize,
        grid: usize,
    },

    #[error("empty search pool")]
    EmptyPool,

    #[error("height database is empty")]
    EmptyHeightDatabase,

    #[error("all selected sub-databases are empty")]
    EmptySearchSpace,

    #[error("metric undefined on an empty query set")]
    EmptyQuerySet,

    #[error("distance threshold must be positive, got {0}")]
    NonPositiveThreshold(f32),

    #[error("baseline recall sum is zero; performance ratio undefined")]
    ZeroBaseline,

    #[error("unknown aggregator {0:?}")]
    UnknownAggregator(String),

    #[error("{path}: bad magic: expected {expected:?}, found {found:?}")]
    BadMagic {
        path: PathBuf,
        expected: [u8; 4],
        found: [u8; 4],
    },

    #[error("{path}: unsupported format version {found} (expected {expected})")]
    BadVersion {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("{path}: file truncated while reading {what}")]
    Truncated { path: PathBuf, what: &'static str },

    #[error("{path}: checksum mismatch in level {level}")]
    ChecksumMismatch { path: PathBuf, level: usize },

    #[error("{path}: invalid raster: {reason}")]
    BadRaster { path: PathBuf, reason: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Coarse classification used by callers that map errors to exit codes.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::ShapeMismatch { .. }
                | Error::KernelCountMismatch { .. }
                | Error::DilationOutOfRange(_)
                | Error::NonSquarePatchCount(_)
                | Error::DimMismatch { .. }
                | Error::InvalidGemPower(_)
                | Error::InvalidPartition(_)
                | Error::UnknownAggregator(_)
                | Error::NonPositiveThreshold(_)
        )
    }
}
