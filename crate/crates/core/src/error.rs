use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("value {value} out of range for {what}")]
    OutOfRange { what: &'static str, value: f64 },
    #[error("too few items: need at least {needed}, got {got}")]
    TooFewItems { needed: usize, got: usize },
    #[error("bad frequency range: {0}")]
    BadRange(String),
    #[error("bad raster size {height}x{width}")]
    BadSize { height: usize, width: usize },
    #[error("unknown channel subset `{0}`")]
    UnknownSubset(String),
    #[error("channel `{0}` not present in dataset")]
    MissingChannel(String),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("bad k = {k} for {n} channels")]
    BadK { k: usize, n: usize },
    #[error("shape mismatch: {0}")]
    BadShape(String),
    #[error("empty data")]
    EmptyData,
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("truncated file: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("file length {found} does not match declared dimensions ({expected} bytes)")]
    SizeMismatch { expected: usize, found: usize },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("corrupt payload: {0}")]
    Corrupt(String),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("training diverged in fold {fold} at epoch {epoch}")]
    Diverged { fold: usize, epoch: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by numerical failure rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::Diverged { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
