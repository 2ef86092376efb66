use std::path::PathBuf;

/// Every failure the engine can report. Variant names double as the typed
/// error names printed by the command-line front end.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported dtype `{0}` (expected float32, uint8 or int32)")]
    UnsupportedDtype(String),
    #[error("bad magic bytes in {0}")]
    BadMagic(PathBuf),
    #[error("malformed array header: {0}")]
    HeaderParse(String),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedData { expected: usize, found: usize },
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("inconsistent channel count for block {block}: {expected} vs {found}")]
    InconsistentChannels {
        block: u32,
        expected: usize,
        found: usize,
    },
    #[error("malformed document {path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error("too few distinct points: k = {k} but only {distinct} distinct")]
    TooFewPoints { k: usize, distinct: usize },
    #[error("non-finite input value")]
    NonFiniteInput,
    #[error("channel mismatch: expected {expected}, found {found}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("missing block {0}")]
    MissingBlock(u32),
    #[error("label {label} out of range for {num_labels} labels")]
    LabelOutOfRange { label: u32, num_labels: u32 },
    #[error("empty batch")]
    EmptyBatch,
    #[error("zero-norm feature vector at cell {0}")]
    ZeroVector(usize),
    #[error("empty list")]
    EmptyList,
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("filter strength {0} outside [0, 1]")]
    SOutOfRange(f32),
    #[error("invalid upsampling target {target:?} for source {source_dims:?}")]
    InvalidTarget {
        source_dims: (usize, usize),
        target: (usize, usize),
    },
    #[error("no valid (non-ignore) pixels")]
    NoValidPixels,
    #[error("window length {n} exceeds video length {len}")]
    WindowTooLong { n: usize, len: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed response in {path}: {message}")]
    MalformedResponse { path: PathBuf, message: String },
    #[error("timed out waiting for {0}")]
    ResponseTimeout(PathBuf),
}

impl Error {
    /// Stable variant name, e.g. `"ShapeMismatch"`.
    pub fn name(&self) -> &'static str {
        match self {
            Error::Io { .. } => "IoError",
            Error::UnsupportedDtype(_) => "UnsupportedDtype",
            Error::BadMagic(_) => "BadMagic",
            Error::HeaderParse(_) => "HeaderParse",
            Error::TruncatedData { .. } => "TruncatedData",
            Error::MissingFile(_) => "MissingFile",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::InconsistentChannels { .. } => "InconsistentChannels",
            Error::Malformed { .. } => "Malformed",
            Error::TooFewPoints { .. } => "TooFewPoints",
            Error::NonFiniteInput => "NonFiniteInput",
            Error::ChannelMismatch { .. } => "ChannelMismatch",
            Error::MissingBlock(_) => "MissingBlock",
            Error::LabelOutOfRange { .. } => "LabelOutOfRange",
            Error::EmptyBatch => "EmptyBatch",
            Error::ZeroVector(_) => "ZeroVector",
            Error::EmptyList => "EmptyList",
            Error::InvalidSchedule(_) => "InvalidSchedule",
            Error::SOutOfRange(_) => "SOutOfRange",
            Error::InvalidTarget { .. } => "InvalidTarget",
            Error::NoValidPixels => "NoValidPixels",
            Error::WindowTooLong { .. } => "WindowTooLong",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::MalformedResponse { .. } => "MalformedResponse",
            Error::ResponseTimeout(_) => "ResponseTimeout",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
