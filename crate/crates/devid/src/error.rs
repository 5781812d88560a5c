use std::io;
use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] devid_core::Error),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },

    #[error("{}: malformed WAV: {detail}", path.display())]
    WavFormat { path: PathBuf, detail: String },

    #[error("{}: unsupported codec: {detail}", path.display())]
    UnsupportedCodec { path: PathBuf, detail: String },

    #[error("{}: no audio samples", path.display())]
    EmptyAudio { path: PathBuf },

    #[error("{}: malformed feature file: {detail}", path.display())]
    FeatureFormat { path: PathBuf, detail: String },

    #[error("{}: corrupt checkpoint: {detail}", path.display())]
    CorruptCheckpoint { path: PathBuf, detail: String },

    #[error("{}: {detail}", path.display())]
    Config { path: PathBuf, detail: String },

    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Failed(String),
}

impl Error {
    pub(crate) fn io(path: &Path) -> impl FnOnce(io::Error) -> Error + '_ {
        move |source| Error::Io { path: path.to_path_buf(), source }
    }

    /// Process exit code: 2 for usage and configuration errors, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Usage(_) | Error::Config { .. } | Error::Core(devid_core::Error::Config(_)) => 2,
            _ => 1,
        }
    }
}
