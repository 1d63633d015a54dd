use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty spectrum")]
    EmptySpectrum,

    #[error("wavelength out of range: {0} nm")]
    WavelengthOutOfRange(f64),

    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("unknown band: {0}")]
    UnknownBand(String),

    #[error("degenerate lobe: roughness must be > 0")]
    DegenerateLobe,

    #[error("image too small for an 11x11 SSIM window: {width}x{height}")]
    ImageTooSmall { width: usize, height: usize },

    #[error("mask id {id} out of range for {classes} classes")]
    ClassOutOfRange { id: usize, classes: usize },

    #[error("need more than k={k} gaussians for the kNN regularizer, have {n}")]
    NotEnoughGaussians { n: usize, k: usize },

    #[error("non-finite gradient in parameter group {0}")]
    NonFiniteGradient(String),

    #[error("full-spectra priors were already initialized")]
    PriorsAlreadyInitialized,

    #[error("unknown group id {0}")]
    UnknownGroup(usize),

    #[error("camera mismatch: {0}")]
    CameraMismatch(String),

    #[error("empty split: {0}")]
    EmptySplit(String),

    #[error("missing image for view {view}, band {band}")]
    MissingImage { view: String, band: String },

    #[error("view {view}: camera rotation is not orthonormal (error {error:.3e})")]
    NonOrthonormal { view: String, error: f64 },

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("unsupported image format in {path}: {reason}")]
    UnsupportedImage { path: PathBuf, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
