use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("echo does not fit the listen window: ends at {end_s:.6} s, window is {window_s:.6} s")]
    ScenarioOutOfWindow { end_s: f64, window_s: f64 },

    #[error("clean signal power unknown; cannot calibrate noise")]
    MissingSignalPower,

    #[error("no echo found above threshold")]
    NoEchoFound,

    #[error("too few snapshots: {snapshots} < {channels} channels")]
    TooFewSnapshots { snapshots: usize, channels: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("circles do not intersect")]
    NoIntersection,

    #[error("sensor positions coincide")]
    CoincidentSensors,

    #[error("singular geometry: lines of sight are parallel")]
    SingularGeometry,

    #[error("direction estimate is a fallback and ranges do not intersect")]
    UnusableFallback,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("angle {angle_deg} deg outside aperture +/-{aperture_deg} deg")]
    ApertureViolation { angle_deg: f64, aperture_deg: f64 },

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("file truncated: {0}")]
    Truncated(String),

    #[error("sample rate mismatch: file {file_hz} Hz, expected {expected_hz} Hz")]
    RateMismatch { file_hz: f64, expected_hz: f64 },

    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),

    #[error("curves share no common error range")]
    NonOverlappingCurves,

    #[error("estimator {0:?} not present in table")]
    MissingEstimator(String),

    #[error("parse error: {0}")]
    Parse(String),

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
