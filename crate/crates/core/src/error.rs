use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("Josephson inductance diverges at flux {flux} (|cos(pi*flux)| = 0)")]
    DivergentInductance { flux: f64 },

    #[error("participation calibration infeasible: {0}")]
    CalibrationInfeasible(String),

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("switching rate {rate} Hz is not resolvable at {sample_rate} Sa/s (needs rate < sample_rate/10)")]
    UnresolvableRate { rate: f64, sample_rate: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("FIR design infeasible: {0}")]
    DesignInfeasible(String),

    #[error("sample rate mismatch: trace is {trace} Sa/s, plan expects {expected} Sa/s")]
    RateMismatch { trace: f64, expected: f64 },

    #[error("frequency grids differ between spectra")]
    GridMismatch,

    #[error("projection histogram is not bimodal; no bistable switching detected")]
    NoBistability,

    #[error("insufficient events: {found} dwells, need at least {needed}")]
    InsufficientEvents { found: usize, needed: usize },

    #[error("undefined corner frequency: white floor is zero")]
    UndefinedCorner,

    #[error("bad magic in {path}: expected \"JPOT\"", path = .path.display())]
    BadMagic { path: PathBuf },

    #[error("unsupported trace file version {version} in {path}", path = .path.display())]
    UnsupportedVersion { path: PathBuf, version: u32 },

    #[error("CRC mismatch in {path}: stored {stored:#010x}, computed {computed:#010x}", path = .path.display())]
    CrcMismatch { path: PathBuf, stored: u32, computed: u32 },

    #[error("length mismatch in {path}: {detail}", path = .path.display())]
    LengthMismatch { path: PathBuf, detail: String },

    #[error("header parse failure in {path}: {detail}", path = .path.display())]
    HeaderParse { path: PathBuf, detail: String },

    #[error("CSV parse error at line {line}: {detail}")]
    CsvParse { line: usize, detail: String },

    #[error("config error at `{path}`: {reason}")]
    Config { path: String, reason: String },

    #[error("no input traces found")]
    NoInput,

    #[error("I/O error on {path}: {source}", path = .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(field: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
