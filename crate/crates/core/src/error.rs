use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("integration failed at t = {t} ps: {reason}")]
    Integration { t: f64, reason: String },

    #[error("Fock truncation inadequate: top-level population {population:.3e} at t = {t} ps; increase fock_cutoff beyond {n_max}")]
    TruncationInadequate { population: f64, t: f64, n_max: usize },

    #[error("Hilbert space dimension {dim} exceeds the cap of {cap}")]
    DimensionCap { dim: usize, cap: usize },

    #[error("undefined half max: trace has no positive maximum")]
    UndefinedHalfMax,

    #[error("absorption spectrum has a pole at detuning {0} meV")]
    Pole(f64),

    #[error("non-uniform time grid")]
    NonUniformGrid,

    #[error("time ranges do not overlap")]
    DisjointRanges,

    #[error("chi-squared minimum lies on the grid boundary along {axis}; extend the grid")]
    BoundaryMinimum { axis: &'static str },

    #[error("data error: {0}")]
    Data(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the command-line front end:
    /// 2 configuration, 3 numeric failure, 4 data error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_) | Error::Config(_) | Error::DimensionCap { .. } => 2,
            Error::Domain(_)
            | Error::NonFinite(_)
            | Error::Integration { .. }
            | Error::TruncationInadequate { .. }
            | Error::UndefinedHalfMax
            | Error::Pole(_)
            | Error::NonUniformGrid
            | Error::BoundaryMinimum { .. } => 3,
            Error::DisjointRanges | Error::Data(_) | Error::Parse { .. } | Error::Io(_) => 4,
        }
    }
}
