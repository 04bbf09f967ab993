use thiserror::Error;

/// Errors produced by the simulator and analysis routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("stimulus frequency {freq_hz} Hz is not below Nyquist ({nyquist_hz} Hz)")]
    AliasedStimulus { freq_hz: f64, nyquist_hz: f64 },

    #[error("transform length {0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error("transform length {n_fft} exceeds input length {len}")]
    TooShort { n_fft: usize, len: usize },

    #[error("band [{f_lo} Hz, {f_hi} Hz] contains no bins")]
    EmptyBand { f_lo: f64, f_hi: f64 },

    #[error("signal at {freq_hz} Hz is not resolved above the noise floor")]
    SignalNotResolved { freq_hz: f64 },

    #[error("loop denominator vanishes (resonance) at the requested point")]
    Resonance,

    #[error("flicker noise diverges at f = 0")]
    FlickerDivergence,

    #[error("samples per chopper half-period is not an integer ({0})")]
    ChopperAlignment(f64),

    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(String),

    #[error("parse: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
