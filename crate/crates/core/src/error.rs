use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("signal too short: need {needed} samples, got {got}")]
    SignalTooShort { needed: usize, got: usize },
    #[error("input has zero variance")]
    ZeroVariance,
    #[error("band {lo}..{hi} Hz is out of range for fs = {fs} Hz")]
    BandOutOfRange { lo: f64, hi: f64, fs: f64 },
    #[error("bad nfft {nfft} for a signal of length {len}")]
    BadNfft { nfft: usize, len: usize },
    #[error("no frequency bin falls inside the band")]
    EmptyBand,
    #[error("zero power inside the band")]
    ZeroBandPower,
    #[error("zero total power")]
    ZeroTotalPower,
    #[error("spectra cover different bin ranges")]
    BinMismatch,
    #[error("degenerate (silent) model output")]
    DegenerateOutput,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("input length {len} shorter than pooling window {k}")]
    InputTooShort { len: usize, k: usize },
    #[error("backward already ran on this graph")]
    GraphConsumed,
    #[error("bad input length {0}: must be a multiple of 8 and at least 16")]
    BadLength(usize),
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("file truncated")]
    Truncated,
    #[error("bad frequency {f0} Hz (max {max} Hz)")]
    BadFrequency { f0: f64, max: f64 },
    #[error("parse error at row {row}: {msg}")]
    ParseError { row: usize, msg: String },
    #[error("empty file")]
    EmptyFile,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("truth contains a zero value")]
    ZeroTruth,
    #[error("sequence is constant")]
    ConstantSequence,
    #[error("detector failed on every sample")]
    AllSamplesFailed,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("degenerate model output at epoch {epoch}, batch {batch}")]
    DegenerateOutputAt { epoch: usize, batch: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}
