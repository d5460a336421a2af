use alloc::string::String;
use core::fmt;

/// Errors raised by the core engine.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operands built for different rings, security levels or scales.
    ParamMismatch(&'static str),
    /// Invalid parameter set.
    InvalidParams(&'static str),
    /// A value outside the domain of an operation (non-finite weight,
    /// plaintext coefficient >= t, empty input...).
    Domain(&'static str),
    /// A fixed-point value would wrap modulo t.
    Range { value: f64, bound: f64 },
    /// Decoding chunks that carry different scale exponents.
    ScaleMismatch { expected: u8, found: u8 },
    /// The decryption consistency check tripped.
    NoiseOverflow,
    /// Tensor or dataset dimensions do not line up.
    Shape(String),
    /// Malformed bytes on the wire.
    Decode(&'static str),
    /// Protocol state machine violation.
    Protocol(ProtocolError),
}

/// Protocol failures, each with a stable wire code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProtocolError {
    StaleRound { expected: u32, got: u32 },
    BadPhase,
    ManifestDivergence,
    IncompleteRound,
    VersionMismatch { ours: u16, theirs: u16 },
    UnexpectedMessage,
    DuplicateSubmission,
    UnknownClient,
}

impl ProtocolError {
    pub fn code(&self) -> u16 {
        match self {
            ProtocolError::StaleRound { .. } => 1,
            ProtocolError::BadPhase => 2,
            ProtocolError::ManifestDivergence => 3,
            ProtocolError::IncompleteRound => 4,
            ProtocolError::VersionMismatch { .. } => 5,
            ProtocolError::UnexpectedMessage => 6,
            ProtocolError::DuplicateSubmission => 7,
            ProtocolError::UnknownClient => 8,
        }
    }
}

impl fmt::Display for ProtocolError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProtocolError::StaleRound { expected, got } => {
                write!(f, "stale round: expected {expected}, got {got}")
            }
            ProtocolError::BadPhase => f.write_str("operation not allowed in current phase"),
            ProtocolError::ManifestDivergence => f.write_str("manifest divergence across clients"),
            ProtocolError::IncompleteRound => f.write_str("incomplete round"),
            ProtocolError::VersionMismatch { ours, theirs } => {
                write!(f, "protocol version mismatch: ours {ours}, theirs {theirs}")
            }
            ProtocolError::UnexpectedMessage => f.write_str("unexpected message"),
            ProtocolError::DuplicateSubmission => f.write_str("duplicate submission"),
            ProtocolError::UnknownClient => f.write_str("unknown client"),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ParamMismatch(what) => write!(f, "parameter mismatch: {what}"),
            Error::InvalidParams(what) => write!(f, "invalid parameters: {what}"),
            Error::Domain(what) => write!(f, "domain error: {what}"),
            Error::Range { value, bound } => {
                write!(f, "value {value} outside encodable range +/-{bound}")
            }
            Error::ScaleMismatch { expected, found } => {
                write!(f, "scale mismatch: expected {expected}, found {found}")
            }
            Error::NoiseOverflow => f.write_str("noise overflow detected during decryption"),
            Error::Shape(what) => write!(f, "shape error: {what}"),
            Error::Decode(what) => write!(f, "decode error: {what}"),
            Error::Protocol(e) => write!(f, "protocol error: {e}"),
        }
    }
}

impl core::error::Error for Error {}

impl From<ProtocolError> for Error {
    fn from(e: ProtocolError) -> Self {
        Error::Protocol(e)
    }
}

pub type Result<T> = core::result::Result<T, Error>;
