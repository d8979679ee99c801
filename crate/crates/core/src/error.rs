use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("zero has no multiplicative inverse")]
    ZeroInverse,
    #[error("reading {raw} scaled by {scale} does not fit in the field")]
    EncodingOverflow { raw: u32, scale: u64 },
    #[error("scale must be positive")]
    InvalidScale,
    #[error("{value} is not a multiple of scale {scale}")]
    InexactDecode { value: u64, scale: u64 },
    #[error("non-canonical field encoding {0}")]
    NonCanonical(u64),

    #[error("invalid sharing parameters n={n}, t={t}: need t >= 1 and n >= 2t+1")]
    InvalidParams { n: usize, t: usize },
    #[error("need {needed} shares to reconstruct, got {got}")]
    InsufficientShares { needed: usize, got: usize },
    #[error("shares are inconsistent with a degree-{degree} polynomial")]
    InconsistentShares { degree: usize },
    #[error("shares belong to different parties ({0} vs {1})")]
    PartyMismatch(u8, u8),
    #[error("shares have different degrees ({0} vs {1})")]
    DegreeMismatch(u8, u8),
    #[error("duplicate party index {0}")]
    DuplicateParty(u8),
    #[error("malformed share encoding")]
    MalformedShare,

    #[error("degree {degree} too high for degree reduction with {parties} parties")]
    DegreeTooHigh { degree: usize, parties: usize },
    #[error("{live} live parties cannot multiply, need {needed}")]
    InsufficientParties { live: usize, needed: usize },
    #[error("unknown secret handle {0}")]
    UnknownHandle(u32),
    #[error("party index {0} out of range")]
    UnknownParty(usize),
    #[error("party {0} already failed; recovery of a failed party is unsupported")]
    AlreadyFailed(usize),
    #[error("dealt sharing has {got} shares, expected {expected}")]
    WrongShareCount { got: usize, expected: usize },

    #[error("operand lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("public value {value} does not fit in {bits} bits")]
    PublicValueTooWide { value: u64, bits: usize },

    #[error("opened supplier id {0} matches no registered supplier")]
    OpenedIdInvalid(u64),
    #[error("one-hot vector has length {got}, expected {expected}")]
    VectorLengthMismatch { got: usize, expected: usize },
    #[error("region batch does not have the tuple form required by {0}")]
    WrongTupleForm(&'static str),
    #[error("aggregate rows disagree on supplier count")]
    RowShapeMismatch,

    #[error("supplier id {id} does not fit in {sigma} bits")]
    IdOverflow { id: u64, sigma: usize },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("unknown cost-table row {0}")]
    UnknownRow(String),
    #[error("invalid cost parameter: {0}")]
    InvalidCostParams(String),

    #[error("i/o: {0}")]
    Io(String),
    #[error("serialization: {0}")]
    Serialization(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
