use std::fmt;

/// Errors surfaced by every layer of the runtime.
///
/// The type is `Clone` because a single failed future may be observed by any
/// number of continuations, and because errors travel between localities in
/// result parcels (see [`Error::code`]).
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Error {
    #[error("task failed: {0}")]
    TaskFailed(String),
    #[error("task panicked: {0}")]
    Panicked(String),
    #[error("runtime is shutting down")]
    Shutdown,
    #[error("promise already satisfied")]
    AlreadySatisfied,
    #[error("promise dropped without a value")]
    BrokenPromise,
    #[error("channel closed")]
    ChannelClosed,
    #[error("not found: {0}")]
    NotFound(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("already exists: {0}")]
    AlreadyExists(String),
    #[error("wrong locality: {0}")]
    WrongLocality(String),
    #[error("busy: {0}")]
    Busy(String),
    #[error("unknown action: {0}")]
    UnknownAction(String),
    #[error("signature mismatch: {0}")]
    SignatureMismatch(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("decode error: {0}")]
    Decode(#[from] DecodeError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("boot failure: {0}")]
    Boot(String),
}

impl Error {
    /// Stable numeric code used when an error crosses the wire.
    pub fn code(&self) -> i64 {
        match self {
            Error::TaskFailed(_) => 1,
            Error::Panicked(_) => 2,
            Error::Shutdown => 3,
            Error::AlreadySatisfied => 4,
            Error::BrokenPromise => 5,
            Error::ChannelClosed => 6,
            Error::NotFound(_) => 7,
            Error::InvalidArgument(_) => 8,
            Error::AlreadyExists(_) => 9,
            Error::WrongLocality(_) => 10,
            Error::Busy(_) => 11,
            Error::UnknownAction(_) => 12,
            Error::SignatureMismatch(_) => 13,
            Error::Unsupported(_) => 14,
            Error::Transport(_) => 15,
            Error::Decode(_) => 16,
            Error::Config(_) => 17,
            Error::Boot(_) => 18,
        }
    }

    /// Detail string carried alongside [`Error::code`] on the wire.
    pub fn detail(&self) -> String {
        match self {
            Error::TaskFailed(s)
            | Error::Panicked(s)
            | Error::NotFound(s)
            | Error::InvalidArgument(s)
            | Error::AlreadyExists(s)
            | Error::WrongLocality(s)
            | Error::Busy(s)
            | Error::UnknownAction(s)
            | Error::SignatureMismatch(s)
            | Error::Unsupported(s)
            | Error::Transport(s)
            | Error::Config(s)
            | Error::Boot(s) => s.clone(),
            Error::Decode(d) => d.to_string(),
            Error::Shutdown
            | Error::AlreadySatisfied
            | Error::BrokenPromise
            | Error::ChannelClosed => String::new(),
        }
    }

    /// Inverse of [`Error::code`] / [`Error::detail`].
    pub fn from_code(code: i64, detail: String) -> Error {
        match code {
            1 => Error::TaskFailed(detail),
            2 => Error::Panicked(detail),
            3 => Error::Shutdown,
            4 => Error::AlreadySatisfied,
            5 => Error::BrokenPromise,
            6 => Error::ChannelClosed,
            7 => Error::NotFound(detail),
            8 => Error::InvalidArgument(detail),
            9 => Error::AlreadyExists(detail),
            10 => Error::WrongLocality(detail),
            11 => Error::Busy(detail),
            12 => Error::UnknownAction(detail),
            13 => Error::SignatureMismatch(detail),
            14 => Error::Unsupported(detail),
            15 => Error::Transport(detail),
            16 => Error::Decode(DecodeError::new("remote", detail)),
            17 => Error::Config(detail),
            18 => Error::Boot(detail),
            other => Error::TaskFailed(format!("unknown remote error code {other}: {detail}")),
        }
    }

    pub fn is_transport(&self) -> bool {
        matches!(self, Error::Transport(_))
    }
}

/// A malformed frame or value encoding. Names the offending field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeError {
    pub field: &'static str,
    pub reason: String,
}

impl DecodeError {
    pub fn new(field: &'static str, reason: impl Into<String>) -> Self {
        DecodeError {
            field,
            reason: reason.into(),
        }
    }
}

impl fmt::Display for DecodeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.reason)
    }
}

impl std::error::Error for DecodeError {}

pub type Result<T, E = Error> = std::result::Result<T, E>;
