use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the pipeline, its backends and its evaluators can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {left_w}x{left_h} vs {right_w}x{right_h}")]
    DimensionMismatch {
        left_w: u32,
        left_h: u32,
        right_w: u32,
        right_h: u32,
    },
    #[error("length mismatch: {left} vs {right} frames")]
    LengthMismatch { left: usize, right: usize },
    #[error("invalid mask: {0}")]
    InvalidMask(String),
    #[error("invalid bbox [{0}, {1}, {2}, {3}]")]
    InvalidBBox(i64, i64, i64, i64),
    #[error("object sets differ: {0}")]
    ObjectSetMismatch(String),
    #[error("first-frame annotation is empty")]
    EmptyAnnotation,
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("session already exists for object {0}")]
    DuplicateSession(String),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("frame {requested} requested after frame {last}")]
    OutOfOrderFrame { requested: usize, last: usize },
    #[error("prompt for frame {requested} is stale (last propagated {last})")]
    StaleFrame { requested: usize, last: usize },
    #[error("backend used before initialization")]
    NotInitialized,
    #[error("failed to spawn backend `{0}`: {1}")]
    SpawnFailed(String, String),
    #[error("connection refused by {0}: {1}")]
    ConnectRefused(String, String),
    #[error("protocol version mismatch: server speaks {0}")]
    VersionMismatch(i64),
    #[error("backend did not answer within {0} ms")]
    BackendTimeout(u64),
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("remote error {kind}: {message}")]
    RemoteError { kind: String, message: String },
    #[error("invalid scenario: {0}")]
    SpecError(String),
    #[error("unknown suite `{0}` (valid: drift-tiny, distractor-semantic, reappear, crowded)")]
    UnknownSuite(String),
    #[error("manifest error: {0}")]
    ManifestError(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Stable short code used on the wire and in failure reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::InvalidMask(_) => "InvalidMask",
            Error::InvalidBBox(..) => "InvalidBBox",
            Error::ObjectSetMismatch(_) => "ObjectSetMismatch",
            Error::EmptyAnnotation => "EmptyAnnotation",
            Error::BackendUnavailable(_) => "BackendUnavailable",
            Error::DuplicateSession(_) => "DuplicateSession",
            Error::UnknownSession(_) => "UnknownSession",
            Error::OutOfOrderFrame { .. } => "OutOfOrderFrame",
            Error::StaleFrame { .. } => "StaleFrame",
            Error::NotInitialized => "NotInitialized",
            Error::SpawnFailed(..) => "SpawnFailed",
            Error::ConnectRefused(..) => "ConnectRefused",
            Error::VersionMismatch(_) => "VersionMismatch",
            Error::BackendTimeout(_) => "BackendTimeout",
            Error::ProtocolViolation(_) => "ProtocolViolation",
            Error::RemoteError { .. } => "RemoteError",
            Error::SpecError(_) => "SpecError",
            Error::UnknownSuite(_) => "UnknownSuite",
            Error::ManifestError(_) => "ManifestError",
            Error::Config(_) => "Config",
            Error::Io { .. } => "IoError",
        }
    }

    /// Failures of an auxiliary backend that the fusion stage absorbs by
    /// falling back to the baseline mask.
    pub fn is_degradable(&self) -> bool {
        matches!(
            self,
            Error::BackendTimeout(_)
                | Error::BackendUnavailable(_)
                | Error::ProtocolViolation(_)
                | Error::RemoteError { .. }
                | Error::SpawnFailed(..)
                | Error::ConnectRefused(..)
                | Error::Io { .. }
        )
    }
}
