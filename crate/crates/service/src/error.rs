use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadRequest,
    MalformedAudio,
    DimensionMismatch,
    DurationExceeded,
    UnknownModel,
    UnknownSession,
    SessionBusy,
    UnsupportedVersion,
    Internal,
}

impl ErrorCode {
    pub fn http_status(self) -> u16 {
        match self {
            ErrorCode::BadRequest | ErrorCode::MalformedAudio | ErrorCode::UnsupportedVersion => 400,
            ErrorCode::UnknownModel | ErrorCode::UnknownSession => 404,
            ErrorCode::SessionBusy => 409,
            ErrorCode::DimensionMismatch | ErrorCode::DurationExceeded => 422,
            ErrorCode::Internal => 500,
        }
    }
}

/// Error carried to HTTP and WebSocket clients as `{"error": {code, message}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceError {
    pub code: ErrorCode,
    pub message: String,
}

impl ServiceError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::BadRequest, message)
    }
}

impl fmt::Display for ServiceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.code, self.message)
    }
}

impl std::error::Error for ServiceError {}

impl From<foley_core::Error> for ServiceError {
    fn from(e: foley_core::Error) -> Self {
        use foley_core::Error as E;
        let code = match &e {
            E::Wav(_) | E::UnsupportedEncoding(_) | E::EmptyAudio | E::TooShort(_) => ErrorCode::MalformedAudio,
            E::DimensionMismatch { .. } => ErrorCode::DimensionMismatch,
            E::InvalidParameter { .. } | E::Empty(_) => ErrorCode::BadRequest,
            _ => ErrorCode::Internal,
        };
        Self::new(code, e.to_string())
    }
}

pub type ServiceResult<T> = std::result::Result<T, ServiceError>;
