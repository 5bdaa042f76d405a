use std::time::Duration;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("corpus has {len} tokens, fewer than the model order {order}")]
    CorpusTooShort { len: usize, order: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: u32, size: usize },

    #[error("vocab mismatch: {0}")]
    VocabMismatch(String),

    #[error("model/vocab mismatch")]
    ModelVocabMismatch,

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("no prompts available")]
    NoPrompts,

    #[error("empty training set")]
    EmptyTrainingSet,

    #[error("non-finite loss in epoch {epoch}, batch {batch} (first pair {first_pair})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        first_pair: String,
    },

    #[error("llm backend failed at step {step}: {source}")]
    LlmFailure {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error(transparent)]
    Remote(#[from] RemoteError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

/// Failures talking to a remote completion endpoint.
#[derive(Debug, Error)]
pub enum RemoteError {
    #[error("request timed out after {attempts} attempt(s) (timeout {timeout:?})")]
    Timeout { attempts: u32, timeout: Duration },

    #[error("endpoint returned status {status} after {attempts} attempt(s): {body}")]
    Status {
        status: u16,
        body: String,
        attempts: u32,
    },

    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },

    #[error("malformed response body: {0}")]
    MalformedBody(String),

    #[error("client setup: {0}")]
    Client(String),
}
