use crate::flow::{ActionId, FlowKey};
use crate::topology::HostId;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown action {0}")]
    UnknownAction(ActionId),

    #[error("unknown flow {0}")]
    UnknownFlow(FlowKey),

    #[error("empty switch path")]
    EmptyPath,

    #[error("no route between host {src} and host {dst}")]
    Unreachable { src: HostId, dst: HostId },

    /// Malformed text input (topology edge lists, trace CSV).
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    /// Malformed binary input (filter blobs, install messages).
    #[error("malformed blob: {0}")]
    Malformed(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(path: &str, line: u64, message: impl Into<String>) -> Error {
        Error::Parse {
            path: path.to_string(),
            line,
            message: message.into(),
        }
    }
}
