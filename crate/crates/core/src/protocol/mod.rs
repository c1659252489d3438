//! Publisher, cache and client roles over a length-prefixed TCP protocol.
//!
//! A fetch runs as: client asks the publisher for a [`wire::RequestBundle`],
//! pulls one masked chunk from each assigned cache, strips the masks, solves
//! the puzzle, opens the key and token envelopes with the solution, and
//! reports the token back. Raw content is released after a positive
//! `TokenAck` unless gating is disabled.

pub mod cache;
pub mod client;
pub mod config;
pub mod content;
pub mod publisher;
pub mod registry;
pub mod server;
pub mod wire;

use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::time::Duration;

use thiserror::Error;

use crate::crypto::CryptoError;
use crate::puzzle::PuzzleError;

pub use cache::CacheNode;
pub use client::{Client, FetchOutcome};
pub use config::NodeConfig;
pub use content::{ContentObject, ContentStore};
pub use publisher::Publisher;
pub use registry::{RegisteredCache, Registry};
pub use server::{Handler, Server};
pub use wire::{CacheDescriptor, ErrorCode, Message, RequestBundle};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed message: {0}")]
    Codec(String),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Puzzle(#[from] PuzzleError),
    #[error("peer replied with error {code:?}: {message}")]
    Remote { code: ErrorCode, message: String },
    #[error("not found: {0}")]
    NotFound(String),
    #[error("not enough registered caches: need {needed}, have {available}")]
    Capacity { needed: usize, available: usize },
    #[error("protocol corruption: {0}")]
    Corrupted(String),
    #[error("publisher rejected the token")]
    VerificationFailed,
    #[error("unreachable: {0}")]
    Unreachable(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unexpected reply: {0}")]
    UnexpectedReply(String),
}

impl ProtocolError {
    /// Error reply sent to a peer for a failed request.
    pub fn to_message(&self) -> Message {
        let code = match self {
            ProtocolError::NotFound(_) => ErrorCode::NotFound,
            ProtocolError::Capacity { .. } => ErrorCode::Capacity,
            ProtocolError::Codec(_) | ProtocolError::UnexpectedReply(_) => ErrorCode::BadRequest,
            ProtocolError::Remote { code, .. } => *code,
            _ => ErrorCode::Internal,
        };
        Message::error(code, self.to_string())
    }
}

pub const IO_TIMEOUT: Duration = Duration::from_secs(30);

fn resolve(addr: &str) -> Result<SocketAddr, ProtocolError> {
    addr.to_socket_addrs()
        .map_err(|e| ProtocolError::Unreachable(format!("{addr}: {e}")))?
        .next()
        .ok_or_else(|| ProtocolError::Unreachable(format!("{addr}: no address")))
}

/// Opens a connection, sends one message and reads one reply.
///
/// Error replies come back as [`ProtocolError::Remote`].
pub fn request(addr: &str, msg: &Message) -> Result<Message, ProtocolError> {
    let sock = resolve(addr)?;
    let mut stream = TcpStream::connect_timeout(&sock, IO_TIMEOUT)
        .map_err(|e| ProtocolError::Unreachable(format!("{addr}: {e}")))?;
    stream.set_read_timeout(Some(IO_TIMEOUT))?;
    stream.set_write_timeout(Some(IO_TIMEOUT))?;
    stream.set_nodelay(true)?;
    wire::write_message(&mut stream, msg)?;
    match wire::read_message(&mut stream)? {
        Some(Message::Error { code, message }) => Err(ProtocolError::Remote { code, message }),
        Some(reply) => Ok(reply),
        None => Err(ProtocolError::Unreachable(format!(
            "{addr}: connection closed without reply"
        ))),
    }
}
