//! Binary wire codec.
//!
//! Every message is one frame:
//!
//! ```text
//! +----------------+----------+------------------------+
//! | length (u32 BE)| type (u8)| body (fixed field order)|
//! +----------------+----------+------------------------+
//! ```
//!
//! `length` counts the type byte plus the body. Integers are big-endian,
//! strings are `u16` length + UTF-8, byte blobs are `u32` length + bytes, and
//! IP addresses are a family byte (4 or 6) followed by 4 or 16 octets.
//!
//! | type | message          | body |
//! |------|------------------|------|
//! | 0x01 | ContentRequest   | object_id str, first_chunk u64 |
//! | 0x02 | RequestBundle    | see [`RequestBundle`] |
//! | 0x03 | ChunkRequest     | request_number u64, client_ip ip, object_id str, chunk_index u64 |
//! | 0x04 | ChunkReply       | payload blob |
//! | 0x05 | TokenReport      | request_number u64, token `[32]` |
//! | 0x06 | TokenAck         | accepted u8 (0 or 1) |
//! | 0x7f | Error            | code u8, message str |
//!
//! Bundle body: request_number u64, client_ip ip, object_id str,
//! object_size u64, first_chunk u64, logical_chunks u32, n u32, rounds u32, chunk_size u32,
//! piece_size u32, assignment count u32, then per assignment
//! (cache_id u32, address str, chunk_index u64), challenge `[32]`,
//! key envelope blob, token envelope blob. Envelope blobs use the
//! `nonce || ciphertext || tag` layout.

use std::io::{Read, Write};
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};

use crate::crypto::{Envelope, SecretToken};
use crate::params::PuzzleParams;
use crate::puzzle::Challenge;

use super::ProtocolError;

/// Largest accepted frame (type byte + body).
pub const MAX_FRAME: usize = 256 << 20;

pub const TYPE_CONTENT_REQUEST: u8 = 0x01;
pub const TYPE_REQUEST_BUNDLE: u8 = 0x02;
pub const TYPE_CHUNK_REQUEST: u8 = 0x03;
pub const TYPE_CHUNK_REPLY: u8 = 0x04;
pub const TYPE_TOKEN_REPORT: u8 = 0x05;
pub const TYPE_TOKEN_ACK: u8 = 0x06;
pub const TYPE_ERROR: u8 = 0x7f;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContentRequest {
    pub object_id: String,
    pub first_chunk: u64,
}

/// Public part of a registry entry, as handed to clients.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheDescriptor {
    pub cache_id: u32,
    pub address: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub cache: CacheDescriptor,
    pub chunk_index: u64,
}

/// Everything a client needs to fetch, solve and report one request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestBundle {
    pub request_number: u64,
    pub client_ip: IpAddr,
    pub object_id: String,
    /// Byte length of the object before padding.
    pub object_size: u64,
    pub first_chunk: u64,
    /// Chunks of the object actually covered; the rest of the `n`
    /// assignments repeat the final chunk.
    pub logical_chunks: u32,
    pub params: PuzzleParams,
    /// Assignment `i` serves chunk `first_chunk + i` and is puzzle chunk `i`.
    pub assignments: Vec<Assignment>,
    pub challenge: Challenge,
    /// Seals the `n` 16-byte session keys followed by the `n` SHA-256
    /// digests of the raw chunks, both in assignment order.
    pub key_envelope: Envelope,
    pub token_envelope: Envelope,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkRequest {
    pub request_number: u64,
    pub client_ip: IpAddr,
    pub object_id: String,
    pub chunk_index: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ErrorCode {
    NotFound = 1,
    Capacity = 2,
    BadRequest = 3,
    Forbidden = 4,
    Internal = 5,
}

impl ErrorCode {
    fn from_u8(v: u8) -> Result<Self, ProtocolError> {
        Ok(match v {
            1 => ErrorCode::NotFound,
            2 => ErrorCode::Capacity,
            3 => ErrorCode::BadRequest,
            4 => ErrorCode::Forbidden,
            5 => ErrorCode::Internal,
            other => return Err(ProtocolError::Codec(format!("unknown error code {other}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    ContentRequest(ContentRequest),
    RequestBundle(Box<RequestBundle>),
    ChunkRequest(ChunkRequest),
    /// Masked chunk: ciphertext followed by the 32-byte completion mask.
    ChunkReply(Vec<u8>),
    TokenReport {
        request_number: u64,
        token: SecretToken,
    },
    TokenAck {
        accepted: bool,
    },
    Error {
        code: ErrorCode,
        message: String,
    },
}

impl Message {
    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        Message::Error {
            code,
            message: message.into(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Message::ContentRequest(_) => "ContentRequest",
            Message::RequestBundle(_) => "RequestBundle",
            Message::ChunkRequest(_) => "ChunkRequest",
            Message::ChunkReply(_) => "ChunkReply",
            Message::TokenReport { .. } => "TokenReport",
            Message::TokenAck { .. } => "TokenAck",
            Message::Error { .. } => "Error",
        }
    }

    fn type_byte(&self) -> u8 {
        match self {
            Message::ContentRequest(_) => TYPE_CONTENT_REQUEST,
            Message::RequestBundle(_) => TYPE_REQUEST_BUNDLE,
            Message::ChunkRequest(_) => TYPE_CHUNK_REQUEST,
            Message::ChunkReply(_) => TYPE_CHUNK_REPLY,
            Message::TokenReport { .. } => TYPE_TOKEN_REPORT,
            Message::TokenAck { .. } => TYPE_TOKEN_ACK,
            Message::Error { .. } => TYPE_ERROR,
        }
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn raw(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn str(&mut self, s: &str) -> Result<(), ProtocolError> {
        let len = u16::try_from(s.len())
            .map_err(|_| ProtocolError::Codec(format!("string too long: {} bytes", s.len())))?;
        self.0.extend_from_slice(&len.to_be_bytes());
        self.raw(s.as_bytes());
        Ok(())
    }
    fn blob(&mut self, b: &[u8]) -> Result<(), ProtocolError> {
        let len =
            u32::try_from(b.len()).map_err(|_| ProtocolError::Codec("blob too long".into()))?;
        self.u32(len);
        self.raw(b);
        Ok(())
    }
    fn ip(&mut self, ip: &IpAddr) {
        match ip {
            IpAddr::V4(v4) => {
                self.u8(4);
                self.raw(&v4.octets());
            }
            IpAddr::V6(v6) => {
                self.u8(6);
                self.raw(&v6.octets());
            }
        }
    }
    fn usize_u32(&mut self, v: usize) -> Result<(), ProtocolError> {
        self.u32(
            u32::try_from(v).map_err(|_| ProtocolError::Codec(format!("value {v} exceeds u32")))?,
        );
        Ok(())
    }
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ProtocolError> {
        if self.0.len() < n {
            return Err(ProtocolError::Codec(format!(
                "truncated body: need {n} bytes, have {}",
                self.0.len()
            )));
        }
        let (head, rest) = self.0.split_at(n);
        self.0 = rest;
        Ok(head)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N], ProtocolError> {
        Ok(self.take(N)?.try_into().expect("take returns N bytes"))
    }
    fn u8(&mut self) -> Result<u8, ProtocolError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, ProtocolError> {
        Ok(u32::from_be_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64, ProtocolError> {
        Ok(u64::from_be_bytes(self.array()?))
    }
    fn str(&mut self) -> Result<String, ProtocolError> {
        let len = u16::from_be_bytes(self.array()?) as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|e| ProtocolError::Codec(format!("invalid UTF-8: {e}")))
    }
    fn blob(&mut self) -> Result<&'a [u8], ProtocolError> {
        let len = self.u32()? as usize;
        self.take(len)
    }
    fn ip(&mut self) -> Result<IpAddr, ProtocolError> {
        match self.u8()? {
            4 => Ok(IpAddr::V4(Ipv4Addr::from(self.array::<4>()?))),
            6 => Ok(IpAddr::V6(Ipv6Addr::from(self.array::<16>()?))),
            f => Err(ProtocolError::Codec(format!("unknown address family {f}"))),
        }
    }
    fn finish(self) -> Result<(), ProtocolError> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(ProtocolError::Codec(format!(
                "{} trailing bytes",
                self.0.len()
            )))
        }
    }
}

fn encode_bundle(w: &mut Writer, b: &RequestBundle) -> Result<(), ProtocolError> {
    w.u64(b.request_number);
    w.ip(&b.client_ip);
    w.str(&b.object_id)?;
    w.u64(b.object_size);
    w.u64(b.first_chunk);
    w.u32(b.logical_chunks);
    w.usize_u32(b.params.n)?;
    w.usize_u32(b.params.rounds)?;
    w.usize_u32(b.params.chunk_size)?;
    w.usize_u32(b.params.piece_size)?;
    w.usize_u32(b.assignments.len())?;
    for a in &b.assignments {
        w.u32(a.cache.cache_id);
        w.str(&a.cache.address)?;
        w.u64(a.chunk_index);
    }
    w.raw(&b.challenge.0);
    w.blob(&b.key_envelope.to_bytes())?;
    w.blob(&b.token_envelope.to_bytes())?;
    Ok(())
}

fn decode_bundle(r: &mut Reader<'_>) -> Result<RequestBundle, ProtocolError> {
    let request_number = r.u64()?;
    let client_ip = r.ip()?;
    let object_id = r.str()?;
    let object_size = r.u64()?;
    let first_chunk = r.u64()?;
    let logical_chunks = r.u32()?;
    let params = PuzzleParams {
        n: r.u32()? as usize,
        rounds: r.u32()? as usize,
        chunk_size: r.u32()? as usize,
        piece_size: r.u32()? as usize,
    };
    let count = r.u32()? as usize;
    // Each assignment takes at least 14 bytes.
    if count > r.0.len() / 14 {
        return Err(ProtocolError::Codec(format!(
            "assignment count {count} exceeds body"
        )));
    }
    let mut assignments = Vec::with_capacity(count);
    for _ in 0..count {
        let cache_id = r.u32()?;
        let address = r.str()?;
        let chunk_index = r.u64()?;
        assignments.push(Assignment {
            cache: CacheDescriptor { cache_id, address },
            chunk_index,
        });
    }
    let challenge = Challenge(r.array()?);
    let key_envelope = Envelope::from_bytes(r.blob()?)?;
    let token_envelope = Envelope::from_bytes(r.blob()?)?;
    Ok(RequestBundle {
        request_number,
        client_ip,
        object_id,
        object_size,
        first_chunk,
        logical_chunks,
        params,
        assignments,
        challenge,
        key_envelope,
        token_envelope,
    })
}

/// Encodes a full frame, length prefix included.
pub fn encode(msg: &Message) -> Result<Vec<u8>, ProtocolError> {
    let mut w = Writer(vec![0, 0, 0, 0]);
    w.u8(msg.type_byte());
    match msg {
        Message::ContentRequest(req) => {
            w.str(&req.object_id)?;
            w.u64(req.first_chunk);
        }
        Message::RequestBundle(b) => encode_bundle(&mut w, b)?,
        Message::ChunkRequest(req) => {
            w.u64(req.request_number);
            w.ip(&req.client_ip);
            w.str(&req.object_id)?;
            w.u64(req.chunk_index);
        }
        Message::ChunkReply(payload) => w.blob(payload)?,
        Message::TokenReport {
            request_number,
            token,
        } => {
            w.u64(*request_number);
            w.raw(&token.0);
        }
        Message::TokenAck { accepted } => w.u8(*accepted as u8),
        Message::Error { code, message } => {
            w.u8(*code as u8);
            w.str(message)?;
        }
    }
    let mut frame = w.0;
    let len = frame.len() - 4;
    if len > MAX_FRAME {
        return Err(ProtocolError::Codec(format!(
            "frame of {len} bytes exceeds limit"
        )));
    }
    frame[..4].copy_from_slice(&(len as u32).to_be_bytes());
    Ok(frame)
}

/// Decodes the contents of one frame (type byte + body, no length prefix).
pub fn decode_body(frame: &[u8]) -> Result<Message, ProtocolError> {
    let (&ty, body) = frame
        .split_first()
        .ok_or_else(|| ProtocolError::Codec("empty frame".into()))?;
    let mut r = Reader(body);
    let msg = match ty {
        TYPE_CONTENT_REQUEST => Message::ContentRequest(ContentRequest {
            object_id: r.str()?,
            first_chunk: r.u64()?,
        }),
        TYPE_REQUEST_BUNDLE => Message::RequestBundle(Box::new(decode_bundle(&mut r)?)),
        TYPE_CHUNK_REQUEST => Message::ChunkRequest(ChunkRequest {
            request_number: r.u64()?,
            client_ip: r.ip()?,
            object_id: r.str()?,
            chunk_index: r.u64()?,
        }),
        TYPE_CHUNK_REPLY => Message::ChunkReply(r.blob()?.to_vec()),
        TYPE_TOKEN_REPORT => Message::TokenReport {
            request_number: r.u64()?,
            token: SecretToken(r.array()?),
        },
        TYPE_TOKEN_ACK => Message::TokenAck {
            accepted: match r.u8()? {
                0 => false,
                1 => true,
                v => return Err(ProtocolError::Codec(format!("bad ack value {v}"))),
            },
        },
        TYPE_ERROR => Message::Error {
            code: ErrorCode::from_u8(r.u8()?)?,
            message: r.str()?,
        },
        other => {
            return Err(ProtocolError::Codec(format!(
                "unknown message type {other:#04x}"
            )))
        }
    };
    r.finish()?;
    Ok(msg)
}

/// Decodes a full frame, length prefix included.
pub fn decode(frame: &[u8]) -> Result<Message, ProtocolError> {
    if frame.len() < 4 {
        return Err(ProtocolError::Codec(
            "frame shorter than length prefix".into(),
        ));
    }
    let len = u32::from_be_bytes(frame[..4].try_into().expect("4 bytes")) as usize;
    if frame.len() - 4 != len {
        return Err(ProtocolError::Codec(format!(
            "length prefix says {len} bytes, frame has {}",
            frame.len() - 4
        )));
    }
    decode_body(&frame[4..])
}

pub fn write_message<W: Write>(w: &mut W, msg: &Message) -> Result<(), ProtocolError> {
    w.write_all(&encode(msg)?)?;
    w.flush()?;
    Ok(())
}

/// Reads one frame. Returns `Ok(None)` on a clean EOF before any byte.
pub fn read_message<R: Read>(r: &mut R) -> Result<Option<Message>, ProtocolError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len == 0 || len > MAX_FRAME {
        return Err(ProtocolError::Codec(format!("invalid frame length {len}")));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    decode_body(&body).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_ack_layout() {
        let frame = encode(&Message::TokenAck { accepted: true }).unwrap();
        assert_eq!(frame, vec![0, 0, 0, 2, 0x06, 1]);
        assert!(decode(&[0, 0, 0, 2, 0x06, 2]).is_err());
    }

    #[test]
    fn content_request_layout() {
        let frame = encode(&Message::ContentRequest(ContentRequest {
            object_id: "ab".into(),
            first_chunk: 3,
        }))
        .unwrap();
        assert_eq!(
            frame,
            vec![0, 0, 0, 13, 0x01, 0, 2, b'a', b'b', 0, 0, 0, 0, 0, 0, 0, 3]
        );
    }

    #[test]
    fn rejects_malformed_frames() {
        assert!(decode(&[]).is_err());
        assert!(decode(&[0, 0, 0, 1]).is_err());
        assert!(decode(&[0, 0, 0, 1, 0x42]).is_err());
        // Trailing garbage after a TokenAck.
        assert!(decode(&[0, 0, 0, 3, 0x06, 1, 0]).is_err());
        // Truncated TokenReport.
        assert!(decode(&[0, 0, 0, 3, 0x05, 0, 0]).is_err());
        // Unknown address family.
        let mut f = vec![0, 0, 0, 0, 0x03, 0, 0, 0, 0, 0, 0, 0, 1, 5];
        let n = f.len() as u32 - 4;
        f[..4].copy_from_slice(&n.to_be_bytes());
        assert!(decode(&f).is_err());
    }

    #[test]
    fn stream_round_trip_and_eof() {
        let msgs = [
            Message::TokenAck { accepted: false },
            Message::error(ErrorCode::NotFound, "no such object"),
            Message::ChunkReply(vec![1, 2, 3]),
        ];
        let mut buf = Vec::new();
        for m in &msgs {
            write_message(&mut buf, m).unwrap();
        }
        let mut cursor = std::io::Cursor::new(buf);
        for m in &msgs {
            assert_eq!(read_message(&mut cursor).unwrap().as_ref(), Some(m));
        }
        assert_eq!(read_message(&mut cursor).unwrap(), None);
    }
}
