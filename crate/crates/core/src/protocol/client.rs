//! Client role: fetch, solve, decrypt and report.

use std::ops::Range;
use std::time::Duration;

use sha2::{Digest, Sha256};

use crate::crypto::{
    derive_initial_counter, encrypt_chunk_in_place, open_envelope, strip_mask, SecretToken,
    SessionKey,
};
use crate::puzzle::{solve_challenge, PuzzleError, Solution};

use super::wire::{ChunkRequest, ContentRequest, Message, RequestBundle};
use super::{request, ProtocolError};

#[derive(Debug, Clone)]
pub struct Client {
    pub publisher: String,
    /// Release content only after the publisher accepts the token.
    pub gate: bool,
    /// Attempts per cache before giving up.
    pub attempts: usize,
    pub retry_delay: Duration,
}

/// Result of solving and opening one bundle.
#[derive(Debug, Clone)]
pub struct Opened {
    pub solution: Solution,
    /// Raw chunks in assignment order, padding repeats included.
    pub chunks: Vec<Vec<u8>>,
    pub token: SecretToken,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchOutcome {
    pub data: Vec<u8>,
    pub request_numbers: Vec<u64>,
    /// Every reported token was accepted.
    pub all_accepted: bool,
    pub total_trials: usize,
}

fn expect_reply(reply: Message, what: &str) -> ProtocolError {
    ProtocolError::UnexpectedReply(format!("expected {what}, got {}", reply.kind()))
}

/// Strips masks, solves, opens both envelopes, decrypts and checks each
/// chunk against its sealed digest.
///
/// Any inconsistency in the cache payloads surfaces as
/// [`ProtocolError::Corrupted`].
pub fn open_bundle(bundle: &RequestBundle, masked: &[Vec<u8>]) -> Result<Opened, ProtocolError> {
    let p = &bundle.params;
    if masked.len() != p.n {
        return Err(ProtocolError::Corrupted(format!(
            "{} payloads for {} assignments",
            masked.len(),
            p.n
        )));
    }
    let encrypted = masked
        .iter()
        .map(|m| strip_mask(m, p.chunk_size))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| ProtocolError::Corrupted(e.to_string()))?;
    let solution = solve_challenge(&encrypted, &bundle.challenge, p).map_err(|e| match e {
        PuzzleError::NotFound => ProtocolError::Corrupted("no trial matches the challenge".into()),
        other => ProtocolError::Puzzle(other),
    })?;
    let keys = open_envelope(&solution, &bundle.key_envelope)
        .map_err(|e| ProtocolError::Corrupted(format!("key envelope: {e}")))?;
    if keys.len() != 48 * p.n {
        return Err(ProtocolError::Corrupted(format!(
            "key envelope holds {} bytes",
            keys.len()
        )));
    }
    let (keys, digests) = keys.split_at(16 * p.n);
    let mut chunks = encrypted;
    for (j, ((c, k), d)) in chunks
        .iter_mut()
        .zip(keys.chunks_exact(16))
        .zip(digests.chunks_exact(32))
        .enumerate()
    {
        let sk = SessionKey(k.try_into().expect("16-byte key"));
        encrypt_chunk_in_place(&sk, derive_initial_counter(&sk), c);
        if Sha256::digest(&c[..]).as_slice() != d {
            return Err(ProtocolError::Corrupted(format!(
                "chunk {j} does not match its digest"
            )));
        }
    }
    let token = open_envelope(&solution, &bundle.token_envelope)
        .map_err(|e| ProtocolError::Corrupted(format!("token envelope: {e}")))?;
    let token = SecretToken(
        token
            .try_into()
            .map_err(|_| ProtocolError::Corrupted("token envelope has wrong length".into()))?,
    );
    Ok(Opened {
        solution,
        chunks,
        token,
    })
}

impl Client {
    pub fn new(publisher: impl Into<String>) -> Self {
        Self {
            publisher: publisher.into(),
            gate: true,
            attempts: 3,
            retry_delay: Duration::from_millis(200),
        }
    }

    pub fn with_gate(mut self, gate: bool) -> Self {
        self.gate = gate;
        self
    }

    pub fn request_bundle(
        &self,
        object_id: &str,
        first_chunk: u64,
    ) -> Result<RequestBundle, ProtocolError> {
        let req = Message::ContentRequest(ContentRequest {
            object_id: object_id.to_string(),
            first_chunk,
        });
        match request(&self.publisher, &req)? {
            Message::RequestBundle(b) => {
                check_bundle(&b)?;
                Ok(*b)
            }
            other => Err(expect_reply(other, "RequestBundle")),
        }
    }

    fn fetch_one(&self, bundle: &RequestBundle, i: usize) -> Result<Vec<u8>, ProtocolError> {
        let a = &bundle.assignments[i];
        let req = Message::ChunkRequest(ChunkRequest {
            request_number: bundle.request_number,
            client_ip: bundle.client_ip,
            object_id: bundle.object_id.clone(),
            chunk_index: a.chunk_index,
        });
        let mut last = None;
        for attempt in 0..self.attempts.max(1) {
            if attempt > 0 {
                std::thread::sleep(self.retry_delay);
            }
            match request(&a.cache.address, &req) {
                Ok(Message::ChunkReply(payload)) => return Ok(payload),
                Ok(other) => return Err(expect_reply(other, "ChunkReply")),
                Err(e @ (ProtocolError::Unreachable(_) | ProtocolError::Io(_))) => {
                    log::warn!(
                        "cache {} ({}) attempt {}: {e}",
                        a.cache.cache_id,
                        a.cache.address,
                        attempt + 1
                    );
                    last = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        Err(ProtocolError::Unreachable(format!(
            "cache {} at {}: {}",
            a.cache.cache_id,
            a.cache.address,
            last.map(|e| e.to_string()).unwrap_or_default()
        )))
    }

    /// Fetches all masked chunks of a bundle in parallel.
    pub fn fetch_masked(&self, bundle: &RequestBundle) -> Result<Vec<Vec<u8>>, ProtocolError> {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..bundle.assignments.len())
                .map(|i| s.spawn(move || self.fetch_one(bundle, i)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("fetch thread panicked"))
                .collect()
        })
    }

    pub fn report_token(
        &self,
        request_number: u64,
        token: &SecretToken,
    ) -> Result<bool, ProtocolError> {
        match request(
            &self.publisher,
            &Message::TokenReport {
                request_number,
                token: *token,
            },
        )? {
            Message::TokenAck { accepted } => Ok(accepted),
            other => Err(expect_reply(other, "TokenAck")),
        }
    }

    /// Fetches chunks `range` of an object (clamped to its length) and
    /// returns the raw bytes; a range reaching the end is trimmed to the
    /// original object size.
    pub fn fetch(&self, object_id: &str, range: Range<u64>) -> Result<FetchOutcome, ProtocolError> {
        let mut out = FetchOutcome {
            data: Vec::new(),
            request_numbers: Vec::new(),
            all_accepted: true,
            total_trials: 0,
        };
        let mut next = range.start;
        let mut end = range.end;
        loop {
            let bundle = self.request_bundle(object_id, next)?;
            let chunk_size = bundle.params.chunk_size as u64;
            let total_chunks = bundle.object_size.div_ceil(chunk_size).max(1);
            end = end.min(total_chunks);
            if range.start >= end {
                return Err(ProtocolError::NotFound(format!(
                    "empty chunk range {}..{}",
                    range.start, range.end
                )));
            }

            let masked = self.fetch_masked(&bundle)?;
            let opened = open_bundle(&bundle, &masked)?;
            let accepted = self.report_token(bundle.request_number, &opened.token)?;
            out.request_numbers.push(bundle.request_number);
            out.total_trials += opened.solution.trials();
            out.all_accepted &= accepted;
            if !accepted {
                if self.gate {
                    return Err(ProtocolError::VerificationFailed);
                }
                log::warn!(
                    "token for request {} rejected; gating disabled",
                    bundle.request_number
                );
            }

            let take = (bundle.logical_chunks as u64).min(end - next) as usize;
            for c in &opened.chunks[..take] {
                out.data.extend_from_slice(c);
            }
            next += take as u64;
            if next >= end {
                if end == total_chunks {
                    out.data
                        .truncate((bundle.object_size - range.start * chunk_size) as usize);
                }
                return Ok(out);
            }
        }
    }
}

fn check_bundle(b: &RequestBundle) -> Result<(), ProtocolError> {
    b.params.validate()?;
    if b.assignments.len() != b.params.n {
        return Err(ProtocolError::Corrupted(format!(
            "bundle has {} assignments for n = {}",
            b.assignments.len(),
            b.params.n
        )));
    }
    for (i, a) in b.assignments.iter().enumerate() {
        if a.chunk_index != b.first_chunk + i as u64 {
            return Err(ProtocolError::Corrupted(format!(
                "assignment {i} serves chunk {}",
                a.chunk_index
            )));
        }
    }
    if b.logical_chunks == 0 || b.logical_chunks as usize > b.params.n {
        return Err(ProtocolError::Corrupted(format!(
            "logical chunk count {}",
            b.logical_chunks
        )));
    }
    Ok(())
}
