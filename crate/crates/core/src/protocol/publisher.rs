//! Publisher role: issues request bundles and verifies reported tokens.
//!
//! Token verification recomputes the PRF from the request number, the
//! reporting connection's source address and the publisher secret, so no
//! per-request state survives between the two steps.

use std::net::{IpAddr, SocketAddr};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::seq::index::sample;
use rand::{CryptoRng, Rng, RngCore};

use crate::crypto::{
    derive_initial_counter, derive_session_key, derive_token, seal_envelope, tokens_equal,
    InitialCounter, MasterKey, RequestContext, SecretToken, SessionKey,
};
use crate::params::PuzzleParams;
use crate::puzzle::generate_challenge;

use super::content::ContentStore;
use super::registry::Registry;
use super::wire::{Assignment, ContentRequest, Message, RequestBundle};
use super::ProtocolError;

#[derive(Debug)]
pub struct Publisher {
    params: PuzzleParams,
    registry: Registry,
    store: ContentStore,
    secret: MasterKey,
    next_request: AtomicU64,
}

fn clock_micros() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_micros() as u64)
        .unwrap_or(0)
}

impl Publisher {
    /// The request counter starts at the current Unix time in microseconds,
    /// so numbers keep increasing across restarts.
    pub fn new(
        params: PuzzleParams,
        registry: Registry,
        store: ContentStore,
        secret: MasterKey,
    ) -> Self {
        Self::with_first_request_number(params, registry, store, secret, clock_micros())
    }

    pub fn with_first_request_number(
        params: PuzzleParams,
        registry: Registry,
        store: ContentStore,
        secret: MasterKey,
        first: u64,
    ) -> Self {
        Self {
            params,
            registry,
            store,
            secret,
            next_request: AtomicU64::new(first),
        }
    }

    pub fn params(&self) -> &PuzzleParams {
        &self.params
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn store(&self) -> &ContentStore {
        &self.store
    }

    pub fn handle_content_request(
        &self,
        req: &ContentRequest,
        client_ip: IpAddr,
    ) -> Result<RequestBundle, ProtocolError> {
        self.handle_content_request_with_rng(req, client_ip, &mut rand::thread_rng())
    }

    pub fn handle_content_request_with_rng<R: RngCore + CryptoRng>(
        &self,
        req: &ContentRequest,
        client_ip: IpAddr,
        rng: &mut R,
    ) -> Result<RequestBundle, ProtocolError> {
        let p = &self.params;
        let object = self
            .store
            .get(&req.object_id)
            .ok_or_else(|| ProtocolError::NotFound(format!("object {:?}", req.object_id)))?;
        let logical = object.logical_chunks() as u64;
        if req.first_chunk >= logical {
            return Err(ProtocolError::NotFound(format!(
                "chunk {} of {:?} ({logical} chunks)",
                req.first_chunk, req.object_id
            )));
        }
        if self.registry.len() < p.n {
            return Err(ProtocolError::Capacity {
                needed: p.n,
                available: self.registry.len(),
            });
        }

        let request_number = self.next_request.fetch_add(1, Ordering::SeqCst);
        let ctx = RequestContext::new(request_number, client_ip);
        let chosen = sample(rng, self.registry.len(), p.n);

        let mut assignments = Vec::with_capacity(p.n);
        let mut chunks = Vec::with_capacity(p.n);
        let mut keys: Vec<SessionKey> = Vec::with_capacity(p.n);
        let mut counters: Vec<InitialCounter> = Vec::with_capacity(p.n);
        let mut digests = Vec::with_capacity(32 * p.n);
        for (j, cache_idx) in chosen.iter().enumerate() {
            let cache = self.registry.get(cache_idx);
            let chunk_index = req.first_chunk + j as u64;
            chunks.push(
                object
                    .chunk(chunk_index)
                    .expect("padding covers first_chunk + n - 1"),
            );
            digests.extend_from_slice(
                object
                    .chunk_digest(chunk_index)
                    .expect("digest per stored chunk"),
            );
            let sk = derive_session_key(&cache.master_key, &ctx);
            counters.push(derive_initial_counter(&sk));
            keys.push(sk);
            assignments.push(Assignment {
                cache: cache.descriptor.clone(),
                chunk_index,
            });
        }

        let start = rng.gen_range(0..p.pieces_total());
        let (challenge, solution) = generate_challenge(&chunks, &keys, &counters, p, start)?;

        let mut key_material: Vec<u8> = keys.iter().flat_map(|k| k.0).collect();
        key_material.extend_from_slice(&digests);
        let key_envelope = seal_envelope(&solution, &key_material, rng)?;
        let token = derive_token(&self.secret, &ctx);
        let token_envelope = seal_envelope(&solution, &token.0, rng)?;

        log::debug!(
            "request {request_number}: {:?} chunks {}..{} for {client_ip}",
            req.object_id,
            req.first_chunk,
            req.first_chunk + p.n as u64
        );
        Ok(RequestBundle {
            request_number,
            client_ip: ctx.client_ip,
            object_id: req.object_id.clone(),
            object_size: object.size() as u64,
            first_chunk: req.first_chunk,
            logical_chunks: (logical - req.first_chunk).min(p.n as u64) as u32,
            params: *p,
            assignments,
            challenge,
            key_envelope,
            token_envelope,
        })
    }

    /// Accepts iff `token` is the PRF output for this request number and
    /// client address.
    pub fn verify_token(
        &self,
        request_number: u64,
        client_ip: IpAddr,
        token: &SecretToken,
    ) -> bool {
        let expected = derive_token(
            &self.secret,
            &RequestContext::new(request_number, client_ip),
        );
        tokens_equal(&expected, token)
    }

    /// Dispatches one incoming message from `peer`.
    pub fn handle(&self, msg: Message, peer: SocketAddr) -> Message {
        let ip = peer.ip().to_canonical();
        match msg {
            Message::ContentRequest(req) => match self.handle_content_request(&req, ip) {
                Ok(bundle) => Message::RequestBundle(Box::new(bundle)),
                Err(e) => {
                    log::info!("content request from {peer} failed: {e}");
                    e.to_message()
                }
            },
            Message::TokenReport {
                request_number,
                token,
            } => {
                let accepted = self.verify_token(request_number, ip, &token);
                log::debug!("token for request {request_number} from {ip}: accepted={accepted}");
                Message::TokenAck { accepted }
            }
            other => Message::error(
                super::ErrorCode::BadRequest,
                format!("publisher does not handle {}", other.kind()),
            ),
        }
    }
}
