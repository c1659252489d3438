//! Cache role: serves one per-request encrypted, masked chunk per request.

use std::net::{IpAddr, SocketAddr};

use rand::{CryptoRng, RngCore};

use crate::crypto::{
    derive_initial_counter, derive_session_key, encrypt_chunk_in_place, mask_chunk, MasterKey,
    RequestContext,
};

use super::content::ContentStore;
use super::wire::{ChunkRequest, ErrorCode, Message};
use super::ProtocolError;

#[derive(Debug)]
pub struct CacheNode {
    pub cache_id: u32,
    master_key: MasterKey,
    store: ContentStore,
    /// Reject chunk requests whose source address differs from the
    /// client address the publisher recorded.
    pub check_source_ip: bool,
}

impl CacheNode {
    pub fn new(cache_id: u32, master_key: MasterKey, store: ContentStore) -> Self {
        Self {
            cache_id,
            master_key,
            store,
            check_source_ip: true,
        }
    }

    pub fn with_source_ip_check(mut self, on: bool) -> Self {
        self.check_source_ip = on;
        self
    }

    pub fn store(&self) -> &ContentStore {
        &self.store
    }

    /// Encrypts the requested chunk under the derived session key and adds
    /// a fresh completion mask. The payload is `chunk_size + 32` bytes.
    pub fn handle_chunk_request_with_rng<R: RngCore + CryptoRng>(
        &self,
        req: &ChunkRequest,
        rng: &mut R,
    ) -> Result<Vec<u8>, ProtocolError> {
        let object = self
            .store
            .get(&req.object_id)
            .ok_or_else(|| ProtocolError::NotFound(format!("object {:?}", req.object_id)))?;
        let chunk = object.chunk(req.chunk_index).ok_or_else(|| {
            ProtocolError::NotFound(format!("chunk {} of {:?}", req.chunk_index, req.object_id))
        })?;
        let ctx = RequestContext::new(req.request_number, req.client_ip);
        let sk = derive_session_key(&self.master_key, &ctx);
        let mut enc = chunk.to_vec();
        encrypt_chunk_in_place(&sk, derive_initial_counter(&sk), &mut enc);
        let (payload, _mask) = mask_chunk(&enc, rng)?;
        Ok(payload)
    }

    pub fn handle_chunk_request(&self, req: &ChunkRequest) -> Result<Vec<u8>, ProtocolError> {
        self.handle_chunk_request_with_rng(req, &mut rand::thread_rng())
    }

    fn source_allowed(&self, req: &ChunkRequest, peer: IpAddr) -> bool {
        !self.check_source_ip || peer.to_canonical() == req.client_ip.to_canonical()
    }

    pub fn handle(&self, msg: Message, peer: SocketAddr) -> Message {
        match msg {
            Message::ChunkRequest(req) => {
                if !self.source_allowed(&req, peer.ip()) {
                    log::info!(
                        "cache {}: request {} from {peer} names {}",
                        self.cache_id,
                        req.request_number,
                        req.client_ip
                    );
                    return Message::error(
                        ErrorCode::Forbidden,
                        "source address does not match request",
                    );
                }
                match self.handle_chunk_request(&req) {
                    Ok(payload) => Message::ChunkReply(payload),
                    Err(e) => e.to_message(),
                }
            }
            other => Message::error(
                ErrorCode::BadRequest,
                format!("cache does not handle {}", other.kind()),
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use std::net::Ipv4Addr;

    use super::*;
    use crate::crypto::{encrypt_chunk, strip_mask};
    use crate::protocol::content::ContentObject;

    fn node() -> CacheNode {
        let mut store = ContentStore::new();
        store.insert(ContentObject::from_bytes(
            "obj",
            &(0..=255u8).cycle().take(300).collect::<Vec<_>>(),
            128,
            2,
        ));
        CacheNode::new(7, MasterKey([9; 32]), store)
    }

    fn req(request_number: u64, chunk_index: u64) -> ChunkRequest {
        ChunkRequest {
            request_number,
            client_ip: IpAddr::V4(Ipv4Addr::new(10, 0, 0, 1)),
            object_id: "obj".into(),
            chunk_index,
        }
    }

    #[test]
    fn reply_unmasks_to_publisher_side_encryption() {
        let node = node();
        let r = req(5, 1);
        let payload = node.handle_chunk_request(&r).unwrap();
        assert_eq!(payload.len(), 128 + 32);
        let sk = derive_session_key(&MasterKey([9; 32]), &RequestContext::new(5, r.client_ip));
        let expected = encrypt_chunk(
            &sk,
            derive_initial_counter(&sk),
            node.store().get("obj").unwrap().chunk(1).unwrap(),
        );
        assert_eq!(strip_mask(&payload, 128).unwrap(), expected);
    }

    #[test]
    fn fresh_payload_per_request_number() {
        let node = node();
        let a = strip_mask(&node.handle_chunk_request(&req(1, 0)).unwrap(), 128).unwrap();
        let b = strip_mask(&node.handle_chunk_request(&req(2, 0)).unwrap(), 128).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn errors_and_source_check() {
        let node = node();
        let peer: SocketAddr = "10.0.0.2:5000".parse().unwrap();
        assert!(matches!(
            node.handle(Message::ChunkRequest(req(1, 0)), peer),
            Message::Error {
                code: ErrorCode::Forbidden,
                ..
            }
        ));
        let ok_peer: SocketAddr = "10.0.0.1:5000".parse().unwrap();
        assert!(matches!(
            node.handle(Message::ChunkRequest(req(1, 0)), ok_peer),
            Message::ChunkReply(_)
        ));
        assert!(matches!(
            node.handle(Message::ChunkRequest(req(1, 99)), ok_peer),
            Message::Error {
                code: ErrorCode::NotFound,
                ..
            }
        ));
        let mut r = req(1, 0);
        r.object_id = "missing".into();
        assert!(matches!(
            node.handle(Message::ChunkRequest(r), ok_peer),
            Message::Error {
                code: ErrorCode::NotFound,
                ..
            }
        ));
        let open = node.with_source_ip_check(false);
        assert!(matches!(
            open.handle(Message::ChunkRequest(req(1, 0)), peer),
            Message::ChunkReply(_)
        ));
    }
}
