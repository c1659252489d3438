//! Keyed primitives: per-request key and counter derivation, AES-CTR piece
//! and chunk encryption, the completion-mask layer, secret tokens and
//! solution-keyed envelopes.
//!
//! Every PRF is HMAC-SHA256 with a short ASCII label prepended to the input:
//! `sk` (session key), `ctr` (initial counter), `tok` (secret token) and
//! `env` (envelope key, hashed rather than MACed).

use std::net::IpAddr;

use aes::cipher::{BlockEncrypt, KeyInit, KeyIvInit, StreamCipher};
use aes::{Aes128, Aes256};
use hmac::{Hmac, Mac};
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};
use subtle::ConstantTimeEq;
use thiserror::Error;

use crate::params::BLOCK_SIZE;
use crate::puzzle::{PieceEncryptor, PieceIndex, Solution};

type HmacSha256 = Hmac<Sha256>;
type Aes128Ctr = ctr::Ctr128BE<Aes128>;
type Aes256Ctr = ctr::Ctr128BE<Aes256>;

pub const MASK_SIZE: usize = 32;
pub const NONCE_SIZE: usize = 16;
pub const TAG_SIZE: usize = 32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("authentication failed")]
    AuthenticationFailed,
    #[error("randomness source failed: {0}")]
    Randomness(String),
}

/// The per-request values every PRF is evaluated over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RequestContext {
    pub request_number: u64,
    pub client_ip: IpAddr,
}

impl RequestContext {
    pub fn new(request_number: u64, client_ip: IpAddr) -> Self {
        Self {
            request_number,
            client_ip: client_ip.to_canonical(),
        }
    }

    /// 8-byte big-endian request number followed by the 4 or 16 address bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let (buf, len) = self.encode();
        buf[..len].to_vec()
    }

    fn encode(&self) -> ([u8; 24], usize) {
        let mut buf = [0u8; 24];
        buf[..8].copy_from_slice(&self.request_number.to_be_bytes());
        let len = match self.client_ip.to_canonical() {
            IpAddr::V4(v4) => {
                buf[8..12].copy_from_slice(&v4.octets());
                12
            }
            IpAddr::V6(v6) => {
                buf[8..24].copy_from_slice(&v6.octets());
                24
            }
        };
        (buf, len)
    }
}

macro_rules! secret_bytes {
    ($(#[$meta:meta])* $name:ident, $len:expr) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq)]
        pub struct $name(pub [u8; $len]);

        impl $name {
            pub fn random<R: RngCore + CryptoRng>(rng: &mut R) -> Result<Self, CryptoError> {
                let mut b = [0u8; $len];
                rng.try_fill_bytes(&mut b)
                    .map_err(|e| CryptoError::Randomness(e.to_string()))?;
                Ok(Self(b))
            }

            pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
                let v = hex::decode(s.trim())
                    .map_err(|e| CryptoError::InvalidInput(format!("bad hex: {e}")))?;
                let b: [u8; $len] = v.try_into().map_err(|v: Vec<u8>| {
                    CryptoError::InvalidInput(format!(
                        "expected {} bytes, got {}",
                        $len,
                        v.len()
                    ))
                })?;
                Ok(Self(b))
            }

            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }

            pub fn as_bytes(&self) -> &[u8; $len] {
                &self.0
            }
        }

        impl std::fmt::Debug for $name {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                write!(f, concat!(stringify!($name), "(..)"))
            }
        }
    };
}

secret_bytes!(
    /// Long-term secret shared between the publisher and one cache.
    MasterKey,
    32
);
secret_bytes!(
    /// Per-request AES-128 content key of one cache.
    SessionKey,
    16
);
secret_bytes!(
    /// Fresh per-request key of the second encryption layer.
    CompletionMask,
    MASK_SIZE
);
secret_bytes!(SecretToken, 32);

/// Initial AES-CTR counter block of one cache for one request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct InitialCounter(pub u128);

fn prf(key: &[u8], label: &[u8], input: &[u8]) -> [u8; 32] {
    let mut mac = <HmacSha256 as Mac>::new_from_slice(key).expect("HMAC accepts any key length");
    mac.update(label);
    mac.update(input);
    mac.finalize().into_bytes().into()
}

pub fn derive_session_key(master: &MasterKey, ctx: &RequestContext) -> SessionKey {
    let (buf, len) = ctx.encode();
    let out = prf(&master.0, b"sk", &buf[..len]);
    let mut k = [0u8; 16];
    k.copy_from_slice(&out[..16]);
    SessionKey(k)
}

pub fn derive_initial_counter(sk: &SessionKey) -> InitialCounter {
    let out = prf(&sk.0, b"ctr", &[]);
    let mut b = [0u8; 16];
    b.copy_from_slice(&out[..16]);
    InitialCounter(u128::from_be_bytes(b))
}

pub fn derive_token(publisher_secret: &MasterKey, ctx: &RequestContext) -> SecretToken {
    let (buf, len) = ctx.encode();
    SecretToken(prf(&publisher_secret.0, b"tok", &buf[..len]))
}

/// Counter block of the first AES block of piece `index`.
fn piece_counter(ictr: InitialCounter, index: PieceIndex, piece_len: usize) -> u128 {
    let stride = (piece_len / BLOCK_SIZE) as u128;
    ictr.0.wrapping_add((index as u128).wrapping_mul(stride))
}

fn apply_aes128_ctr(sk: &SessionKey, counter: u128, data: &mut [u8]) {
    let mut cipher = Aes128Ctr::new(&sk.0.into(), &counter.to_be_bytes().into());
    cipher.apply_keystream(data);
}

/// Encrypts one piece with the keystream starting at block
/// `ictr + index * piece_len / 16` (mod 2^128).
pub fn encrypt_piece(
    sk: &SessionKey,
    ictr: InitialCounter,
    index: PieceIndex,
    piece: &[u8],
) -> Result<Vec<u8>, CryptoError> {
    if piece.is_empty() || !piece.len().is_multiple_of(BLOCK_SIZE) {
        return Err(CryptoError::InvalidInput(format!(
            "piece length {} is not a positive multiple of {BLOCK_SIZE}",
            piece.len()
        )));
    }
    let mut out = piece.to_vec();
    apply_aes128_ctr(sk, piece_counter(ictr, index, piece.len()), &mut out);
    Ok(out)
}

/// Encrypts a whole chunk starting at the initial counter. Decryption is the
/// same operation.
pub fn encrypt_chunk(sk: &SessionKey, ictr: InitialCounter, chunk: &[u8]) -> Vec<u8> {
    let mut out = chunk.to_vec();
    apply_aes128_ctr(sk, ictr.0, &mut out);
    out
}

/// Encrypts `chunk` in place.
pub fn encrypt_chunk_in_place(sk: &SessionKey, ictr: InitialCounter, chunk: &mut [u8]) {
    apply_aes128_ctr(sk, ictr.0, chunk);
}

/// Per-request ciphers of all `n` caches, used by the challenge generator.
///
/// Encrypts block by block straight into the chain hasher.
pub struct SessionCipher {
    ciphers: Vec<(Aes128, u128)>,
}

impl SessionCipher {
    pub fn new(keys: &[SessionKey], counters: &[InitialCounter]) -> Self {
        let ciphers = keys
            .iter()
            .zip(counters)
            .map(|(k, c)| (Aes128::new(&k.0.into()), c.0))
            .collect();
        Self { ciphers }
    }

    /// Replaces the key material, reusing the existing allocation.
    pub fn rekey(&mut self, keys: &[SessionKey], counters: &[InitialCounter]) {
        self.ciphers.clear();
        self.ciphers.extend(
            keys.iter()
                .zip(counters)
                .map(|(k, c)| (Aes128::new(&k.0.into()), c.0)),
        );
    }
}

impl PieceEncryptor for SessionCipher {
    fn absorb_encrypted(&self, chunk: usize, index: PieceIndex, piece: &[u8], hasher: &mut Sha256) {
        let (cipher, ictr) = &self.ciphers[chunk];
        let mut counter = piece_counter(InitialCounter(*ictr), index, piece.len());
        for block in piece.chunks_exact(BLOCK_SIZE) {
            let mut ks = counter.to_be_bytes().into();
            cipher.encrypt_block(&mut ks);
            let mut out = [0u8; BLOCK_SIZE];
            for ((o, k), p) in out.iter_mut().zip(ks.iter()).zip(block) {
                *o = k ^ p;
            }
            hasher.update(out);
            counter = counter.wrapping_add(1);
        }
    }
}

fn apply_aes256_ctr(key: &[u8; 32], iv: [u8; 16], data: &mut [u8]) {
    let mut cipher = Aes256Ctr::new(key.into(), &iv.into());
    cipher.apply_keystream(data);
}

/// Adds the completion-mask layer: AES-256-CTR under a fresh random mask
/// (counter 0), with the mask appended after the ciphertext.
pub fn mask_chunk<R: RngCore + CryptoRng>(
    encrypted_chunk: &[u8],
    rng: &mut R,
) -> Result<(Vec<u8>, CompletionMask), CryptoError> {
    let mask = CompletionMask::random(rng)?;
    let mut payload = Vec::with_capacity(encrypted_chunk.len() + MASK_SIZE);
    payload.extend_from_slice(encrypted_chunk);
    apply_aes256_ctr(&mask.0, [0u8; 16], &mut payload);
    payload.extend_from_slice(&mask.0);
    Ok((payload, mask))
}

/// Removes the completion-mask layer from a `chunk_size + 32` byte payload.
pub fn strip_mask(payload: &[u8], chunk_size: usize) -> Result<Vec<u8>, CryptoError> {
    if payload.len() != chunk_size + MASK_SIZE {
        return Err(CryptoError::InvalidInput(format!(
            "masked payload has {} bytes, expected {}",
            payload.len(),
            chunk_size + MASK_SIZE
        )));
    }
    let (body, mask) = payload.split_at(chunk_size);
    let mask: [u8; MASK_SIZE] = mask.try_into().expect("split at chunk_size");
    let mut out = body.to_vec();
    apply_aes256_ctr(&mask, [0u8; 16], &mut out);
    Ok(out)
}

/// Solution-keyed authenticated container.
///
/// Wire layout: `nonce (16) || ciphertext || tag (32)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub nonce: [u8; NONCE_SIZE],
    pub ciphertext: Vec<u8>,
    pub tag: [u8; TAG_SIZE],
}

impl Envelope {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(NONCE_SIZE + self.ciphertext.len() + TAG_SIZE);
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&self.ciphertext);
        out.extend_from_slice(&self.tag);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        if bytes.len() < NONCE_SIZE + TAG_SIZE {
            return Err(CryptoError::InvalidInput(format!(
                "envelope too short: {} bytes",
                bytes.len()
            )));
        }
        let (nonce, rest) = bytes.split_at(NONCE_SIZE);
        let (ciphertext, tag) = rest.split_at(rest.len() - TAG_SIZE);
        Ok(Self {
            nonce: nonce.try_into().expect("split"),
            ciphertext: ciphertext.to_vec(),
            tag: tag.try_into().expect("split"),
        })
    }
}

fn envelope_key(solution: &Solution) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"env");
    h.update(solution.value.0);
    h.finalize().into()
}

fn envelope_tag(key: &[u8; 32], nonce: &[u8], ciphertext: &[u8]) -> HmacSha256 {
    let mut mac = <HmacSha256 as Mac>::new_from_slice(key).expect("HMAC accepts any key length");
    mac.update(nonce);
    mac.update(ciphertext);
    mac
}

pub fn seal_envelope<R: RngCore + CryptoRng>(
    solution: &Solution,
    payload: &[u8],
    rng: &mut R,
) -> Result<Envelope, CryptoError> {
    let mut env = Envelope {
        nonce: [0; NONCE_SIZE],
        ciphertext: Vec::with_capacity(payload.len()),
        tag: [0; TAG_SIZE],
    };
    seal_envelope_into(solution, payload, rng, &mut env)?;
    Ok(env)
}

/// Like [`seal_envelope`], reusing the ciphertext buffer of `env`.
pub fn seal_envelope_into<R: RngCore + CryptoRng>(
    solution: &Solution,
    payload: &[u8],
    rng: &mut R,
    env: &mut Envelope,
) -> Result<(), CryptoError> {
    let key = envelope_key(solution);
    rng.try_fill_bytes(&mut env.nonce)
        .map_err(|e| CryptoError::Randomness(e.to_string()))?;
    env.ciphertext.clear();
    env.ciphertext.extend_from_slice(payload);
    apply_aes256_ctr(&key, env.nonce, &mut env.ciphertext);
    env.tag = envelope_tag(&key, &env.nonce, &env.ciphertext)
        .finalize()
        .into_bytes()
        .into();
    Ok(())
}

/// Verifies the tag, then decrypts.
pub fn open_envelope(solution: &Solution, env: &Envelope) -> Result<Vec<u8>, CryptoError> {
    let key = envelope_key(solution);
    envelope_tag(&key, &env.nonce, &env.ciphertext)
        .verify_slice(&env.tag)
        .map_err(|_| CryptoError::AuthenticationFailed)?;
    let mut out = env.ciphertext.clone();
    apply_aes256_ctr(&key, env.nonce, &mut out);
    Ok(out)
}

/// Constant-time token comparison.
pub fn tokens_equal(a: &SecretToken, b: &SecretToken) -> bool {
    a.0.ct_eq(&b.0).into()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::puzzle::Location;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use std::net::{Ipv4Addr, Ipv6Addr};

    fn ctx(n: u64, ip: [u8; 4]) -> RequestContext {
        RequestContext::new(n, IpAddr::V4(Ipv4Addr::from(ip)))
    }

    #[test]
    fn context_serialization() {
        assert_eq!(
            ctx(0x0102, [10, 0, 0, 1]).to_bytes(),
            vec![0, 0, 0, 0, 0, 0, 1, 2, 10, 0, 0, 1]
        );
        let v6 = RequestContext::new(1, IpAddr::V6(Ipv6Addr::LOCALHOST));
        assert_eq!(v6.to_bytes().len(), 24);
        let mapped = RequestContext::new(1, IpAddr::V6(Ipv4Addr::new(1, 2, 3, 4).to_ipv6_mapped()));
        assert_eq!(mapped.to_bytes(), ctx(1, [1, 2, 3, 4]).to_bytes());
    }

    #[test]
    fn session_keys_deterministic_and_context_bound() {
        let m = MasterKey([9u8; 32]);
        let a = derive_session_key(&m, &ctx(1, [1, 1, 1, 1]));
        assert_eq!(a, derive_session_key(&m, &ctx(1, [1, 1, 1, 1])));
        assert_ne!(a, derive_session_key(&m, &ctx(2, [1, 1, 1, 1])));
        assert_ne!(a, derive_session_key(&m, &ctx(1, [1, 1, 1, 2])));
        assert_ne!(
            a,
            derive_session_key(&MasterKey([8u8; 32]), &ctx(1, [1, 1, 1, 1]))
        );
    }

    #[test]
    fn counters_deterministic() {
        let k = SessionKey([5u8; 16]);
        assert_eq!(derive_initial_counter(&k), derive_initial_counter(&k));
        assert_ne!(
            derive_initial_counter(&k),
            derive_initial_counter(&SessionKey([6u8; 16]))
        );
    }

    #[test]
    fn tokens() {
        let s = MasterKey([1u8; 32]);
        let t = derive_token(&s, &ctx(7, [127, 0, 0, 1]));
        assert_eq!(t, derive_token(&s, &ctx(7, [127, 0, 0, 1])));
        assert_ne!(t, derive_token(&s, &ctx(7, [127, 0, 0, 2])));
        assert_eq!(t.0.len(), 32);
        assert!(tokens_equal(&t, &t));
        let mut f = t;
        f.0[31] ^= 1;
        assert!(!tokens_equal(&t, &f));
    }

    #[test]
    fn piece_rejects_misaligned() {
        let k = SessionKey([0; 16]);
        assert!(encrypt_piece(&k, InitialCounter(0), 0, &[0u8; 15]).is_err());
        assert!(encrypt_piece(&k, InitialCounter(0), 0, &[]).is_err());
    }

    #[test]
    fn piece_involution() {
        let k = SessionKey([3; 16]);
        let piece = [0x5au8; 32];
        let c = encrypt_piece(&k, InitialCounter(77), 4, &piece).unwrap();
        assert_ne!(c, piece);
        assert_eq!(encrypt_piece(&k, InitialCounter(77), 4, &c).unwrap(), piece);
    }

    #[test]
    fn counter_wraps() {
        let k = SessionKey([3; 16]);
        let chunk = [0u8; 64];
        let ictr = InitialCounter(u128::MAX - 1);
        let whole = encrypt_chunk(&k, ictr, &chunk);
        for i in 0..4 {
            let p = encrypt_piece(&k, ictr, i, &chunk[i * 16..(i + 1) * 16]).unwrap();
            assert_eq!(p, &whole[i * 16..(i + 1) * 16]);
        }
    }

    #[test]
    fn session_cipher_matches_encrypt_piece() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for piece_size in [16usize, 32, 64] {
            let k = SessionKey::random(&mut rng).unwrap();
            let ictr = InitialCounter(u128::MAX - 3);
            let cipher = SessionCipher::new(&[k], &[ictr]);
            let mut piece = vec![0u8; piece_size];
            rng.fill_bytes(&mut piece);
            for index in [0usize, 1, 7, 1000] {
                let mut a = Sha256::new();
                cipher.absorb_encrypted(0, index, &piece, &mut a);
                let b = Sha256::digest(encrypt_piece(&k, ictr, index, &piece).unwrap());
                assert_eq!(a.finalize(), b);
            }
        }
    }

    #[test]
    fn mask_round_trip_and_framing() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let mut x = vec![0u8; 256];
        rng.fill_bytes(&mut x);
        let (payload, mask) = mask_chunk(&x, &mut rng).unwrap();
        assert_eq!(payload.len(), 256 + 32);
        assert_eq!(&payload[256..], &mask.0);
        assert_eq!(strip_mask(&payload, 256).unwrap(), x);
        assert!(strip_mask(&payload[..payload.len() - 1], 256).is_err());
        assert!(strip_mask(&payload, 255).is_err());
    }

    #[test]
    fn masks_are_fresh() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let x = vec![1u8; 64];
        let mut seen = std::collections::HashSet::new();
        for _ in 0..100 {
            let (payload, _) = mask_chunk(&x, &mut rng).unwrap();
            assert!(seen.insert(payload));
        }
    }

    #[test]
    fn corrupted_mask_garbles_output() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let mut x = vec![0u8; 128];
        rng.fill_bytes(&mut x);
        let (mut payload, _) = mask_chunk(&x, &mut rng).unwrap();
        *payload.last_mut().unwrap() ^= 0x80;
        assert_ne!(strip_mask(&payload, 128).unwrap(), x);
        let n = payload.len();
        payload[n - 32..].fill(0);
        assert_ne!(strip_mask(&payload, 128).unwrap(), x);
    }

    fn sol(b: u8) -> Solution {
        Solution {
            value: Location([b; 32]),
            start_index: 0,
        }
    }

    #[test]
    fn envelope_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let env = seal_envelope(&sol(1), b"session keys", &mut rng).unwrap();
        assert_eq!(open_envelope(&sol(1), &env).unwrap(), b"session keys");
        let bytes = env.to_bytes();
        assert_eq!(bytes.len(), 16 + 12 + 32);
        assert_eq!(Envelope::from_bytes(&bytes).unwrap(), env);
        assert!(Envelope::from_bytes(&bytes[..47]).is_err());
    }

    #[test]
    fn envelope_rejects_wrong_solution() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let env = seal_envelope(&sol(1), b"token", &mut rng).unwrap();
        assert_eq!(
            open_envelope(&sol(2), &env),
            Err(CryptoError::AuthenticationFailed)
        );
    }

    #[test]
    fn envelope_rejects_any_bit_flip() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let env = seal_envelope(&sol(3), &[0xaa; 20], &mut rng).unwrap();
        let bytes = env.to_bytes();
        for bit in 0..bytes.len() * 8 {
            let mut b = bytes.clone();
            b[bit / 8] ^= 1 << (bit % 8);
            let e = Envelope::from_bytes(&b).unwrap();
            assert_eq!(
                open_envelope(&sol(3), &e),
                Err(CryptoError::AuthenticationFailed)
            );
        }
    }

    #[test]
    fn key_hex_round_trip() {
        let k = MasterKey([0xab; 32]);
        assert_eq!(MasterKey::from_hex(&k.to_hex()).unwrap(), k);
        assert!(MasterKey::from_hex("abcd").is_err());
        assert!(MasterKey::from_hex("zz").is_err());
        assert_eq!(format!("{k:?}"), "MasterKey(..)");
    }
}
