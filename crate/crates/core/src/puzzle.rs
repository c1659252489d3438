//! Puzzle mathematics: challenge generation, trial-based solving and
//! verification.
//!
//! A puzzle is a SHA-256 hash chain over encrypted pieces. Starting from a
//! piece of the first chunk, each step hashes the previous location with the
//! current encrypted piece and maps the result to a piece index in the next
//! chunk. Chunks are visited round-robin for `rounds` rounds. The challenge is
//! the hash of the final location; the solution is the final location itself.
//!
//! The publisher knows the starting piece and encrypts only the pieces it
//! touches. A client holds the already-encrypted chunks but not the start, so
//! it runs one trial chain per candidate start until the challenge matches.

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::crypto::{InitialCounter, SessionCipher, SessionKey};
use crate::params::{PuzzleParams, HASH_SIZE};

pub type PieceIndex = usize;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PuzzleError {
    #[error("invalid puzzle parameters: {0}")]
    InvalidParams(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("no starting piece reproduces the challenge")]
    NotFound,
}

/// One hash-chain state.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Location(pub [u8; HASH_SIZE]);

impl Location {
    /// The chain origin: 32 zero bytes.
    pub const ZERO: Location = Location([0u8; HASH_SIZE]);

    pub fn as_bytes(&self) -> &[u8; HASH_SIZE] {
        &self.0
    }
}

impl std::fmt::Debug for Location {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Location({})", hex::encode(self.0))
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Challenge(pub [u8; HASH_SIZE]);

impl Challenge {
    /// Challenge for a given final location.
    pub fn for_location(loc: &Location) -> Self {
        Challenge(Sha256::digest(loc.0).into())
    }
}

impl std::fmt::Debug for Challenge {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Challenge({})", hex::encode(self.0))
    }
}

/// Final location of the winning chain and the piece of chunk 1 it started at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Solution {
    pub value: Location,
    pub start_index: PieceIndex,
}

impl Solution {
    /// Number of trial chains a solver running ascending candidates needed.
    pub fn trials(&self) -> usize {
        self.start_index + 1
    }
}

/// Source of encrypted pieces for the generator.
///
/// Implementations feed the ciphertext of `piece` (piece `index` of chunk
/// `chunk`, zero-based) into `hasher`, so no buffer is needed per step.
pub trait PieceEncryptor {
    fn absorb_encrypted(&self, chunk: usize, index: PieceIndex, piece: &[u8], hasher: &mut Sha256);
}

impl<T: PieceEncryptor + ?Sized> PieceEncryptor for &T {
    fn absorb_encrypted(&self, chunk: usize, index: PieceIndex, piece: &[u8], hasher: &mut Sha256) {
        (**self).absorb_encrypted(chunk, index, piece, hasher)
    }
}

/// Reads the location as a big-endian integer and reduces it mod `pieces_total`.
pub fn map_location_to_index(loc: &Location, pieces_total: usize) -> PieceIndex {
    debug_assert!(pieces_total >= 1);
    let modulus = pieces_total as u128;
    let rem = loc
        .0
        .iter()
        .fold(0u128, |acc, &b| ((acc << 8) | b as u128) % modulus);
    rem as PieceIndex
}

/// `SHA256(prev || encrypted_piece)`.
pub fn next_location(
    prev: &Location,
    encrypted_piece: &[u8],
    params: &PuzzleParams,
) -> Result<Location, PuzzleError> {
    if encrypted_piece.len() != params.piece_size {
        return Err(PuzzleError::InvalidInput(format!(
            "piece has {} bytes, expected {}",
            encrypted_piece.len(),
            params.piece_size
        )));
    }
    Ok(chain_step(prev, encrypted_piece))
}

#[inline]
fn chain_step(prev: &Location, piece: &[u8]) -> Location {
    let mut hasher = Sha256::new();
    hasher.update(prev.0);
    hasher.update(piece);
    Location(hasher.finalize().into())
}

#[inline]
fn piece_of(chunk: &[u8], index: PieceIndex, piece_size: usize) -> &[u8] {
    &chunk[index * piece_size..(index + 1) * piece_size]
}

fn check_chunks<C: AsRef<[u8]>>(chunks: &[C], params: &PuzzleParams) -> Result<(), PuzzleError> {
    params.validate()?;
    if chunks.len() != params.n {
        return Err(PuzzleError::InvalidInput(format!(
            "expected {} chunks, got {}",
            params.n,
            chunks.len()
        )));
    }
    if let Some((i, c)) = chunks
        .iter()
        .enumerate()
        .find(|(_, c)| c.as_ref().len() != params.chunk_size)
    {
        return Err(PuzzleError::InvalidInput(format!(
            "chunk {i} has {} bytes, expected {}",
            c.as_ref().len(),
            params.chunk_size
        )));
    }
    Ok(())
}

/// Runs the publisher-side chain with an injected encryptor.
///
/// Exactly `n * rounds` pieces are encrypted, visiting chunks
/// `0, 1, .., n-1, 0, ..` starting at `start_index` in chunk 0.
pub fn generate_challenge_with<C, E>(
    chunks: &[C],
    encryptor: &E,
    params: &PuzzleParams,
    start_index: PieceIndex,
) -> Result<(Challenge, Solution), PuzzleError>
where
    C: AsRef<[u8]>,
    E: PieceEncryptor + ?Sized,
{
    check_chunks(chunks, params)?;
    let pieces_total = params.pieces_total();
    if start_index >= pieces_total {
        return Err(PuzzleError::InvalidInput(format!(
            "start index {start_index} out of range (pieces_total = {pieces_total})"
        )));
    }

    let mut loc = Location::ZERO;
    let mut index = start_index;
    let mut j = 0;
    for _ in 0..params.chain_len() {
        let piece = piece_of(chunks[j].as_ref(), index, params.piece_size);
        let mut hasher = Sha256::new();
        hasher.update(loc.0);
        encryptor.absorb_encrypted(j, index, piece, &mut hasher);
        loc = Location(hasher.finalize().into());
        index = map_location_to_index(&loc, pieces_total);
        j = (j + 1) % params.n;
    }

    Ok((
        Challenge::for_location(&loc),
        Solution {
            value: loc,
            start_index,
        },
    ))
}

/// Generates a challenge over raw chunks using the per-cache session keys and
/// initial counters.
pub fn generate_challenge<C: AsRef<[u8]>>(
    chunks: &[C],
    keys: &[SessionKey],
    counters: &[InitialCounter],
    params: &PuzzleParams,
    start_index: PieceIndex,
) -> Result<(Challenge, Solution), PuzzleError> {
    if keys.len() != params.n || counters.len() != params.n {
        return Err(PuzzleError::InvalidInput(format!(
            "expected {} keys and counters, got {} and {}",
            params.n,
            keys.len(),
            counters.len()
        )));
    }
    let cipher = SessionCipher::new(keys, counters);
    generate_challenge_with(chunks, &cipher, params, start_index)
}

/// Final location of the trial chain starting at `start` over encrypted chunks.
pub fn run_trial<C: AsRef<[u8]>>(
    encrypted_chunks: &[C],
    params: &PuzzleParams,
    start: PieceIndex,
) -> Location {
    let pieces_total = params.pieces_total();
    let mut loc = Location::ZERO;
    let mut index = start;
    let mut j = 0;
    for _ in 0..params.chain_len() {
        loc = chain_step(
            &loc,
            piece_of(encrypted_chunks[j].as_ref(), index, params.piece_size),
        );
        index = map_location_to_index(&loc, pieces_total);
        j = (j + 1) % params.n;
    }
    loc
}

/// Tries candidate starts `0, 1, 2, ..` over single-layer encrypted chunks
/// until one chain hashes to `challenge`.
pub fn solve_challenge<C: AsRef<[u8]>>(
    encrypted_chunks: &[C],
    challenge: &Challenge,
    params: &PuzzleParams,
) -> Result<Solution, PuzzleError> {
    check_chunks(encrypted_chunks, params)?;
    (0..params.pieces_total())
        .map(|start| Solution {
            value: run_trial(encrypted_chunks, params, start),
            start_index: start,
        })
        .find(|candidate| check_solution(challenge, candidate))
        .ok_or(PuzzleError::NotFound)
}

pub fn check_solution(challenge: &Challenge, candidate: &Solution) -> bool {
    Challenge::for_location(&candidate.value) == *challenge
}
