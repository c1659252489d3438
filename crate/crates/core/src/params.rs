//! Puzzle tunables shared by the publisher, caches, clients and the simulator.

use crate::puzzle::PuzzleError;

/// Output size of the chaining hash (SHA-256), in bytes.
pub const HASH_SIZE: usize = 32;

/// AES block size; piece boundaries must fall on block boundaries.
pub const BLOCK_SIZE: usize = 16;

/// All tunables of a cache accountability puzzle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PuzzleParams {
    /// Number of caches (and chunks) per request.
    pub n: usize,
    /// Puzzle rounds; every round visits each chunk once.
    pub rounds: usize,
    pub chunk_size: usize,
    pub piece_size: usize,
}

impl PuzzleParams {
    pub fn new(
        n: usize,
        rounds: usize,
        chunk_size: usize,
        piece_size: usize,
    ) -> Result<Self, PuzzleError> {
        let params = Self {
            n,
            rounds,
            chunk_size,
            piece_size,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), PuzzleError> {
        if self.n == 0 {
            return Err(PuzzleError::InvalidParams("n must be at least 1".into()));
        }
        if self.rounds == 0 {
            return Err(PuzzleError::InvalidParams(
                "puzzle rounds must be at least 1".into(),
            ));
        }
        if self.piece_size == 0 || !self.piece_size.is_multiple_of(BLOCK_SIZE) {
            return Err(PuzzleError::InvalidParams(format!(
                "piece size {} is not a positive multiple of {BLOCK_SIZE}",
                self.piece_size
            )));
        }
        if self.chunk_size == 0 || !self.chunk_size.is_multiple_of(self.piece_size) {
            return Err(PuzzleError::InvalidParams(format!(
                "chunk size {} is not a positive multiple of piece size {}",
                self.chunk_size, self.piece_size
            )));
        }
        Ok(())
    }

    pub fn pieces_total(&self) -> usize {
        self.chunk_size / self.piece_size
    }

    /// Chain length of one puzzle: `n * rounds` pieces.
    pub fn chain_len(&self) -> usize {
        self.n * self.rounds
    }

    pub fn h_size(&self) -> usize {
        HASH_SIZE
    }

    /// Checks `piece_size <= h_size / m`, the bound under which shipping a
    /// piece is never more expensive than shipping a chain hash.
    ///
    /// Returns a warning message when the bound is violated for `m` colluding
    /// caches. Violations are not fatal: the standard 16-byte configuration
    /// already exceeds it for `m > 2`.
    pub fn hash_exchange_warning(&self, m: usize) -> Option<String> {
        if m == 0 || self.piece_size * m <= HASH_SIZE {
            return None;
        }
        Some(format!(
            "piece size {} exceeds h_size/m = {}/{m}; hash exchange may undercut piece transfer",
            self.piece_size, HASH_SIZE
        ))
    }
}
