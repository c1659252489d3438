//! Cache accountability puzzles for peer-assisted content delivery.
//!
//! A publisher hands each client a puzzle over the encrypted chunks it is
//! about to download from `n` caches. Solving the puzzle requires the chunks,
//! and the solution unlocks both the content keys and a secret token the
//! client reports back as proof of retrieval.
//!
//! - [`puzzle`]: challenge generation, solving and verification.
//! - [`crypto`]: key derivation, AES-CTR layers, tokens and envelopes.
//! - [`protocol`]: publisher, cache and client nodes and the wire codec.
//! - [`sim`]: Monte-Carlo estimate of the bandwidth colluders must still spend.
//! - [`mod@bench`]: single-core generator/solver throughput harness.

pub mod bench;
pub mod crypto;
pub mod params;
pub mod protocol;
pub mod puzzle;
pub mod sim;

pub use params::PuzzleParams;
