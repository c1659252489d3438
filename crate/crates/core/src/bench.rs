//! Single-threaded generator and solver throughput harness with CSV output.
//!
//! Each sweep point is timed with a monotonic clock over batches of up to
//! [`BATCH`] calls; rows report the mean and standard deviation of the
//! per-call time across batches. Warmup calls are excluded.
//!
//! The generator has two scopes. `challenge` times the hash chain alone.
//! `request` times everything the publisher computes per request: session
//! key and counter derivation for all `n` caches, the chain, the token and
//! both envelopes.
//!
//! The fixture is seeded pseudorandom content. A `warm` fixture reuses one
//! set of chunks for every call; a `rotating` fixture cycles through enough
//! distinct sets to exceed typical last-level cache sizes.

use std::fmt;
use std::hint::black_box;
use std::io::Write;
use std::net::{IpAddr, Ipv4Addr};
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::crypto::{
    derive_initial_counter, derive_session_key, derive_token, encrypt_chunk, seal_envelope_into,
    Envelope, InitialCounter, MasterKey, RequestContext, SessionCipher, SessionKey,
};
use crate::params::PuzzleParams;
use crate::puzzle::{generate_challenge_with, solve_challenge, Challenge, PuzzleError};
use crate::sim::{simulate_delta, CollusionScenario};

/// Environment variable overriding the default RNG seed.
pub const SEED_ENV: &str = "CACHEPUZZLE_SEED";
pub const DEFAULT_SEED: u64 = 0x5eed;
pub const BATCH: usize = 100;

/// Bytes of distinct content a rotating fixture cycles through.
const ROTATING_BYTES: usize = 64 << 20;
const MAX_ROTATING_SETS: usize = 64;
/// Pre-derived key sets the generator cycles through.
const KEY_SETS: usize = 64;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid benchmark configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Puzzle(#[from] PuzzleError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Seed from [`SEED_ENV`] (decimal or `0x` hex) if set and parseable, else `default`.
pub fn seed_from_env(default: u64) -> u64 {
    std::env::var(SEED_ENV)
        .ok()
        .and_then(|v| {
            let v = v.trim();
            match v.strip_prefix("0x") {
                Some(h) => u64::from_str_radix(h, 16).ok(),
                None => v.parse().ok(),
            }
        })
        .unwrap_or(default)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchRole {
    Generator,
    Solver,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fixture {
    Warm,
    Rotating,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Challenge,
    Request,
}

macro_rules! text_enum {
    ($ty:ident { $($variant:ident => $s:literal),* }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$variant => $s),* })
            }
        }

        impl FromStr for $ty {
            type Err = BenchError;
            fn from_str(s: &str) -> Result<Self, BenchError> {
                match s {
                    $($s => Ok($ty::$variant),)*
                    other => Err(BenchError::InvalidConfig(format!(
                        concat!("unknown ", stringify!($ty), " {:?}"), other))),
                }
            }
        }
    };
}

text_enum!(BenchRole { Generator => "generator", Solver => "solver" });
text_enum!(Fixture { Warm => "warm", Rotating => "rotating" });
text_enum!(Scope { Challenge => "challenge", Request => "request" });

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchConfig {
    pub role: BenchRole,
    pub rounds: Vec<usize>,
    pub n: Vec<usize>,
    pub chunk_sizes: Vec<usize>,
    pub piece_sizes: Vec<usize>,
    pub iterations: usize,
    pub warmup: usize,
    pub fixture: Fixture,
    /// Generator only.
    pub scope: Scope,
    pub seed: u64,
    /// Simulation runs for the `delta_m1` column; 0 leaves it empty.
    pub delta_runs: usize,
}

impl BenchConfig {
    pub fn new(role: BenchRole) -> Self {
        Self {
            role,
            rounds: vec![5],
            n: vec![4],
            chunk_sizes: vec![1 << 20],
            piece_sizes: vec![16],
            iterations: match role {
                BenchRole::Generator => 10_000,
                BenchRole::Solver => 100,
            },
            warmup: 10,
            fixture: Fixture::Warm,
            scope: Scope::Challenge,
            seed: seed_from_env(DEFAULT_SEED),
            delta_runs: 0,
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.iterations == 0 {
            return Err(BenchError::InvalidConfig(
                "iterations must be at least 1".into(),
            ));
        }
        for (name, list) in [
            ("rounds", &self.rounds),
            ("n", &self.n),
            ("chunk_size", &self.chunk_sizes),
            ("piece_size", &self.piece_sizes),
        ] {
            if list.is_empty() {
                return Err(BenchError::InvalidConfig(format!(
                    "{name} sweep list is empty"
                )));
            }
        }
        for p in self.points() {
            p.validate()?;
        }
        Ok(())
    }

    /// Cartesian product of the sweep lists, in (n, rounds, chunk, piece)
    /// order.
    pub fn points(&self) -> Vec<PuzzleParams> {
        let mut out = Vec::new();
        for &n in &self.n {
            for &rounds in &self.rounds {
                for &chunk_size in &self.chunk_sizes {
                    for &piece_size in &self.piece_sizes {
                        out.push(PuzzleParams {
                            n,
                            rounds,
                            chunk_size,
                            piece_size,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub role: BenchRole,
    pub fixture: Fixture,
    /// `None` for the solver.
    pub scope: Option<Scope>,
    pub params: PuzzleParams,
    pub iterations: usize,
    pub puzzles_per_second: f64,
    pub seconds_mean: f64,
    pub seconds_std: f64,
    pub bitrate_bps: f64,
    /// Mean solver trials; `None` for the generator.
    pub mean_trials: Option<f64>,
    pub delta_m1: Option<f64>,
}

pub const BENCH_CSV_HEADER: &str =
    "role,fixture,scope,n,rounds,chunk_size,piece_size,pieces_total,iterations,\
puzzles_per_second,seconds_per_puzzle_mean,seconds_per_puzzle_std,bitrate_bps,mean_trials,delta_m1";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl BenchRow {
    pub fn to_csv(&self) -> String {
        let p = &self.params;
        format!(
            "{},{},{},{},{},{},{},{},{},{:.3},{:.9e},{:.9e},{:.1},{},{}",
            self.role,
            self.fixture,
            self.scope.map(|s| s.to_string()).unwrap_or_default(),
            p.n,
            p.rounds,
            p.chunk_size,
            p.piece_size,
            p.pieces_total(),
            self.iterations,
            self.puzzles_per_second,
            self.seconds_mean,
            self.seconds_std,
            self.bitrate_bps,
            opt(self.mean_trials),
            opt(self.delta_m1)
        )
    }
}

pub fn bitrate(puzzles_per_second: f64, params: &PuzzleParams) -> f64 {
    puzzles_per_second * params.n as f64 * params.chunk_size as f64 * 8.0
}

/// Mean and sample standard deviation.
fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn batch_sizes(iterations: usize) -> impl Iterator<Item = usize> {
    (0..iterations.div_ceil(BATCH)).map(move |b| BATCH.min(iterations - b * BATCH))
}

fn random_chunks(params: &PuzzleParams, rng: &mut impl RngCore) -> Vec<Vec<u8>> {
    (0..params.n)
        .map(|_| {
            let mut c = vec![0u8; params.chunk_size];
            rng.fill_bytes(&mut c);
            c
        })
        .collect()
}

fn fixture_sets(params: &PuzzleParams, fixture: Fixture) -> usize {
    match fixture {
        Fixture::Warm => 1,
        Fixture::Rotating => ROTATING_BYTES
            .div_ceil(params.n * params.chunk_size)
            .clamp(2, MAX_ROTATING_SETS),
    }
}

fn random_keys(n: usize, rng: &mut impl RngCore) -> (Vec<SessionKey>, Vec<InitialCounter>) {
    let keys: Vec<SessionKey> = (0..n)
        .map(|_| {
            let mut k = [0u8; 16];
            rng.fill_bytes(&mut k);
            SessionKey(k)
        })
        .collect();
    let counters = keys.iter().map(derive_initial_counter).collect();
    (keys, counters)
}

/// Pre-built generator state. [`GeneratorBench::run`] performs no heap
/// allocation.
pub struct GeneratorBench {
    params: PuzzleParams,
    scope: Scope,
    fixtures: Vec<Vec<Vec<u8>>>,
    digests: Vec<Vec<u8>>,
    key_sets: Vec<(Vec<SessionKey>, Vec<InitialCounter>)>,
    starts: Vec<usize>,
    cipher: SessionCipher,
    cursor: usize,
    request: RequestState,
}

/// Buffers for the `request` scope.
struct RequestState {
    masters: Vec<MasterKey>,
    secret: MasterKey,
    keys: Vec<SessionKey>,
    counters: Vec<InitialCounter>,
    key_material: Vec<u8>,
    key_envelope: Envelope,
    token_envelope: Envelope,
    rng: ChaCha8Rng,
}

impl GeneratorBench {
    pub fn new(
        params: PuzzleParams,
        fixture: Fixture,
        scope: Scope,
        seed: u64,
    ) -> Result<Self, BenchError> {
        params.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fixtures: Vec<Vec<Vec<u8>>> = (0..fixture_sets(&params, fixture))
            .map(|_| random_chunks(&params, &mut rng))
            .collect();
        let digests = fixtures
            .iter()
            .map(|set| {
                set.iter()
                    .flat_map(|c| <[u8; 32]>::from(Sha256::digest(c)))
                    .collect()
            })
            .collect();
        let key_sets: Vec<_> = (0..KEY_SETS)
            .map(|_| random_keys(params.n, &mut rng))
            .collect();
        let starts = (0..1024)
            .map(|_| rng.gen_range(0..params.pieces_total()))
            .collect();
        let cipher = SessionCipher::new(&key_sets[0].0, &key_sets[0].1);
        let mut master = || {
            let mut k = [0u8; 32];
            rng.fill_bytes(&mut k);
            MasterKey(k)
        };
        let masters = (0..params.n).map(|_| master()).collect();
        let secret = master();
        let request = RequestState {
            masters,
            secret,
            keys: key_sets[0].0.clone(),
            counters: key_sets[0].1.clone(),
            key_material: vec![0; 48 * params.n],
            key_envelope: Envelope {
                nonce: [0; 16],
                ciphertext: Vec::with_capacity(48 * params.n),
                tag: [0; 32],
            },
            token_envelope: Envelope {
                nonce: [0; 16],
                ciphertext: Vec::with_capacity(32),
                tag: [0; 32],
            },
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15),
        };
        Ok(Self {
            params,
            scope,
            fixtures,
            digests,
            key_sets,
            starts,
            cipher,
            cursor: 0,
            request,
        })
    }

    /// Generates `iterations` puzzles, each with the next key set (or
    /// request number), fixture and start index.
    pub fn run(&mut self, iterations: usize) -> Result<Challenge, BenchError> {
        let mut last = Challenge([0; 32]);
        for _ in 0..iterations {
            let i = self.cursor;
            self.cursor = self.cursor.wrapping_add(1);
            let chunks = &self.fixtures[i % self.fixtures.len()];
            let start = self.starts[i % self.starts.len()];
            last = black_box(match self.scope {
                Scope::Challenge => {
                    let (keys, counters) = &self.key_sets[i % self.key_sets.len()];
                    self.cipher.rekey(keys, counters);
                    generate_challenge_with(black_box(chunks), &self.cipher, &self.params, start)?.0
                }
                Scope::Request => {
                    let r = &mut self.request;
                    let ctx =
                        RequestContext::new(i as u64, IpAddr::V4(Ipv4Addr::new(192, 0, 2, 7)));
                    for (j, master) in r.masters.iter().enumerate() {
                        let sk = derive_session_key(master, &ctx);
                        r.counters[j] = derive_initial_counter(&sk);
                        r.keys[j] = sk;
                        r.key_material[16 * j..16 * (j + 1)].copy_from_slice(&sk.0);
                    }
                    let n = self.params.n;
                    r.key_material[16 * n..].copy_from_slice(&self.digests[i % self.digests.len()]);
                    self.cipher.rekey(&r.keys, &r.counters);
                    let (challenge, solution) = generate_challenge_with(
                        black_box(chunks),
                        &self.cipher,
                        &self.params,
                        start,
                    )?;
                    let token = derive_token(&r.secret, &ctx);
                    seal_envelope_into(&solution, &r.key_material, &mut r.rng, &mut r.key_envelope)
                        .map_err(|e| BenchError::InvalidConfig(e.to_string()))?;
                    seal_envelope_into(&solution, &token.0, &mut r.rng, &mut r.token_envelope)
                        .map_err(|e| BenchError::InvalidConfig(e.to_string()))?;
                    black_box((&r.key_envelope, &r.token_envelope));
                    challenge
                }
            });
        }
        Ok(last)
    }
}

struct SolverFixture {
    raw: Vec<Vec<u8>>,
    encrypted: Vec<Vec<u8>>,
    cipher: SessionCipher,
}

/// Pre-built solver state: one challenge per call with a uniformly random
/// true start; only the solve itself is timed.
pub struct SolverBench {
    params: PuzzleParams,
    fixtures: Vec<SolverFixture>,
    rng: ChaCha8Rng,
    cursor: usize,
}

impl SolverBench {
    pub fn new(params: PuzzleParams, fixture: Fixture, seed: u64) -> Result<Self, BenchError> {
        params.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fixtures = (0..fixture_sets(&params, fixture))
            .map(|_| {
                let raw = random_chunks(&params, &mut rng);
                let (keys, counters) = random_keys(params.n, &mut rng);
                let encrypted = raw
                    .iter()
                    .zip(keys.iter().zip(&counters))
                    .map(|(c, (k, ctr))| encrypt_chunk(k, *ctr, c))
                    .collect();
                SolverFixture {
                    raw,
                    encrypted,
                    cipher: SessionCipher::new(&keys, &counters),
                }
            })
            .collect();
        Ok(Self {
            params,
            fixtures,
            rng,
            cursor: 0,
        })
    }

    /// One solve; returns its duration and trial count.
    pub fn solve_once(&mut self) -> Result<(Duration, usize), BenchError> {
        let f = &self.fixtures[self.cursor % self.fixtures.len()];
        self.cursor = self.cursor.wrapping_add(1);
        let start = self.rng.gen_range(0..self.params.pieces_total());
        let (challenge, expected) =
            generate_challenge_with(&f.raw, &f.cipher, &self.params, start)?;
        let t0 = Instant::now();
        let solution = solve_challenge(black_box(&f.encrypted), &challenge, &self.params)?;
        let elapsed = t0.elapsed();
        if solution != expected {
            return Err(BenchError::InvalidConfig(format!(
                "solver found start {} but the challenge used {start}",
                solution.start_index
            )));
        }
        Ok((elapsed, solution.trials()))
    }
}

fn delta_m1(cfg: &BenchConfig, params: &PuzzleParams) -> Result<Option<f64>, BenchError> {
    if cfg.delta_runs == 0 {
        return Ok(None);
    }
    let m = 1.min(params.n);
    let scenario = CollusionScenario::new(
        params.n,
        m,
        params.rounds,
        params.pieces_total(),
        cfg.delta_runs,
        cfg.seed,
    );
    simulate_delta(&scenario)
        .map(|r| Some(r.delta_mean))
        .map_err(|e| BenchError::InvalidConfig(e.to_string()))
}

pub fn bench_generator_point(
    cfg: &BenchConfig,
    params: PuzzleParams,
) -> Result<BenchRow, BenchError> {
    let mut bench = GeneratorBench::new(params, cfg.fixture, cfg.scope, cfg.seed)?;
    bench.run(cfg.warmup)?;
    let mut per_call = Vec::new();
    for size in batch_sizes(cfg.iterations) {
        let t0 = Instant::now();
        bench.run(size)?;
        per_call.push(t0.elapsed().as_secs_f64() / size as f64);
    }
    let (mean, std) = mean_std(&per_call);
    let pps = 1.0 / mean;
    Ok(BenchRow {
        role: BenchRole::Generator,
        fixture: cfg.fixture,
        scope: Some(cfg.scope),
        params,
        iterations: cfg.iterations,
        puzzles_per_second: pps,
        seconds_mean: mean,
        seconds_std: std,
        bitrate_bps: bitrate(pps, &params),
        mean_trials: None,
        delta_m1: delta_m1(cfg, &params)?,
    })
}

pub fn bench_solver_point(cfg: &BenchConfig, params: PuzzleParams) -> Result<BenchRow, BenchError> {
    let mut bench = SolverBench::new(params, cfg.fixture, cfg.seed)?;
    for _ in 0..cfg.warmup {
        bench.solve_once()?;
    }
    let mut per_call = Vec::new();
    let mut trials = 0usize;
    for size in batch_sizes(cfg.iterations) {
        let mut batch = Duration::ZERO;
        for _ in 0..size {
            let (d, t) = bench.solve_once()?;
            batch += d;
            trials += t;
        }
        per_call.push(batch.as_secs_f64() / size as f64);
    }
    let (mean, std) = mean_std(&per_call);
    let pps = 1.0 / mean;
    Ok(BenchRow {
        role: BenchRole::Solver,
        fixture: cfg.fixture,
        scope: None,
        params,
        iterations: cfg.iterations,
        puzzles_per_second: pps,
        seconds_mean: mean,
        seconds_std: std,
        bitrate_bps: bitrate(pps, &params),
        mean_trials: Some(trials as f64 / cfg.iterations as f64),
        delta_m1: delta_m1(cfg, &params)?,
    })
}

pub fn bench_generator(cfg: &BenchConfig) -> Result<Vec<BenchRow>, BenchError> {
    cfg.validate()?;
    cfg.points()
        .into_iter()
        .map(|p| bench_generator_point(cfg, p))
        .collect()
}

pub fn bench_solver(cfg: &BenchConfig) -> Result<Vec<BenchRow>, BenchError> {
    cfg.validate()?;
    cfg.points()
        .into_iter()
        .map(|p| bench_solver_point(cfg, p))
        .collect()
}

pub fn run(cfg: &BenchConfig) -> Result<Vec<BenchRow>, BenchError> {
    match cfg.role {
        BenchRole::Generator => bench_generator(cfg),
        BenchRole::Solver => bench_solver(cfg),
    }
}

pub fn write_csv<W: Write>(mut w: W, rows: &[BenchRow]) -> std::io::Result<()> {
    writeln!(w, "{BENCH_CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.to_csv())?;
    }
    Ok(())
}

pub fn write_csv_file(path: &Path, rows: &[BenchRow]) -> std::io::Result<()> {
    write_csv(std::io::BufWriter::new(std::fs::File::create(path)?), rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(role: BenchRole) -> BenchConfig {
        BenchConfig {
            rounds: vec![1, 2],
            n: vec![2],
            chunk_sizes: vec![1024],
            piece_sizes: vec![16],
            iterations: 150,
            warmup: 2,
            seed: 1,
            ..BenchConfig::new(role)
        }
    }

    #[test]
    fn batches_cover_iterations() {
        assert_eq!(batch_sizes(250).collect::<Vec<_>>(), vec![100, 100, 50]);
        assert_eq!(batch_sizes(7).collect::<Vec<_>>(), vec![7]);
    }

    #[test]
    fn bitrate_is_exact_product() {
        let rows = bench_generator(&tiny(BenchRole::Generator)).unwrap();
        assert_eq!(rows.len(), 2);
        for r in &rows {
            assert_eq!(r.bitrate_bps, r.puzzles_per_second * 2.0 * 1024.0 * 8.0);
            assert!(r.puzzles_per_second > 0.0 && r.seconds_std >= 0.0);
            assert!(r.mean_trials.is_none());
        }
    }

    #[test]
    fn solver_rows_report_trials() {
        let mut cfg = tiny(BenchRole::Solver);
        cfg.rounds = vec![1];
        cfg.delta_runs = 5;
        let rows = bench_solver(&cfg).unwrap();
        let t = rows[0].mean_trials.unwrap();
        assert!((1.0..=64.0).contains(&t));
        assert!((0.0..=1.0).contains(&rows[0].delta_m1.unwrap()));
    }

    #[test]
    fn csv_has_header_and_one_line_per_row() {
        let rows = bench_generator(&tiny(BenchRole::Generator)).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], BENCH_CSV_HEADER);
        assert_eq!(lines.len(), 3);
        let cols = BENCH_CSV_HEADER.split(',').count();
        assert!(lines.iter().all(|l| l.split(',').count() == cols));
        assert!(lines[1].starts_with("generator,warm,challenge,2,1,1024,16,64,150,"));
    }

    #[test]
    fn config_validation() {
        let mut cfg = tiny(BenchRole::Generator);
        cfg.iterations = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny(BenchRole::Generator);
        cfg.n.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = tiny(BenchRole::Generator);
        cfg.piece_sizes = vec![24];
        assert!(cfg.validate().is_err());
        assert_eq!("rotating".parse::<Fixture>().unwrap(), Fixture::Rotating);
        assert!("cold".parse::<Fixture>().is_err());
        assert_eq!(BenchRole::Solver.to_string(), "solver");
    }

    #[test]
    fn rotating_fixture_cycles_sets() {
        let p = PuzzleParams::new(2, 1, 1 << 20, 16).unwrap();
        assert_eq!(fixture_sets(&p, Fixture::Warm), 1);
        assert_eq!(fixture_sets(&p, Fixture::Rotating), 32);
    }
}
