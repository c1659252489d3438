//! `cachepuzzle` command-line entry point.

use std::io::Write;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use cachepuzzle::bench::{self, BenchConfig, BenchRole, Fixture, Scope};
use cachepuzzle::protocol::{
    CacheNode, Client, ContentStore, Handler, NodeConfig, Publisher, Registry, Server,
};
use cachepuzzle::sim::{self, CollusionScenario, Placement};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "cachepuzzle",
    version,
    about = "Cache accountability puzzles: nodes, simulator and benchmarks"
)]
#[command(arg_required_else_help = true)]
struct Cli {
    /// Log level filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the publisher node.
    Publisher {
        #[command(subcommand)]
        action: ServeAction,
    },
    /// Run a cache node.
    Cache {
        #[command(subcommand)]
        action: ServeAction,
    },
    /// Fetch content as a client.
    Client {
        #[command(subcommand)]
        action: ClientAction,
    },
    /// Adversary simulation.
    Sim {
        #[command(subcommand)]
        action: SimAction,
    },
    /// Generator or solver throughput benchmark.
    Bench(BenchArgs),
}

#[derive(Subcommand)]
enum ServeAction {
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Subcommand)]
enum ClientAction {
    Fetch {
        /// Publisher address, HOST:PORT.
        #[arg(long)]
        publisher: String,
        #[arg(long)]
        object: String,
        /// Chunk range `A..B` (end exclusive), `A..` or `A`.
        #[arg(long, default_value = "0..", value_parser = parse_range)]
        range: Range<u64>,
        /// Release content without waiting for the publisher to accept the token.
        #[arg(long)]
        no_gate: bool,
        /// Output file; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PlacementArg {
    Random,
    Contiguous,
}

#[derive(Args)]
struct SimCommon {
    #[arg(long, default_value_t = 65536)]
    pieces: usize,
    #[arg(long, default_value_t = 300)]
    runs: usize,
    /// Defaults to $CACHEPUZZLE_SEED or a fixed value.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "random")]
    placement: PlacementArg,
}

#[derive(Subcommand)]
enum SimAction {
    /// Estimate delta for one scenario.
    Delta {
        #[arg(long, default_value_t = 6)]
        n: usize,
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 5)]
        rounds: usize,
        #[command(flatten)]
        common: SimCommon,
    },
    /// Sweep a grid of scenarios and write CSV.
    Sweep {
        /// n = 6, m = 0..=6, rounds = 1..=10 (70 rows).
        #[arg(long)]
        table2: bool,
        #[arg(long, default_value_t = 6)]
        n: usize,
        /// Comma-separated m values (default 0..=n).
        #[arg(long, value_delimiter = ',')]
        m: Vec<usize>,
        /// Comma-separated round counts (default 1..=10).
        #[arg(long, value_delimiter = ',')]
        rounds: Vec<usize>,
        #[command(flatten)]
        common: SimCommon,
        /// Output CSV; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum RoleArg {
    Generator,
    Solver,
}

#[derive(Clone, Copy, ValueEnum)]
enum FixtureArg {
    Warm,
    Rotating,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    Challenge,
    Request,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum)]
    role: RoleArg,
    #[arg(long, value_delimiter = ',', default_value = "5")]
    rounds: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "4")]
    n: Vec<usize>,
    #[arg(long = "chunk-size", value_delimiter = ',', default_value = "1048576")]
    chunk_size: Vec<usize>,
    #[arg(long = "piece-size", value_delimiter = ',', default_value = "16")]
    piece_size: Vec<usize>,
    /// Timed calls per sweep point (default 10000 for the generator, 100 for the solver).
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long, default_value_t = 10)]
    warmup: usize,
    #[arg(long, value_enum, default_value = "warm")]
    fixture: FixtureArg,
    /// Generator timing scope: the hash chain alone, or all per-request publisher work.
    #[arg(long, value_enum, default_value = "challenge")]
    scope: ScopeArg,
    /// Simulation runs for the delta_m1 column; 0 leaves it empty.
    #[arg(long, default_value_t = 0)]
    delta_runs: usize,
    /// Defaults to $CACHEPUZZLE_SEED or a fixed value.
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_range(s: &str) -> Result<Range<u64>, String> {
    let num = |t: &str| {
        t.trim()
            .parse::<u64>()
            .map_err(|e| format!("bad chunk index {t:?}: {e}"))
    };
    let range = match s.split_once("..") {
        Some((a, "")) => num(a)?..u64::MAX,
        Some((a, b)) => num(a)?..num(b)?,
        None => {
            let a = num(s)?;
            a..a + 1
        }
    };
    if range.start >= range.end {
        return Err(format!("empty range {s:?}"));
    }
    Ok(range)
}

fn serve(server: Server) {
    println!("listening on {}", server.local_addr());
    let _ = std::io::stdout().flush();
    server.join();
}

fn publisher_serve(config: &Path) -> Result<()> {
    let cfg = NodeConfig::load(config)?;
    let registry_path = cfg
        .registry
        .as_ref()
        .ok_or_else(|| anyhow!("publisher config needs `registry`"))?;
    let registry = Registry::load(registry_path)?;
    let secret = cfg
        .secret
        .ok_or_else(|| anyhow!("publisher config needs `secret`"))?;
    let store = ContentStore::ingest_dir(&cfg.content_dir, cfg.params.chunk_size, cfg.params.n)?;
    log::info!(
        "publisher: {} objects, {} caches",
        store.len(),
        registry.len()
    );
    let publisher = Publisher::new(cfg.params, registry, store, secret);
    let handler: Handler = Arc::new(move |m, peer| publisher.handle(m, peer));
    serve(Server::bind(&cfg.listen, handler)?);
    Ok(())
}

fn cache_serve(config: &Path) -> Result<()> {
    let cfg = NodeConfig::load(config)?;
    let cache_id = cfg
        .cache_id
        .ok_or_else(|| anyhow!("cache config needs `cache_id`"))?;
    let master_key = match (cfg.master_key, &cfg.registry) {
        (Some(k), _) => k,
        (None, Some(path)) => {
            Registry::load(path)?
                .by_id(cache_id)
                .ok_or_else(|| anyhow!("cache {cache_id} not in registry {}", path.display()))?
                .master_key
        }
        (None, None) => bail!("cache config needs `master_key` or `registry`"),
    };
    let store = ContentStore::ingest_dir(&cfg.content_dir, cfg.params.chunk_size, cfg.params.n)?;
    let node =
        CacheNode::new(cache_id, master_key, store).with_source_ip_check(cfg.check_source_ip);
    let handler: Handler = Arc::new(move |m, peer| node.handle(m, peer));
    serve(Server::bind(&cfg.listen, handler)?);
    Ok(())
}

fn client_fetch(
    publisher: &str,
    object: &str,
    range: Range<u64>,
    no_gate: bool,
    out: Option<&Path>,
) -> Result<()> {
    let client = Client::new(publisher).with_gate(!no_gate);
    let outcome = client.fetch(object, range)?;
    match out {
        Some(path) => std::fs::write(path, &outcome.data)
            .with_context(|| format!("writing {}", path.display()))?,
        None => std::io::stdout().write_all(&outcome.data)?,
    }
    eprintln!(
        "fetched {} bytes in {} request(s), {} trial(s), token {}",
        outcome.data.len(),
        outcome.request_numbers.len(),
        outcome.total_trials,
        if outcome.all_accepted {
            "accepted"
        } else {
            "rejected"
        }
    );
    Ok(())
}

fn scenario(n: usize, m: usize, rounds: usize, c: &SimCommon) -> CollusionScenario {
    let placement = match c.placement {
        PlacementArg::Random => Placement::Random,
        PlacementArg::Contiguous => Placement::Contiguous,
    };
    let seed = c
        .seed
        .unwrap_or_else(|| bench::seed_from_env(bench::DEFAULT_SEED));
    CollusionScenario::new(n, m, rounds, c.pieces, c.runs, seed).with_placement(placement)
}

fn output(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(std::io::BufWriter::new(
            std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn sim_cmd(action: SimAction) -> Result<()> {
    match action {
        SimAction::Delta {
            n,
            m,
            rounds,
            common,
        } => {
            let r = sim::simulate_delta(&scenario(n, m, rounds, &common))?;
            println!(
                "n={n} m={m} rounds={rounds} pieces_total={} runs={}",
                common.pieces, r.runs
            );
            println!(
                "solver={} delta_mean={:.6} delta_std={:.6} expected_y={:.1}",
                r.solver_role, r.delta_mean, r.delta_std, r.expected_y
            );
        }
        SimAction::Sweep {
            table2,
            n,
            m,
            rounds,
            common,
            out,
        } => {
            let (n, m, rounds) = if table2 {
                (6, (0..=6).collect(), (1..=10).collect())
            } else {
                (
                    n,
                    if m.is_empty() { (0..=n).collect() } else { m },
                    if rounds.is_empty() {
                        (1..=10).collect()
                    } else {
                        rounds
                    },
                )
            };
            let grid: Vec<CollusionScenario> = rounds
                .iter()
                .flat_map(|&r| m.iter().map(move |&mm| (r, mm)))
                .map(|(r, mm)| scenario(n, mm, r, &common))
                .collect();
            let rows = sim::sweep(&grid)?;
            let mut w = output(out.as_deref())?;
            sim::write_sweep_csv(&rows, &mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn bench_cmd(a: BenchArgs) -> Result<()> {
    let role = match a.role {
        RoleArg::Generator => BenchRole::Generator,
        RoleArg::Solver => BenchRole::Solver,
    };
    let defaults = BenchConfig::new(role);
    let cfg = BenchConfig {
        role,
        rounds: a.rounds,
        n: a.n,
        chunk_sizes: a.chunk_size,
        piece_sizes: a.piece_size,
        iterations: a.iterations.unwrap_or(defaults.iterations),
        warmup: a.warmup,
        fixture: match a.fixture {
            FixtureArg::Warm => Fixture::Warm,
            FixtureArg::Rotating => Fixture::Rotating,
        },
        scope: match a.scope {
            ScopeArg::Challenge => Scope::Challenge,
            ScopeArg::Request => Scope::Request,
        },
        seed: a.seed.unwrap_or(defaults.seed),
        delta_runs: a.delta_runs,
    };
    cfg.validate()?;
    let rows = bench::run(&cfg)?;
    let mut w = output(a.out.as_deref())?;
    bench::write_csv(&mut w, &rows)?;
    w.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).init();
    let result = match cli.command {
        Command::Publisher {
            action: ServeAction::Serve { config },
        } => publisher_serve(&config),
        Command::Cache {
            action: ServeAction::Serve { config },
        } => cache_serve(&config),
        Command::Client {
            action:
                ClientAction::Fetch {
                    publisher,
                    object,
                    range,
                    no_gate,
                    out,
                },
        } => client_fetch(&publisher, &object, range, no_gate, out.as_deref()),
        Command::Sim { action } => sim_cmd(action),
        Command::Bench(args) => bench_cmd(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
