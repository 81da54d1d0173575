//! `wpir`: tradeoff curves, scheme tables, certificate checks, simulation
//! and a TCP deployment of the retrieval protocol.

mod presets;
mod verify;

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use wpir::net::{client_retrieve, Server};
use wpir::optimizer::{cost_grid, tradeoff_curve};
use wpir::table::render_table;
use wpir::{empirical_leakage, run_all, MessageStore, Metric, SystemParams, TradeoffPoint};

use presets::{load_allocation, parse_gamma};
use verify::Suite;

#[derive(Parser)]
#[command(
    name = "wpir",
    version,
    about = "Weakly-private information retrieval with escape patterns"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Maxl,
    Mi,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Maxl => Metric::MaxL,
            MetricArg::Mi => Metric::MI,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Optimal leakage over a grid of download costs.
    Tradeoff {
        #[arg(long, value_enum)]
        metric: MetricArg,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        k: usize,
        /// Trust weights `g1;g2;...`, sorted ascending. Defaults to `1/N` each.
        #[arg(long)]
        gamma: Option<String>,
        #[arg(long, default_value_t = 21)]
        points: usize,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Queries and symbolic answers for every key.
    Table {
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        k: usize,
    },
    /// Run certificate suites; exits with 2 when any check fails.
    Verify {
        #[arg(long, value_enum, default_value = "all")]
        suite: Suite,
        /// Shift the reference solution; every suite should then fail.
        #[arg(long)]
        perturb: bool,
    },
    /// Monte Carlo retrievals against in-process servers.
    Simulate {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        k: usize,
        /// Preset (`uniform-tsc`, `direct`, `maxl-opt(D)`, `mi-opt(D)`) or allocation JSON file.
        #[arg(long)]
        alloc: String,
        #[arg(long)]
        gamma: Option<String>,
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a random message store.
    Store {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve a message store over TCP.
    Serve {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value = "127.0.0.1:0")]
        listen: String,
    },
    /// Retrieve one message from running servers.
    Retrieve {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        alloc: String,
        /// Server addresses in order, comma separated.
        #[arg(long)]
        servers: String,
        /// Number of messages held by the servers.
        #[arg(long, default_value_t = 2)]
        messages: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

enum Failure {
    Verification,
    Runtime(wpir::Error),
}

impl From<wpir::Error> for Failure {
    fn from(e: wpir::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn params_with(n: usize, k: usize, gamma: Option<&str>) -> Result<SystemParams, Failure> {
    let Some(arg) = gamma else {
        return Ok(SystemParams::homogeneous(n, k)?);
    };
    let (gamma, reordered) =
        parse_gamma(arg).map_err(|e| Failure::Runtime(wpir::Error::InvalidParams(e)))?;
    if reordered {
        eprintln!("warning: gamma reordered ascending to {gamma:?}");
    }
    Ok(SystemParams::new(n, k, gamma)?)
}

fn hex(bytes: impl IntoIterator<Item = u8>) -> String {
    bytes.into_iter().map(|b| format!("{b:02x}")).collect()
}

fn tradeoff(
    metric: Metric,
    params: &SystemParams,
    points: usize,
    format: Format,
    out: Option<PathBuf>,
) -> Result<(), Failure> {
    let rows = tradeoff_curve(metric, params, params.gamma(), &cost_grid(params, points))?;
    let text = match format {
        Format::Csv => {
            let mut s = format!("{}\n", TradeoffPoint::CSV_HEADER);
            for r in &rows {
                s.push_str(&r.csv_row());
                s.push('\n');
            }
            s
        }
        Format::Json => format!("{}\n", serde_json::to_string_pretty(&rows)?),
    };
    match out {
        Some(path) => fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Tradeoff {
            metric,
            n,
            k,
            gamma,
            points,
            format,
            out,
        } => {
            let params = params_with(n, k, gamma.as_deref())?;
            tradeoff(metric.into(), &params, points, format, out)
        }
        Command::Table { n, k } => {
            print!("{}", render_table(&SystemParams::homogeneous(n, k)?)?);
            Ok(())
        }
        Command::Verify { suite, perturb } => {
            let reports = verify::run(suite, perturb);
            for r in &reports {
                println!(
                    "{} {}: {} checks, max residual {:e} (tolerance {:e})",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.suite,
                    r.checks,
                    r.max_residual,
                    r.tolerance
                );
                for f in r.failures.iter().take(5) {
                    println!("  {f}");
                }
            }
            if reports.iter().all(|r| r.passed) {
                Ok(())
            } else {
                Err(Failure::Verification)
            }
        }
        Command::Simulate {
            n,
            k,
            alloc,
            gamma,
            trials,
            seed,
        } => {
            let params = params_with(n, k, gamma.as_deref())?;
            let a = load_allocation(&alloc, &params)?;
            let store = MessageStore::random(&params, &mut ChaCha8Rng::seed_from_u64(seed));
            let report = run_all(&a, &store, trials, seed)?;
            let mut value = report.to_json();
            value["rho_maxl"] = json!(empirical_leakage(&report, Metric::MaxL, params.gamma())?);
            value["rho_mi"] = json!(empirical_leakage(&report, Metric::MI, params.gamma())?);
            value["gamma"] = json!(params.gamma());
            println!("{}", serde_json::to_string_pretty(&value)?);
            Ok(())
        }
        Command::Store { n, k, seed, out } => {
            let params = SystemParams::homogeneous(n, k)?;
            MessageStore::random(&params, &mut ChaCha8Rng::seed_from_u64(seed)).save(out)?;
            Ok(())
        }
        Command::Serve { store, listen } => {
            let server = Server::bind(MessageStore::load(store)?, listen.as_str())?;
            println!("listening on {}", server.local_addr()?);
            std::io::stdout().flush()?;
            Ok(server.run()?)
        }
        Command::Retrieve {
            k,
            alloc,
            servers,
            messages,
            seed,
        } => {
            let addresses: Vec<String> = servers
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect();
            let params = SystemParams::homogeneous(addresses.len(), messages)?;
            let a = load_allocation(&alloc, &params)?;
            let r = client_retrieve(k, &a, &addresses, seed)?;
            let value = json!({
                "k": k,
                "message": hex(r.message.iter().map(|s| s.0)),
                "key": r.key.to_string(),
                "frames_sent": r.frames_sent,
                "nonempty_answers": r.nonempty_answers,
                "symbols_downloaded": r.symbols_downloaded,
            });
            println!("{}", serde_json::to_string_pretty(&value)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification) => ExitCode::from(2),
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
