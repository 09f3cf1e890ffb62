//! `flownet`: information-flow networks and canonical summaries of
//! forecast/response panels from the command line.
//!
//! Exit codes: 0 ok, 2 usage, 3 data or domain error, 4 environment
//! (files, sockets), 5 solver did not converge.

mod commands;
mod error;

use std::net::IpAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "flownet",
    version,
    about = "Analyze rolling-horizon forecast/response panels"
)]
#[command(after_help = "Exit codes: 0 ok, 2 usage, 3 data/domain, 4 environment, 5 convergence")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Infer the information-flow network and decompose every event.
    Network(NetworkArgs),
    /// Continuum canonical correlation of the forecast and response blocks.
    Ccc(CccArgs),
    /// Kolmogorov-Smirnov normality of every event over a Box-Cox grid.
    Normality(NormalityArgs),
    /// Generate a panel with planted structure from a JSON spec.
    Synth(SynthArgs),
    /// Run the HTTP analysis service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct Output {
    /// Output file; standard output when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct NetworkArgs {
    /// Panel CSV with columns period,kind,lag,value.
    input: PathBuf,
    /// Sparsity penalty, in [0, 1.5].
    #[arg(long, default_value_t = flownet_server::DEFAULT_LAMBDA, value_parser = lambda_value, allow_negative_numbers = true)]
    lambda: f64,
    /// Box-Cox exponent applied before standardizing.
    #[arg(long, default_value_t = flownet_server::DEFAULT_GAMMA, value_parser = finite, allow_negative_numbers = true)]
    gamma: f64,
    /// Skip the Box-Cox transform.
    #[arg(long)]
    no_boxcox: bool,
    /// Write the per-window glasso objective traces to this CSV.
    #[arg(long, value_name = "CSV")]
    trace: Option<PathBuf>,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args)]
struct CccArgs {
    input: PathBuf,
    /// Continuum parameter: 0 is CCA, 0.5 PLS, 1 PCA.
    #[arg(long, default_value_t = flownet_server::DEFAULT_ALPHA, value_parser = alpha_value, allow_negative_numbers = true)]
    alpha: f64,
    /// Box-Cox exponent; by default the data are only standardized.
    #[arg(long, value_parser = finite, allow_negative_numbers = true)]
    gamma: Option<f64>,
    /// Seed of the random restart.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args)]
struct NormalityArgs {
    input: PathBuf,
    /// Comma-separated Box-Cox exponents.
    #[arg(long, value_delimiter = ',', default_value = "-1,-0.5,0,0.5,1", value_parser = finite, allow_hyphen_values = true)]
    gamma_grid: Vec<f64>,
    /// Constant added to every value before the transform.
    #[arg(long, default_value_t = 0.0, value_parser = finite, allow_negative_numbers = true)]
    shift: f64,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// JSON spec: T, N, M, planted_edges, noise_sd, seed.
    spec: PathBuf,
    /// Replace the spec's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Persist uploads here and reload them on start.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Origin allowed by CORS; `*` for any.
    #[arg(long)]
    cors_origin: Option<String>,
    /// Largest accepted upload.
    #[arg(long, default_value_t = 10 * 1024 * 1024)]
    max_upload_bytes: usize,
    /// Number of rendered responses kept in memory.
    #[arg(long, default_value_t = 256)]
    cache_capacity: usize,
}

fn finite(s: &str) -> Result<f64, String> {
    s.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| format!("expected a finite number, got {s:?}"))
}

fn bounded(s: &str, hi: f64) -> Result<f64, String> {
    let v = finite(s)?;
    if (0.0..=hi).contains(&v) {
        Ok(v)
    } else {
        Err(format!("must lie in [0, {hi}], got {v}"))
    }
}

fn lambda_value(s: &str) -> Result<f64, String> {
    bounded(s, flownet_server::MAX_LAMBDA)
}

fn alpha_value(s: &str) -> Result<f64, String> {
    bounded(s, 1.0)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Network(a) => commands::network(
            &a.input,
            a.lambda,
            (!a.no_boxcox).then_some(a.gamma),
            a.trace.as_deref(),
            a.output.out.as_deref(),
        ),
        Command::Ccc(a) => commands::ccc(&a.input, a.alpha, a.gamma, a.seed, a.output.out.as_deref()),
        Command::Normality(a) => commands::normality(&a.input, &a.gamma_grid, a.shift, a.output.out.as_deref()),
        Command::Synth(a) => commands::synth(&a.spec, a.seed, a.output.out.as_deref()),
        Command::Serve(a) => commands::serve(
            (a.host, a.port).into(),
            flownet_server::ServerConfig {
                max_upload_bytes: a.max_upload_bytes,
                cache_capacity: a.cache_capacity,
                data_dir: a.data_dir,
                cors_origin: a.cors_origin,
            },
        ),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("flownet: {e}");
            e.exit_code()
        }
    }
}
