//! Subcommand bodies.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use flownet_core::ccc::{ccc_panel, CccOptions};
use flownet_core::decompose::decompose_network_with;
use flownet_core::glasso::GlassoOptions;
use flownet_core::preprocess::{gamma_sweep, GammaSweepPoint, TransformConfig};
use flownet_core::synth::{generate, SyntheticSpec, RNG_ALGORITHM};
use flownet_core::DialoguePanel;
use flownet_server::contract::NetworkPayload;
use flownet_server::{preprocessing_label, AppState, ServerConfig};
use serde::Serialize;

use crate::error::CliError;

fn sink(out: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match out {
        Some(path) => Box::new(BufWriter::new(
            File::create(path).map_err(|e| CliError::io(path.display(), e))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<(), CliError> {
    let mut w = sink(out)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Environment(format!("writing output: {e}")))?;
    writeln!(w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io("writing output", e))
}

fn load(input: &Path) -> Result<DialoguePanel, CliError> {
    DialoguePanel::load_csv(input).map_err(|e| match CliError::from(e) {
        CliError::Environment(m) => CliError::Environment(format!("{}: {m}", input.display())),
        CliError::Data(m) => CliError::Data(format!("{}: {m}", input.display())),
        other => other,
    })
}

pub fn network(
    input: &Path,
    lambda: f64,
    gamma: Option<f64>,
    trace: Option<&Path>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let panel = load(input)?;
    let transformed = TransformConfig {
        gamma,
        ..TransformConfig::default()
    }
    .apply(&panel)?;
    let opts = GlassoOptions {
        trace: trace.is_some(),
        ..GlassoOptions::default()
    };
    let net = decompose_network_with(&transformed, lambda, &opts)?;
    if let Some(path) = trace {
        write_traces(net.flow.window_traces(), path)?;
    }
    write_json(&NetworkPayload::new(&net, gamma), out)
}

/// One row per glasso sweep: `window,sweep,objective`.
fn write_traces(traces: &[Vec<f64>], path: &Path) -> Result<(), CliError> {
    let io_err = |e| CliError::io(path.display(), e);
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    writeln!(w, "window,sweep,objective").map_err(io_err)?;
    for (offset, trace) in traces.iter().enumerate() {
        for (sweep, value) in trace.iter().enumerate() {
            writeln!(w, "{},{},{value:e}", offset + 2, sweep + 1).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

pub fn ccc(input: &Path, alpha: f64, gamma: Option<f64>, seed: u64, out: Option<&Path>) -> Result<(), CliError> {
    let panel = load(input)?;
    let transformed = TransformConfig {
        gamma,
        ..TransformConfig::default()
    }
    .apply(&panel)?;
    let opts = CccOptions {
        seed,
        ..CccOptions::default()
    };
    let mut solution = ccc_panel(&transformed, alpha, &opts)?;
    solution.preprocessing = Some(preprocessing_label(gamma));
    if solution.warn_overfit {
        eprintln!(
            "flownet: warning: {} periods for {} variables; fewer than 10 observations per variable overfit",
            panel.periods(),
            panel.forecast_horizon() + panel.response_horizon()
        );
    }
    write_json(&solution, out)
}

#[derive(Debug, Serialize)]
struct NormalitySweep {
    shift: f64,
    /// Grid point with the largest mean p-value.
    best_gamma: f64,
    points: Vec<GammaSweepPoint>,
}

pub fn normality(input: &Path, grid: &[f64], shift: f64, out: Option<&Path>) -> Result<(), CliError> {
    if grid.is_empty() {
        return Err(CliError::Usage("the gamma grid is empty".into()));
    }
    let panel = load(input)?;
    let points = gamma_sweep(&panel, grid, shift)?;
    let best = points
        .iter()
        .fold(&points[0], |best, p| if p.mean_p > best.mean_p { p } else { best });
    let sweep = NormalitySweep {
        shift,
        best_gamma: best.gamma,
        points,
    };
    write_json(&sweep, out)
}

pub fn synth(spec_path: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<(), CliError> {
    let text = std::fs::read_to_string(spec_path).map_err(|e| CliError::io(spec_path.display(), e))?;
    let mut spec: SyntheticSpec =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", spec_path.display())))?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let panel = generate(&spec)?;
    let w = sink(out)?;
    panel.write_csv(w)?;
    eprintln!("flownet: rng {RNG_ALGORITHM}, seed {}", spec.seed);
    Ok(())
}

pub fn serve(addr: SocketAddr, config: ServerConfig) -> Result<(), CliError> {
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::io("starting runtime", e))?;
    runtime.block_on(async {
        let state = Arc::new(AppState::new(config)?);
        let listener = flownet_server::bind(addr).await?;
        let local = listener.local_addr().map_err(|e| CliError::io("listener", e))?;
        eprintln!("flownet: listening on http://{local}");
        flownet_server::serve(listener, state).await?;
        Ok(())
    })
}
