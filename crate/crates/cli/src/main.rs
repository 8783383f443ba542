// SPDX-License-Identifier: Apache-2.0

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use spinladder::experiment::{run_experiment, time_shift_align, ExperimentConfig, ExperimentKind};
use spinladder::ObservableTrace;

#[derive(Parser)]
#[command(name = "spinladder", version, about = "Spin-ladder relaxation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Time traces of P_X and its moments for each run.
    Trace(RunArgs),
    /// Typical variance and seed-to-seed deviation of traces.
    Typicality(RunArgs),
    /// Measured transition matrix W(tau) and Markov-chain predictions.
    Wmatrix(RunArgs),
    /// Drift and diffusion tables, measured and from the spin-flip model.
    Driftdiff(RunArgs),
    /// Variance scaling with system size.
    Scaling(RunArgs),
    /// Time-shift alignment of the mean traces in existing trace CSVs.
    Align(AlignArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration, or a manifest.json from an earlier run.
    #[arg(short, long)]
    config: PathBuf,
    /// Output directory; overrides the configuration.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Worker threads; overrides the configuration.
    #[arg(short, long)]
    workers: Option<usize>,
    /// Root seed; overrides the configuration.
    #[arg(short, long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct AlignArgs {
    /// Trace CSV files sharing one time grid; the first stays fixed.
    #[arg(required = true, num_args = 2..)]
    traces: Vec<PathBuf>,
    /// Directory for alignment.json; printed to stdout when absent.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Trace(a) => run(ExperimentKind::Trace, a),
        Command::Typicality(a) => run(ExperimentKind::Typicality, a),
        Command::Wmatrix(a) => run(ExperimentKind::TransitionMatrix, a),
        Command::Driftdiff(a) => run(ExperimentKind::DriftDiffusion, a),
        Command::Scaling(a) => run(ExperimentKind::Scaling, a),
        Command::Align(a) => align(a),
    }
}

fn run(kind: ExperimentKind, args: RunArgs) -> Result<()> {
    let mut config = ExperimentConfig::load(&args.config)
        .with_context(|| format!("loading {}", args.config.display()))?;
    if config.kind != kind {
        bail!(
            "{} describes a `{}` experiment, not `{}`",
            args.config.display(),
            config.kind.name(),
            kind.name()
        );
    }
    if let Some(out) = args.out {
        config.output_dir = out;
    }
    if let Some(w) = args.workers {
        config.workers = w;
    }
    if let Some(s) = args.seed {
        config.root_seed = s;
    }
    let output = run_experiment(&config).context("running experiment")?;
    log::info!(
        "wrote {} files to {}",
        output.files.len(),
        output.output_dir.display()
    );
    println!("{}", serde_json::to_string_pretty(&output.report)?);
    Ok(())
}

fn read_trace(path: &Path) -> Result<ObservableTrace> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    ObservableTrace::read_csv(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn align(args: AlignArgs) -> Result<()> {
    let traces = args
        .traces
        .iter()
        .map(|p| read_trace(p))
        .collect::<Result<Vec<_>>>()?;
    let dt = match traces[0].times.as_slice() {
        [t0, t1, ..] => t1 - t0,
        _ => bail!("{} has fewer than two rows", args.traces[0].display()),
    };
    for (t, p) in traces.iter().zip(&args.traces).skip(1) {
        let same_grid = t.times.len() >= 2 && ((t.times[1] - t.times[0]) - dt).abs() < 1e-12;
        if !same_grid {
            bail!("{} does not share the time step {dt}", p.display());
        }
    }
    let series: Vec<Vec<f64>> = traces.into_iter().map(|t| t.mean_x).collect();
    let alignment = time_shift_align(&series, dt)?;
    let report = serde_json::json!({
        "files": args.traces,
        "dt": dt,
        "shifts": alignment.shifts,
        "residual_rms": alignment.residual_rms,
    });
    let text = serde_json::to_string_pretty(&report)?;
    match args.out {
        Some(dir) => {
            std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            let path = dir.join("alignment.json");
            std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        }
        None => println!("{text}"),
    }
    Ok(())
}
