// SPDX-License-Identifier: Apache-2.0

//! Configuration-driven experiments and their analysis helpers.
//!
//! A run directory receives CSV tables, a `report.json` and a
//! `manifest.json`. The manifest holds the effective configuration; running
//! it again reproduces every file byte for byte.
//!
//! Per-run seeds come from the root seed through [`derive_seed`] with these
//! streams: runs use `RUN_STREAM` with the run index, the unrestricted
//! typical states use `TYPICAL_STREAM`, the shared filter strength of
//! transition-matrix experiments uses `ALPHA_STREAM`, and scaling studies
//! add the spin count to each stream.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::Couplings;
use crate::observables::{
    equilibration_time, evolve_and_trace, late_mean, mean_and_stderr, output_steps,
    typical_variance, ObservableTrace, TypicalVariance,
};
use crate::prep::{
    derive_seed, prepare_omega, tune_alpha, PrepRecipe, DEFAULT_E0, DEFAULT_SIGMA_H,
};
use crate::stochastic::{
    fit_gamma, is_irreducible, markov_iterate, measure_transition_matrix, rms_deviation,
    stationary_distribution, transition_seeds, DriftDiffusion, GammaFit, MasterPropagator,
    SpinFlipModel, TransitionMatrix, DEFAULT_SEEDS_PER_COLUMN, DEFAULT_TAU,
};
use crate::system::LadderSystem;

pub const SCHEMA_VERSION: u32 = 1;

pub const RUN_STREAM: u64 = 0x1000;
pub const TYPICAL_STREAM: u64 = 0x2000;
pub const ALPHA_STREAM: u64 = 0x3000;

/// Shortest overlap, in time units, accepted by [`time_shift_align`].
pub const MIN_OVERLAP: f64 = 10.0;
/// Relative margin above the plateau for a maximum to count as distinct.
pub const EARLY_MAX_MARGIN: f64 = 0.02;

const DEFAULT_MEMORY_LIMIT_MB: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Trace,
    Typicality,
    TransitionMatrix,
    DriftDiffusion,
    Scaling,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Trace => "trace",
            ExperimentKind::Typicality => "typicality",
            ExperimentKind::TransitionMatrix => "transition-matrix",
            ExperimentKind::DriftDiffusion => "drift-diffusion",
            ExperimentKind::Scaling => "scaling",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub n_spins: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowConfig {
    pub e0: f64,
    pub sigma_h: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            e0: DEFAULT_E0,
            sigma_h: DEFAULT_SIGMA_H,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub x_target: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Filter strength; tuned to the window's sigma_H when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeConfig {
    pub t_max: f64,
    pub dt_out: f64,
}

impl Default for TimeConfig {
    fn default() -> Self {
        Self {
            t_max: crate::observables::DEFAULT_T_MAX,
            dt_out: crate::observables::DEFAULT_DT_OUT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StochasticConfig {
    /// Lag of the transition matrix. Agreement with the quantum dynamics
    /// degrades when tau approaches the correlation time.
    pub tau: f64,
    pub seeds_per_column: usize,
    pub fit_gamma: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Filter strength shared by all columns; tuned on the central block
    /// when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

impl Default for StochasticConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            seeds_per_column: DEFAULT_SEEDS_PER_COLUMN,
            fit_gamma: true,
            gamma: None,
            alpha: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TypicalityConfig {
    pub n_seeds: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

impl Default for TypicalityConfig {
    fn default() -> Self {
        Self {
            n_seeds: 5,
            alpha: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalingConfig {
    pub n_values: Vec<usize>,
    /// Initial X values per size; all admissible `0 < X <= N/2 - 2` when
    /// absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_targets: Option<Vec<i32>>,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            n_values: vec![12, 16, 20],
            x_targets: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub kind: ExperimentKind,
    #[serde(default)]
    pub root_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses one per core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "default_memory_limit")]
    pub memory_limit_mb: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<GeometryConfig>,
    #[serde(default)]
    pub couplings: Couplings,
    #[serde(default)]
    pub window: WindowConfig,
    #[serde(default)]
    pub runs: Vec<RunSpec>,
    #[serde(default)]
    pub time: TimeConfig,
    #[serde(default)]
    pub stochastic: StochasticConfig,
    #[serde(default)]
    pub typicality: TypicalityConfig,
    #[serde(default)]
    pub scaling: ScalingConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_memory_limit() -> u64 {
    DEFAULT_MEMORY_LIMIT_MB
}

impl ExperimentConfig {
    /// Minimal configuration of the given kind.
    pub fn new(kind: ExperimentKind, n_spins: usize) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            kind,
            root_seed: 0,
            output_dir: default_output_dir(),
            workers: 0,
            memory_limit_mb: DEFAULT_MEMORY_LIMIT_MB,
            geometry: Some(GeometryConfig { n_spins }),
            couplings: Couplings::default(),
            window: WindowConfig::default(),
            runs: Vec::new(),
            time: TimeConfig::default(),
            stochastic: StochasticConfig::default(),
            typicality: TypicalityConfig::default(),
            scaling: ScalingConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::schema("", e.to_string()))?;
        let config: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::schema(if path == "." { String::new() } else { path }, e.into_inner().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    /// Accepts a TOML configuration or a JSON manifest written by
    /// [`run_experiment`].
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e == "json") {
            Manifest::from_json_str(&text).map(|m| m.config)
        } else {
            Self::from_toml_str(&text)
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::schema(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        let t = &self.time;
        if !(t.t_max > 0.0) {
            return Err(Error::schema("time.t_max", "must be positive"));
        }
        if !(t.dt_out > 0.0) {
            return Err(Error::schema("time.dt_out", "must be positive"));
        }
        output_steps(t.t_max, t.dt_out).map_err(|e| Error::schema("time", e.to_string()))?;
        if !(self.window.sigma_h > 0.0) {
            return Err(Error::schema("window.sigma_h", "must be positive"));
        }
        if !(self.stochastic.tau > 0.0) {
            return Err(Error::schema("stochastic.tau", "must be positive"));
        }
        if self.stochastic.seeds_per_column == 0 {
            return Err(Error::schema("stochastic.seeds_per_column", "must be at least 1"));
        }
        if self.typicality.n_seeds < 2 {
            return Err(Error::schema("typicality.n_seeds", "must be at least 2"));
        }
        if self.kind == ExperimentKind::Scaling {
            let ns = &self.scaling.n_values;
            if ns.len() < 3 {
                return Err(Error::schema("scaling.n_values", "needs at least three sizes"));
            }
            for (i, &n) in ns.iter().enumerate() {
                crate::basis::LadderGeometry::new(n)
                    .map_err(|e| Error::schema(format!("scaling.n_values[{i}]"), e.to_string()))?;
            }
            return Ok(());
        }
        let n = self
            .geometry
            .as_ref()
            .ok_or_else(|| Error::schema("geometry", "missing table"))?
            .n_spins;
        let geom = crate::basis::LadderGeometry::new(n)
            .map_err(|e| Error::schema("geometry.n_spins", e.to_string()))?;
        let needs_runs = matches!(self.kind, ExperimentKind::Trace | ExperimentKind::Typicality);
        if needs_runs && self.runs.is_empty() {
            return Err(Error::schema("runs", "run set is empty"));
        }
        for (i, run) in self.runs.iter().enumerate() {
            geom.check_x(run.x_target)
                .map_err(|e| Error::schema(format!("runs[{i}].x_target"), e.to_string()))?;
        }
        if self.kind == ExperimentKind::DriftDiffusion
            && !self.stochastic.fit_gamma
            && self.stochastic.gamma.is_none()
        {
            return Err(Error::schema(
                "stochastic.gamma",
                "required when stochastic.fit_gamma is false",
            ));
        }
        if self.kind == ExperimentKind::DriftDiffusion
            && self.stochastic.fit_gamma
            && !self.runs.iter().any(|r| r.x_target.abs() <= 2 && r.x_target != 0)
        {
            return Err(Error::schema(
                "runs",
                "fitting gamma needs a run with 0 < |x_target| <= 2",
            ));
        }
        Ok(())
    }

    fn n_spins(&self) -> usize {
        self.geometry.as_ref().map(|g| g.n_spins).unwrap_or(0)
    }

    fn run_seed(&self, index: usize, stream_offset: u64) -> u64 {
        self.runs
            .get(index)
            .and_then(|r| r.seed)
            .unwrap_or_else(|| derive_seed(self.root_seed, RUN_STREAM + stream_offset, index as u64))
    }
}

/// Bytes needed to hold the basis and the working vectors of `jobs`
/// concurrent propagations at `n_spins`.
pub fn memory_estimate(n_spins: usize, jobs: usize) -> u64 {
    let m = n_spins / 2;
    let dim = crate::basis::binomial(n_spins as u64, m as u64);
    let basis = dim * (4 + 1 + 4) + 2 * (1u64 << m) * 4;
    // state, prev/cur/acc layout buffers, output and one conversion copy
    let per_job = dim * 16 * 7;
    basis + per_job * jobs.max(1) as u64
}

pub fn preflight(n_spins: usize, jobs: usize, limit_mb: u64) -> Result<()> {
    let need = memory_estimate(n_spins, jobs);
    let limit = limit_mb.saturating_mul(1 << 20);
    if need > limit {
        return Err(Error::Capacity(format!(
            "N = {n_spins} with {jobs} concurrent jobs needs about {} MiB, limit is {limit_mb} MiB",
            need.div_ceil(1 << 20)
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub package_version: String,
    pub config: ExperimentConfig,
    pub files: Vec<String>,
}

impl Manifest {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let m: Self = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::schema(e.path().to_string(), e.into_inner().to_string()))?;
        if m.schema_version != SCHEMA_VERSION {
            return Err(Error::schema("schema_version", "unsupported manifest version"));
        }
        m.config.validate()?;
        Ok(m)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub output_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub report: serde_json::Value,
}

struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
        let path = self.dir.join(name);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(&path, e))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value).map_err(std::io::Error::other)?;
            writeln!(w)
        })
    }
}

/// Run the configured experiment and write its artifacts to
/// `config.output_dir`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if config.workers > 0 {
        builder = builder.num_threads(config.workers);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Parameter(format!("cannot start worker pool: {e}")))?;
    let jobs = pool.current_num_threads();
    let sizes = if config.kind == ExperimentKind::Scaling {
        config.scaling.n_values.clone()
    } else {
        vec![config.n_spins()]
    };
    for n in sizes {
        preflight(n, jobs, config.memory_limit_mb)?;
    }

    let mut out = Outputs::new(&config.output_dir)?;
    let report = pool.install(|| -> Result<serde_json::Value> {
        let value = match config.kind {
            ExperimentKind::Trace => to_value(trace_experiment(config, &mut out)?),
            ExperimentKind::Typicality => to_value(typicality_experiment(config, &mut out)?),
            ExperimentKind::TransitionMatrix => to_value(transition_experiment(config, &mut out)?),
            ExperimentKind::DriftDiffusion => to_value(drift_experiment(config, &mut out)?),
            ExperimentKind::Scaling => to_value(scaling_experiment(config, &mut out)?),
        };
        Ok(value)
    })?;
    out.json("report.json", &report)?;
    let mut files = out.files.clone();
    files.push("manifest.json".into());
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        package_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        files,
    };
    out.json("manifest.json", &manifest)?;
    Ok(ExperimentOutput {
        output_dir: out.dir.clone(),
        files: manifest.files.iter().map(|f| out.dir.join(f)).collect(),
        report,
    })
}

fn to_value<T: Serialize>(v: T) -> serde_json::Value {
    serde_json::to_value(v).expect("report serializes")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub file: String,
    pub x_target: i32,
    pub seed: u64,
    pub alpha: f64,
    pub sigma_h: f64,
    pub mean_h: f64,
    pub p_target: f64,
    pub mean_x0: f64,
    pub late_var_x: f64,
    pub equilibration_time: Option<f64>,
    pub early_maximum: Option<EarlyMaximum>,
}

struct RunResult {
    report: RunReport,
    trace: ObservableTrace,
}

/// Resolved run: seed and filter strength fixed.
#[derive(Debug, Clone, Copy)]
struct Job {
    x_target: i32,
    seed: u64,
    alpha: Option<f64>,
}

fn run_jobs(system: &LadderSystem, config: &ExperimentConfig, jobs: &[Job]) -> Result<Vec<RunResult>> {
    let w = config.window;
    jobs.par_iter()
        .enumerate()
        .map(|(i, job)| {
            let alpha = match job.alpha {
                Some(a) => a,
                None => tune_alpha(job.seed, Some(job.x_target), w.sigma_h, w.e0, system)?,
            };
            let recipe = PrepRecipe {
                seed: job.seed,
                x_target: Some(job.x_target),
                alpha,
                e0: w.e0,
                target_sigma_h: w.sigma_h,
            };
            let omega = prepare_omega(&recipe, system)?;
            let (mean_h, sigma_h) = system.energy_stats(&omega)?;
            log::info!(
                "N = {} run {i}: X0 = {}, seed = {}, alpha = {alpha}",
                system.n_spins(),
                job.x_target,
                job.seed
            );
            let trace = evolve_and_trace(&omega, system, config.time.t_max, config.time.dt_out)?;
            let block = system.basis.geometry().check_x(job.x_target)?;
            let early = detect_early_maximum(&trace.times, &trace.var_x, &trace.mean_x).ok();
            let report = RunReport {
                file: format!("trace_{i:02}_x{}.csv", job.x_target),
                x_target: job.x_target,
                seed: job.seed,
                alpha,
                sigma_h,
                mean_h,
                p_target: trace.px[0][block],
                mean_x0: trace.mean_x[0],
                late_var_x: trace.late_var_x(),
                equilibration_time: trace.equilibration_time(),
                early_maximum: early,
            };
            Ok(RunResult { report, trace })
        })
        .collect()
}

fn write_traces(out: &mut Outputs, runs: &[RunResult]) -> Result<()> {
    for r in runs {
        out.write(&r.report.file, |w| r.trace.write_csv(w))?;
    }
    Ok(())
}

fn config_jobs(config: &ExperimentConfig) -> Vec<Job> {
    config
        .runs
        .iter()
        .enumerate()
        .map(|(i, r)| Job {
            x_target: r.x_target,
            seed: config.run_seed(i, 0),
            alpha: r.alpha,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelComparison {
    pub fit: GammaFit,
    /// Run used for the fit.
    pub fit_run: usize,
    /// RMS deviation of the model mean from each run's quantum mean.
    pub rms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceReport {
    pub n_spins: usize,
    pub dim: usize,
    pub e_min: f64,
    pub e_max: f64,
    /// Chebyshev order and coefficient tolerance of the output-step plan.
    pub propagator_order: usize,
    pub chebyshev_tolerance: f64,
    pub runs: Vec<RunReport>,
    pub model: Option<ModelComparison>,
    pub alignment: Option<Alignment>,
    pub alignment_error: Option<String>,
}

/// Fit gamma on the run closest to equilibrium and compare every run.
pub fn compare_with_model(traces: &[&ObservableTrace], kappa: f64) -> Result<ModelComparison> {
    let fit_run = traces
        .iter()
        .enumerate()
        .filter(|(_, t)| t.mean_x[0].abs() > 1e-9)
        .min_by(|a, b| a.1.mean_x[0].abs().total_cmp(&b.1.mean_x[0].abs()))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Fit {
            message: "no run starts away from X = 0".into(),
            residual: f64::NAN,
        })?;
    let t = traces[fit_run];
    let fit = fit_gamma(&t.times, &t.mean_x, &t.px[0], t.n_spins, kappa)?;
    let rms = traces
        .iter()
        .map(|t| {
            let model = model_mean(t, fit.gamma, kappa)?;
            Ok(rms_deviation(&model, &t.mean_x))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ModelComparison { fit, fit_run, rms })
}

/// Master-equation mean started from the trace's initial distribution.
pub fn model_mean(trace: &ObservableTrace, gamma: f64, kappa: f64) -> Result<Vec<f64>> {
    let prop = MasterPropagator::new(trace.n_spins, kappa)?;
    trace
        .times
        .iter()
        .map(|&t| {
            let p = prop.evolve(gamma, &trace.px[0], t)?;
            Ok(p.iter().zip(&trace.x_values).map(|(p, &x)| p * x as f64).sum())
        })
        .collect()
}

fn trace_experiment(config: &ExperimentConfig, out: &mut Outputs) -> Result<TraceReport> {
    let system = LadderSystem::new(config.n_spins(), config.couplings)?;
    let jobs = config_jobs(config);
    let runs = run_jobs(&system, config, &jobs)?;
    write_traces(out, &runs)?;
    let traces: Vec<&ObservableTrace> = runs.iter().map(|r| &r.trace).collect();
    let model = if config.stochastic.fit_gamma {
        match compare_with_model(&traces, config.couplings.kappa) {
            Ok(m) => Some(m),
            Err(e) => {
                log::warn!("gamma fit skipped: {e}");
                None
            }
        }
    } else {
        None
    };
    let (alignment, alignment_error) = if traces.len() >= 2 {
        let series: Vec<Vec<f64>> = traces.iter().map(|t| t.mean_x.clone()).collect();
        match time_shift_align(&series, config.time.dt_out) {
            Ok(a) => (Some(a), None),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, None)
    };
    Ok(TraceReport {
        n_spins: system.n_spins(),
        dim: system.dim(),
        e_min: system.bounds.e_min,
        e_max: system.bounds.e_max,
        propagator_order: system.propagator(config.time.dt_out)?.order(),
        chebyshev_tolerance: system.tolerance,
        runs: runs.into_iter().map(|r| r.report).collect(),
        model,
        alignment,
        alignment_error,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDeviation {
    pub x_target: i32,
    pub runs: (usize, usize),
    pub max_abs_mean_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypicalityReport {
    pub n_spins: usize,
    pub alpha: f64,
    pub seeds: Vec<u64>,
    pub typical: TypicalVariance,
    pub runs: Vec<RunReport>,
    pub pairs: Vec<PairDeviation>,
}

fn typical_setup(config: &ExperimentConfig, system: &LadderSystem, offset: u64) -> Result<(f64, Vec<u64>)> {
    let w = config.window;
    let alpha = match config.typicality.alpha {
        Some(a) => a,
        None => {
            let seed = derive_seed(config.root_seed, TYPICAL_STREAM + offset, 0);
            tune_alpha(seed, None, w.sigma_h, w.e0, system)?
        }
    };
    let seeds = (1..=config.typicality.n_seeds as u64)
        .map(|k| derive_seed(config.root_seed, TYPICAL_STREAM + offset, k))
        .collect();
    Ok((alpha, seeds))
}

/// Largest `|<x>_a(t) - <x>_b(t)|` over the common grid.
pub fn max_mean_deviation(a: &ObservableTrace, b: &ObservableTrace) -> f64 {
    a.mean_x
        .iter()
        .zip(&b.mean_x)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn typicality_experiment(config: &ExperimentConfig, out: &mut Outputs) -> Result<TypicalityReport> {
    let system = LadderSystem::new(config.n_spins(), config.couplings)?;
    let (alpha, seeds) = typical_setup(config, &system, 0)?;
    let typical = typical_variance(alpha, config.window.e0, &system, &seeds)?;

    // Runs sharing an initial X use the filter strength of the first of them.
    let mut jobs = config_jobs(config);
    let w = config.window;
    for i in 0..jobs.len() {
        if jobs[i].alpha.is_none() {
            let first = jobs.iter().position(|j| j.x_target == jobs[i].x_target).expect("self");
            let a = match jobs[first].alpha {
                Some(a) => a,
                None => tune_alpha(jobs[first].seed, Some(jobs[first].x_target), w.sigma_h, w.e0, &system)?,
            };
            jobs[first].alpha = Some(a);
            jobs[i].alpha = Some(a);
        }
    }
    let runs = run_jobs(&system, config, &jobs)?;
    write_traces(out, &runs)?;
    let mut pairs = Vec::new();
    for i in 0..runs.len() {
        for j in i + 1..runs.len() {
            if jobs[i].x_target == jobs[j].x_target {
                pairs.push(PairDeviation {
                    x_target: jobs[i].x_target,
                    runs: (i, j),
                    max_abs_mean_diff: max_mean_deviation(&runs[i].trace, &runs[j].trace),
                });
            }
        }
    }
    Ok(TypicalityReport {
        n_spins: system.n_spins(),
        alpha,
        seeds,
        typical,
        runs: runs.into_iter().map(|r| r.report).collect(),
        pairs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovComparison {
    pub file: String,
    pub x_target: i32,
    /// Largest `|markov mean - quantum mean|` over multiples of tau.
    pub max_mean_deviation: f64,
    pub late_tv_to_stationary: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionReport {
    pub n_spins: usize,
    pub tau: f64,
    pub alpha: f64,
    pub seeds: Vec<Vec<u64>>,
    pub max_column_sum_error: f64,
    pub min_raw_entry: f64,
    pub irreducible: bool,
    pub stationary: Vec<f64>,
    pub runs: Vec<RunReport>,
    pub markov: Vec<MarkovComparison>,
}

/// Filter strength shared by every column: tuned on the central block.
fn shared_alpha(config: &ExperimentConfig, system: &LadderSystem) -> Result<f64> {
    if let Some(a) = config.stochastic.alpha {
        return Ok(a);
    }
    let xs = system.basis.x_values();
    let x = xs[xs.len() / 2];
    let seed = derive_seed(config.root_seed, ALPHA_STREAM, 0);
    tune_alpha(seed, Some(x), config.window.sigma_h, config.window.e0, system)
}

fn measure_w(config: &ExperimentConfig, system: &LadderSystem, out: &mut Outputs) -> Result<TransitionMatrix> {
    let alpha = shared_alpha(config, system)?;
    let seeds = transition_seeds(
        config.root_seed,
        &system.basis.x_values(),
        config.stochastic.seeds_per_column,
    );
    let w = measure_transition_matrix(system, alpha, config.window.e0, config.stochastic.tau, &seeds)?;
    out.write("transition_matrix.csv", |f| w.write_csv(f))?;
    out.write("transition_stderr.csv", |f| w.write_std_error_csv(f))?;
    Ok(w)
}

/// Markov prediction at multiples of tau from the trace's initial `P_X`.
/// Rows: `n, t, markov_mean, quantum_mean, markov_var, quantum_var`.
pub fn markov_vs_trace(w: &DMatrix<f64>, tau: f64, trace: &ObservableTrace) -> Result<Vec<[f64; 6]>> {
    let dt = trace.times.get(1).map(|t| t - trace.times[0]).unwrap_or(1.0);
    let ratio = tau / dt;
    if (ratio - ratio.round()).abs() > 1e-9 {
        return Err(Error::Parameter(format!(
            "tau = {tau} is not a multiple of the output step {dt}"
        )));
    }
    let stride = ratio.round() as usize;
    let steps = (trace.len() - 1) / stride;
    let chain = markov_iterate(w, &trace.px[0], steps)?;
    chain
        .iter()
        .enumerate()
        .map(|(n, p)| {
            let (m, v) = crate::observables::moments_x(p, &trace.x_values)?;
            let k = n * stride;
            Ok([n as f64, trace.times[k], m, trace.mean_x[k], v, trace.var_x[k]])
        })
        .collect()
}

fn transition_experiment(config: &ExperimentConfig, out: &mut Outputs) -> Result<TransitionReport> {
    let system = LadderSystem::new(config.n_spins(), config.couplings)?;
    let w = measure_w(config, &system, out)?;
    let stationary = stationary_distribution(&w.w)?;
    let mut jobs = config_jobs(config);
    for j in jobs.iter_mut() {
        j.alpha.get_or_insert(w.alpha);
    }
    let runs = run_jobs(&system, config, &jobs)?;
    write_traces(out, &runs)?;
    let mut markov = Vec::new();
    for (i, r) in runs.iter().enumerate() {
        let rows = markov_vs_trace(&w.w, w.tau, &r.trace)?;
        let file = format!("markov_{i:02}_x{}.csv", r.report.x_target);
        out.write(&file, |f| {
            writeln!(f, "n,t,markov_mean,quantum_mean,markov_var,quantum_var")?;
            for row in &rows {
                writeln!(
                    f,
                    "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                    row[0] as usize, row[1], row[2], row[3], row[4], row[5]
                )?;
            }
            Ok(())
        })?;
        markov.push(MarkovComparison {
            file,
            x_target: r.report.x_target,
            max_mean_deviation: rows.iter().map(|r| (r[2] - r[3]).abs()).fold(0.0, f64::max),
            late_tv_to_stationary: crate::observables::tv_distance(&r.trace.late_px(), &stationary),
        });
    }
    Ok(TransitionReport {
        n_spins: system.n_spins(),
        tau: w.tau,
        alpha: w.alpha,
        max_column_sum_error: w.max_column_sum_error(),
        min_raw_entry: w.min_raw_entry,
        irreducible: is_irreducible(&w.w, 1e-12),
        stationary,
        seeds: w.seeds.clone(),
        runs: runs.into_iter().map(|r| r.report).collect(),
        markov,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub n_spins: usize,
    pub tau: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub gamma_fit: Option<GammaFit>,
    pub measured: DriftDiffusion,
    pub model: DriftDiffusion,
    /// `|f_measured / f_model - 1|` per X, `None` where the model drift is 0.
    pub relative_drift_deviation: Vec<Option<f64>>,
    /// Largest difference between the model drift from `u(tau)` and the
    /// closed first-moment solution.
    pub model_first_moment_error: f64,
    pub runs: Vec<RunReport>,
}

fn drift_experiment(config: &ExperimentConfig, out: &mut Outputs) -> Result<DriftReport> {
    let system = LadderSystem::new(config.n_spins(), config.couplings)?;
    let w = measure_w(config, &system, out)?;
    let measured = DriftDiffusion::from_matrix(&w)?;

    let (gamma, gamma_fit, runs) = if config.stochastic.fit_gamma {
        let (i, run) = config
            .runs
            .iter()
            .enumerate()
            .filter(|(_, r)| r.x_target != 0 && r.x_target.abs() <= 2)
            .min_by_key(|(_, r)| r.x_target.abs())
            .expect("validated");
        let job = Job {
            x_target: run.x_target,
            seed: config.run_seed(i, 0),
            alpha: Some(run.alpha.unwrap_or(w.alpha)),
        };
        let mut results = run_jobs(&system, config, &[job])?;
        let r = results.pop().expect("one run");
        let t = &r.trace;
        let fit = fit_gamma(&t.times, &t.mean_x, &t.px[0], t.n_spins, config.couplings.kappa)?;
        out.write(&r.report.file, |f| r.trace.write_csv(f))?;
        (fit.gamma, Some(fit), vec![r.report])
    } else {
        (config.stochastic.gamma.expect("validated"), None, Vec::new())
    };
    let model_def = SpinFlipModel::new(system.n_spins(), gamma, config.couplings.kappa)?;
    let model = DriftDiffusion::from_model(&model_def, w.tau)?;
    let model_first_moment_error = model
        .x_values
        .iter()
        .zip(&model.f)
        .map(|(&x, f)| (f - model_def.drift_exact(x, w.tau)).abs())
        .fold(0.0, f64::max);
    let relative_drift_deviation = measured
        .f
        .iter()
        .zip(&model.f)
        .map(|(m, f)| (f.abs() > 1e-12).then(|| (m / f - 1.0).abs()))
        .collect();
    out.write("drift_measured.csv", |f| measured.write_csv(f))?;
    out.write("drift_model.csv", |f| model.write_csv(f))?;
    Ok(DriftReport {
        n_spins: system.n_spins(),
        tau: w.tau,
        alpha: w.alpha,
        gamma,
        gamma_fit,
        measured,
        model,
        relative_drift_deviation,
        model_first_moment_error,
        runs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub intercept_se: f64,
    pub r_squared: f64,
}

/// Ordinary least squares `y = slope x + intercept`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return Err(Error::Parameter("linear fit needs at least two points".into()));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Parameter("linear fit needs distinct x values".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - slope * a - intercept).powi(2))
        .sum();
    let s2 = if n > 2 { sse / (nf - 2.0) } else { 0.0 };
    let slope_se = (s2 / sxx).sqrt();
    let intercept_se = (s2 * (1.0 / nf + mx * mx / sxx)).sqrt();
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Ok(LinearFit {
        slope,
        intercept,
        slope_se,
        intercept_se,
        r_squared,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeReport {
    pub n_spins: usize,
    pub dim: usize,
    pub typical: TypicalVariance,
    pub typical_alpha: f64,
    /// Late-window variance averaged over the run set.
    pub mean_final_variance: f64,
    /// Largest early maximum over the run set.
    pub largest_early_max: f64,
    /// Early maximum of the run with the largest `|X0|`.
    pub most_off_equilibrium: Option<EarlyMaximum>,
    pub runs: Vec<RunReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub sizes: Vec<SizeReport>,
    pub failures: Vec<(usize, String)>,
    pub typical_fit: Option<LinearFit>,
    pub final_fit: Option<LinearFit>,
    pub early_max_fit: Option<LinearFit>,
    /// Slopes of the typical and early-maximum lines agree within twice the
    /// combined standard error.
    pub slopes_consistent: Option<bool>,
}

/// Default initial values for a scaling study at `n_spins`: every admissible
/// `0 < X <= N/2 - 2`.
pub fn default_x_targets(n_spins: usize) -> Vec<i32> {
    let m = (n_spins / 2) as i32;
    crate::basis::LadderGeometry::new(n_spins)
        .map(|g| g.x_values())
        .unwrap_or_default()
        .into_iter()
        .filter(|&x| x > 0 && x <= m - 2)
        .collect()
}

fn size_study(config: &ExperimentConfig, n: usize, out: &mut Outputs) -> Result<SizeReport> {
    let system = LadderSystem::new(n, config.couplings)?;
    let offset = n as u64;
    let (alpha, seeds) = typical_setup(config, &system, offset)?;
    let typical = typical_variance(alpha, config.window.e0, &system, &seeds)?;
    let xs = config
        .scaling
        .x_targets
        .clone()
        .unwrap_or_else(|| default_x_targets(n));
    if xs.is_empty() {
        return Err(Error::Parameter(format!("no initial X values for N = {n}")));
    }
    let jobs: Vec<Job> = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            system.basis.geometry().check_x(x)?;
            Ok(Job {
                x_target: x,
                seed: derive_seed(config.root_seed, RUN_STREAM + offset, i as u64),
                alpha: None,
            })
        })
        .collect::<Result<_>>()?;
    let mut runs = run_jobs(&system, config, &jobs)?;
    for r in runs.iter_mut() {
        r.report.file = format!("n{n:02}_{}", r.report.file);
    }
    write_traces(out, &runs)?;
    let finals: Vec<f64> = runs.iter().map(|r| r.report.late_var_x).collect();
    let mean_final_variance = mean_and_stderr(&finals).0;
    let largest_early_max = runs
        .iter()
        .map(|r| match &r.report.early_maximum {
            Some(e) => e.value,
            None => r.trace.var_x.iter().copied().fold(0.0, f64::max),
        })
        .fold(0.0, f64::max);
    let most_off = runs
        .iter()
        .max_by_key(|r| r.report.x_target.abs())
        .and_then(|r| r.report.early_maximum.clone());
    Ok(SizeReport {
        n_spins: n,
        dim: system.dim(),
        typical,
        typical_alpha: alpha,
        mean_final_variance,
        largest_early_max,
        most_off_equilibrium: most_off,
        runs: runs.into_iter().map(|r| r.report).collect(),
    })
}

/// Per-size typical variances, final variances and early maxima with linear
/// fits in N. A failing size is recorded and skipped.
pub fn scaling_study(config: &ExperimentConfig, out_dir: &Path) -> Result<ScalingReport> {
    let mut out = Outputs::new(out_dir)?;
    scaling_experiment(config, &mut out)
}

fn scaling_experiment(config: &ExperimentConfig, out: &mut Outputs) -> Result<ScalingReport> {
    let mut sizes = Vec::new();
    let mut failures = Vec::new();
    for &n in &config.scaling.n_values {
        match size_study(config, n, out) {
            Ok(s) => sizes.push(s),
            Err(e) => {
                log::error!("scaling study at N = {n} failed: {e}");
                failures.push((n, e.to_string()));
            }
        }
    }
    let ns: Vec<f64> = sizes.iter().map(|s| s.n_spins as f64).collect();
    let fit = |ys: Vec<f64>| (ns.len() >= 2).then(|| linear_fit(&ns, &ys).ok()).flatten();
    let typical_fit = fit(sizes.iter().map(|s| s.typical.value).collect());
    let final_fit = fit(sizes.iter().map(|s| s.mean_final_variance).collect());
    let early_max_fit = fit(sizes.iter().map(|s| s.largest_early_max).collect());
    let slopes_consistent = match (&typical_fit, &early_max_fit) {
        (Some(a), Some(b)) => {
            Some((a.slope - b.slope).abs() < 2.0 * (a.slope_se.powi(2) + b.slope_se.powi(2)).sqrt())
        }
        _ => None,
    };
    out.write("scaling.csv", |f| {
        writeln!(
            f,
            "N,dim,typical_variance,typical_se,mean_final_variance,largest_early_max"
        )?;
        for s in &sizes {
            writeln!(
                f,
                "{},{},{:.16e},{:.16e},{:.16e},{:.16e}",
                s.n_spins, s.dim, s.typical.value, s.typical.std_error, s.mean_final_variance, s.largest_early_max
            )?;
        }
        Ok(())
    })?;
    Ok(ScalingReport {
        sizes,
        failures,
        typical_fit,
        final_fit,
        early_max_fit,
        slopes_consistent,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    /// Shift of each trace in time units; the first is 0. Trace `i` aligned
    /// reads `x_i(t + shift_i)`.
    pub shifts: Vec<f64>,
    /// Root of the pairwise mean squared deviation over the overlaps.
    pub residual_rms: f64,
}

/// Shift traces in time so that their pairwise squared deviations over the
/// overlapping window are minimal.
///
/// Shifts are integer multiples of `dt`, found by coordinate descent: each
/// trace is first placed against the first trace by exhaustive search, then
/// sweeps re-optimize one shift at a time until nothing changes. Every pair
/// must keep at least `MIN_OVERLAP` time units of overlap.
pub fn time_shift_align(series: &[Vec<f64>], dt: f64) -> Result<Alignment> {
    if series.len() < 2 {
        return Err(Error::Parameter("alignment needs at least two traces".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::Parameter(format!("dt must be positive, got {dt}")));
    }
    let min_pts = (MIN_OVERLAP / dt - 1e-9).ceil() as i64;
    let longest = series.iter().map(|s| s.len()).max().unwrap_or(0) as i64;
    if longest - 1 < min_pts {
        return Err(Error::InsufficientOverlap {
            overlap: (longest - 1).max(0) as f64 * dt,
            required: MIN_OVERLAP,
        });
    }
    let k = series.len();
    let mut shifts = vec![0i64; k];

    // (mean squared deviation, overlap intervals) of traces i and j
    let pair = |i: usize, j: usize, si: i64, sj: i64| -> Option<f64> {
        let lo = (-si).max(-sj);
        let hi = (series[i].len() as i64 - 1 - si).min(series[j].len() as i64 - 1 - sj);
        if hi - lo < min_pts {
            return None;
        }
        let mut acc = 0.0;
        for g in lo..=hi {
            let d = series[i][(g + si) as usize] - series[j][(g + sj) as usize];
            acc += d * d;
        }
        Some(acc / (hi - lo + 1) as f64)
    };
    let cost_of = |i: usize, s: i64, shifts: &[i64], only_first: bool| -> Option<f64> {
        let mut total = 0.0;
        for j in 0..k {
            if j == i || (only_first && j != 0) {
                continue;
            }
            total += pair(i, j, s, shifts[j])?;
        }
        Some(total)
    };
    let best_shift = |i: usize, shifts: &[i64], only_first: bool| -> Option<i64> {
        let mut best: Option<(i64, f64)> = None;
        for s in -longest..=longest {
            if let Some(c) = cost_of(i, s, shifts, only_first) {
                let better = match best {
                    None => true,
                    Some((bs, bc)) => c < bc || (c == bc && s.abs() < bs.abs()),
                };
                if better {
                    best = Some((s, c));
                }
            }
        }
        best.map(|b| b.0)
    };
    let no_overlap = || Error::InsufficientOverlap {
        overlap: 0.0,
        required: MIN_OVERLAP,
    };
    for i in 1..k {
        shifts[i] = best_shift(i, &shifts, true).ok_or_else(no_overlap)?;
    }
    for _ in 0..100 {
        let mut changed = false;
        for i in 1..k {
            let s = best_shift(i, &shifts, false).ok_or_else(no_overlap)?;
            if s != shifts[i] {
                shifts[i] = s;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let mut total = 0.0;
    let mut pairs = 0;
    for i in 0..k {
        for j in i + 1..k {
            total += pair(i, j, shifts[i], shifts[j]).ok_or_else(no_overlap)?;
            pairs += 1;
        }
    }
    Ok(Alignment {
        shifts: shifts.iter().map(|&s| s as f64 * dt).collect(),
        residual_rms: (total / pairs as f64).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyMaximum {
    pub time: f64,
    pub value: f64,
    /// Mean variance over the late window.
    pub plateau: f64,
    pub equilibration_time: f64,
    /// False when the maximum is within `EARLY_MAX_MARGIN` of the plateau.
    pub distinct: bool,
}

/// Largest variance before the equilibration time.
pub fn detect_early_maximum(times: &[f64], variance: &[f64], mean: &[f64]) -> Result<EarlyMaximum> {
    let t_eq = equilibration_time(times, mean).ok_or(Error::NotEquilibrated)?;
    let plateau = late_mean(times, variance);
    let (mut time, mut value) = (times[0], variance[0]);
    for (&t, &v) in times.iter().zip(variance) {
        if t > t_eq + 1e-9 {
            break;
        }
        if v > value {
            time = t;
            value = v;
        }
    }
    Ok(EarlyMaximum {
        time,
        value,
        plateau,
        equilibration_time: t_eq,
        distinct: value > plateau * (1.0 + EARLY_MAX_MARGIN),
    })
}
