// SPDX-License-Identifier: Apache-2.0

use std::path::Path;

use spinladder::experiment::{
    run_experiment, time_shift_align, ExperimentConfig, ExperimentKind, Manifest, RunSpec,
    TraceReport, TransitionReport,
};
use spinladder::observables::evolve_and_trace;
use spinladder::prep::{prepare_omega, tune_alpha, PrepRecipe};
use spinladder::{Error, LadderSystem, ObservableTrace};

const TRACE_TOML: &str = r#"
schema_version = 1
kind = "trace"
root_seed = 5

[geometry]
n_spins = 8

[[runs]]
x_target = 2

[[runs]]
x_target = -2
seed = 42

[time]
t_max = 20.0
dt_out = 0.5
"#;

fn schema_path(err: Error) -> String {
    match err {
        Error::Schema { path, .. } => path,
        other => panic!("expected a schema error, got {other}"),
    }
}

#[test]
fn schema_errors_name_the_field() {
    let bad_field = TRACE_TOML.replace("dt_out = 0.5", "dt_out = 0.5\ndt_put = 1.0");
    assert_eq!(
        schema_path(ExperimentConfig::from_toml_str(&bad_field).unwrap_err()),
        "time.dt_put"
    );
    let bad_x = TRACE_TOML.replace("x_target = -2", "x_target = 3");
    assert_eq!(
        schema_path(ExperimentConfig::from_toml_str(&bad_x).unwrap_err()),
        "runs[1].x_target"
    );
    let bad_type = TRACE_TOML.replace("seed = 42", "seed = \"x\"");
    assert_eq!(
        schema_path(ExperimentConfig::from_toml_str(&bad_type).unwrap_err()),
        "runs[1].seed"
    );
    let version = TRACE_TOML.replace("schema_version = 1", "schema_version = 2");
    assert_eq!(
        schema_path(ExperimentConfig::from_toml_str(&version).unwrap_err()),
        "schema_version"
    );
    let no_time = TRACE_TOML.replace("t_max = 20.0", "t_max = 0.0");
    assert_eq!(schema_path(ExperimentConfig::from_toml_str(&no_time).unwrap_err()), "time.t_max");

    let mut empty = ExperimentConfig::new(ExperimentKind::Trace, 8);
    assert_eq!(schema_path(empty.validate().unwrap_err()), "runs");
    empty.kind = ExperimentKind::Scaling;
    empty.scaling.n_values = vec![8, 12];
    assert_eq!(schema_path(empty.validate().unwrap_err()), "scaling.n_values");
}

#[test]
fn preflight_reports_needed_memory() {
    let mut c = ExperimentConfig::from_toml_str(TRACE_TOML).unwrap();
    c.geometry.as_mut().unwrap().n_spins = 28;
    c.runs = vec![RunSpec {
        x_target: 0,
        seed: None,
        alpha: None,
    }];
    c.memory_limit_mb = 1024;
    c.output_dir = tempfile::tempdir().unwrap().path().join("never");
    match run_experiment(&c) {
        Err(Error::Capacity(msg)) => assert!(msg.contains("MiB"), "{msg}"),
        other => panic!("expected capacity error, got {other:?}"),
    }
    assert!(!c.output_dir.exists());
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn manifest_rerun_is_bit_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = ExperimentConfig::from_toml_str(TRACE_TOML).unwrap();
    c.output_dir = tmp.path().join("a");
    let first = run_experiment(&c).unwrap();
    assert_eq!(first.files.len(), 4);

    let manifest_path = tmp.path().join("a/manifest.json");
    let mut again = ExperimentConfig::load(&manifest_path).unwrap();
    assert_eq!(again, c);
    again.output_dir = tmp.path().join("b");
    run_experiment(&again).unwrap();

    let a = read_dir_sorted(&tmp.path().join("a"));
    let b = read_dir_sorted(&tmp.path().join("b"));
    assert_eq!(a.len(), b.len());
    for ((na, ca), (nb, cb)) in a.iter().zip(&b) {
        assert_eq!(na, nb);
        if na != "manifest.json" {
            assert!(ca == cb, "{na} differs");
        }
    }
    let manifest: Manifest =
        Manifest::from_json_str(&std::fs::read_to_string(&manifest_path).unwrap()).unwrap();
    assert!(manifest.files.contains(&"trace_01_x-2.csv".to_string()));

    // The run report records the tuned filter strength and explicit seeds.
    let report: TraceReport = serde_json::from_value(first.report).unwrap();
    assert_eq!(report.runs[1].seed, 42);
    assert!((report.runs[0].sigma_h - 0.37).abs() < 1e-3);
}

#[test]
fn trace_csv_format_contract() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = ExperimentConfig::new(ExperimentKind::Trace, 16);
    c.runs = vec![RunSpec {
        x_target: 2,
        seed: Some(3),
        alpha: None,
    }];
    c.time.t_max = 10.0;
    c.stochastic.fit_gamma = false;
    c.output_dir = tmp.path().to_path_buf();
    run_experiment(&c).unwrap();
    let text = std::fs::read_to_string(tmp.path().join("trace_00_x2.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + 20 + 1);
    for l in &lines {
        assert_eq!(l.split(',').count(), 1 + 4 + 9);
    }
    let back = ObservableTrace::read_csv(text.as_bytes()).unwrap();
    assert_eq!(back.x_values, (-8..=8).step_by(2).collect::<Vec<_>>());
    assert_eq!(back.times.last(), Some(&10.0));
}

#[test]
fn transition_matrix_experiment_n8() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = ExperimentConfig::new(ExperimentKind::TransitionMatrix, 8);
    c.runs = vec![RunSpec {
        x_target: 2,
        seed: None,
        alpha: None,
    }];
    c.time.t_max = 30.0;
    c.stochastic.seeds_per_column = 2;
    c.output_dir = tmp.path().to_path_buf();
    let out = run_experiment(&c).unwrap();
    let rep: TransitionReport = serde_json::from_value(out.report).unwrap();
    assert!(rep.max_column_sum_error < 1e-12);
    assert!(rep.irreducible);
    assert_eq!(rep.seeds.len(), 5);
    assert!(rep.seeds.iter().all(|s| s.len() == 2));
    let w = std::fs::read_to_string(tmp.path().join("transition_matrix.csv")).unwrap();
    assert!(w.starts_with("X\\Y,-4,-2,0,2,4\n-4,"));
    let markov = std::fs::read_to_string(tmp.path().join("markov_00_x2.csv")).unwrap();
    assert_eq!(markov.lines().count(), 1 + 3);
}

#[test]
fn alignment_of_relaxation_traces_n16() {
    let sys = LadderSystem::with_defaults(16).unwrap();
    let series: Vec<Vec<f64>> = [6, 4, 2]
        .iter()
        .map(|&x| {
            let seed = 900 + x as u64;
            let alpha = tune_alpha(seed, Some(x), 0.37, 0.0, &sys).unwrap();
            let recipe = PrepRecipe {
                seed,
                x_target: Some(x),
                alpha,
                e0: 0.0,
                target_sigma_h: 0.37,
            };
            let omega = prepare_omega(&recipe, &sys).unwrap();
            evolve_and_trace(&omega, &sys, 150.0, 0.5).unwrap().mean_x
        })
        .collect();
    let al = time_shift_align(&series, 0.5).unwrap();
    let spread = series[0][0] - series[2][0];
    assert_eq!(al.shifts[0], 0.0);
    // Later-starting curves sit further along the common relaxation path.
    assert!(al.shifts[1] < 0.0 && al.shifts[2] < al.shifts[1], "{:?}", al.shifts);
    assert!(al.residual_rms < 0.1 * spread, "{} vs {spread}", al.residual_rms);
}
