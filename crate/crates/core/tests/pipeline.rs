use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use sto_hopfield::codec::NoiseSpec;
use sto_hopfield::engine::PrepareMode;
use sto_hopfield::experiment::{self, ExperimentError, ExperimentSpec, Kind};
use tempfile::TempDir;

/// 4x3 images, two of them, two trials each, short recognition.
fn small(out: &Path) -> ExperimentSpec {
    let mut s = ExperimentSpec {
        rows: Some(4),
        cols: Some(3),
        images: Some(2),
        trials: Some(2),
        out: out.to_path_buf(),
        seed: 17,
        ..ExperimentSpec::default()
    };
    s.network.prepare_mode = PrepareMode::Direct;
    s.network.t_recognize = 0.5e-6;
    s.network.kappa = 100e-9;
    s
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn csv(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path).unwrap().lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn dataset_is_byte_identical_per_seed() {
    let (a, b, c) = (TempDir::new().unwrap(), TempDir::new().unwrap(), TempDir::new().unwrap());
    experiment::run_gen_dataset(&small(a.path())).unwrap();
    experiment::run_gen_dataset(&small(b.path())).unwrap();
    experiment::run_gen_dataset(&ExperimentSpec { seed: 18, ..small(c.path()) }).unwrap();
    let ds = |d: &TempDir| tree(&d.path().join("dataset"));
    assert_eq!(ds(&a), ds(&b));
    assert_ne!(ds(&a), ds(&c));
    assert_eq!(ds(&a).len(), 4);
}

#[test]
fn stored_images_are_fixed_points_without_noise() {
    let dir = TempDir::new().unwrap();
    let spec = ExperimentSpec { noise: NoiseSpec::none(), ..small(dir.path()) };
    let r = experiment::run_retrieve(&spec).unwrap();
    assert_eq!(r.records.len(), 4);
    assert_eq!(r.success_rate(), 1.0);
    assert!(r.mean_final_delta() < 0.01, "{}", r.mean_final_delta());
}

#[test]
fn trained_file_round_trips_through_retrieve() {
    let dir = TempDir::new().unwrap();
    let mut spec = ExperimentSpec { noise: NoiseSpec::none(), ..small(&dir.path().join("train")) };
    let weights = experiment::run_train(&spec).unwrap();
    spec.weights = Some(weights.clone());
    spec.out = dir.path().join("retrieve");
    let r = experiment::run_retrieve(&spec).unwrap();
    assert!(r.warnings.is_empty(), "{:?}", r.warnings);
    assert_eq!(r.success_rate(), 1.0);

    // weights from another dataset still load, with a warning
    spec.seed = 99;
    spec.out = dir.path().join("other");
    let r = experiment::run_retrieve(&spec).unwrap();
    assert_eq!(r.warnings.len(), 1);
    assert!(r.warnings[0].contains("different pattern set"));
}

#[test]
fn outputs_independent_of_thread_count() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let mut spec = small(a.path());
    spec.network.prepare_mode = PrepareMode::Physical;
    spec.network.bias_dispersion = 1e-5;
    spec.snapshot_times = vec![0.0, 0.25e-6];
    experiment::run_retrieve(&ExperimentSpec { threads: Some(1), ..spec.clone() }).unwrap();
    experiment::run_retrieve(&ExperimentSpec { threads: Some(3), out: b.path().to_path_buf(), ..spec }).unwrap();
    let (ta, mut tb) = (tree(a.path()), tree(b.path()));
    // config.json records the thread count and output path
    tb.insert("config.json".into(), ta[Path::new("config.json")].clone());
    assert_eq!(ta, tb);
    assert!(ta.contains_key(Path::new("snapshots/image01_trial01_t250ns.json")));
    assert!(ta.contains_key(Path::new("snapshots/image00_trial00_query.json")));
}

#[test]
fn summary_matches_traces() {
    let dir = TempDir::new().unwrap();
    experiment::run_retrieve(&small(dir.path())).unwrap();
    let rows = csv(&dir.path().join("summary.csv"));
    assert_eq!(rows.len(), 4);
    for row in rows {
        let (image, trial): (usize, usize) = (row[0].parse().unwrap(), row[1].parse().unwrap());
        let trace = csv(&dir.path().join(format!("traces/image{image:02}_trial{trial:02}.csv")));
        let delta_col = trace[0].len() - 2;
        assert_eq!(row[4], trace[0][delta_col]);
        assert_eq!(row[5], trace.last().unwrap()[delta_col]);
    }
}

#[test]
fn kappa_sweep_pairs_draws() {
    let dir = TempDir::new().unwrap();
    let mut spec = small(dir.path());
    spec.kappas = vec![0.0, 30e-9, 100e-9];
    spec.network.bias_dispersion = 1e-4;
    let sweep = experiment::run_sweep_kappa(&spec).unwrap();
    let rows = csv(&dir.path().join("trials.csv"));
    let per_point = 4;
    for k in 1..3 {
        for j in 0..per_point {
            // same query and bias draws: identical error at t = 0
            assert_eq!(rows[j][4], rows[k * per_point + j][4]);
        }
    }
    // without feedback the error only drifts through bias spread
    let m0 = &sweep.mean_delta[0];
    assert!((m0[m0.len() - 1] - m0[0]).abs() < 0.05);
    assert!(sweep.mean_delta[2].last().unwrap() < m0.last().unwrap());
    assert_eq!(csv(&dir.path().join("sweep.csv")).len(), 3);
    assert_eq!(csv(&dir.path().join("error_vs_time.csv"))[0].len(), 4);
}

#[test]
fn dispersion_sweep_counts_every_point() {
    let dir = TempDir::new().unwrap();
    let mut spec = small(dir.path());
    spec.dispersions = vec![0.0, 1e-2];
    spec.kappas = vec![100e-9];
    let r = experiment::run_sweep_dispersion(&spec).unwrap();
    assert_eq!(r.results.len(), 1);
    assert_eq!(r.results[0].success_rate.len(), 2);
    assert_eq!(csv(&dir.path().join("sweep.csv")).len(), 2);
    assert_eq!(csv(&dir.path().join("trials.csv")).len(), 8);
}

#[test]
fn cd_on_clean_weights_changes_little() {
    let dir = TempDir::new().unwrap();
    let spec = ExperimentSpec { corruption: 0.0, iterations: 3, ..small(dir.path()) };
    let r = experiment::run_cd_train(&spec).unwrap();
    assert_eq!(r.mean_delta.len(), 3);
    assert!(r.mean_delta.iter().all(|d| *d < 0.01), "{:?}", r.mean_delta);
    assert!(r.max_hermitian_defect < 1e-12);
    assert_eq!(csv(&dir.path().join("cd_train.csv")).len(), 3);
    assert!(dir.path().join("weights_final.bin").exists());
}

#[test]
fn list_and_range_errors_are_config_errors() {
    let dir = TempDir::new().unwrap();
    let spec = small(dir.path());
    let cases = [
        (ExperimentSpec { amplitudes: vec![], ..spec.clone() }, Kind::LockCharacterize),
        (ExperimentSpec { dispersions: vec![], ..spec.clone() }, Kind::SweepDispersion),
        (spec.clone(), Kind::SweepKappa),
        (ExperimentSpec { trials: Some(0), ..spec.clone() }, Kind::Retrieve),
        (ExperimentSpec { eta: -1.0, ..spec.clone() }, Kind::CdTrain),
    ];
    for (s, kind) in cases {
        let e = experiment::run(&s, kind).unwrap_err();
        assert!(matches!(e, ExperimentError::Config(_)), "{kind:?}: {e}");
        assert_eq!(e.exit_code(), 2);
    }
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_sto-hopfield")).args(args).output().unwrap()
}

#[test]
fn cli_runs_and_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("config.json");
    let mut spec = small(dir.path());
    spec.out = "unused".into();
    fs::write(&config, spec.to_json()).unwrap();
    let config = config.to_str().unwrap();
    for (sub, out) in [("retrieve", "a"), ("retrieve", "b")] {
        let o = dir.path().join(out);
        let r = cli(&["--config", config, "--out", o.to_str().unwrap(), "--threads", "1", sub]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    }
    let (a, mut b) = (tree(&dir.path().join("a")), tree(&dir.path().join("b")));
    b.insert("config.json".into(), a[Path::new("config.json")].clone());
    assert_eq!(a, b);
}

#[test]
fn cli_exit_codes() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"no_such_field": 1}"#).unwrap();
    assert_eq!(cli(&["--config", bad.to_str().unwrap(), "retrieve"]).status.code(), Some(2));
    assert_eq!(cli(&["--scale", "huge", "train"]).status.code(), Some(2));
    assert_eq!(cli(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(cli(&["--help"]).status.code(), Some(0));

    let mut spec = small(dir.path());
    spec.weights = Some(dir.path().join("missing.bin"));
    let cfg = dir.path().join("missing.json");
    fs::write(&cfg, spec.to_json()).unwrap();
    assert_eq!(cli(&["--config", cfg.to_str().unwrap(), "retrieve"]).status.code(), Some(1));
}
