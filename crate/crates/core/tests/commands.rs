use std::fs;
use std::path::{Path, PathBuf};

use trustfl::commands::{self, CommandError, RunManifest, METRICS_COLUMNS};
use trustfl::config::{ConfigError, ExperimentConfig};
use trustfl::dataset;
use trustfl::engine::ExperimentReport;
use trustfl::parallel::Execution;

fn spam_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/spambase.data")
}

fn manifest(out: &Path, overrides: &[&str], seeds: Vec<u64>) -> RunManifest {
    let mut all = vec![format!("spam_path={}", spam_path().display())];
    all.extend(overrides.iter().map(|s| s.to_string()));
    RunManifest::new(None, &all, out.to_path_buf(), seeds).unwrap()
}

#[test]
fn real_spambase_loads() {
    let ds = dataset::load_spambase(spam_path()).unwrap();
    assert_eq!(ds.len(), 4597);
    assert_eq!(ds.n_features, 57);
    assert_eq!(ds.class_counts(), vec![2785, 1812]);
}

#[test]
fn one_round_writes_header_and_two_rows() {
    let dir = tempfile::tempdir().unwrap();
    commands::run_command(&manifest(dir.path(), &["rounds=1"], vec![]), Execution::Sequential).unwrap();
    let csv = fs::read_to_string(dir.path().join("seed-0/metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], METRICS_COLUMNS.join(","));
    assert!(lines[1].starts_with("0,") && lines[2].starts_with("1,"));
    assert!(dir.path().join("seed-0/report.json").exists());
    assert!(dir.path().join("summary.csv").exists());
}

#[test]
fn rerun_is_byte_identical() {
    let files = |dir: &Path| {
        ["seed-5/metrics.csv", "seed-6/metrics.csv", "summary.csv"]
            .iter()
            .map(|f| fs::read(dir.join(f)).unwrap())
            .collect::<Vec<_>>()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        commands::run_command(&manifest(d.path(), &["rounds=40"], vec![5, 6]), Execution::Parallel).unwrap();
    }
    assert_eq!(files(a.path()), files(b.path()));
}

#[test]
fn empty_sweep_fails_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let err = commands::sweep_command(&manifest(&out, &[], vec![]), "sigma2", &[], Execution::Sequential).unwrap_err();
    assert!(matches!(err, CommandError::Usage(_)));
    assert_eq!(err.exit_code(), 2);
    assert!(!out.exists());
}

#[test]
fn bad_sweep_value_fails_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let values = ["0".to_string(), "lots".to_string()];
    let err = commands::sweep_command(&manifest(&out, &[], vec![]), "sigma2", &values, Execution::Sequential).unwrap_err();
    assert!(matches!(err, CommandError::Config(ConfigError::Type { .. })), "{err}");
    assert!(!out.exists());
}

#[test]
fn unwritable_output_fails_before_compute() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "not a directory").unwrap();
    let err = commands::run_command(&manifest(&blocker.join("out"), &[], vec![]), Execution::Sequential).unwrap_err();
    assert!(matches!(err, CommandError::Io { .. }), "{err}");
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn report_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    commands::run_command(
        &manifest(dir.path(), &["rounds=15", "q=0.5", "attack=sign_flip", "rule=cw_median"], vec![9]),
        Execution::Sequential,
    )
    .unwrap();
    let text = fs::read_to_string(dir.path().join("seed-9/report.json")).unwrap();
    let report = ExperimentReport::from_json(&text).unwrap();
    let again = trustfl::engine::run_experiment(&report.config).unwrap();
    assert_eq!(again.rounds, report.rounds);
    assert_eq!(again.final_params, report.final_params);

    let pairs: Vec<String> = report.config.to_pairs().into_iter().map(|(k, v)| format!("{k}={v}")).collect();
    let reparsed = RunManifest::new(None, &pairs, dir.path().to_path_buf(), vec![]).unwrap();
    assert_eq!(reparsed.config, report.config);
}

#[test]
fn sweep_rows_cover_every_round_seed_and_value() {
    let dir = tempfile::tempdir().unwrap();
    let values: Vec<String> = ["0", "0.5", "1"].iter().map(|s| s.to_string()).collect();
    let m = manifest(dir.path(), &["rounds=12", "eval_every=5"], vec![1, 2]);
    let out = commands::sweep_command(&m, "q", &values, Execution::Parallel).unwrap();
    // rounds 0, 5, 10 and the final 12
    let evaluated = 4;
    let long = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(long.lines().count(), 1 + evaluated * 2 * 3);
    assert!(long.lines().next().unwrap().starts_with("axis_value,seed,round,"));
    assert_eq!(out.summary.len(), 3);
    for v in &values {
        for s in [1, 2] {
            let csv = fs::read_to_string(dir.path().join(format!("q={v}/seed-{s}/metrics.csv"))).unwrap();
            assert_eq!(csv.lines().count(), 1 + evaluated);
        }
    }
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);
    assert!(walk(dir.path()).iter().all(|p| p.extension().is_none_or(|e| e != "partial")));
}

#[test]
fn single_override_changes_only_that_key() {
    let base = ExperimentConfig::parse(None, &[]).unwrap();
    let changed = ExperimentConfig::parse(None, &[("q".into(), "0.5".into())]).unwrap();
    assert_eq!(ExperimentConfig { q: 0.5, ..base }, changed);
}

#[test]
fn misspelt_key_suggests_the_right_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.cfg");
    fs::write(&path, "sgima2 = 0.3\n").unwrap();
    let err = ExperimentConfig::parse(Some(&path), &[]).unwrap_err();
    let ConfigError::UnknownKey { suggestion, .. } = &err else {
        panic!("{err}");
    };
    assert_eq!(suggestion.as_deref(), Some("sigma2"));
    assert!(err.to_string().contains("sigma2"));
}

#[test]
fn empty_file_gives_the_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.cfg");
    fs::write(&path, "").unwrap();
    let cfg = ExperimentConfig::parse(Some(&path), &[]).unwrap();
    assert_eq!(cfg, ExperimentConfig::default());
    assert_eq!(cfg.n_clients, 20);
    assert_eq!(cfg.byzantine_ids.len(), 4);
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}
