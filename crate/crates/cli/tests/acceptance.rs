//! CLI acceptance: determinism of full forecast runs at any parallelism
//! (criterion 10) plus the command-level contracts — exit codes, default
//! seed counts, integer outputs, idempotent caches.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gloft"))
}

struct Workspace {
    dir: PathBuf,
}

impl Workspace {
    fn new(name: &str) -> Self {
        let dir = std::env::temp_dir().join(format!("gloft_cli_{}_{}", name, std::process::id()));
        std::fs::remove_dir_all(&dir).ok();
        std::fs::create_dir_all(&dir).unwrap();
        Workspace { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write(&self, name: &str, contents: &str) -> PathBuf {
        let path = self.path(name);
        std::fs::write(&path, contents).unwrap();
        path
    }
}

impl Drop for Workspace {
    fn drop(&mut self) {
        std::fs::remove_dir_all(&self.dir).ok();
    }
}

/// Deterministic little synthetic collection: seasonal counts, period 12.
fn series_csv(count: usize, len: usize, integer: bool) -> String {
    let mut out = String::new();
    let mut state = 88172645463325252u64;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    for s in 0..count {
        let base = 40.0 + 40.0 * next();
        let amp = base * (0.2 + 0.2 * next());
        let phase = std::f64::consts::TAU * next();
        out.push_str(&format!("s{s}"));
        for t in 0..len {
            let v = base
                + amp * (std::f64::consts::TAU * t as f64 / 12.0 + phase).sin()
                + (next() - 0.5) * 0.05 * base;
            if integer {
                out.push_str(&format!(",{}", v.round().max(0.0)));
            } else {
                out.push_str(&format!(",{v:.4}"));
            }
        }
        out.push('\n');
    }
    out
}

fn manifest_json(integer: bool) -> String {
    format!(
        "{{\"name\":\"demo\",\"period\":12,\"horizon\":6,\"integer_valued\":{integer},\
         \"files\":[\"series.csv\"]}}"
    )
}

fn tiny_config() -> &'static str {
    r#"{
  "architecture": "stacked_mw",
  "cell": "gru",
  "optimizer": "cocob",
  "pipeline": "stl",
  "input_window_variant": "small",
  "hyperparameters": {
    "minibatch_size": 4,
    "epochs": 1,
    "epoch_size": 1,
    "noise_sigma": 0.0,
    "l2_psi": 0.0,
    "cell_dim": 4,
    "layers": 1,
    "init_sigma": 0.05
  }
}"#
}

fn run_ok(cmd: &mut Command) {
    let output = cmd.output().unwrap();
    assert!(
        output.status.success(),
        "command failed: {}\n{}",
        output.status,
        String::from_utf8_lossy(&output.stderr)
    );
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

#[test]
fn criterion_10_forecast_runs_are_byte_identical_at_any_parallelism() {
    let ws = Workspace::new("determinism");
    ws.write("series.csv", &series_csv(8, 60, false));
    let manifest = ws.write("manifest.json", &manifest_json(false));
    let config = ws.write("config.json", tiny_config());

    let mut ensembles = Vec::new();
    for (label, jobs) in [("a", "1"), ("b", "4"), ("c", "2")] {
        let out = ws.path(&format!("out_{label}"));
        run_ok(bin().args([
            "--seed",
            "99",
            "--jobs",
            jobs,
            "--out",
            out.to_str().unwrap(),
            "forecast",
            "--manifest",
            manifest.to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
            "--seeds",
            "1,2,3",
        ]));
        ensembles.push(read(&out.join("forecast_ensemble.csv")));
    }
    assert_eq!(ensembles[0], ensembles[1], "jobs=1 vs jobs=4 differ");
    assert_eq!(ensembles[0], ensembles[2], "jobs=1 vs jobs=2 differ");

    // And an identical rerun reproduces the bytes exactly.
    let out = ws.path("out_rerun");
    run_ok(bin().args([
        "--seed",
        "99",
        "--jobs",
        "3",
        "--out",
        out.to_str().unwrap(),
        "forecast",
        "--manifest",
        manifest.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--seeds",
        "1,2,3",
    ]));
    assert_eq!(ensembles[0], read(&out.join("forecast_ensemble.csv")));
    println!(
        "criterion 10 determinism: PASS (byte-identical ensembles at jobs 1, 2 and 4, and on rerun)"
    );
}

#[test]
fn forecast_default_runs_ten_seeds_and_explicit_seeds_are_honored() {
    let ws = Workspace::new("seeds");
    ws.write("series.csv", &series_csv(6, 48, false));
    let manifest = ws.write("manifest.json", &manifest_json(false));
    let config = ws.write("config.json", tiny_config());

    let out = ws.path("out_default");
    run_ok(bin().args([
        "--out",
        out.to_str().unwrap(),
        "--jobs",
        "4",
        "forecast",
        "--manifest",
        manifest.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
    ]));
    let per_seed = std::fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            name.starts_with("forecast_seed") && name.ends_with(".csv")
        })
        .count();
    assert_eq!(per_seed, 10, "default run must emit ten per-seed files");
    assert!(out.join("forecast_ensemble.csv").exists());

    let out3 = ws.path("out_three");
    run_ok(bin().args([
        "--out",
        out3.to_str().unwrap(),
        "forecast",
        "--manifest",
        manifest.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--seeds",
        "5,6,7",
    ]));
    for seed in ["5", "6", "7"] {
        assert!(out3.join(format!("forecast_seed{seed}.csv")).exists());
    }
    let per_seed = std::fs::read_dir(&out3)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with("forecast_seed"))
        .count();
    assert_eq!(per_seed, 3);
}

#[test]
fn integer_collections_get_non_negative_integer_forecasts() {
    let ws = Workspace::new("integer");
    ws.write("series.csv", &series_csv(6, 48, true));
    let manifest = ws.write("manifest.json", &manifest_json(true));
    let config = ws.write("config.json", tiny_config());

    let out = ws.path("out");
    run_ok(bin().args([
        "--out",
        out.to_str().unwrap(),
        "forecast",
        "--manifest",
        manifest.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--seeds",
        "1,2",
    ]));
    let text = std::fs::read_to_string(out.join("forecast_ensemble.csv")).unwrap();
    for line in text.lines() {
        for field in line.split(',').skip(1) {
            let v: f64 = field.parse().unwrap();
            assert!(v >= 0.0, "negative forecast {v}");
            assert_eq!(v, v.round(), "non-integer forecast {v}");
        }
    }
}

#[test]
fn missing_input_file_exits_with_code_two() {
    let ws = Workspace::new("missing");
    let out = ws.path("out");
    let output = bin()
        .args([
            "--out",
            out.to_str().unwrap(),
            "preprocess",
            "--manifest",
            ws.path("nope.json").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("nope.json"), "{stderr}");
}

#[test]
fn mismatched_series_ids_exit_with_code_three_listing_them() {
    let ws = Workspace::new("mismatch");
    let truth = ws.write("truth.csv", "a,1,2\nb,3,4\n");
    let forecast = ws.write("model.csv", "a,1,2\nzzz,3,4\n");
    let out = ws.path("out");
    let output = bin()
        .args([
            "--out",
            out.to_str().unwrap(),
            "evaluate",
            "--truth",
            truth.to_str().unwrap(),
            "--forecasts",
            forecast.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("zzz"), "{stderr}");
    assert!(stderr.contains('b'), "{stderr}");
}

#[test]
fn evaluate_scores_zero_for_perfect_forecasts_and_ranks_two_models() {
    let ws = Workspace::new("evaluate");
    let truth = ws.write("truth.csv", "a,10,20,30\nb,5,6,7\n");
    let perfect = ws.write("perfect.csv", "a,10,20,30\nb,5,6,7\n");
    let off = ws.write("off.csv", "a,11,21,31\nb,6,7,8\n");
    let out = ws.path("out");
    run_ok(bin().args([
        "--out",
        out.to_str().unwrap(),
        "evaluate",
        "--truth",
        truth.to_str().unwrap(),
        "--forecasts",
        perfect.to_str().unwrap(),
        off.to_str().unwrap(),
    ]));
    let summary = std::fs::read_to_string(out.join("summary.tsv")).unwrap();
    let perfect_line = summary.lines().find(|l| l.starts_with("perfect")).unwrap();
    let fields: Vec<&str> = perfect_line.split('\t').collect();
    assert_eq!(
        fields[1], "0",
        "mean smape of a perfect forecast: {summary}"
    );
    // Rank columns are populated when two models are compared.
    assert_eq!(fields[5], "1", "perfect model must rank first: {summary}");
    let off_line = summary.lines().find(|l| l.starts_with("off")).unwrap();
    assert_eq!(off_line.split('\t').nth(5).unwrap(), "2");
}

#[test]
fn snaive_scores_zero_on_a_strictly_periodic_continuation() {
    let ws = Workspace::new("snaive");
    // Strictly periodic series: the naive continuation is exact.
    let mut rows = String::new();
    let mut truth = String::new();
    for s in 0..3 {
        let cycle: Vec<f64> = (0..12).map(|k| 10.0 + s as f64 + k as f64).collect();
        rows.push_str(&format!("p{s}"));
        for t in 0..48 {
            rows.push_str(&format!(",{}", cycle[t % 12]));
        }
        rows.push('\n');
        truth.push_str(&format!("p{s}"));
        for t in 48..54 {
            truth.push_str(&format!(",{}", cycle[t % 12]));
        }
        truth.push('\n');
    }
    ws.write("series.csv", &rows);
    let truth = ws.write("truth.csv", &truth);
    let manifest = ws.write("manifest.json", &manifest_json(false));

    let out = ws.path("out");
    run_ok(bin().args([
        "--out",
        out.to_str().unwrap(),
        "baseline",
        "--manifest",
        manifest.to_str().unwrap(),
        "--kind",
        "snaive",
    ]));
    run_ok(bin().args([
        "--out",
        out.to_str().unwrap(),
        "evaluate",
        "--truth",
        truth.to_str().unwrap(),
        "--forecasts",
        out.join("baseline_snaive.csv").to_str().unwrap(),
    ]));
    let summary = std::fs::read_to_string(out.join("summary.tsv")).unwrap();
    let line = summary.lines().nth(1).unwrap();
    assert_eq!(line.split('\t').nth(1).unwrap(), "0", "{summary}");
}

#[test]
fn ridge_baseline_records_lag_metadata() {
    let ws = Workspace::new("ridgemeta");
    ws.write("series.csv", &series_csv(5, 50, false));
    let manifest = ws.write("manifest.json", &manifest_json(false));
    let out = ws.path("out");
    run_ok(bin().args([
        "--out",
        out.to_str().unwrap(),
        "baseline",
        "--manifest",
        manifest.to_str().unwrap(),
        "--kind",
        "ridge-pooled",
        "--lags",
        "10",
        "--lambda",
        "0.05",
    ]));
    let meta = std::fs::read_to_string(out.join("baseline_ridge-pooled.meta.json")).unwrap();
    assert!(meta.contains("\"lags\": 10"), "{meta}");
    assert!(meta.contains("\"lambda\": 0.05"), "{meta}");
}

#[test]
fn unknown_baseline_kind_is_a_usage_error() {
    let ws = Workspace::new("badkind");
    ws.write("series.csv", &series_csv(3, 48, false));
    let manifest = ws.write("manifest.json", &manifest_json(false));
    let output = bin()
        .args([
            "baseline",
            "--manifest",
            manifest.to_str().unwrap(),
            "--kind",
            "prophet",
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("prophet"), "{stderr}");
}

#[test]
fn preprocess_writes_one_cache_file_per_series_and_stage() {
    let ws = Workspace::new("cachelayout");
    let n_series = 4;
    ws.write("series.csv", &series_csv(n_series, 48, false));
    let manifest = ws.write("manifest.json", &manifest_json(false));
    let out = ws.path("out");
    run_ok(bin().args([
        "--out",
        out.to_str().unwrap(),
        "preprocess",
        "--manifest",
        manifest.to_str().unwrap(),
    ]));
    let files: Vec<String> = std::fs::read_dir(out.join("cache"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(files.len(), n_series * 3, "{files:?}");
    for s in 0..n_series {
        for stage in ["train", "validation", "test"] {
            assert!(
                files
                    .iter()
                    .any(|f| f.contains(&format!("_{stage}__s{s}."))),
                "missing cache for series s{s} stage {stage}: {files:?}"
            );
        }
    }
}

#[test]
fn preprocess_reruns_are_byte_identical() {
    let ws = Workspace::new("cache");
    ws.write("series.csv", &series_csv(4, 48, false));
    let manifest = ws.write("manifest.json", &manifest_json(false));
    let mut snapshots = Vec::new();
    for label in ["x", "y"] {
        let out = ws.path(&format!("out_{label}"));
        run_ok(bin().args([
            "--out",
            out.to_str().unwrap(),
            "preprocess",
            "--manifest",
            manifest.to_str().unwrap(),
        ]));
        let cache = out.join("cache");
        let mut files: Vec<PathBuf> = std::fs::read_dir(&cache)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        files.sort();
        assert!(!files.is_empty());
        let blob: Vec<(String, Vec<u8>)> = files
            .iter()
            .map(|p| {
                (
                    p.file_name().unwrap().to_string_lossy().into_owned(),
                    read(p),
                )
            })
            .collect();
        snapshots.push(blob);
    }
    assert_eq!(snapshots[0], snapshots[1]);
}

#[test]
fn tune_rerun_reproduces_the_trial_log_modulo_timing() {
    let ws = Workspace::new("tune");
    ws.write("series.csv", &series_csv(6, 48, false));
    let manifest = ws.write("manifest.json", &manifest_json(false));
    let space = ws.write(
        "space.json",
        r#"{
  "minibatch_size": [3, 6], "epochs": [1, 2], "epoch_size": [1, 1],
  "noise_sigma": [0.0, 0.01], "l2_psi": [0.0, 0.0001],
  "cell_dim": [4, 6], "layers": [1, 1], "init_sigma": [0.01, 0.1]
}"#,
    );
    let strip_seconds = |text: &str| -> Vec<String> {
        text.lines()
            .map(|l| {
                let mut cols: Vec<&str> = l.split(',').collect();
                cols.pop();
                cols.join(",")
            })
            .collect()
    };
    let mut logs = Vec::new();
    for label in ["p", "q"] {
        let out = ws.path(&format!("out_{label}"));
        run_ok(bin().args([
            "--seed",
            "21",
            "--out",
            out.to_str().unwrap(),
            "tune",
            "--manifest",
            manifest.to_str().unwrap(),
            "--space",
            space.to_str().unwrap(),
            "--arch",
            "stacked",
            "--cell",
            "gru",
            "--optimizer",
            "cocob",
            "--iterations",
            "3",
        ]));
        logs.push((
            strip_seconds(&std::fs::read_to_string(out.join("trials.csv")).unwrap()),
            read(&out.join("best_config.json")),
        ));
    }
    assert_eq!(logs[0].0, logs[1].0, "trial logs differ beyond timing");
    assert_eq!(logs[0].1, logs[1].1, "best configs differ");
}

#[test]
fn cache_dir_env_var_overrides_location() {
    let ws = Workspace::new("cachedir");
    ws.write("series.csv", &series_csv(3, 48, false));
    let manifest = ws.write("manifest.json", &manifest_json(false));
    let custom = ws.path("custom_cache");
    let out = ws.path("out");
    let output = bin()
        .env("FORECAST_CACHE_DIR", custom.to_str().unwrap())
        .args([
            "--out",
            out.to_str().unwrap(),
            "preprocess",
            "--manifest",
            manifest.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(output.status.success());
    assert!(custom.exists());
    assert!(!out.join("cache").exists());
}

#[test]
fn mixed_horizon_collections_forecast_per_group_in_input_order() {
    let ws = Workspace::new("mixedh");
    // Per-series horizon column: three series at 6 steps, three at 12.
    let mut rows = String::new();
    let mut state = 0x9e3779b97f4a7c15u64;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    for s in 0..6 {
        let horizon = if s % 2 == 0 { 6 } else { 12 };
        let base = 40.0 + 30.0 * next();
        rows.push_str(&format!("m{s},{horizon}"));
        for t in 0..72 {
            let v = base
                + 0.3 * base * (std::f64::consts::TAU * t as f64 / 12.0).sin()
                + (next() - 0.5) * base * 0.02;
            rows.push_str(&format!(",{v:.4}"));
        }
        rows.push('\n');
    }
    ws.write("series.csv", &rows);
    let manifest = ws.write(
        "manifest.json",
        r#"{"name":"mixed","period":12,"horizon":12,"integer_valued":false,
            "files":["series.csv"],"horizon_column":true}"#,
    );
    let config = ws.write("config.json", tiny_config());
    let out = ws.path("out");
    run_ok(bin().args([
        "--out",
        out.to_str().unwrap(),
        "forecast",
        "--manifest",
        manifest.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--seeds",
        "1,2",
    ]));
    let text = std::fs::read_to_string(out.join("forecast_ensemble.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 6);
    for (s, line) in lines.iter().enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[0], format!("m{s}"), "series order must match input");
        let expected = if s % 2 == 0 { 6 } else { 12 };
        assert_eq!(fields.len() - 1, expected, "row {s} width");
    }
}

#[test]
fn missing_values_need_an_imputation_policy() {
    let ws = Workspace::new("impute");
    let mut rows = series_csv(4, 48, false);
    // Punch a hole into the first series.
    let first_comma = rows.find(',').unwrap();
    let second_comma = rows[first_comma + 1..].find(',').unwrap() + first_comma + 1;
    rows.replace_range(first_comma + 1..second_comma, "");
    ws.write("series.csv", &rows);
    let manifest = ws.write("manifest.json", &manifest_json(false));
    let config = ws.write("config.json", tiny_config());

    let out = ws.path("out");
    let refused = bin()
        .args([
            "--out",
            out.to_str().unwrap(),
            "forecast",
            "--manifest",
            manifest.to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
            "--seeds",
            "1",
        ])
        .output()
        .unwrap();
    assert_eq!(refused.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&refused.stderr).contains("--impute"));

    run_ok(bin().args([
        "--out",
        out.to_str().unwrap(),
        "forecast",
        "--manifest",
        manifest.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--seeds",
        "1",
        "--impute",
        "median-by-phase",
    ]));
    assert!(out.join("forecast_ensemble.csv").exists());
}

#[test]
fn tuning_with_adam_requires_and_uses_a_learning_rate_range() {
    let ws = Workspace::new("adamtune");
    ws.write("series.csv", &series_csv(6, 48, false));
    let manifest = ws.write("manifest.json", &manifest_json(false));
    let space = ws.write(
        "space.json",
        r#"{
  "minibatch_size": [3, 6], "epochs": [1, 2], "epoch_size": [1, 1],
  "learning_rate": [0.001, 0.1],
  "noise_sigma": [0.0, 0.01], "l2_psi": [0.0, 0.0001],
  "cell_dim": [4, 6], "layers": [1, 1], "init_sigma": [0.01, 0.1]
}"#,
    );
    let out = ws.path("out");
    run_ok(bin().args([
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
        "tune",
        "--manifest",
        manifest.to_str().unwrap(),
        "--space",
        space.to_str().unwrap(),
        "--arch",
        "stacked",
        "--cell",
        "gru",
        "--optimizer",
        "adam",
        "--iterations",
        "2",
    ]));
    let best = std::fs::read_to_string(out.join("best_config.json")).unwrap();
    assert!(best.contains("\"learning_rate\""), "{best}");
    let trials = std::fs::read_to_string(out.join("trials.csv")).unwrap();
    for line in trials.lines().skip(1) {
        let lr: f64 = line.split(',').nth(4).unwrap().parse().unwrap();
        assert!((0.001..=0.1).contains(&lr), "{line}");
    }

    // The same space with cocob is refused: no learning rate is allowed.
    let refused = bin()
        .args([
            "--out",
            out.to_str().unwrap(),
            "tune",
            "--manifest",
            manifest.to_str().unwrap(),
            "--space",
            space.to_str().unwrap(),
            "--arch",
            "stacked",
            "--cell",
            "gru",
            "--optimizer",
            "cocob",
            "--iterations",
            "1",
        ])
        .output()
        .unwrap();
    assert_eq!(refused.status.code(), Some(3));
}
