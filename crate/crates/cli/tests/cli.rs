use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use icad_core::nn::Params;
use icad_core::trainer::load_checkpoint;
use icad_core::{IcadModel, ModelConfig};
use serde_json::Value;

fn icad(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_icad"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout_lines(o: &Output) -> Vec<String> {
    String::from_utf8(o.stdout.clone())
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect()
}

fn ok(o: Output) -> Output {
    assert_eq!(code(&o), 0, "stderr: {}", String::from_utf8_lossy(&o.stderr));
    o
}

/// Synthesise one task per modality and return the manifest paths.
fn synth(dir: &Path) -> Vec<PathBuf> {
    let o = ok(icad(dir, &["synth", "--tasks", "2", "--seed", "3", "--out", "s"]));
    stdout_lines(&o)
        .iter()
        .map(|l| {
            let v: Value = serde_json::from_str(l).unwrap();
            dir.join(v["path"].as_str().unwrap())
        })
        .collect()
}

const MODEL: &str = r#"
[model]
d_model = 16
heads = 2
layers = 1
prompt_len = 4
log_vocab = 40
log_layers = 1
"#;

fn write_config(dir: &Path, manifests: &[PathBuf], steps: usize, extra: &str) -> PathBuf {
    let list: Vec<String> = manifests
        .iter()
        .map(|p| format!("{:?}", p.display().to_string()))
        .collect();
    let text = format!(
        "seed = 1\nmanifests = [{}]\n{extra}\n{MODEL}\n[train]\nk = 3\nepochs = 1\nsteps_per_epoch = {steps}\nlearning_rate = 0.001\n[train.batch]\ntime_series = 2\ntabular = 2\nlog = 2\n",
        list.join(", ")
    );
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

fn by_modality(manifests: &[PathBuf], m: &str) -> PathBuf {
    manifests
        .iter()
        .find(|p| p.file_name().unwrap().to_str().unwrap().contains(m))
        .unwrap()
        .clone()
}

#[test]
fn prep_round_trips_synthetic_data_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let manifests = synth(dir.path());
    assert_eq!(manifests.len(), 6);
    let args: Vec<&str> = ["prep", "--out", "p1"]
        .into_iter()
        .chain(manifests.iter().map(|p| p.to_str().unwrap()))
        .collect();
    let first = ok(icad(dir.path(), &args));
    assert_eq!(stdout_lines(&first).len(), 6);
    let prepared = dir.path().join("p1/prepared");
    let snapshot = |d: &Path| {
        let mut files: Vec<_> = fs::read_dir(d).unwrap().map(|e| e.unwrap().path()).collect();
        files.sort();
        files.iter().map(|f| fs::read(f).unwrap()).collect::<Vec<_>>()
    };
    let before = snapshot(&prepared);
    ok(icad(dir.path(), &args));
    assert_eq!(snapshot(&prepared), before);

    // prepared json is accepted wherever a manifest is
    let json = prepared.join("synth-tabular-0.json");
    let handle: icad_core::DatasetHandle = serde_json::from_slice(&fs::read(&json).unwrap()).unwrap();
    assert_eq!(
        handle,
        icad_core::ingest::load_dataset(&by_modality(&manifests, "tabular-0")).unwrap()
    );
}

#[test]
fn missing_label_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifests = synth(dir.path());
    let m = by_modality(&manifests, "tabular-0");
    fs::remove_file(m.with_extension("labels")).unwrap();
    let o = icad(dir.path(), &["prep", m.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn usage_and_config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&icad(dir.path(), &[])), 1);
    assert_eq!(code(&icad(dir.path(), &["frobnicate"])), 1);
    fs::write(dir.path().join("bad.toml"), "seed = 1\nunknown_key = 2\n").unwrap();
    assert_eq!(code(&icad(dir.path(), &["--config", "bad.toml", "prep"])), 1);
    fs::write(dir.path().join("bad2.toml"), "[model]\nd_model = 15\nheads = 4\n").unwrap();
    assert_eq!(code(&icad(dir.path(), &["--config", "bad2.toml", "prep", "x.toml"])), 1);
    assert_eq!(code(&icad(dir.path(), &["--help"])), 0);
}

#[test]
fn zero_step_training_writes_the_initial_model() {
    let dir = tempfile::tempdir().unwrap();
    let manifests = synth(dir.path());
    let cfg = write_config(dir.path(), &manifests, 0, "");
    ok(icad(
        dir.path(),
        &["--config", cfg.to_str().unwrap(), "--out", "t", "train"],
    ));
    let ckpt = load_checkpoint(&dir.path().join("t/model.ckpt")).unwrap();
    assert_eq!(ckpt.step, 0);
    let init = IcadModel::<f32>::new(ckpt.model_config.clone(), 1).unwrap();
    assert_eq!(ckpt.params, init.flatten());
    let mc: ModelConfig = ckpt.model_config;
    assert_eq!(mc.d_model, 16);
    assert!(ckpt.inventory.is_some());
}

#[test]
fn fixed_seed_training_is_reproducible_and_artifacts_stay_in_out() {
    let dir = tempfile::tempdir().unwrap();
    let manifests = synth(dir.path());
    let cfg = write_config(dir.path(), &manifests, 4, "");
    let before: Vec<_> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    for out in ["a", "b"] {
        ok(icad(
            dir.path(),
            &["--config", cfg.to_str().unwrap(), "--out", out, "train"],
        ));
    }
    let mut after: Vec<_> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    after.retain(|f| !before.contains(f));
    after.sort();
    assert_eq!(after, vec!["a", "b"]);
    for f in ["train_log.jsonl", "model.ckpt"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        assert_eq!(a, fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
    }
    let config_of = |out: &str| {
        let text = fs::read_to_string(dir.path().join(out).join("run_config.toml")).unwrap();
        text.lines()
            .filter(|l| !l.starts_with("out ="))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(config_of("a"), config_of("b"));
    let log = fs::read_to_string(dir.path().join("a/train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 1);

    // a different seed trains a different model
    ok(icad(
        dir.path(),
        &["--config", cfg.to_str().unwrap(), "--out", "c", "--seed", "9", "train"],
    ));
    assert_ne!(
        fs::read(dir.path().join("a/model.ckpt")).unwrap(),
        fs::read(dir.path().join("c/model.ckpt")).unwrap()
    );
}

fn trained(dir: &Path) -> (Vec<PathBuf>, PathBuf, PathBuf) {
    let manifests = synth(dir);
    let cfg = write_config(dir, &manifests, 3, "");
    ok(icad(dir, &["--config", cfg.to_str().unwrap(), "--out", "run", "train"]));
    (manifests, cfg, dir.join("run/model.ckpt"))
}

fn eval_json(dir: &Path, cfg: &Path, ckpt: &Path, manifest: &Path, extra: &[&str]) -> Value {
    let mut args = vec![
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        "ev",
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        manifest.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    let o = ok(icad(dir, &args));
    serde_json::from_str(&stdout_lines(&o)[0]).unwrap()
}

#[test]
fn eval_routes_metrics_and_sweep_is_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let (manifests, cfg, ckpt) = trained(dir.path());
    let d = dir.path();
    let tab = by_modality(&manifests, "tabular-0");
    let ts = by_modality(&manifests, "time_series-0");
    let log = by_modality(&manifests, "log-1");
    assert_eq!(eval_json(d, &cfg, &ckpt, &tab, &[])["metric"], "auroc");
    assert_eq!(eval_json(d, &cfg, &ckpt, &ts, &[])["metric"], "f1_pa");
    assert_eq!(eval_json(d, &cfg, &ckpt, &log, &[])["metric"], "auroc");
    let hist = eval_json(d, &cfg, &ckpt, &tab, &["--histogram", "10"]);
    let table = fs::read_to_string(d.join("ev/hist-synth-tabular-0.tsv")).unwrap();
    assert_eq!(table.lines().count(), 11);
    let counted: u64 = table
        .lines()
        .skip(1)
        .map(|l| l.split('\t').skip(1).map(|c| c.parse::<u64>().unwrap()).sum::<u64>())
        .sum();
    assert_eq!(counted, hist["n_samples"].as_u64().unwrap());
    // a mismatched metric is honoured
    assert_eq!(
        eval_json(d, &cfg, &ckpt, &tab, &["--metric", "f1_pa"])["metric"],
        "f1_pa"
    );

    let k1 = eval_json(d, &cfg, &ckpt, &tab, &["--k", "1"]);
    let o = ok(icad(
        d,
        &[
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            "sw",
            "sweep-k",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--k-list",
            "1,2,3,5,7,10",
            tab.to_str().unwrap(),
        ],
    ));
    let lines = stdout_lines(&o);
    assert_eq!(lines.len(), 7);
    assert_eq!(lines[0], "k\tmean\tsynth-tabular-0");
    let row1: Vec<&str> = lines[1].split('\t').collect();
    assert_eq!(row1[0], "1");
    let v: f64 = row1[1].parse().unwrap();
    assert!((v - k1["value"].as_f64().unwrap()).abs() < 1e-6);
    assert_eq!(fs::read_to_string(d.join("sw/sweep_k.tsv")).unwrap().lines().count(), 7);
}

#[test]
fn score_writes_one_line_per_test_sample() {
    let dir = tempfile::tempdir().unwrap();
    let (manifests, cfg, ckpt) = trained(dir.path());
    let m = by_modality(&manifests, "log-0");
    ok(icad(
        dir.path(),
        &[
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            "sc",
            "score",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--threshold",
            "0.2",
            m.to_str().unwrap(),
        ],
    ));
    let handle = icad_core::ingest::load_dataset(&m).unwrap();
    let text = fs::read_to_string(dir.path().join("sc/scores-synth-log-0.jsonl")).unwrap();
    let rows: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), handle.test.len());
    for r in &rows {
        let s = r["score"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&s));
        assert_eq!(r["flagged"].as_bool().unwrap(), s >= 0.2);
    }
}

#[test]
fn single_class_test_split_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let (manifests, cfg, ckpt) = trained(dir.path());
    let m = by_modality(&manifests, "tabular-1");
    let labels = m.with_extension("labels");
    let zeros: String = fs::read_to_string(&labels).unwrap().lines().map(|_| "0\n").collect();
    fs::write(&labels, zeros).unwrap();
    let o = icad(
        dir.path(),
        &[
            "--config",
            cfg.to_str().unwrap(),
            "eval",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            m.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn prep_logs_emits_ids_and_a_shared_inventory() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("a.log"), "job 12 started\njob 99 finished\ndisk full\n").unwrap();
    fs::write(d.join("b.log"), "disk full\nconnected to 10.0.0.1\n").unwrap();
    let o = ok(icad(d, &["--out", "m", "prep-logs", "a.log", "b.log"]));
    assert_eq!(stdout_lines(&o).len(), 2);
    let ids_a = icad_core::ingest::read_template_ids(&d.join("m/a.ids")).unwrap();
    let ids_b = icad_core::ingest::read_template_ids(&d.join("m/b.ids")).unwrap();
    assert_eq!(ids_a, vec![0, 0, 1]);
    assert_eq!(ids_b, vec![1, 2]);
    let inv = icad_core::log_miner::read_inventory(&d.join("m/templates.jsonl")).unwrap();
    let texts: Vec<String> = inv.iter().map(|t| t.text()).collect();
    assert_eq!(texts, vec!["job <*> <*>", "disk full", "connected to <*>"]);

    // seeding from the inventory keeps ids aligned
    ok(icad(
        d,
        &["--out", "n", "prep-logs", "--inventory", "m/templates.jsonl", "b.log"],
    ));
    assert_eq!(icad_core::ingest::read_template_ids(&d.join("n/b.ids")).unwrap(), ids_b);
    assert_eq!(code(&icad(d, &["prep-logs"])), 1);
}
