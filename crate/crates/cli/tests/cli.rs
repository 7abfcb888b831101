use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use spsnn::datasets::yinyang::encode_all;
use spsnn::datasets::{generate_yinyang, write_spike_file, SpikeDataset};

const TINY: &str = r#"
[network]
n_hidden = 12

[train]
epochs = 2
batch_size = 20
warmup_steps = 2
decay_steps = 6

[data]
train_size = 60
test_size = 30
"#;

fn spsnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spsnn"))
        .args(args)
        .env("SPSNN_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

fn final_test_accuracy(metrics: &str) -> f64 {
    metrics
        .lines()
        .filter(|l| l.split(',').nth(1) == Some("test"))
        .last()
        .and_then(|l| l.split(',').nth(3))
        .unwrap()
        .parse()
        .unwrap()
}

#[test]
fn unknown_config_key_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[train]\nlearnin_rate = 0.1\n");
    let out = dir.path().join("out");
    let o = spsnn(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learnin_rate"), "{}", stderr(&o));
}

#[test]
fn train_is_deterministic_and_eval_reproduces_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = spsnn(&["train", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "3"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let metrics = fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert_eq!(metrics, fs::read_to_string(b.join("metrics.csv")).unwrap());
    assert_eq!(fs::read(a.join("model.spnn")).unwrap(), fs::read(b.join("model.spnn")).unwrap());
    assert!(metrics.starts_with("epoch,split,loss,accuracy,lr,sparsity,param_count,clamp_count,silent_count\n"));
    for split in ["train", "test"] {
        let rows = metrics.lines().filter(|l| l.split(',').nth(1) == Some(split)).count();
        assert_eq!(rows, 2, "{split}");
    }
    let echoed = fs::read_to_string(a.join("config.toml")).unwrap();
    assert!(echoed.contains("seed = 3"), "{echoed}");

    let ckpt = a.join("model.spnn");
    let o = spsnn(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--config", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    let acc: f64 = stdout(&o)
        .lines()
        .find_map(|l| l.strip_prefix("accuracy "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((acc - final_test_accuracy(&metrics)).abs() < 1e-9);

    let o = spsnn(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--config", &cfg, "--sp", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("sparsity 1.000000"), "{}", stdout(&o));
}

#[test]
fn eval_reads_spike_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("m");
    assert!(spsnn(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let data = SpikeDataset {
        n_neurons: 5,
        n_classes: 3,
        samples: encode_all(&generate_yinyang(30, 43), 10.0),
    };
    let file = dir.path().join("test.spkf");
    write_spike_file(&file, &data).unwrap();
    let o = spsnn(&[
        "eval",
        "--checkpoint",
        out.join("model.spnn").to_str().unwrap(),
        "--dataset",
        file.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("samples 30"), "{}", stdout(&o));
}

#[test]
fn gradcheck_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    // Defaults: dt = 1e-4, tolerance 1e-2.
    let o = spsnn(&["gradcheck"]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("positions"));
    let o = spsnn(&["gradcheck", "--dt", "1e-3", "--tolerance", "0"]);
    assert_eq!(o.status.code(), Some(1));
    let cfg = write_config(dir.path(), "[network]\ndims = 0\n");
    let o = spsnn(&["gradcheck", "--config", &cfg]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("weights"));
    assert!(!stdout(&o).contains("positions"));
}

#[test]
fn degenerate_sweep_matches_train() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let t = dir.path().join("t");
    let s = dir.path().join("s");
    assert!(spsnn(&["train", "--config", &cfg, "--out", t.to_str().unwrap(), "--seed", "1"]).status.success());
    let o = spsnn(&[
        "sweep", "--config", &cfg, "--out", s.to_str().unwrap(), "--axis", "dimension", "--values", "2", "--seeds",
        "1", "--seed", "1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read_to_string(t.join("metrics.csv")).unwrap(),
        fs::read_to_string(s.join("runs/dimension_2_seed1.csv")).unwrap()
    );
}

#[test]
fn sweeps_aggregate_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let s = dir.path().join("dims");
    let o = spsnn(&[
        "sweep", "--config", &cfg, "--out", s.to_str().unwrap(), "--axis", "dimension", "--values", "0,inf", "--seeds",
        "2", "--jobs", "2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(s.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("dimension,0,dense,2,"));
    assert!(rows[1].starts_with("dimension,inf,dense,2,"));
    assert_eq!(fs::read_dir(s.join("runs")).unwrap().count(), 4);

    let p = dir.path().join("sp");
    let o = spsnn(&[
        "sweep", "--config", &cfg, "--out", p.to_str().unwrap(), "--axis", "sparsity", "--values", "0.5", "--seeds", "1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(p.join("sweep.csv")).unwrap();
    let variants: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(2).unwrap()).collect();
    assert_eq!(variants, ["dyn", "dense", "stat"]);
}
