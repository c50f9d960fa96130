use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use reset_opt_cli::aggregate::SeedTable;
use reset_opt_cli::ExperimentConfig;

const BASE: &str = r#"
repetitions = 2
seed_base = 11

[data]
source = "blobs"
val_fraction = 0.25
noise = { kind = "symmetric", rate = 0.3 }

[data.blobs]
classes = 3
per_class = 40
test_per_class = 10
dim = 4
separation = 3.0

[network]
preset = "fcn"
hidden = 8

[train]
lr = 0.05
batch_size = 8
total_iters = 200

[train.reset]
reset_probability = 0.05
patience = 20
validation_interval = 10

[diagnose]
every = 50
diffusion_samples = 16
smoothing_window = 2

[mfpt]
diffusion = [1.0]
drift = [0.0]
gammas = [0.0, 1.0]
trajectories = 500
max_time = 50.0
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_reset-opt"));
    c.env_remove("RESET_OPT_OUT");
    c
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run(cmd: &str, cfg: &Path, out: &Path) -> Output {
    bin()
        .args([cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &BASE.replace("hidden = 8", "hidden = 8\nwidht = 3"));
    let o = run("train", &cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("widht"), "{}", stderr(&o));
}

#[test]
fn invalid_values_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    for (from, to) in [
        ("reset_probability = 0.05", "reset_probability = 1.5"),
        ("rate = 0.3", "rate = 1.3"),
        ("batch_size = 8", "batch_size = 0"),
    ] {
        let cfg = write_config(dir.path(), "c.toml", &BASE.replace(from, to));
        let o = run("train", &cfg, &dir.path().join("out"));
        assert_eq!(o.status.code(), Some(2), "{to}: {}", stderr(&o));
    }
}

#[test]
fn missing_config_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("mfpt", &dir.path().join("nope.toml"), &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn divergence_is_a_numeric_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &BASE.replace("lr = 0.05", "lr = 1e250"));
    let o = run("train", &cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn out_dir_defaults_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", BASE);
    let target = dir.path().join("from_env");
    let o = bin()
        .args(["mfpt", "--config", cfg.to_str().unwrap()])
        .env("RESET_OPT_OUT", &target)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(target.join("mfpt.csv").is_file());
    assert!(target.join("run.json").is_file());
}

#[test]
fn seed_base_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", BASE);
    let out = dir.path().join("o");
    let o = bin()
        .args(["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed-base", "40"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("runs/seed_40/metrics.csv").is_file());
    assert!(out.join("runs/seed_41/metrics.csv").is_file());
    assert!(out.join("baseline/seed_40/metrics.csv").is_file());
    let meta: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(meta["seeds"], serde_json::json!([40, 41]));
}

#[test]
fn mfpt_without_resetting_is_infinite_and_censored() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", BASE);
    let out = dir.path().join("o");
    assert!(run("mfpt", &cfg, &out).status.success());
    let mut rd = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(out.join("mfpt.csv"))
        .unwrap();
    let header = rd.headers().unwrap().clone();
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 2);
    let zero = &rows[0];
    assert_eq!(zero[col("gamma")].parse::<f64>().unwrap(), 0.0);
    assert!(zero[col("mfpt_closed")].parse::<f64>().unwrap().is_infinite());
    assert!(zero[col("censored")].parse::<u64>().unwrap() > 0);
    let meta = std::fs::read_to_string(out.join("run.json")).unwrap();
    assert!(meta.contains("censor"), "{meta}");
}

#[test]
fn clean_labels_leave_cross_cosine_empty() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &BASE.replace("rate = 0.3", "rate = 0.0"));
    let out = dir.path().join("o");
    let o = run("diagnose", &cfg, &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut rd = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(out.join("runs/seed_11/diagnostics.csv"))
        .unwrap();
    let header = rd.headers().unwrap().clone();
    assert_eq!(header.iter().collect::<Vec<_>>(), reset_opt::diag::DIAG_HEADER);
    let cw = header.iter().position(|h| h == "cos_cw").unwrap();
    let tc = header.iter().position(|h| h == "cos_tc").unwrap();
    let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 4);
    for r in &rows {
        assert_eq!(&r[cw], "");
        assert!(!r[tc].is_empty());
    }
}

#[test]
fn aggregation_refuses_mixed_config_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_config(dir.path(), "a.toml", BASE);
    let b = write_config(dir.path(), "b.toml", &BASE.replace("lr = 0.05", "lr = 0.04"));
    for (cfg, o) in [(&a, "oa"), (&b, "ob")] {
        assert!(run("train", cfg, &dir.path().join(o)).status.success());
    }
    let read = |o: &str| SeedTable::read(std::fs::File::open(dir.path().join(o).join("runs.csv")).unwrap(), 0).unwrap();
    let (ta, tb) = (read("oa"), read("ob"));
    assert_eq!(ta.config_hash, ExperimentConfig::load(&a).unwrap().hash());
    assert!(SeedTable::merge(vec![ta.clone(), ta.clone()]).is_ok());
    let err = SeedTable::merge(vec![ta, tb]).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}
