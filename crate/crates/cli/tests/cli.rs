//! End-to-end tests of the `attmerge` binary: exit codes, determinism,
//! and output shapes for every subcommand.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_attmerge"))
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("exp.cfg");
    let base = "\
seed = 11
model.head = recurrent
model.recurrent_hidden = 2
schedule.total_epochs = 12
schedule.warmup_epochs = 5
schedule.unfreeze_epoch = 11
schedule.peak_lr = 3e-2
schedule.decay = 0.9
train.batch_size = 8
train.adam_beta2 = 0.99
train.adam_epsilon = 1e-12
data.num_utts = 30
data.frames_min = 5
data.frames_max = 9
";
    fs::write(&path, format!("{base}{extra}")).unwrap();
    path
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn attmerge");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn run_err(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn attmerge");
    assert!(
        !out.status.success(),
        "command unexpectedly succeeded\nstdout: {}",
        String::from_utf8_lossy(&out.stdout)
    );
    out
}

fn dir_digest(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut entries: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    entries
}

#[test]
fn gen_data_is_deterministic_and_respects_force() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "model.merge = linm\n");
    let out_a = tmp.path().join("ds_a");
    let out_b = tmp.path().join("ds_b");

    run_ok(bin().args(["gen-data", "--config"]).arg(&config).arg("--out").arg(&out_a));
    run_ok(bin().args(["gen-data", "--config"]).arg(&config).arg("--out").arg(&out_b));

    // 2 * num_utts stacks plus key and manifest
    let names: Vec<String> = dir_digest(&out_a).into_iter().map(|(n, _)| n).collect();
    assert_eq!(names.len(), 62);
    assert!(names.contains(&"key.txt".to_string()));
    assert!(names.contains(&"manifest.txt".to_string()));

    // byte-identical trees for the same seed
    assert_eq!(dir_digest(&out_a), dir_digest(&out_b));

    // refuses to clobber without --force, replaces with it
    let err = run_err(bin().args(["gen-data", "--config"]).arg(&config).arg("--out").arg(&out_a));
    assert!(String::from_utf8_lossy(&err.stderr).contains("--force"));
    run_ok(
        bin()
            .args(["gen-data", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out_a)
            .arg("--force"),
    );

    // different seed produces different bytes
    let out_c = tmp.path().join("ds_c");
    run_ok(
        bin()
            .args(["gen-data", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out_c)
            .args(["--seed", "99"]),
    );
    assert_ne!(dir_digest(&out_a), dir_digest(&out_c));
}

#[test]
fn gen_data_rejects_invalid_band() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "data.band_lo = 5\ndata.band_hi = 2\n");
    let out = run_err(
        bin()
            .args(["gen-data", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(tmp.path().join("ds")),
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("band"));
}

fn prepare_dataset(tmp: &TempDir, config: &Path, name: &str, seed: u64) -> PathBuf {
    let dir = tmp.path().join(name);
    run_ok(
        bin()
            .args(["gen-data", "--config"])
            .arg(config)
            .arg("--out")
            .arg(&dir)
            .args(["--seed", &seed.to_string()]),
    );
    dir
}

#[test]
fn train_evaluate_inspect_roundtrip() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "model.merge = linm\n");
    let train_dir = prepare_dataset(&tmp, &config, "train_set", 11);

    let config_with_data = tmp.path().join("train.cfg");
    fs::write(
        &config_with_data,
        format!(
            "{}train.data = {}\n",
            fs::read_to_string(&config).unwrap(),
            train_dir.display()
        ),
    )
    .unwrap();

    let run_dir = tmp.path().join("run");
    run_ok(
        bin()
            .args(["train", "--config"])
            .arg(&config_with_data)
            .arg("--out")
            .arg(&run_dir),
    );
    let checkpoint = run_dir.join("checkpoint.embp");
    assert!(checkpoint.exists());

    // log: header + one row per epoch, frozen flag flips at epoch 11
    let log = fs::read_to_string(run_dir.join("train_log.csv")).unwrap();
    let rows: Vec<&str> = log.lines().collect();
    assert_eq!(rows[0], "epoch,lr,frozen_flag,train_loss,dev_eer");
    assert_eq!(rows.len(), 13);
    assert!(rows[10].split(',').nth(2) == Some("true"));
    assert!(rows[11].split(',').nth(2) == Some("false"));

    // evaluate on two datasets (the training set and a shifted-seed set)
    let other = prepare_dataset(&tmp, &config, "other_set", 12);
    let eval_dir = tmp.path().join("eval");
    let out = run_ok(
        bin()
            .args(["evaluate", "--config"])
            .arg(&config_with_data)
            .arg("--checkpoint")
            .arg(&checkpoint)
            .arg("--out")
            .arg(&eval_dir)
            .args(["--workers", "3"])
            .arg(&train_dir)
            .arg(&other),
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.matches("EER").count(), 3, "{stdout}");
    assert!(stdout.contains("avg:"));

    let report = fs::read_to_string(eval_dir.join("eer_report.csv")).unwrap();
    assert!(report.starts_with("system,train_set,other_set,avg\n"));
    // a converged run scores its own training set near zero
    let row: Vec<&str> = report.lines().nth(1).unwrap().split(',').collect();
    let train_eer: f64 = row[1].parse().unwrap();
    assert!(train_eer <= 0.05, "training-set EER {train_eer}");
    assert!(eval_dir.join("scores_train_set.txt").exists());
    assert!(eval_dir.join("scores_other_set.txt").exists());
    let det = fs::read_to_string(eval_dir.join("det_train_set.csv")).unwrap();
    assert!(det.starts_with("far,frr\n"));
    assert!(det.lines().count() > 2);

    // workers must not change the scores
    let eval_serial = tmp.path().join("eval_serial");
    run_ok(
        bin()
            .args(["evaluate", "--config"])
            .arg(&config_with_data)
            .arg("--checkpoint")
            .arg(&checkpoint)
            .arg("--out")
            .arg(&eval_serial)
            .arg(&train_dir)
            .arg(&other),
    );
    assert_eq!(
        fs::read(eval_dir.join("scores_train_set.txt")).unwrap(),
        fs::read(eval_serial.join("scores_train_set.txt")).unwrap()
    );

    // inspect-weights prints a CSV with one row per layer
    let out = run_ok(bin().args(["inspect-weights", "--checkpoint"]).arg(&checkpoint));
    let csv = String::from_utf8_lossy(&out.stdout);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("layer_index,weight"));
    let weights: Vec<f64> = lines
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(weights.len(), 6);
    let total: f64 = weights.iter().sum();
    assert!((total - 1.0).abs() < 1e-9);
}

#[test]
fn evaluate_fails_cleanly_without_key_file() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "model.merge = linm\n");
    let train_dir = prepare_dataset(&tmp, &config, "train_set", 11);

    let config_with_data = tmp.path().join("train.cfg");
    fs::write(
        &config_with_data,
        format!(
            "{}train.data = {}\n",
            fs::read_to_string(&config).unwrap(),
            train_dir.display()
        ),
    )
    .unwrap();
    let run_dir = tmp.path().join("run");
    run_ok(
        bin()
            .args(["train", "--config"])
            .arg(&config_with_data)
            .arg("--out")
            .arg(&run_dir),
    );

    // dataset directory without a key file
    let broken = prepare_dataset(&tmp, &config, "broken_set", 13);
    fs::remove_file(broken.join("key.txt")).unwrap();
    let eval_dir = tmp.path().join("eval_broken");
    run_err(
        bin()
            .args(["evaluate", "--config"])
            .arg(&config_with_data)
            .arg("--checkpoint")
            .arg(run_dir.join("checkpoint.embp"))
            .arg("--out")
            .arg(&eval_dir)
            .arg(&broken),
    );
    // no partial outputs
    assert!(!eval_dir.exists() || fs::read_dir(&eval_dir).unwrap().next().is_none());
}

#[test]
fn train_surfaces_config_errors_before_running() {
    let tmp = TempDir::new().unwrap();
    // unknown key
    let bad = tmp.path().join("bad.cfg");
    fs::write(&bad, "model.mrege = attm\n").unwrap();
    let out = run_err(
        bin()
            .args(["train", "--config"])
            .arg(&bad)
            .arg("--out")
            .arg(tmp.path().join("run")),
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key"));

    // missing dataset path
    let config = write_config(tmp.path(), "train.data = /nonexistent/dataset\n");
    run_err(
        bin()
            .args(["train", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(tmp.path().join("run2")),
    );
}

#[test]
fn inspect_weights_requires_dataset_for_attentive_checkpoints() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "model.merge = attm\n");
    let train_dir = prepare_dataset(&tmp, &config, "train_set", 11);
    let config_with_data = tmp.path().join("train.cfg");
    fs::write(
        &config_with_data,
        format!(
            "{}train.data = {}\n",
            fs::read_to_string(&config).unwrap(),
            train_dir.display()
        ),
    )
    .unwrap();
    let run_dir = tmp.path().join("run");
    run_ok(
        bin()
            .args(["train", "--config"])
            .arg(&config_with_data)
            .arg("--out")
            .arg(&run_dir),
    );
    let checkpoint = run_dir.join("checkpoint.embp");

    let out = run_err(bin().args(["inspect-weights", "--checkpoint"]).arg(&checkpoint));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--dataset"));

    let out = run_ok(
        bin()
            .args(["inspect-weights", "--checkpoint"])
            .arg(&checkpoint)
            .arg("--dataset")
            .arg(&train_dir),
    );
    let csv = String::from_utf8_lossy(&out.stdout);
    assert_eq!(csv.lines().count(), 7);
    for line in csv.lines().skip(1) {
        let gate: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(gate > 0.0 && gate < 1.0, "gate {gate} outside (0,1)");
    }
}

#[test]
fn gradcheck_passes_and_detects_injected_fault() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "model.merge = attm\n");

    let out = run_ok(bin().args(["gradcheck", "--config"]).arg(&config));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 5, "one line per trainable block: {stdout}");
    for block in ["attm", "linm", "head-recurrent", "head-pooling", "encoder"] {
        assert!(
            lines.iter().any(|l| l.contains(block) && l.ends_with("PASS")),
            "missing pass line for {block}: {stdout}"
        );
    }

    let out = run_err(
        bin()
            .args(["gradcheck", "--config"])
            .arg(&config)
            .args(["--fault", "encoder"]),
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("encoder") && stdout.contains("FAIL"), "{stdout}");
}

#[test]
fn train_respects_fixed_strategy_flag_column() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "model.merge = linm\nschedule.strategy = fixed\n");
    let train_dir = prepare_dataset(&tmp, &config, "train_set", 11);
    let config_with_data = tmp.path().join("train.cfg");
    fs::write(
        &config_with_data,
        format!(
            "{}train.data = {}\n",
            fs::read_to_string(&config).unwrap(),
            train_dir.display()
        ),
    )
    .unwrap();
    let run_dir = tmp.path().join("run");
    run_ok(
        bin()
            .args(["train", "--config"])
            .arg(&config_with_data)
            .arg("--out")
            .arg(&run_dir),
    );
    let log = fs::read_to_string(run_dir.join("train_log.csv")).unwrap();
    for row in log.lines().skip(1) {
        assert_eq!(row.split(',').nth(2), Some("true"), "fixed regime row: {row}");
    }
}
