use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use aj_cli::checkpoint;
use aj_core::nets::{Activation, MlpParams};

fn aj(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aj"))
        .args(args)
        .env("AJ_LOG", "quiet")
        .output()
        .expect("failed to launch aj")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn synth_config(out: &str, extra: &str) -> String {
    format!(
        "game.k = 2\ngame.epochs = 1\ngame.batch_size = 64\ngame.data_hidden = 16\ngame.jscc_hidden = 8\n\
         data.source = synth\ndata.synth_kind = gaussian\ndata.n = 4\ndata.train_count = 256\ndata.eval_count = 200\n\
         run.output_dir = {out}\nrun.sample_count = 3\n{extra}"
    )
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn minimal_synth_run_writes_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.cfg", &synth_config("out", ""));
    let o = aj(&["train", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = tmp.path().join("out");
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(
        lines[0],
        "epoch,data_mse,jscc_mse,dpc,mean_skew_abs,mean_exkurt_abs,mean_ks,mean_norm,mean_power"
    );
    assert!(lines[1].starts_with("1,"));
    assert!(!lines[1].split(',').nth(2).unwrap().is_empty());
    assert!(out.join("resolved-config.txt").exists());
    assert!(out.join("checkpoint.txt").exists());
    let nets = checkpoint::load(&out.join("checkpoint.ajlk")).unwrap();
    assert_eq!(nets.len(), 4);
    assert_eq!(fs::read_dir(out.join("samples")).unwrap().count(), 3);
}

#[test]
fn control_run_leaves_jscc_column_empty() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "ctl.cfg",
        &synth_config("out", "game.regularizer = none\ngame.eta = 0\n"),
    );
    let o = aj(&["train", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics = fs::read_to_string(tmp.path().join("out/metrics.csv")).unwrap();
    let row = metrics.lines().nth(1).unwrap();
    assert_eq!(row.split(',').nth(2), Some(""));
    assert_eq!(checkpoint::load(&tmp.path().join("out/checkpoint.ajlk")).unwrap().len(), 2);
}

#[test]
fn resolved_config_reproduces_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "a.cfg",
        &synth_config("first", "game.epochs = 2\ngame.regularizer = mmd\n").replace("game.epochs = 1\n", ""),
    );
    let o = aj(&["train", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let first = fs::read_to_string(tmp.path().join("first/metrics.csv")).unwrap();
    let resolved = fs::read_to_string(tmp.path().join("first/resolved-config.txt")).unwrap();
    let second_dir = tmp.path().join("second");
    let replay = resolved.replace(
        &format!("run.output_dir = {}", tmp.path().join("first").display()),
        &format!("run.output_dir = {}", second_dir.display()),
    );
    assert_ne!(replay, resolved);
    let cfg2 = write_config(tmp.path(), "b.cfg", &replay);
    let o = aj(&["train", cfg2.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(second_dir.join("metrics.csv")).unwrap(), first);
    assert_eq!(first.lines().count(), 3);
}

#[test]
fn eval_every_thins_metric_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "e.cfg",
        &synth_config("out", "game.epochs = 3\nrun.eval_every = 2\n").replace("game.epochs = 1\n", ""),
    );
    let o = aj(&["train", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics = fs::read_to_string(tmp.path().join("out/metrics.csv")).unwrap();
    let epochs: Vec<&str> = metrics.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(epochs, ["2", "3"]);
}

#[test]
fn bad_config_exits_2_with_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.cfg", "game.k = 2\n# ok\ngame.eta = much\n");
    let o = aj(&["train", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.cfg:3"), "{}", stderr(&o));
}

#[test]
fn missing_data_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "d.cfg",
        "data.train_images = nowhere/train\ndata.eval_images = nowhere/eval\nrun.output_dir = out\n",
    );
    let o = aj(&["train", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn divergence_exits_4_with_position() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "nan.cfg", &synth_config("out", "game.lr = 1e200\n"));
    let o = aj(&["train", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("epoch 1, step"), "{}", stderr(&o));
}

#[test]
fn oracle_default_game_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "o.cfg", "oracle.k = 1\nrun.output_dir = out\n");
    let o = aj(&["oracle", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = fs::read_to_string(tmp.path().join("out/oracle-report.csv")).unwrap();
    assert!(report.starts_with("check_name,value,threshold,pass\n"));
    assert!(report.contains("\nD_star,0.5,"), "{report}");
    assert!(report.lines().skip(1).all(|l| l.ends_with(",pass")), "{report}");
    assert!(report.contains("matching_uniform"));
    assert!(tmp.path().join("out/oracle-saddle.csv").exists());
}

#[test]
fn oracle_zero_transmit_power_exits_5() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "o.cfg", "oracle.p_t = 0\nrun.output_dir = out\n");
    let o = aj(&["oracle", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(5), "{}", stderr(&o));
}

#[test]
fn oracle_requires_block() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "o.cfg", "game.k = 2\n");
    assert_eq!(aj(&["oracle", cfg.to_str().unwrap()]).status.code(), Some(2));
}

fn flat_reconstructor(k: usize, n: usize) -> MlpParams {
    let mut r = MlpParams::init(&[k, 5, n], Activation::Relu, Activation::Sigmoid, false, 1).unwrap();
    for w in &mut r.weights {
        w.data_mut().fill(0.0);
    }
    r
}

fn save_checkpoint(dir: &Path) -> PathBuf {
    let path = dir.join("ck.ajlk");
    let r = flat_reconstructor(2, 16);
    checkpoint::save(&path, &[("reconstructor", &r)]).unwrap();
    path
}

#[test]
fn generate_untrained_is_mid_grey() {
    let tmp = tempfile::tempdir().unwrap();
    let ck = save_checkpoint(tmp.path());
    let out = tmp.path().join("imgs");
    let o = aj(&["generate", ck.to_str().unwrap(), "--count", "2", "--seed", "5", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let bytes = fs::read(out.join("sample_0000.pgm")).unwrap();
    let header = b"P5\n4 4\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    assert!(bytes[header.len()..].iter().all(|&b| b == 128));
}

#[test]
fn generate_is_deterministic_and_handles_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("ck.ajlk");
    let r = MlpParams::init(&[2, 5, 9], Activation::Relu, Activation::Sigmoid, false, 3).unwrap();
    checkpoint::save(&path, &[("reconstructor", &r)]).unwrap();
    let run = |dir: &str, count: &str| {
        let out = tmp.path().join(dir);
        let o = aj(&["generate", path.to_str().unwrap(), "--count", count, "--seed", "7", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        out
    };
    let a = run("a", "3");
    let b = run("b", "3");
    for i in 0..3 {
        let f = format!("sample_{i:04}.pgm");
        assert_eq!(fs::read(a.join(&f)).unwrap(), fs::read(b.join(&f)).unwrap());
    }
    let empty = run("empty", "0");
    assert_eq!(fs::read_dir(empty).unwrap().count(), 0);
}

#[test]
fn generate_rejects_other_versions() {
    let tmp = tempfile::tempdir().unwrap();
    let ck = save_checkpoint(tmp.path());
    let mut bytes = fs::read(&ck).unwrap();
    bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
    fs::write(&ck, bytes).unwrap();
    let out = tmp.path().join("imgs");
    let o = aj(&["generate", ck.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(6), "{}", stderr(&o));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "cfg") {
            aj_cli::config::ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 7);
}
