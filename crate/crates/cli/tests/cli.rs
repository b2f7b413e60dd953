use std::path::Path;
use std::process::{Command, Output};

use memtopo_core::data::write_idx;

fn memtopo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_memtopo"))
        .args(args)
        .env_remove("MEMTOPO_DATA")
        .output()
        .expect("spawn memtopo")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// A tiny stand-in digit set: each class is a bar at its own position.
fn tiny_idx(dir: &Path, n: usize) {
    let mut images = vec![0u8; n * 784];
    let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
    for (i, &l) in labels.iter().enumerate() {
        let img = &mut images[i * 784..(i + 1) * 784];
        for r in 4..24 {
            for c in 0..3 {
                img[r * 28 + 2 + 2 * l as usize + c] = 200 + (i % 50) as u8;
            }
        }
    }
    write_idx(dir.join("images-idx3-ubyte.gz"), &[n, 28, 28], &images).unwrap();
    write_idx(dir.join("labels-idx1-ubyte.gz"), &[n], &labels).unwrap();
}

fn value(out: &str, key: &str) -> String {
    out.lines()
        .find_map(|l| l.strip_prefix(key).map(|v| v.trim().to_string()))
        .unwrap_or_else(|| panic!("no `{key}` in {out}"))
}

#[test]
fn unknown_flag_fails() {
    let o = memtopo(&["train", "--no-such-flag"]);
    assert!(!o.status.success());
    assert!(!memtopo(&["frobnicate"]).status.success());
}

#[test]
fn malformed_config_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "seed = 1\n[train]\nepochs = \"many\"\n").unwrap();
    let o = memtopo(&["train", "--config", cfg.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
}

#[test]
fn missing_data_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = memtopo(&["train", "--seed", "1", "--data-root", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("does not exist"));
}

#[test]
fn config_prints_parseable_toml() {
    let s = stdout(&memtopo(&["config", "--seed", "4", "--task", "mnist-inpaint"]));
    let c = memtopo_core::config::RunConfig::from_toml_str(&s).unwrap();
    assert_eq!(c.seed, 4);
}

#[test]
fn train_eval_sweep_report() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    tiny_idx(root, 60);
    let out = root.join("run");
    let r = root.to_str().unwrap();
    let o = out.to_str().unwrap();
    let args = [
        "train",
        "--seed",
        "3",
        "--data-root",
        r,
        "--n-train",
        "40",
        "--n-test",
        "20",
        "--epochs",
        "1",
        "--out",
        o,
    ];
    let train_out = stdout(&memtopo(&args));
    assert!(out.join("model.ckpt").exists());
    assert!(out.join("config.toml").exists());
    let hist = std::fs::read_to_string(out.join("history.csv")).unwrap();
    assert_eq!(hist.lines().count(), 2, "{hist}");

    let ckpt = out.join("model.ckpt");
    let c = ckpt.to_str().unwrap();
    let eval_out = stdout(&memtopo(&["eval", "--checkpoint", c]));
    assert_eq!(value(&train_out, "accuracy"), value(&eval_out, "accuracy"));
    assert_eq!(value(&eval_out, "n_samples"), "20");

    let sweep = out.join("sweep.csv");
    let s = sweep.to_str().unwrap();
    stdout(&memtopo(&["sweep", "--checkpoint", c, "--thresholds", "0.3,0.5,0.9", "--out", s]));
    let text = std::fs::read_to_string(&sweep).unwrap();
    assert_eq!(text.lines().count(), 4, "{text}");

    let rep = root.join("report");
    let md = stdout(&memtopo(&[
        "report",
        s,
        out.join("history.csv").to_str().unwrap(),
        "--out-dir",
        rep.to_str().unwrap(),
    ]));
    assert!(md.contains("| threshold |"));
    assert!(rep.join("summary.md").exists());
    assert!(rep.join("tradeoff.svg").exists());
    assert!(rep.join("history.svg").exists());

    let emb = out.join("emb.csv");
    let e = stdout(&memtopo(&[
        "export-embeddings",
        "--checkpoint",
        c,
        "--out",
        emb.to_str().unwrap(),
        "--clusters",
        "10",
    ]));
    let ari: f64 = value(&e, "ari").parse().unwrap();
    assert!((-1.0..=1.0).contains(&ari));
    assert_eq!(std::fs::read_to_string(&emb).unwrap().lines().count(), 21);
}

#[test]
fn sweep_needs_thresholds_or_scales() {
    let o = memtopo(&["sweep", "--checkpoint", "x.ckpt"]);
    assert!(!o.status.success());
}

#[test]
fn report_rejects_unknown_csv() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.csv");
    std::fs::write(&p, "a,b\n1,2\n").unwrap();
    let o = memtopo(&["report", p.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
}

#[test]
fn synth_nmnist_writes_aer() {
    let dir = tempfile::tempdir().unwrap();
    tiny_idx(dir.path(), 12);
    let ev = dir.path().join("events");
    let args = [
        "synth-nmnist",
        "--data-root",
        dir.path().to_str().unwrap(),
        "--out",
        ev.to_str().unwrap(),
        "--limit",
        "12",
    ];
    stdout(&memtopo(&args));
    let ds = memtopo_core::data::load_nmnist_dir(&ev, 10).unwrap();
    assert_eq!(ds.len(), 12);
}
