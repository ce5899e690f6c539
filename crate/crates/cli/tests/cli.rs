use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use iwgan::metrics::mmd_metric;
use iwgan::nn::{Activation, Network};
use iwgan::rng::{Purpose, Stream};
use iwgan::Matrix;
use iwgan_cli::commands::{latent_sample, LatentPairsArgs};
use iwgan_cli::evaluation::load_model;
use tempfile::TempDir;

fn iwgan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iwgan"))
        .args(args)
        .env_remove("IWGAN_SEED")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = iwgan(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: impl AsRef<Path>) -> String {
    fs::read_to_string(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

fn rows(csv: &str) -> Vec<Vec<f64>> {
    csv.lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

const TINY: &str = r#"{
  "train": {
    "dataset": "ring",
    "latent_dim": 3,
    "batch_size": 16,
    "encoder_hidden": [8],
    "generator_hidden": [8],
    "critic_hidden": [8],
    "eval_size": 32,
    "w1_size": 16,
    "max_iters": MAX,
    "eval_interval": 2,
    "checkpoint_interval": 2,
    "tol_gap": 1e-300,
    "tol_loss": 1e-300,
    "seed": 3
  },
  "plots": true,
  "interpolation": { "pairs": 2, "lambdas": [0.0, 0.5, 1.0] },
  "eval": { "coverage_samples": 200, "w1_samples": 64, "mmd_samples": 64 }
}"#;

fn tiny_config(dir: &Path, max_iters: u64) -> PathBuf {
    let path = dir.join(format!("tiny-{max_iters}.json"));
    fs::write(&path, TINY.replace("MAX", &max_iters.to_string())).unwrap();
    path
}

fn train_tiny(dir: &Path, name: &str, max_iters: u64) -> PathBuf {
    let out = dir.join(name);
    ok(&["train", "--config", s(&tiny_config(dir, max_iters)), "--out-dir", s(&out)]);
    out
}

const TRAIN_OUTPUTS: [&str; 9] = [
    "resolved-config.json",
    "history.csv",
    "metrics.json",
    "interpolation.csv",
    "samples.svg",
    "heatmap.svg",
    "checkpoint/generator.json",
    "checkpoint/encoder.json",
    "checkpoint/optimizer.json",
];

#[test]
fn train_writes_every_artifact_deterministically() {
    let tmp = TempDir::new().unwrap();
    let a = train_tiny(tmp.path(), "a", 4);
    let b = train_tiny(tmp.path(), "b", 4);
    for f in TRAIN_OUTPUTS {
        assert_eq!(read(a.join(f)), read(b.join(f)), "{f} differs");
    }
    let history = read(a.join("history.csv"));
    assert_eq!(history.lines().next(), Some("iter,L,dual_gap,recon_err,mmd,w1,oracle_secs"));
    let iters: Vec<f64> = rows(&history).iter().map(|r| r[0]).collect();
    assert_eq!(iters, [0.0, 2.0, 4.0]);

    let metrics: serde_json::Value = serde_json::from_str(&read(a.join("metrics.json"))).unwrap();
    assert_eq!(metrics["status"], "max-iterations");
    assert_eq!(metrics["iterations"], 4);
    assert_eq!(metrics["eval"]["mode_coverage"]["per_mode"].as_array().unwrap().len(), 8);
    assert!(metrics["eval"]["w1"].as_f64().unwrap() > 0.0);

    let interp = read(a.join("interpolation.csv"));
    assert_eq!(interp.lines().next(), Some("pair,lambda,x0,x1,score"));
    assert_eq!(rows(&interp).len(), 6);
}

#[test]
fn resumed_training_matches_uninterrupted_run() {
    let tmp = TempDir::new().unwrap();
    let whole = train_tiny(tmp.path(), "whole", 8);
    let part = train_tiny(tmp.path(), "part", 4);
    ok(&["train", "--config", s(&tiny_config(tmp.path(), 8)), "--out-dir", s(&part), "--resume"]);
    for f in ["history.csv", "checkpoint/generator.json", "checkpoint/critic.json", "checkpoint/optimizer.json"] {
        assert_eq!(read(whole.join(f)), read(part.join(f)), "{f} differs");
    }
}

#[test]
fn dry_run_prints_defaults_without_training() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("minimal.json");
    fs::write(&cfg, r#"{"train": {"dataset": "grid"}}"#).unwrap();
    let out = tmp.path().join("never");
    let o = ok(&["train", "--config", s(&cfg), "--out-dir", s(&out), "--dry-run"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["train"]["batch_size"], 256);
    assert_eq!(v["train"]["latent_dim"], 5);
    assert_eq!(v["train"]["n_critic"], 5);
    assert_eq!(v["interpolation"]["lambdas"].as_array().unwrap().len(), 21);
    assert!(!out.exists());
}

#[test]
fn invalid_dataset_exits_with_two_and_names_tags() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, r#"{"train": {"dataset": "moons"}}"#).unwrap();
    let o = iwgan(&["train", "--config", s(&cfg), "--dry-run"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("ring") && err.contains("spiral") && err.contains("grid"), "{err}");

    let o = iwgan(&["datagen", "--dataset", "moons", "--out-dir", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("ring, spiral, grid"), "{err}");
}

#[test]
fn unknown_and_null_fields_are_config_errors() {
    let tmp = TempDir::new().unwrap();
    for (i, body) in [
        r#"{"train": {"dataset": "ring", "batch": 3}}"#,
        r#"{"train": {"dataset": null}}"#,
        r#"{"train": {"dataset": "ring", "batch_size": 0}}"#,
        r#"{"train": {"dataset": "ring"}, "interpolation": {"lambdas": [1.5]}}"#,
    ]
    .iter()
    .enumerate()
    {
        let cfg = tmp.path().join(format!("c{i}.json"));
        fs::write(&cfg, body).unwrap();
        let o = iwgan(&["train", "--config", s(&cfg), "--dry-run"]);
        assert_eq!(o.status.code(), Some(2), "{body}");
    }
}

#[test]
fn datagen_rerun_from_resolved_config_is_bitwise() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&["datagen", "--dataset", "grid", "--n", "300", "--seed", "9", "--out-dir", s(&a)]);
    ok(&["datagen", "--config", s(&a.join("resolved-config.json")), "--out-dir", s(&b)]);
    for f in ["samples.csv", "resolved-config.json"] {
        assert_eq!(read(a.join(f)), read(b.join(f)));
    }
    let csv = read(a.join("samples.csv"));
    assert_eq!(csv.lines().next(), Some("x0,x1,mode"));
    let r = rows(&csv);
    assert_eq!(r.len(), 300);
    assert!(r.iter().all(|row| row[2] >= 0.0 && row[2] < 25.0));
}

#[test]
fn seed_variable_overrides_the_seed() {
    let tmp = TempDir::new().unwrap();
    let plain = tmp.path().join("plain");
    let seeded = tmp.path().join("seeded");
    ok(&["datagen", "--n", "20", "--out-dir", s(&plain)]);
    let o = Command::new(env!("CARGO_BIN_EXE_iwgan"))
        .args(["datagen", "--n", "20", "--out-dir", s(&seeded)])
        .env("IWGAN_SEED", "77")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_ne!(read(plain.join("samples.csv")), read(seeded.join("samples.csv")));
    let v: serde_json::Value = serde_json::from_str(&read(seeded.join("resolved-config.json"))).unwrap();
    assert_eq!(v["seed"], 77);

    let o = Command::new(env!("CARGO_BIN_EXE_iwgan"))
        .args(["datagen", "--out-dir", s(&seeded)])
        .env("IWGAN_SEED", "abc")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn oracle_encode_then_decode_recovers_points() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    let enc = tmp.path().join("enc");
    let dec = tmp.path().join("dec");
    ok(&["datagen", "--n", "200", "--seed", "4", "--out-dir", s(&data)]);
    ok(&["oracle", "--direction", "encode", "--input", s(&data.join("samples.csv")), "--out-dir", s(&enc)]);
    ok(&["oracle", "--direction", "decode", "--input", s(&enc.join("encoded.csv")), "--out-dir", s(&dec)]);
    let original = rows(&read(data.join("samples.csv")));
    let back = rows(&read(dec.join("decoded.csv")));
    assert_eq!(original.len(), back.len());
    for (o, b) in original.iter().zip(&back) {
        assert!(((o[0] - b[0]).powi(2) + (o[1] - b[1]).powi(2)).sqrt() <= 1e-8);
    }
    let summary: serde_json::Value = serde_json::from_str(&read(enc.join("roundtrip.json"))).unwrap();
    assert_eq!(summary["n"], 200);
    assert!(summary["max_error"].as_f64().unwrap() <= 1e-8);
}

/// Writes a checkpoint whose generator undoes its encoder exactly.
fn identity_checkpoint(dir: &Path) -> PathBuf {
    let ckpt = dir.join("identity");
    fs::create_dir_all(&ckpt).unwrap();
    let mut q = Network::init(&[2, 2], Activation::Relu, 0).unwrap();
    q.layers[0].weight = Matrix::identity(2);
    q.layers[0].bias = Matrix::zeros(1, 2);
    q.save(&ckpt.join("encoder.json"), 0).unwrap();
    q.save(&ckpt.join("generator.json"), 0).unwrap();
    ckpt
}

fn trained_checkpoint(tmp: &Path) -> PathBuf {
    train_tiny(tmp, "model", 2).join("checkpoint")
}

#[test]
fn heatmap_of_identity_model_is_flat_at_one() {
    let tmp = TempDir::new().unwrap();
    let ckpt = identity_checkpoint(tmp.path());
    let out = tmp.path().join("heat");
    ok(&[
        "heatmap", "--checkpoint", s(&ckpt), "--nx", "3", "--ny", "3", "--x-min", "-1", "--x-max", "1",
        "--y-min", "-1", "--y-max", "1", "--svg", "--out-dir", s(&out),
    ]);
    let csv = read(out.join("heatmap.csv"));
    assert_eq!(csv.lines().next(), Some("x0,x1,score"));
    let r = rows(&csv);
    assert_eq!(r.len(), 9);
    assert_eq!(&r[0][..2], &[-1.0, -1.0]);
    assert_eq!(&r[8][..2], &[1.0, 1.0]);
    assert!(r.iter().all(|row| (row[2] - 1.0).abs() < 1e-12));
    assert!(read(out.join("heatmap.svg")).starts_with("<svg"));
}

#[test]
fn degenerate_lattice_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let ckpt = identity_checkpoint(tmp.path());
    let o = iwgan(&["heatmap", "--checkpoint", s(&ckpt), "--nx", "1", "--out-dir", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
    let o = iwgan(&["heatmap", "--checkpoint", s(&ckpt), "--x-min", "2", "--x-max", "2", "--out-dir", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_checkpoint_fails() {
    let tmp = TempDir::new().unwrap();
    let o = iwgan(&["interpolate", "--checkpoint", s(&tmp.path().join("nope")), "--out-dir", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn interpolation_endpoints_are_decoded_latents() {
    let tmp = TempDir::new().unwrap();
    let ckpt = trained_checkpoint(tmp.path());
    let out = tmp.path().join("interp");
    ok(&["interpolate", "--checkpoint", s(&ckpt), "--pairs", "3", "--lambdas", "0,0.25,1", "--seed", "5", "--out-dir", s(&out)]);
    let r = rows(&read(out.join("interpolation.csv")));
    assert_eq!(r.len(), 9);
    let (g, _) = load_model(&ckpt).unwrap();
    let mut rng = Stream::new(5, Purpose::Latent);
    for pair in 0..3 {
        let ends = rng.normal_matrix(2, g.input_dim());
        let g1 = g.forward(&ends.slice_rows(0, 1)).unwrap();
        let g2 = g.forward(&ends.slice_rows(1, 2)).unwrap();
        let first = &r[3 * pair];
        let last = &r[3 * pair + 2];
        assert_eq!((first[1], last[1]), (0.0, 1.0));
        assert_eq!(&first[2..4], g1.as_slice());
        assert_eq!(&last[2..4], g2.as_slice());
        assert!(r[3 * pair..3 * pair + 3].iter().all(|row| row[4] > 0.0 && row[4] <= 1.0));
    }
}

#[test]
fn latent_pairs_cover_every_coordinate_pair() {
    let tmp = TempDir::new().unwrap();
    let ckpt = tmp.path().join("five");
    fs::create_dir_all(&ckpt).unwrap();
    Network::init(&[2, 8, 5], Activation::Relu, 1).unwrap().save(&ckpt.join("encoder.json"), 0).unwrap();
    Network::init(&[5, 8, 2], Activation::Relu, 2).unwrap().save(&ckpt.join("generator.json"), 0).unwrap();
    let out = tmp.path().join("pairs");
    ok(&["latent-pairs", "--checkpoint", s(&ckpt), "--n", "100", "--seed", "2", "--out-dir", s(&out)]);
    let csv = read(out.join("latent-pairs.csv"));
    assert_eq!(csv.lines().next(), Some("pair,i,j,qi,qj"));
    let r = rows(&csv);
    assert_eq!(r.len(), 10 * 100);
    let mut pairs: Vec<(u32, u32)> = r.iter().map(|row| (row[1] as u32, row[2] as u32)).collect();
    pairs.dedup();
    assert_eq!(pairs.len(), 10);
    assert!(pairs.iter().all(|(i, j)| i < j && *j < 5));

    let summary: serde_json::Value = serde_json::from_str(&read(out.join("latent-summary.json"))).unwrap();
    let (_, q) = load_model(&ckpt).unwrap();
    let args_json = read(out.join("resolved-config.json"));
    let args: LatentPairsArgs = serde_json::from_str(&args_json).unwrap();
    let (codes, expected) = latent_sample(&q, &args).unwrap();
    let z = Stream::new(2, Purpose::Latent).normal_matrix(100, 5);
    assert_eq!(expected.mmd, mmd_metric(&z, &codes).unwrap());
    assert_eq!(summary["mmd"].as_f64().unwrap(), expected.mmd);
}

#[test]
fn eval_reports_metrics_for_a_checkpoint() {
    let tmp = TempDir::new().unwrap();
    let ckpt = trained_checkpoint(tmp.path());
    let a = tmp.path().join("ea");
    let b = tmp.path().join("eb");
    let args = ["--checkpoint", s(&ckpt), "--coverage-samples", "500", "--w1-samples", "50", "--mmd-samples", "60"];
    ok(&[&["eval", "--out-dir", s(&a)][..], &args].concat());
    ok(&[&["eval", "--out-dir", s(&b)][..], &args].concat());
    assert_eq!(read(a.join("metrics.json")), read(b.join("metrics.json")));
    let v: serde_json::Value = serde_json::from_str(&read(a.join("metrics.json"))).unwrap();
    let w1 = v["w1"].as_f64().unwrap();
    let via = v["w1_recon"].as_f64().unwrap() + v["w1_latent"].as_f64().unwrap();
    assert!(w1 <= via + 1e-12);
    assert_eq!(v["mode_coverage"]["samples"], 500);
}

#[test]
fn gradcheck_passes_and_reports() {
    let tmp = TempDir::new().unwrap();
    ok(&["gradcheck", "--cases", "5", "--out-dir", s(tmp.path())]);
    let v: serde_json::Value = serde_json::from_str(&read(tmp.path().join("gradcheck.json"))).unwrap();
    assert_eq!(v["passed"], true);
    assert_eq!(v["cases"], 5);
}
