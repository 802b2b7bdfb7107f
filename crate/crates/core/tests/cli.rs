use std::path::{Path, PathBuf};
use std::process::Command;

use vdsm::cli::main_with_args;
use vdsm::datasets::load_dataset;
use vdsm::persistence::load_checkpoint;
use vdsm::schedules::Stage;

const TINY: &str = r#"
[train]
pretrain_epochs = 2
sequence_epochs = 2
batch_size = 4
pretrain_batches_per_epoch = 3
sequence_batch_size = 2
sequence_batches_per_epoch = 3
seq_len = 4
seed = 5

[train.model]
height = 8
width = 8
kappa_z = 2
kappa_s = 3
kappa_d = 2
n_experts = 3
encoder_channels = [4, 4]
identity_features = 8
decoder_channels = [4]
rnn_hidden = 6
decoder_token = 2
transition_hidden = 4

[eval]
n_swaps = 6
n_samples = 4
"#;

fn run(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("vdsm").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    data: PathBuf,
    config: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let data = root.join("p.vdsd");
    let config = root.join("run.toml");
    std::fs::write(&config, TINY).unwrap();
    assert_eq!(run(&["gen-data", "--set", "pendulum", "--count", "140", "--T", "5", "--size", "8", "--seed", "1", "--out", s(&data)]), 0);
    Fixture { _dir: dir, root, data, config }
}

fn train(f: &Fixture, out: &Path, extra: &[&str]) -> i32 {
    let mut args = vec!["train", "--config", s(&f.config), "--data", s(&f.data), "--out", s(out)];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn gen_data_contract() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.vdsd");
    let b = dir.path().join("b.vdsd");
    assert_eq!(run(&["gen-data", "--set", "pendulum", "--count", "200", "--seed", "7", "--out", s(&a)]), 0);
    assert_eq!(run(&["gen-data", "--set", "pendulum", "--count", "200", "--seed", "7", "--out", s(&b)]), 0);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let ds = load_dataset(&a).unwrap();
    assert_eq!(ds.len(), 200);
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.with_extension("json")).unwrap()).unwrap();
    assert_eq!(manifest["identities"].as_array().unwrap().len(), 7);
    assert_eq!(manifest["actions"].as_array().unwrap().len(), 2);
    assert_ne!(run(&["gen-data", "--set", "unknown", "--out", s(&a)]), 0);
    assert_eq!(run(&["gen-data", "--set", "shapes", "--count", "12", "--out", s(&dir.path().join("s.vdsd"))]), 0);
}

#[test]
fn binary_reports_errors_with_nonzero_exit() {
    let out = Command::new(env!("CARGO_BIN_EXE_vdsm")).args(["sample", "--checkpoint", "/nonexistent/x.ckpt"]).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim().lines().count(), 1, "{err}");
    assert!(err.starts_with("error:"));
}

#[test]
fn staged_training_and_artifacts() {
    let f = fixture();
    let out = f.root.join("run");
    assert_ne!(train(&f, &out, &["--stage", "sequence"]), 0);
    assert_eq!(train(&f, &out, &["--stage", "pretrain"]), 0);
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], "stage,epoch,recon,kl_s,kl_d,kl_z1,kl_z_trans,lambda_z,lambda_s,tau_s");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("pretrain,0,"));
    assert!(load_checkpoint(out.join("pretrain.ckpt")).unwrap().pretrain_complete);

    assert_eq!(train(&f, &out, &["--stage", "sequence"]), 0);
    let state = load_checkpoint(out.join("checkpoint.ckpt")).unwrap();
    assert_eq!((state.stage, state.epoch), (Stage::Sequence, 2));
    let rows = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(rows.lines().filter(|l| l.starts_with("sequence,")).count(), 2);

    let ckpt = out.join("checkpoint.ckpt");
    let (g1, g2) = (f.root.join("g1.png"), f.root.join("g2.png"));
    assert_eq!(run(&["sample", "--checkpoint", s(&ckpt), "--n", "4", "--T", "16", "--seed", "3", "--out", s(&g1)]), 0);
    assert_eq!(run(&["sample", "--checkpoint", s(&ckpt), "--n", "4", "--T", "16", "--seed", "3", "--out", s(&g2)]), 0);
    assert_eq!(std::fs::read(&g1).unwrap(), std::fs::read(&g2).unwrap());
    let decoder = png::Decoder::new(std::io::BufReader::new(std::fs::File::open(&g1).unwrap()));
    let info = decoder.read_info().unwrap().info().clone();
    assert_eq!((info.width, info.height), (16 * 9 + 1, 4 * 9 + 1));
    assert_ne!(run(&["sample", "--checkpoint", s(&ckpt), "--T", "0", "--out", s(&g1)]), 0);

    let sw = f.root.join("swap.png");
    assert_eq!(run(&["swap", "--checkpoint", s(&ckpt), "--data", s(&f.data), "--factor", "dynamics", "--a", "0", "--b", "1", "--out", s(&sw)]), 0);
    let info = png::Decoder::new(std::io::BufReader::new(std::fs::File::open(&sw).unwrap())).read_info().unwrap().info().clone();
    assert_eq!(info.height, 3 * 9 + 1);
    assert_ne!(run(&["swap", "--checkpoint", s(&ckpt), "--data", s(&f.data), "--factor", "pose", "--a", "0", "--b", "1"]), 0);
    assert_ne!(run(&["swap", "--checkpoint", s(&ckpt), "--data", s(&f.data), "--factor", "identity", "--a", "0", "--b", "999"]), 0);

    let csv = f.root.join("eval.csv");
    assert_eq!(run(&["eval", "--checkpoint", s(&ckpt), "--data", s(&f.data), "--config", s(&f.config), "--out", s(&csv)]), 0);
    let text = std::fs::read_to_string(&csv).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(text.lines().next().unwrap(), "metric,embedding,factor,value,n");
    assert_eq!(rows.iter().filter(|r| r.starts_with("probe,")).count(), 4);
    assert_eq!(rows.iter().filter(|r| r.starts_with("swap_consistency,")).count(), 2);
    assert_eq!(rows.iter().filter(|r| r.contains("entropy,")).count(), 2);
    assert_eq!(rows.len(), 8);
}

#[test]
fn resumed_training_matches_uninterrupted_run() {
    let f = fixture();
    let full = f.root.join("full");
    let split = f.root.join("split");
    assert_eq!(train(&f, &full, &[]), 0);
    assert_eq!(train(&f, &split, &["--max-epochs", "1"]), 0);
    assert_eq!(train(&f, &split, &["--resume", "--max-epochs", "2"]), 0);
    assert_eq!(train(&f, &split, &["--resume"]), 0);
    assert_eq!(std::fs::read(full.join("checkpoint.ckpt")).unwrap(), std::fs::read(split.join("checkpoint.ckpt")).unwrap());
    assert_ne!(train(&f, &f.root.join("none"), &["--resume"]), 0);
}

#[test]
fn config_errors_are_reported() {
    let f = fixture();
    let bad = f.root.join("bad.toml");
    std::fs::write(&bad, "[train]\nepochs = 3\n").unwrap();
    assert_ne!(run(&["train", "--config", s(&bad), "--data", s(&f.data), "--out", s(&f.root.join("x"))]), 0);
    assert_ne!(train(&f, &f.root.join("y"), &["--data", s(&f.root.join("missing.vdsd"))]), 0);
}
