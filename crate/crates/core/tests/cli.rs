mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::data_path;

fn moonlet(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_moonlet")).args(args).current_dir(dir).env("RUST_LOG", "warn").output().unwrap()
}

fn data(name: &str) -> String {
    data_path(name).display().to_string()
}

const TINY: &str = "[train]\nwalkers = 32\nburn_in = 10\nmcmc_steps = 3\nchunk = 16\ncheckpoint_every = 2\n";

#[test]
fn localize_prints_one_row_per_orbital() {
    let dir = tempfile::tempdir().unwrap();
    let out = moonlet(&["localize", &data("h2o.json")], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 6, "{text}");
}

#[test]
fn usage_errors_exit_with_status_two() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[train]\nwalkerz = 3\n").unwrap();
    let out = moonlet(&["train", "--molecule", &data("h2.json"), "--config", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("walkerz"));

    let out = moonlet(&["train", "--molecule", &data("h2.json"), "--bogus"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    let out = moonlet(&["train", "--molecule", "absent.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn canonicalize_writes_an_exchange_document() {
    let dir = tempfile::tempdir().unwrap();
    let out = moonlet(&["canonicalize", &data("h2o.hf.json"), "canon.json"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let hf = moonlet::chem::load_hf_solution(dir.path().join("canon.json")).unwrap();
    assert_eq!(hf.n_orbitals(), 5);
}

#[test]
fn pretrain_train_and_evaluate_chain_through_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("tiny.toml"), TINY).unwrap();
    let base = ["--config", "tiny.toml", "--steps", "4"];

    let h2_hf = data("h2.hf.json");
    let mut pre = vec!["pretrain", "--molecule", &h2_hf];
    pre.extend(base);
    let out = moonlet(&pre, d);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let pre = std::fs::read_to_string(d.join("pretrain/pretrain.csv")).unwrap();
    assert_eq!(pre.lines().count(), 5);

    let h2 = data("h2.json");
    let mut train = vec!["train", "--molecule", &h2, "--checkpoint", "pretrain/final.json"];
    train.extend(base);
    let out = moonlet(&train, d);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trace = std::fs::read_to_string(d.join("run/trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 5);
    assert!(d.join("run/checkpoints/step000004.json").exists());
    assert!(d.join("run/final.bin").exists());

    let mut eval = vec!["evaluate", "--molecule", &h2, "--checkpoint", "run/final", "--iterations", "3"];
    eval.extend(&base[..2]);
    let out = moonlet(&eval, d);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("h2 ") && text.contains("+-"), "{text}");
}
