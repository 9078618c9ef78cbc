use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sipsim::sim::SweepRow;
use sipsim_core::pilot::PilotBookDump;
use sipsim_neural::TrainLogRecord;

const BASE: &str = r#"
[grid]
subcarriers = 12
symbols = 4
rx_antennas = 2
tx_antennas = 2

[channel]
profile = "exponential"
delay_spread_ns = 100.0
taps = 4
speed_kmh = 3.0

[link]
scheme = "sip-classical"
alpha = 0.2
iterations = 2
mcs = 3
layers = [1, 2]

[sweep]
snr_db = [0.0, 6.0]
slots = 8
covariance_samples = 128

[train]
steps = 3
batch = 2
snr_db = [0.0, 10.0]
log_every = 1

[train.model]
rx_antennas = 2
m_max = 2
ce_width = 4
ce_blocks = 1
dd_width = 4
dd_blocks = 1

[dataset]
samples = 5
snr_db = [0.0, 10.0]
"#;

fn sipsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sipsim")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn rows(path: &Path) -> Vec<SweepRow> {
    sipsim::sim::read_csv(path).unwrap()
}

#[test]
fn sweep_writes_csv_and_honours_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", BASE);
    let (a, b, c) = (dir.path().join("a.csv"), dir.path().join("b.csv"), dir.path().join("c.csv"));
    let diag = dir.path().join("diag.jsonl");
    let out = sipsim(&["sweep", "--config", s(&cfg), "--out", s(&a), "--diagnostics", s(&diag)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(rows(&a).len(), 2);
    // 8 slots alternating L = 1, 2 over 2 iterations, at two SNRs.
    assert_eq!(fs::read_to_string(&diag).unwrap().lines().count(), 2 * 2 * (4 + 8));
    assert!(sipsim(&["sweep", "--config", s(&cfg), "--out", s(&b)]).status.success());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert!(sipsim(&["sweep", "--config", s(&cfg), "--seed", "7", "--out", s(&c)]).status.success());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
    let stdout = sipsim(&["sweep", "--config", s(&cfg)]);
    assert_eq!(stdout.stdout, fs::read(&a).unwrap());
}

#[test]
fn configuration_problems_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.toml", &BASE.replace("slots = 8", "slots = 0"));
    let neural = write_config(
        dir.path(),
        "neural.toml",
        &BASE.replace("scheme = \"sip-classical\"", "scheme = \"sip-neural\""),
    );
    let missing = dir.path().join("missing.toml");
    for args in [
        vec!["sweep", "--config", s(&bad)],
        vec!["sweep", "--config", s(&missing)],
        vec!["eval", "--config", s(&neural)],
        vec!["train", "--config", s(&bad), "--out", "x.ckpt"],
        vec!["frobnicate"],
        vec!["sweep"],
    ] {
        let out = sipsim(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn pilotbook_dumps_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", BASE);
    let out = sipsim(&["pilotbook", "--config", s(&cfg)]);
    assert!(out.status.success());
    let dump: PilotBookDump = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!((dump.subcarriers, dump.symbols, dump.layers), (12, 4, 2));
    assert_eq!(dump.groups.len(), 24);
    let other: PilotBookDump = serde_json::from_slice(&sipsim(&["pilotbook", "--config", s(&cfg), "--seed", "5"]).stdout).unwrap();
    assert_ne!(dump.seeds, other.seeds);
    assert_eq!(dump.groups, other.groups);
}

#[test]
fn dataset_command_writes_the_configured_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", BASE);
    let path = dir.path().join("d.bin");
    let out = sipsim(&["dataset", "--config", s(&cfg), "--out", s(&path)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (h, samples) = sipsim::dataset::read_dataset(&path).unwrap();
    assert_eq!(h.count, 5);
    assert_eq!(samples.len(), 5);
    assert!(sipsim(&["dataset", "--config", s(&cfg), "--out", s(&path), "--samples", "2"]).status.success());
    assert_eq!(sipsim::dataset::read_dataset(&path).unwrap().1.len(), 2);
    assert_eq!(sipsim(&["dataset", "--config", s(&cfg)]).status.code(), Some(2));
}

#[test]
fn train_then_eval_into_one_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "train.toml", &BASE.replace("sip-classical", "sip-neural"));
    let ckpt = dir.path().join("net.ckpt");
    let out = sipsim(&["train", "--config", s(&cfg), "--out", s(&ckpt)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log: Vec<TrainLogRecord> = fs::read_to_string(dir.path().join("net.ckpt.log.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(log.iter().map(|r| r.step).collect::<Vec<_>>(), vec![1, 2, 3]);
    let header = sipsim_neural::checkpoint::read_header_from(&ckpt).unwrap();
    assert_eq!(header.meta.steps, 3);
    assert_eq!(header.meta.layers, vec![1, 2]);

    let eval = BASE.to_string()
        + r#"
[[eval]]
label = "neural"
scheme = "sip-neural"
checkpoint = "net.ckpt"

[[eval]]
label = "neural-l2"
scheme = "sip-neural"
checkpoint = "net.ckpt"
layers = 2

[[eval]]
label = "classical"
"#;
    let eval_cfg = write_config(dir.path(), "eval.toml", &eval);
    let csv = dir.path().join("eval.csv");
    let ce = dir.path().join("ce.jsonl");
    let out = sipsim(&["eval", "--config", s(&eval_cfg), "--out", s(&csv), "--ce-mse", s(&ce)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = rows(&csv);
    let schemes: Vec<&str> = r.iter().map(|r| r.scheme.as_str()).collect();
    assert_eq!(schemes, vec!["neural", "neural", "neural-l2", "neural-l2", "classical", "classical"]);
    // Two iterations for each of the six points.
    assert_eq!(fs::read_to_string(&ce).unwrap().lines().count(), 12);

    let resumed = dir.path().join("resumed.ckpt");
    let out = sipsim(&["train", "--config", s(&cfg), "--out", s(&resumed), "--resume", s(&ckpt)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
