use std::fs;
use std::path::{Path, PathBuf};

use sipsim::config::{ProfileKind, RunConfig, Scheme};
use sipsim::Error;

const BASE: &str = r#"
[grid]
subcarriers = 12
symbols = 4
rx_antennas = 2
tx_antennas = 2

[channel]
profile = "flat"
speed_kmh = 3.0

[link]
scheme = "sip-classical"
alpha = 0.05
mcs = 3
layers = 1

[sweep]
snr_db = [0.0, 10.0]
slots = 10
"#;

fn repo_configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::create_dir_all(p.parent().unwrap()).unwrap();
    fs::write(&p, text).unwrap();
    p
}

fn config_error(r: sipsim::Result<RunConfig>) -> String {
    match r {
        Err(Error::Config(msg)) => msg,
        Err(other) => panic!("expected a configuration error, got {other}"),
        Ok(_) => panic!("expected a configuration error"),
    }
}

#[test]
fn defaults_fill_optional_keys() {
    let cfg = RunConfig::from_toml_str(BASE, Path::new(".")).unwrap();
    assert_eq!(cfg.link.iterations, 1);
    assert_eq!(cfg.link.pilot_seed, 1);
    assert_eq!(cfg.sweep.seed, 1);
    assert_eq!(cfg.sweep.n_slot, 2000);
    assert_eq!(cfg.channel.carrier_ghz, 4.0);
    assert_eq!(cfg.label(), "sip-classical");
    assert_eq!(cfg.mcs_list(), vec![3]);
    assert!(cfg.train.is_none() && cfg.eval.is_empty());
}

#[test]
fn include_merges_tables_with_local_keys_winning() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "base.toml", BASE);
    write(dir.path(), "chan/exp.toml", "[channel]\nprofile = \"exponential\"\ndelay_spread_ns = 100.0\ntaps = 4\nspeed_kmh = 30.0\n");
    let top = write(
        dir.path(),
        "run/top.toml",
        "include = [\"../base.toml\", \"../chan/exp.toml\"]\n[link]\nmcs = [3, 7]\n[sweep]\nslots = 3\n",
    );
    let cfg = RunConfig::load(&top).unwrap();
    assert_eq!(cfg.channel.profile, ProfileKind::Exponential);
    assert_eq!(cfg.channel.speed_kmh, 30.0);
    assert_eq!(cfg.mcs_list(), vec![3, 7]);
    // Untouched keys of a merged table survive.
    assert_eq!(cfg.link.alpha, 0.05);
    assert_eq!(cfg.sweep.slots, 3);
    assert_eq!(cfg.sweep.snr_db, vec![0.0, 10.0]);
}

#[test]
fn relative_checkpoints_resolve_against_their_file() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "base.toml", &format!("{BASE}checkpoint = \"ckpt/a.bin\"\n"));
    let top = write(dir.path(), "sub/top.toml", "include = \"../base.toml\"\n[[eval]]\nlabel = \"x\"\ncheckpoint = \"b.bin\"\n");
    let cfg = RunConfig::load(&top).unwrap();
    let base_dir = fs::canonicalize(dir.path()).unwrap();
    assert_eq!(cfg.sweep.checkpoint.as_deref(), Some(base_dir.join("ckpt/a.bin").as_path()));
    assert_eq!(cfg.eval[0].checkpoint.as_deref(), Some(base_dir.join("sub/b.bin").as_path()));
}

#[test]
fn include_cycles_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "a.toml", "include = \"b.toml\"\n");
    let b = write(dir.path(), "b.toml", "include = \"a.toml\"\n");
    let msg = config_error(RunConfig::load(&b));
    assert!(msg.contains("cycle"), "{msg}");
}

#[test]
fn invalid_documents_are_config_errors() {
    let dir = Path::new(".");
    let cases = [
        (BASE.replace("snr_db = [0.0, 10.0]", "snr_db = []"), "snr_db"),
        (BASE.replace("slots = 10", "slots = 0"), "slots"),
        (BASE.replace("mcs = 3", "mcs = 11"), "MCS"),
        (BASE.replace("layers = 1", "layers = 3"), "L = 3"),
        (BASE.replace("alpha = 0.05", "alpha = 1.0"), "alpha"),
        (BASE.replace("layers = 1", "layers = 1\ndmrs_pilot_symbols = 2"), "dmrs_pilot_symbols"),
        (BASE.replace("sip-classical", "sip-magic"), "sip-magic"),
        (format!("{BASE}unknown_key = 1\n"), "unknown"),
        (BASE.replace("sip-classical", "sip-neural"), "checkpoint"),
        ("include = 3\n".to_string(), "include"),
        ("[grid\n".to_string(), ""),
    ];
    for (text, needle) in cases {
        let msg = config_error(RunConfig::from_toml_str(&text, dir));
        assert!(msg.contains(needle), "{needle:?} not in {msg:?}");
    }
    let msg = config_error(RunConfig::load(Path::new("/nonexistent/run.toml")));
    assert!(msg.contains("nonexistent"));
}

#[test]
fn eval_entries_override_the_base() {
    let text = format!(
        "{BASE}\n[[eval]]\nlabel = \"v1\"\niterations = 1\n\n[[eval]]\nlabel = \"dmrs\"\nscheme = \"dmrs-baseline\"\nmcs = [3, 7]\n"
    );
    let cfg = RunConfig::from_toml_str(&text, Path::new(".")).unwrap();
    let a = cfg.with_entry(&cfg.eval[0]).unwrap();
    assert_eq!((a.label(), a.link.iterations, a.link.scheme), ("v1".to_string(), 1, Scheme::SipClassical));
    let b = cfg.with_entry(&cfg.eval[1]).unwrap();
    assert_eq!(b.link.scheme, Scheme::DmrsBaseline);
    assert_eq!(b.mcs_list(), vec![3, 7]);
    assert!(a.eval.is_empty() && b.eval.is_empty());
}

#[test]
fn table_profile_is_rescaled_to_the_delay_spread() {
    let cfg = RunConfig::load(&repo_configs().join("desk.toml")).unwrap();
    let model = cfg.channel_model().unwrap();
    assert_eq!(model.profile.taps().len(), 23);
    assert!((model.profile.rms_delay_spread() - 300e-9).abs() < 1e-15);
    let power: f64 = model.profile.taps().iter().map(|t| t.power).sum();
    assert!((power - 1.0).abs() < 1e-12);
}

fn toml_files(dir: &Path, out: &mut Vec<PathBuf>) {
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            toml_files(&p, out);
        } else if p.extension().is_some_and(|e| e == "toml") {
            out.push(p);
        }
    }
}

#[test]
fn shipped_run_configs_load() {
    let mut files = Vec::new();
    toml_files(&repo_configs(), &mut files);
    let runs: Vec<_> = files.iter().filter(|p| !p.to_string_lossy().contains("/channels/")).collect();
    assert!(runs.len() >= 5);
    for p in runs {
        let cfg = RunConfig::load(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!((cfg.grid.subcarriers, cfg.grid.symbols), (24, 12), "{}", p.display());
    }
}
