//! Run configuration: TOML files with an optional top-level `include` list.
//!
//! Included files are merged first, in order, and the including file
//! overrides them key by key (tables merge recursively, everything else is
//! replaced). Relative `checkpoint` paths are resolved against the directory
//! of the file that sets them.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sipsim_core::channel::{ChannelModel, DopplerSpec, Numerology, TapProfile};
use sipsim_core::grid::GridDims;
use sipsim_core::McsTable;
use sipsim_neural::ModelConfig;
use toml::{Table, Value};

use crate::{Error, Result};

/// A scalar or a list, e.g. `mcs = 7` or `mcs = [3, 7, 14]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    SipNeural,
    SipClassical,
    DmrsBaseline,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::SipNeural => "sip-neural",
            Scheme::SipClassical => "sip-classical",
            Scheme::DmrsBaseline => "dmrs-baseline",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub subcarriers: usize,
    pub symbols: usize,
    pub rx_antennas: usize,
    pub tx_antennas: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileKind {
    Flat,
    /// Exponential power-delay profile with `taps` taps.
    Exponential,
    /// Tabulated `(normalized delay, power dB)` pairs scaled to the delay spread.
    Table,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub profile: ProfileKind,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub delay_spread_ns: f64,
    #[serde(default = "default_taps")]
    pub taps: usize,
    /// Rows of `[normalized delay, power in dB]` for `profile = "table"`.
    #[serde(default)]
    pub table: Vec<[f64; 2]>,
    pub speed_kmh: f64,
    #[serde(default = "default_carrier")]
    pub carrier_ghz: f64,
    #[serde(default = "default_spacing")]
    pub subcarrier_spacing_khz: f64,
}

fn default_taps() -> usize {
    12
}

fn default_carrier() -> f64 {
    4.0
}

fn default_spacing() -> f64 {
    30.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    pub scheme: Scheme,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default = "one")]
    pub iterations: usize,
    pub mcs: OneOrMany<u32>,
    pub layers: OneOrMany<usize>,
    /// DMRS symbols per slot for the baseline (1 or 4).
    #[serde(default = "one")]
    pub dmrs_pilot_symbols: usize,
    #[serde(default = "one_u64")]
    pub pilot_seed: u64,
}

fn one() -> usize {
    1
}

fn one_u64() -> u64 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub snr_db: Vec<f64>,
    pub slots: usize,
    #[serde(default = "one_u64")]
    pub seed: u64,
    /// Slots per second in the throughput formula.
    #[serde(default = "default_n_slot")]
    pub n_slot: u64,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// Channel draws for covariance-based estimators.
    #[serde(default = "default_covariance_samples")]
    pub covariance_samples: usize,
}

fn default_n_slot() -> u64 {
    2000
}

fn default_covariance_samples() -> usize {
    2000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub steps: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    pub snr_db: [f64; 2],
    #[serde(default = "default_grad_clip")]
    pub grad_clip: f64,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    #[serde(default = "one_u64")]
    pub seed: u64,
    #[serde(default)]
    pub model: Option<ModelConfig>,
}

fn default_batch() -> usize {
    8
}

fn default_lr() -> f64 {
    1e-3
}

fn default_tau() -> f64 {
    0.5
}

fn default_grad_clip() -> f64 {
    10.0
}

fn default_log_every() -> usize {
    50
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub samples: usize,
    pub snr_db: [f64; 2],
    #[serde(default = "one_u64")]
    pub seed: u64,
}

/// One evaluation target: overrides applied on top of the base config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalEntry {
    pub label: String,
    #[serde(default)]
    pub scheme: Option<Scheme>,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub iterations: Option<usize>,
    #[serde(default)]
    pub mcs: Option<OneOrMany<u32>>,
    #[serde(default)]
    pub layers: Option<OneOrMany<usize>>,
    #[serde(default)]
    pub snr_db: Option<Vec<f64>>,
    #[serde(default)]
    pub slots: Option<usize>,
    #[serde(default)]
    pub dmrs_pilot_symbols: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub channel: ChannelConfig,
    pub link: LinkConfig,
    pub sweep: SweepConfig,
    #[serde(default)]
    pub train: Option<TrainSection>,
    #[serde(default)]
    pub dataset: Option<DatasetSection>,
    #[serde(default)]
    pub eval: Vec<EvalEntry>,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let table = load_table(path, &mut HashSet::new())?;
        Self::from_table(table)
    }

    /// Parses a single document; `include` and relative checkpoints resolve
    /// against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let table = parse_table(text, base_dir, &mut HashSet::new())?;
        Self::from_table(table)
    }

    fn from_table(table: Table) -> Result<Self> {
        let cfg: RunConfig = Value::Table(table).try_into().map_err(|e: toml::de::Error| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sweep.snr_db.is_empty() {
            return Err(config_err("sweep.snr_db must not be empty"));
        }
        if self.sweep.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(config_err("sweep.snr_db values must be finite"));
        }
        if self.sweep.slots == 0 {
            return Err(config_err("sweep.slots must be at least 1"));
        }
        if self.sweep.n_slot == 0 {
            return Err(config_err("sweep.n_slot must be positive"));
        }
        let mcs = self.link.mcs.to_vec();
        let layers = self.link.layers.to_vec();
        if mcs.is_empty() || layers.is_empty() {
            return Err(config_err("link.mcs and link.layers must not be empty"));
        }
        let table = McsTable::default();
        for &m in &mcs {
            table.get(m).map_err(|e| config_err(e.to_string()))?;
        }
        for &l in &layers {
            self.dims(l).map_err(|e| config_err(e.to_string()))?;
        }
        if !(0.0..1.0).contains(&self.link.alpha) {
            return Err(config_err(format!("link.alpha {} outside [0, 1)", self.link.alpha)));
        }
        if !matches!(self.link.dmrs_pilot_symbols, 1 | 4) {
            return Err(config_err(format!("link.dmrs_pilot_symbols {} is not 1 or 4", self.link.dmrs_pilot_symbols)));
        }
        if self.link.iterations == 0 {
            return Err(config_err("link.iterations must be at least 1"));
        }
        if self.link.scheme == Scheme::SipNeural && self.sweep.checkpoint.is_none() && self.train.is_none() {
            return Err(config_err("sip-neural needs sweep.checkpoint"));
        }
        self.channel_model().map_err(|e| config_err(e.to_string()))?;
        for e in &self.eval {
            self.with_entry(e)?;
        }
        Ok(())
    }

    pub fn dims(&self, layers: usize) -> sipsim_core::Result<GridDims> {
        let g = &self.grid;
        GridDims::new(g.subcarriers, g.symbols, layers, g.rx_antennas, g.tx_antennas)
    }

    pub fn mcs_list(&self) -> Vec<u32> {
        self.link.mcs.to_vec()
    }

    pub fn layer_list(&self) -> Vec<usize> {
        self.link.layers.to_vec()
    }

    pub fn label(&self) -> String {
        self.sweep.label.clone().unwrap_or_else(|| self.link.scheme.name().to_string())
    }

    pub fn channel_model(&self) -> sipsim_core::Result<ChannelModel> {
        let c = &self.channel;
        let ds = c.delay_spread_ns * 1e-9;
        let profile = match c.profile {
            ProfileKind::Flat => TapProfile::flat(),
            ProfileKind::Exponential => TapProfile::exponential(ds, c.taps)?,
            ProfileKind::Table => {
                if c.table.is_empty() {
                    return Err(sipsim_core::Error::InvalidParameter("channel.table is empty".into()));
                }
                // Units cancel: the profile is rescaled to the requested RMS spread.
                let rows: Vec<(f64, f64)> = c.table.iter().map(|r| (r[0], r[1])).collect();
                TapProfile::from_ns_db(&rows)?.scaled_to(ds)?
            }
        };
        Ok(ChannelModel {
            profile,
            doppler: DopplerSpec::from_kmh(c.speed_kmh, c.carrier_ghz * 1e9)?,
            numerology: Numerology::from_spacing(c.subcarrier_spacing_khz * 1e3),
            subcarriers: self.grid.subcarriers,
            symbols: self.grid.symbols,
            rx: self.grid.rx_antennas,
            tx: self.grid.tx_antennas,
        })
    }

    /// The base config with an evaluation entry's overrides applied.
    pub fn with_entry(&self, e: &EvalEntry) -> Result<RunConfig> {
        let mut c = self.clone();
        c.eval.clear();
        c.sweep.label = Some(e.label.clone());
        if let Some(s) = e.scheme {
            c.link.scheme = s;
        }
        if let Some(p) = &e.checkpoint {
            c.sweep.checkpoint = Some(p.clone());
        }
        if let Some(a) = e.alpha {
            c.link.alpha = a;
        }
        if let Some(v) = e.iterations {
            c.link.iterations = v;
        }
        if let Some(m) = &e.mcs {
            c.link.mcs = m.clone();
        }
        if let Some(l) = &e.layers {
            c.link.layers = l.clone();
        }
        if let Some(s) = &e.snr_db {
            c.sweep.snr_db = s.clone();
        }
        if let Some(n) = e.slots {
            c.sweep.slots = n;
        }
        if let Some(np) = e.dmrs_pilot_symbols {
            c.link.dmrs_pilot_symbols = np;
        }
        c.validate()?;
        Ok(c)
    }

    /// Model shape for training: the configured one or the desk default.
    pub fn model_config(&self) -> ModelConfig {
        self.train
            .as_ref()
            .and_then(|t| t.model)
            .unwrap_or_else(|| ModelConfig::desk(self.grid.rx_antennas))
    }

    pub fn train_config(&self) -> Result<sipsim_neural::TrainConfig> {
        let t = self.train.as_ref().ok_or_else(|| config_err("missing [train] section"))?;
        let cfg = sipsim_neural::TrainConfig {
            subcarriers: self.grid.subcarriers,
            symbols: self.grid.symbols,
            tx_antennas: self.grid.tx_antennas,
            layers: self.layer_list(),
            mcs: self.mcs_list(),
            alpha: self.link.alpha,
            iterations: self.link.iterations,
            tau: t.tau,
            snr_db: (t.snr_db[0], t.snr_db[1]),
            steps: t.steps,
            batch: t.batch,
            lr: t.lr,
            grad_clip: t.grad_clip,
            seed: t.seed,
            pilot_seed: self.link.pilot_seed,
            log_every: t.log_every,
            covariance_samples: self.sweep.covariance_samples,
            model: self.model_config(),
        };
        cfg.validate().map_err(|e| config_err(e.to_string()))?;
        Ok(cfg)
    }
}

fn load_table(path: &Path, visiting: &mut HashSet<PathBuf>) -> Result<Table> {
    let canonical = fs::canonicalize(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    if !visiting.insert(canonical.clone()) {
        return Err(config_err(format!("include cycle through {}", path.display())));
    }
    let text = fs::read_to_string(&canonical)?;
    let dir = canonical.parent().unwrap_or(Path::new(".")).to_path_buf();
    let table = parse_table(&text, &dir, visiting).map_err(|e| match e {
        Error::Config(msg) => config_err(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    visiting.remove(&canonical);
    Ok(table)
}

fn parse_table(text: &str, dir: &Path, visiting: &mut HashSet<PathBuf>) -> Result<Table> {
    let mut table: Table = text.parse().map_err(|e: toml::de::Error| config_err(e.to_string()))?;
    resolve_paths(&mut table, dir);
    let includes = match table.remove("include") {
        None => Vec::new(),
        Some(Value::String(s)) => vec![s],
        Some(Value::Array(items)) => items
            .into_iter()
            .map(|v| match v {
                Value::String(s) => Ok(s),
                _ => Err(config_err("include entries must be strings")),
            })
            .collect::<Result<_>>()?,
        Some(_) => return Err(config_err("include must be a string or a list of strings")),
    };
    let mut merged = Table::new();
    for inc in includes {
        let base = load_table(&dir.join(inc), visiting)?;
        merge(&mut merged, base);
    }
    merge(&mut merged, table);
    Ok(merged)
}

fn resolve_paths(table: &mut Table, dir: &Path) {
    for (key, value) in table.iter_mut() {
        match value {
            Value::String(s) if key == "checkpoint" && Path::new(s.as_str()).is_relative() => {
                *s = dir.join(s.as_str()).to_string_lossy().into_owned();
            }
            Value::Table(t) => resolve_paths(t, dir),
            Value::Array(items) => {
                for item in items {
                    if let Value::Table(t) = item {
                        resolve_paths(t, dir);
                    }
                }
            }
            _ => {}
        }
    }
}

fn merge(into: &mut Table, from: Table) {
    for (key, value) in from {
        match (into.get_mut(&key), value) {
            (Some(Value::Table(dst)), Value::Table(src)) => merge(dst, src),
            (_, v) => {
                into.insert(key, v);
            }
        }
    }
}
