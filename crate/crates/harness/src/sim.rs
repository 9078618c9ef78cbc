//! Monte-Carlo link simulation: one [`Scenario`] per configured
//! `(layers, MCS)` pair, slots scheduled round-robin over them.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sipsim_core::channel::{ChannelCovariance, ChannelModel};
use sipsim_core::classic::{ClassicCe, ClassicDd, DmrsReceiver, FreqInterpolation, SmoothingPrior};
use sipsim_core::fec::ldpc::DEFAULT_MAX_ITERS;
use sipsim_core::grid::ChannelTensor;
use sipsim_core::ic::{run_receiver, CeBackend, DdBackend, IterationDiagnostics, ReceiverConfig};
use sipsim_core::link::{CodeCache, LinkSetup, Slot, TxScheme};
use sipsim_core::pilot::{DmrsGrids, DmrsPattern, PilotBook};
use sipsim_core::McsTable;
use sipsim_neural::checkpoint::{self, CheckpointMeta};
use sipsim_neural::ReceiverNets;

use crate::config::{RunConfig, Scheme};
use crate::stats::wilson_half_width;
use crate::throughput::{to_f64, Rational};
use crate::{Error, Result};

/// Receiver of one scenario.
pub enum Receiver {
    Sip {
        book: PilotBook,
        ce: Box<dyn CeBackend>,
        dd: Box<dyn DdBackend>,
        config: ReceiverConfig,
    },
    Dmrs(Box<DmrsReceiver>),
}

pub struct Scenario {
    pub layers: usize,
    pub mcs: u32,
    pub link: LinkSetup,
    pub receiver: Receiver,
}

/// Result of receiving one slot.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotOutcome {
    pub blocks: usize,
    pub errors: usize,
    /// Mean channel-estimation MSE over layers, per receiver iteration.
    pub ce_mse: Vec<f64>,
    pub diagnostics: Vec<IterationDiagnostics>,
}

/// One SNR point of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub scheme: String,
    pub snr_db: f64,
    pub slots: u64,
    pub blocks: u64,
    pub tb_errors: u64,
    pub bler: f64,
    pub ci_half: f64,
    pub throughput_bps: f64,
    /// Mean CE-MSE per iteration, averaged over slots.
    pub ce_mse: Vec<f64>,
    /// Per-slot iteration-wise CE-MSE, kept for paired statistics.
    #[serde(skip)]
    pub slot_ce_mse: Vec<Vec<f64>>,
}

/// A CSV row; the column set is part of the output contract.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scheme: String,
    pub snr_db: f64,
    pub slots: u64,
    pub tb_errors: u64,
    pub bler: f64,
    pub ci_half: f64,
    pub throughput_bps: f64,
}

impl From<&PointResult> for SweepRow {
    fn from(p: &PointResult) -> Self {
        SweepRow {
            scheme: p.scheme.clone(),
            snr_db: p.snr_db,
            slots: p.slots,
            tb_errors: p.tb_errors,
            bler: p.bler,
            ci_half: p.ci_half,
            throughput_bps: p.throughput_bps,
        }
    }
}

/// Per-slot diagnostics line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotDiagnostics {
    pub scheme: String,
    pub snr_db: f64,
    pub slot: u64,
    #[serde(flatten)]
    pub record: IterationDiagnostics,
}

/// Classical smoothing prior for the precoded channel with `layers` layers.
pub fn covariance(model: &ChannelModel, layers: usize, samples: usize, seed: u64) -> Result<ChannelCovariance> {
    Ok(ChannelCovariance::of_precoded(model, layers, samples, seed)?)
}

/// Loads a checkpoint and checks it against the run configuration.
pub fn load_checkpoint(cfg: &RunConfig) -> Result<(ReceiverNets<f32>, CheckpointMeta)> {
    let path = cfg
        .sweep
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::Config("sip-neural needs sweep.checkpoint".into()))?;
    if !path.exists() {
        return Err(Error::Config(format!("checkpoint {} not found", path.display())));
    }
    let (nets, meta) = checkpoint::load(path).map_err(|e| match e {
        sipsim_neural::Error::Io(io) => Error::Io(io),
        other => Error::Config(format!("{}: {other}", path.display())),
    })?;
    check_compatible(cfg, &nets, &meta)?;
    Ok((nets, meta))
}

pub fn check_compatible(cfg: &RunConfig, nets: &ReceiverNets<f32>, meta: &CheckpointMeta) -> Result<()> {
    if nets.config.rx_antennas != cfg.grid.rx_antennas {
        return Err(Error::Config(format!(
            "checkpoint expects {} receive antennas, config has {}",
            nets.config.rx_antennas, cfg.grid.rx_antennas
        )));
    }
    let table = McsTable::default();
    for m in cfg.mcs_list() {
        let bits = table.get(m)?.bits_per_symbol;
        if bits > nets.config.m_max {
            return Err(Error::Config(format!(
                "MCS {m} needs {bits} output planes, checkpoint has {}",
                nets.config.m_max
            )));
        }
    }
    if (meta.alpha - cfg.link.alpha).abs() > 1e-12 {
        return Err(Error::Config(format!(
            "checkpoint trained at alpha {}, config uses {}",
            meta.alpha, cfg.link.alpha
        )));
    }
    Ok(())
}

pub struct Simulator {
    pub config: RunConfig,
    pub scenarios: Vec<Scenario>,
}

impl Simulator {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let model = cfg.channel_model()?;
        let table = McsTable::default();
        let nets = match cfg.link.scheme {
            Scheme::SipNeural => Some(load_checkpoint(cfg)?.0),
            _ => None,
        };
        let mut codes = CodeCache::new(cfg.link.pilot_seed);
        let mut covs: Vec<(usize, ChannelCovariance)> = Vec::new();
        let mut scenarios = Vec::new();
        for layers in unique(cfg.layer_list()) {
            let dims = cfg.dims(layers)?;
            let cov = match covs.iter().find(|(l, _)| *l == layers) {
                Some((_, c)) => c.clone(),
                None => {
                    let c = covariance(&model, layers, cfg.sweep.covariance_samples, cfg.sweep.seed ^ 0xc0 ^ layers as u64)?;
                    covs.push((layers, c.clone()));
                    c
                }
            };
            for m in unique(cfg.mcs_list()) {
                let entry = table.get(m)?;
                let (link, receiver) = match cfg.link.scheme {
                    Scheme::DmrsBaseline => {
                        let pattern = DmrsPattern::standard(cfg.link.dmrs_pilot_symbols, dims.symbols, cfg.link.pilot_seed)?;
                        let grids = DmrsGrids::build(&pattern, &dims)?;
                        let link = LinkSetup::new(dims, model.clone(), TxScheme::Dmrs { grids: grids.clone() }, entry, &mut codes)?;
                        let rx = DmrsReceiver {
                            grids,
                            method: FreqInterpolation::Lmmse,
                            covariance: Some(cov.clone()),
                            max_decode_iters: DEFAULT_MAX_ITERS,
                        };
                        (link, Receiver::Dmrs(Box::new(rx)))
                    }
                    Scheme::SipClassical | Scheme::SipNeural => {
                        let book = PilotBook::build(&dims, cfg.link.pilot_seed)?;
                        let scheme = TxScheme::Sip {
                            alpha: cfg.link.alpha,
                            book: book.clone(),
                        };
                        let link = LinkSetup::new(dims, model.clone(), scheme, entry, &mut codes)?;
                        let classic = ClassicCe::new(SmoothingPrior::from_covariance(&cov)?);
                        let (ce, dd): (Box<dyn CeBackend>, Box<dyn DdBackend>) = match &nets {
                            Some(n) => {
                                let (ce, dd) = n.backends(classic);
                                (Box::new(ce), Box::new(dd))
                            }
                            None => (Box::new(classic), Box::new(ClassicDd)),
                        };
                        let config = ReceiverConfig::new(cfg.link.iterations, cfg.link.alpha)?;
                        (link, Receiver::Sip { book, ce, dd, config })
                    }
                };
                scenarios.push(Scenario {
                    layers,
                    mcs: m,
                    link,
                    receiver,
                });
            }
        }
        Ok(Simulator {
            config: cfg.clone(),
            scenarios,
        })
    }

    /// Scenario of slot `n` (round-robin over the layer and MCS lists).
    pub fn scenario(&self, n: u64) -> &Scenario {
        let layers = self.config.layer_list();
        let mcs = self.config.mcs_list();
        let l = layers[(n % layers.len() as u64) as usize];
        let m = mcs[(n % mcs.len() as u64) as usize];
        self.scenarios
            .iter()
            .find(|s| s.layers == l && s.mcs == m)
            .expect("scenario built for every scheduled pair")
    }

    pub fn generate(&self, n: u64, snr_db: f64) -> Result<Slot> {
        Ok(self.scenario(n).link.generate(self.config.sweep.seed, n, snr_db)?)
    }

    /// Receives slot `n` at the given SNR.
    pub fn run_slot(&self, n: u64, snr_db: f64) -> Result<SlotOutcome> {
        let slot = self.generate(n, snr_db)?;
        self.receive(self.scenario(n), &slot)
    }

    pub fn receive(&self, sc: &Scenario, slot: &Slot) -> Result<SlotOutcome> {
        match &sc.receiver {
            Receiver::Sip { book, ce, dd, config } => {
                let out = run_receiver(&slot.y, book, &sc.link.codec, ce.as_ref(), dd.as_ref(), config, slot.sigma2, Some(&slot.h))?;
                let errors = out.decisions.iter().filter(|d| !d.crc_ok).count();
                let mut ce_mse = vec![0.0; config.iterations];
                for d in &out.diagnostics {
                    ce_mse[d.iteration - 1] += d.ce_mse.unwrap_or(f64::NAN) / sc.layers as f64;
                }
                Ok(SlotOutcome {
                    blocks: sc.layers,
                    errors,
                    ce_mse,
                    diagnostics: out.diagnostics,
                })
            }
            Receiver::Dmrs(rx) => {
                let out = rx.receive(&slot.y, slot.sigma2, &sc.link.codec)?;
                let errors = out.decisions.iter().filter(|d| !d.crc_ok).count();
                Ok(SlotOutcome {
                    blocks: sc.layers,
                    errors,
                    ce_mse: vec![channel_mse(&out.h_hat, &slot.h)],
                    diagnostics: Vec::new(),
                })
            }
        }
    }

    /// Per-slot throughput weight `Ω·γ·M` as an exact ratio.
    fn rate_weight(&self, sc: &Scenario) -> Rational {
        let (on, od) = sc.link.scheme.omega();
        let mcs = sc.link.codec.mcs();
        Rational::new(on as u128, od as u128)
            * Rational::new(mcs.rate_num as u128, mcs.rate_den as u128)
            * Rational::from_integer(mcs.bits_per_symbol as u128)
    }

    /// Runs every SNR point. `diag` receives one JSON line per iteration
    /// and layer of every slot when given.
    pub fn sweep(&self, mut diag: Option<&mut dyn Write>) -> Result<Vec<PointResult>> {
        let cfg = &self.config;
        let label = cfg.label();
        let mut points = Vec::with_capacity(cfg.sweep.snr_db.len());
        for &snr in &cfg.sweep.snr_db {
            let mut blocks = 0u64;
            let mut errors = 0u64;
            let mut passed = Rational::from_integer(0);
            let mut slot_ce = Vec::with_capacity(cfg.sweep.slots);
            for n in 0..cfg.sweep.slots as u64 {
                let sc = self.scenario(n);
                let slot = sc.link.generate(cfg.sweep.seed, n, snr)?;
                let o = self.receive(sc, &slot)?;
                blocks += o.blocks as u64;
                errors += o.errors as u64;
                passed += self.rate_weight(sc) * Rational::from_integer((o.blocks - o.errors) as u128);
                if let Some(w) = diag.as_deref_mut() {
                    for d in o.diagnostics {
                        let line = SlotDiagnostics {
                            scheme: label.clone(),
                            snr_db: snr,
                            slot: n,
                            record: d,
                        };
                        serde_json::to_writer(&mut *w, &line)?;
                        w.write_all(b"\n")?;
                    }
                }
                slot_ce.push(o.ce_mse);
            }
            let slots = cfg.sweep.slots as u64;
            let g = &cfg.grid;
            // Σ_slots passed·Ω·γ·M · N_slot·S·T / slots; one scenario gives
            // N_slot·S·T·L·Ω·γ·M·(1 − BLER).
            let tput = passed
                * Rational::from_integer(cfg.sweep.n_slot as u128 * (g.subcarriers * g.symbols) as u128)
                / Rational::from_integer(slots as u128);
            let iters = slot_ce.iter().map(Vec::len).max().unwrap_or(0);
            let ce_mse = (0..iters)
                .map(|i| slot_ce.iter().filter_map(|v| v.get(i)).sum::<f64>() / slots as f64)
                .collect();
            points.push(PointResult {
                scheme: label.clone(),
                snr_db: snr,
                slots,
                blocks,
                tb_errors: errors,
                bler: errors as f64 / blocks as f64,
                ci_half: wilson_half_width(errors, blocks),
                throughput_bps: to_f64(tput),
                ce_mse,
                slot_ce_mse: slot_ce,
            });
        }
        Ok(points)
    }
}

fn unique<T: PartialEq + Copy>(xs: Vec<T>) -> Vec<T> {
    let mut out = Vec::new();
    for x in xs {
        if !out.contains(&x) {
            out.push(x);
        }
    }
    out
}

pub fn channel_mse(est: &ChannelTensor, truth: &ChannelTensor) -> f64 {
    let n = truth.as_slice().len() as f64;
    est.as_slice().iter().zip(truth.as_slice()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>() / n
}

pub fn write_csv(points: &[PointResult], out: &mut dyn Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(SweepRow::from(p))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Per-iteration CE-MSE lines of an evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CeMseRecord {
    pub scheme: String,
    pub snr_db: f64,
    pub iteration: usize,
    pub ce_mse: f64,
}

pub fn ce_mse_records(points: &[PointResult]) -> Vec<CeMseRecord> {
    points
        .iter()
        .flat_map(|p| {
            p.ce_mse.iter().enumerate().map(|(i, &m)| CeMseRecord {
                scheme: p.scheme.clone(),
                snr_db: p.snr_db,
                iteration: i + 1,
                ce_mse: m,
            })
        })
        .collect()
}
