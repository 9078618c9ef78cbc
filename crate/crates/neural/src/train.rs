//! Unrolled training over the interference-cancellation engine.
//!
//! Each slot runs the full receiver with train-mode networks that record
//! their intermediates. Decoding and re-encoding between iterations is
//! treated as a constant (stop-gradient), so every iteration is
//! backpropagated on its own: the loss of iteration `i` reaches the DD
//! network, and through the detector's use of `Ĥ` also the CE network, of
//! that iteration only.

use std::cell::RefCell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sipsim_core::channel::{ChannelCovariance, ChannelModel};
use sipsim_core::classic::{ClassicCe, SmoothingPrior};
use sipsim_core::grid::{ChannelTensor, GridDims, LayerChannel, RxTensor};
use sipsim_core::ic::{run_receiver, CeBackend, CeInput, DdBackend, DdInput, ReceiverConfig};
use sipsim_core::link::{slot_rng, CodeCache, LinkSetup, LlrGrid, Slot, TbCodec, TxScheme};
use sipsim_core::pilot::PilotBook;
use sipsim_core::McsTable;

use crate::adam::{Adam, AdamConfig};
use crate::loss::{self, LossWeights};
use crate::model::{backward_iteration, ce_forward, dd_forward, CeRecord, DdRecord, ModelConfig, ReceiverNets};
use crate::resnet::{Grads, NetCache};
use crate::scalar::Scalar;
use crate::{Error, Result};

/// Stream offset separating SNR draws from slot generation.
const SNR_STREAM_SALT: u64 = 0x736e_725f_6472_6177;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub subcarriers: usize,
    pub symbols: usize,
    pub tx_antennas: usize,
    /// Layer counts, used round-robin over training slots.
    pub layers: Vec<usize>,
    /// MCS indices, used round-robin over training slots.
    pub mcs: Vec<u32>,
    pub alpha: f64,
    pub iterations: usize,
    pub tau: f64,
    /// Per-slot SNR is uniform on this range (dB).
    pub snr_db: (f64, f64),
    pub steps: usize,
    /// Slots per optimizer step.
    pub batch: usize,
    pub lr: f64,
    /// Global gradient-norm limit; non-positive disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
    pub pilot_seed: u64,
    pub log_every: usize,
    /// Channel draws for the classical smoothing prior.
    pub covariance_samples: usize,
    pub model: ModelConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.layers.is_empty() || self.mcs.is_empty() {
            return Err(Error::Config("layer and MCS lists must not be empty".into()));
        }
        if self.steps == 0 || self.batch == 0 || self.log_every == 0 {
            return Err(Error::Config("steps, batch and log interval must be positive".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate {}", self.lr)));
        }
        let (lo, hi) = self.snr_db;
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Config(format!("SNR range {lo}..{hi} dB")));
        }
        LossWeights::new(self.tau, self.iterations)?;
        ReceiverConfig::new(self.iterations, self.alpha)?;
        Ok(())
    }

    pub fn weights(&self) -> Result<LossWeights> {
        LossWeights::new(self.tau, self.iterations)
    }

    /// Layer count and MCS index of global training slot `n`.
    pub fn schedule(&self, n: u64) -> (usize, u32) {
        (
            self.layers[(n % self.layers.len() as u64) as usize],
            self.mcs[(n % self.mcs.len() as u64) as usize],
        )
    }
}

/// SNR (dB) of training slot `n`: uniform on `range`, from its own stream so
/// that slot contents do not depend on the range.
pub fn training_snr(seed: u64, n: u64, range: (f64, f64)) -> f64 {
    let (lo, hi) = range;
    if hi > lo {
        slot_rng(seed ^ SNR_STREAM_SALT, n).random_range(lo..hi)
    } else {
        lo
    }
}

/// One line of the JSONL training log. Losses are means over the logging window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub step: usize,
    pub loss: f64,
    pub bce: f64,
    pub mse: f64,
    pub lr: f64,
}

/// Loss of one slot, averaged over iterations.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SlotLoss {
    pub loss: f64,
    pub bce: f64,
    pub mse: f64,
}

struct RecordingCe<'a, T> {
    nets: &'a ReceiverNets<T>,
    classic: &'a ClassicCe,
    records: RefCell<Vec<CeRecord<T>>>,
}

impl<T: Scalar> CeBackend for RecordingCe<'_, T> {
    fn estimate(&self, batch: &[CeInput<'_>]) -> sipsim_core::Result<Vec<LayerChannel>> {
        let rec = ce_forward(&self.nets.ce, &self.nets.config, self.classic, batch, true)?;
        let h = rec.h_hat.clone();
        self.records.borrow_mut().push(rec);
        Ok(h)
    }
}

struct RecordingDd<'a, T> {
    nets: &'a ReceiverNets<T>,
    records: RefCell<Vec<DdRecord<T>>>,
}

impl<T: Scalar> DdBackend for RecordingDd<'_, T> {
    fn detect(&self, batch: &[DdInput<'_>]) -> sipsim_core::Result<Vec<LlrGrid>> {
        let rec = dd_forward(&self.nets.dd, &self.nets.config, batch, true)?;
        let v = rec.llrs.clone();
        self.records.borrow_mut().push(rec);
        Ok(v)
    }
}

/// Gradient buffers of both networks.
#[derive(Clone, Debug, PartialEq)]
pub struct NetGrads<T> {
    pub ce: Grads<T>,
    pub dd: Grads<T>,
}

impl<T: Scalar> NetGrads<T> {
    pub fn zeros(nets: &ReceiverNets<T>) -> Self {
        NetGrads {
            ce: nets.ce.zero_grads(),
            dd: nets.dd.zero_grads(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.ce.norm().hypot(self.dd.norm())
    }

    pub fn scale(&mut self, k: f64) {
        self.ce.scale(T::of(k));
        self.dd.scale(T::of(k));
    }

    pub fn add(&mut self, other: &NetGrads<T>) {
        self.ce.add(&other.ce);
        self.dd.add(&other.dd);
    }

    pub fn is_finite(&self) -> bool {
        self.ce.is_finite() && self.dd.is_finite()
    }
}

/// Ground truth of one slot.
pub struct Targets<'a> {
    pub h: &'a ChannelTensor,
    pub labels: &'a [LlrGrid],
}

/// Loss of one iteration from its records; when `grads` is given,
/// accumulates `scale·∂(τ·BCE + (1−τ)·MSE)/∂θ`.
#[allow(clippy::too_many_arguments)]
pub fn iteration_loss<T: Scalar>(
    nets: &ReceiverNets<T>,
    ce: &CeRecord<T>,
    dd: &DdRecord<T>,
    book: &PilotBook,
    targets: &Targets<'_>,
    tau: f64,
    scale: f64,
    grads: Option<&mut NetGrads<T>>,
) -> Result<(f64, f64)> {
    let labels: Vec<LlrGrid> = dd.aux.iter().map(|a| targets.labels[a.layer].clone()).collect();
    let truth: Vec<LayerChannel> = ce.layers.iter().map(|&l| targets.h.layer(l)).collect();
    let (bce, mut d_llr) = loss::bce(&dd.llrs, &labels)?;
    let (mse, mut d_h) = loss::mse(&ce.h_hat, &truth)?;
    if let Some(g) = grads {
        d_llr.iter_mut().flatten().for_each(|v| *v *= tau * scale);
        d_h.iter_mut().flatten().for_each(|v| *v *= (1.0 - tau) * scale);
        backward_iteration(nets, ce, dd, book, &d_llr, &d_h, &mut g.ce, &mut g.dd)?;
    }
    Ok((bce, mse))
}

/// Everything the unrolled receiver needs besides the networks.
pub struct SlotContext<'a> {
    pub book: &'a PilotBook,
    pub codec: &'a TbCodec,
    pub classic: &'a ClassicCe,
    pub receiver: ReceiverConfig,
}

/// Runs the receiver on one slot in train mode and returns its loss;
/// gradients are accumulated into `grads` scaled by `scale`. The BN
/// caches are returned so running statistics can be updated afterwards.
#[allow(clippy::too_many_arguments)]
pub fn slot_objective<T: Scalar>(
    nets: &ReceiverNets<T>,
    ctx: &SlotContext<'_>,
    y: &RxTensor,
    sigma2: f64,
    targets: &Targets<'_>,
    weights: &LossWeights,
    scale: f64,
    mut grads: Option<&mut NetGrads<T>>,
) -> Result<(SlotLoss, Vec<NetCache<T>>, Vec<NetCache<T>>)> {
    if weights.iterations != ctx.receiver.iterations {
        return Err(Error::Config("loss and receiver disagree on the iteration count".into()));
    }
    let ce = RecordingCe {
        nets,
        classic: ctx.classic,
        records: RefCell::new(Vec::new()),
    };
    let dd = RecordingDd {
        nets,
        records: RefCell::new(Vec::new()),
    };
    run_receiver(y, ctx.book, ctx.codec, &ce, &dd, &ctx.receiver, sigma2, None)?;
    let ce_records = ce.records.into_inner();
    let dd_records = dd.records.into_inner();
    if ce_records.len() != weights.iterations || dd_records.len() != weights.iterations {
        return Err(Error::Config("the receiver must call each backend once per iteration (batched mode)".into()));
    }
    let per_iter = scale / weights.iterations as f64;
    let mut parts = Vec::with_capacity(weights.iterations);
    for (c, d) in ce_records.iter().zip(&dd_records) {
        parts.push(iteration_loss(nets, c, d, ctx.book, targets, weights.tau, per_iter, grads.as_deref_mut())?);
    }
    let v = weights.iterations as f64;
    let out = SlotLoss {
        loss: weights.total(&parts),
        bce: parts.iter().map(|p| p.0).sum::<f64>() / v,
        mse: parts.iter().map(|p| p.1).sum::<f64>() / v,
    };
    Ok((
        out,
        ce_records.into_iter().map(|r| r.cache).collect(),
        dd_records.into_iter().map(|r| r.cache).collect(),
    ))
}

/// Classical CE for the precoded channel of `model` with `layers` layers.
pub fn classic_for(model: &ChannelModel, layers: usize, samples: usize, seed: u64) -> Result<ClassicCe> {
    let cov = ChannelCovariance::of_precoded(model, layers, samples, seed)?;
    Ok(ClassicCe::new(SmoothingPrior::from_covariance(&cov)?))
}

struct Scenario {
    layers: usize,
    mcs: u32,
    link: LinkSetup,
    book: PilotBook,
    classic: ClassicCe,
}

/// Online trainer: draws fresh slots from the channel model every step.
pub struct Trainer {
    pub config: TrainConfig,
    pub nets: ReceiverNets<f32>,
    adam: Adam,
    scenarios: Vec<Scenario>,
    step: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, channel: &ChannelModel) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let nets = ReceiverNets::new(config.model, &mut rng)?;
        Self::resume(config, channel, nets)
    }

    /// Continues training from existing networks with a fresh optimizer.
    pub fn resume(config: TrainConfig, channel: &ChannelModel, nets: ReceiverNets<f32>) -> Result<Self> {
        config.validate()?;
        if nets.config != config.model {
            return Err(Error::Config("networks do not match the model configuration".into()));
        }
        if channel.rx != config.model.rx_antennas
            || (channel.subcarriers, channel.symbols, channel.tx) != (config.subcarriers, config.symbols, config.tx_antennas)
        {
            return Err(Error::Config("channel model does not match the training grid".into()));
        }
        let table = McsTable::default();
        let mut codes = CodeCache::new(config.pilot_seed);
        let mut scenarios = Vec::new();
        let mut priors: Vec<(usize, ClassicCe)> = Vec::new();
        for &layers in &config.layers {
            for &m in &config.mcs {
                if scenarios.iter().any(|s: &Scenario| s.layers == layers && s.mcs == m) {
                    continue;
                }
                let entry = table.get(m)?;
                if entry.bits_per_symbol > config.model.m_max {
                    return Err(Error::Config(format!("MCS {m} needs more than {} output planes", config.model.m_max)));
                }
                let dims = GridDims::new(config.subcarriers, config.symbols, layers, config.model.rx_antennas, config.tx_antennas)?;
                let book = PilotBook::build(&dims, config.pilot_seed)?;
                let scheme = TxScheme::Sip {
                    alpha: config.alpha,
                    book: book.clone(),
                };
                let link = LinkSetup::new(dims, channel.clone(), scheme, entry, &mut codes)?;
                let classic = match priors.iter().find(|(l, _)| *l == layers) {
                    Some((_, c)) => c.clone(),
                    None => {
                        let c = classic_for(channel, layers, config.covariance_samples, config.seed ^ layers as u64)?;
                        priors.push((layers, c.clone()));
                        c
                    }
                };
                scenarios.push(Scenario {
                    layers,
                    mcs: m,
                    link,
                    book,
                    classic,
                });
            }
        }
        let sizes: Vec<usize> = nets.ce.params().iter().chain(nets.dd.params().iter()).map(|p| p.len()).collect();
        Ok(Trainer {
            adam: Adam::new(AdamConfig::default(), &sizes),
            config,
            nets,
            scenarios,
            step: 0,
        })
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    fn scenario(&self, n: u64) -> &Scenario {
        let (layers, mcs) = self.config.schedule(n);
        self.scenarios
            .iter()
            .find(|s| s.layers == layers && s.mcs == mcs)
            .expect("every scheduled scenario was built")
    }

    /// Training slot `n`: deterministic given the seed.
    pub fn slot(&self, n: u64) -> Result<Slot> {
        let snr = training_snr(self.config.seed, n, self.config.snr_db);
        Ok(self.scenario(n).link.generate(self.config.seed, n, snr)?)
    }

    /// One optimizer step over `batch` fresh slots.
    pub fn train_step(&mut self) -> Result<SlotLoss> {
        let cfg = &self.config;
        let weights = cfg.weights()?;
        let batch = cfg.batch;
        let mut grads = NetGrads::zeros(&self.nets);
        let mut total = SlotLoss::default();
        let mut caches = Vec::with_capacity(batch);
        for j in 0..batch {
            let n = (self.step * batch + j) as u64;
            let slot = self.slot(n)?;
            let sc = self.scenario(n);
            let codec = &sc.link.codec;
            let labels: Vec<LlrGrid> = slot.codewords.iter().map(|cw| codec.label_grid(cw)).collect();
            let mut receiver = ReceiverConfig::new(cfg.iterations, cfg.alpha)?;
            receiver.batched = true;
            let ctx = SlotContext {
                book: &sc.book,
                codec,
                classic: &sc.classic,
                receiver,
            };
            let targets = Targets {
                h: &slot.h,
                labels: &labels,
            };
            let (l, ce, dd) = slot_objective(
                &self.nets,
                &ctx,
                &slot.y,
                slot.sigma2,
                &targets,
                &weights,
                1.0 / batch as f64,
                Some(&mut grads),
            )
            .map_err(|e| self.diverged(format!("slot {n}: {e}")))?;
            if !l.loss.is_finite() {
                return Err(self.diverged(format!("non-finite loss on slot {n}")));
            }
            total.loss += l.loss / batch as f64;
            total.bce += l.bce / batch as f64;
            total.mse += l.mse / batch as f64;
            caches.push((ce, dd));
        }
        if !grads.is_finite() {
            return Err(self.diverged("non-finite gradient".into()));
        }
        let norm = grads.norm();
        if self.config.grad_clip > 0.0 && norm > self.config.grad_clip {
            grads.scale(self.config.grad_clip / norm);
        }
        for (ce, dd) in &caches {
            for c in ce {
                self.nets.ce.update_running(c);
            }
            for c in dd {
                self.nets.dd.update_running(c);
            }
        }
        let lr = self.config.lr;
        let mut params = self.nets.ce.params_mut();
        params.extend(self.nets.dd.params_mut());
        let mut flat = grads.ce.0;
        flat.extend(grads.dd.0);
        self.adam.step(&mut params, &Grads(flat), lr)?;
        self.step += 1;
        if !self.nets.is_finite() {
            return Err(self.diverged("non-finite parameters after update".into()));
        }
        Ok(total)
    }

    fn diverged(&self, detail: String) -> Error {
        Error::Diverged {
            step: self.step,
            detail,
        }
    }

    /// Trains until `config.steps`, calling `on_log` every `log_every` steps
    /// with the window means.
    pub fn run(&mut self, mut on_log: impl FnMut(&TrainLogRecord) -> Result<()>) -> Result<Vec<TrainLogRecord>> {
        let mut log = Vec::new();
        let mut window = SlotLoss::default();
        let mut count = 0usize;
        while self.step < self.config.steps {
            let l = self.train_step()?;
            window.loss += l.loss;
            window.bce += l.bce;
            window.mse += l.mse;
            count += 1;
            if self.step % self.config.log_every == 0 || self.step == self.config.steps {
                let k = count as f64;
                let rec = TrainLogRecord {
                    step: self.step,
                    loss: window.loss / k,
                    bce: window.bce / k,
                    mse: window.mse / k,
                    lr: self.config.lr,
                };
                on_log(&rec)?;
                log.push(rec);
                window = SlotLoss::default();
                count = 0;
            }
        }
        Ok(log)
    }
}
