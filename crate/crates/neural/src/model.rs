//! The CE and DD networks, their forward passes over layer batches and the
//! inference backends plugged into the receiver engine.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sipsim_core::classic::ClassicCe;
use sipsim_core::grid::{LayerChannel, C64};
use sipsim_core::ic::{CeBackend, CeInput, DdBackend, DdInput};
use sipsim_core::link::LlrGrid;
use sipsim_core::pilot::PilotBook;

use crate::features::{self, DdAux};
use crate::loss::LLR_CLIP;
use crate::resnet::{Grads, NetCache, NetSpec, ResNet};
use crate::scalar::Scalar;
use crate::tensor::Planes;
use crate::{Error, Result};

/// Network dimensions. The layer count is not part of the model: layers are
/// batch entries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub rx_antennas: usize,
    /// Output planes of the DD network (bits per symbol of the largest MCS).
    pub m_max: usize,
    pub ce_width: usize,
    pub ce_blocks: usize,
    pub dd_width: usize,
    pub dd_blocks: usize,
}

impl ModelConfig {
    /// Desk-scale widths and depths.
    pub fn desk(rx_antennas: usize) -> Self {
        ModelConfig {
            rx_antennas,
            m_max: 6,
            ce_width: 32,
            ce_blocks: 2,
            dd_width: 32,
            dd_blocks: 2,
        }
    }

    pub fn ce_spec(&self) -> NetSpec {
        NetSpec {
            in_channels: features::ce_channels(self.rx_antennas),
            width: self.ce_width,
            blocks: self.ce_blocks,
            out_channels: 2 * self.rx_antennas,
        }
    }

    pub fn dd_spec(&self) -> NetSpec {
        NetSpec {
            in_channels: features::dd_channels(self.rx_antennas, self.m_max),
            width: self.dd_width,
            blocks: self.dd_blocks,
            out_channels: self.m_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rx_antennas == 0 || self.ce_width == 0 || self.dd_width == 0 {
            return Err(Error::Config("antennas and widths must be positive".into()));
        }
        if self.m_max == 0 || self.m_max % 2 != 0 {
            return Err(Error::Config(format!("m_max {} is not a positive even number", self.m_max)));
        }
        Ok(())
    }
}

/// CE and DD networks sharing one configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ReceiverNets<T> {
    pub config: ModelConfig,
    pub ce: ResNet<T>,
    pub dd: ResNet<T>,
}

impl<T: Scalar> ReceiverNets<T> {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        Ok(ReceiverNets {
            config,
            ce: ResNet::new(config.ce_spec(), rng),
            dd: ResNet::new(config.dd_spec(), rng),
        })
    }

    pub fn cast<U: Scalar>(&self) -> ReceiverNets<U> {
        ReceiverNets {
            config: self.config,
            ce: self.ce.cast(),
            dd: self.dd.cast(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.ce.is_finite() && self.dd.is_finite()
    }
}

fn to_planes<T: Scalar>(items: Vec<Vec<f64>>, s: usize, t: usize, c: usize) -> Result<Planes<T>> {
    let n = items.len();
    let data = items.into_iter().flatten().map(T::of).collect();
    Planes::from_vec([n, s, t, c], data)
}

fn check_antennas(config: &ModelConfig, nr: usize) -> Result<()> {
    if nr != config.rx_antennas {
        return Err(Error::Shape(format!(
            "model built for {} receive antennas, input has {nr}",
            config.rx_antennas
        )));
    }
    Ok(())
}

/// Intermediates of one CE call.
pub struct CeRecord<T> {
    pub cache: NetCache<T>,
    pub layers: Vec<usize>,
    /// Output scale `s_y·√L` per instance.
    pub scales: Vec<f64>,
    pub h_hat: Vec<LayerChannel>,
}

/// CE forward over a batch of layers.
pub fn ce_forward<T: Scalar>(
    net: &ResNet<T>,
    config: &ModelConfig,
    classic: &ClassicCe,
    batch: &[CeInput<'_>],
    train: bool,
) -> Result<CeRecord<T>> {
    let first = batch.first().ok_or_else(|| Error::Shape("empty CE batch".into()))?;
    let (s_count, t_count, nr) = first.y_x.shape();
    check_antennas(config, nr)?;
    let h_cls = classic.estimate(batch)?;
    let mut planes = Vec::with_capacity(batch.len());
    let mut scales = Vec::with_capacity(batch.len());
    for (inp, h) in batch.iter().zip(&h_cls) {
        if inp.y_x.shape() != (s_count, t_count, nr) {
            return Err(Error::Shape("CE batch mixes grid shapes".into()));
        }
        let (p, scale) = features::ce_planes(inp, h)?;
        planes.push(p);
        scales.push(scale);
    }
    let x = to_planes::<T>(planes, s_count, t_count, features::ce_channels(nr))?;
    let (out, cache) = net.forward(&x, train)?;
    let out: Vec<f64> = out.as_slice().iter().map(|v| v.f64()).collect();
    let per = s_count * t_count * 2 * nr;
    let h_hat = h_cls
        .iter()
        .zip(&scales)
        .enumerate()
        .map(|(b, (h, &scale))| features::ce_output(h, &out[b * per..(b + 1) * per], scale))
        .collect::<Result<_>>()?;
    Ok(CeRecord {
        cache,
        layers: batch.iter().map(|b| b.layer).collect(),
        scales,
        h_hat,
    })
}

/// Intermediates of one DD call.
pub struct DdRecord<T> {
    pub cache: NetCache<T>,
    pub aux: Vec<DdAux>,
    /// Per instance: LLRs before the outer clip.
    pub pre_clip: Vec<Vec<f64>>,
    pub llrs: Vec<LlrGrid>,
}

/// DD forward over a batch of layers.
pub fn dd_forward<T: Scalar>(
    net: &ResNet<T>,
    config: &ModelConfig,
    batch: &[DdInput<'_>],
    train: bool,
) -> Result<DdRecord<T>> {
    let first = batch.first().ok_or_else(|| Error::Shape("empty DD batch".into()))?;
    let (s_count, t_count, nr) = first.y_d.shape();
    check_antennas(config, nr)?;
    let m_max = config.m_max;
    let mut planes = Vec::with_capacity(batch.len());
    let mut aux = Vec::with_capacity(batch.len());
    for inp in batch {
        if inp.y_d.shape() != (s_count, t_count, nr) {
            return Err(Error::Shape("DD batch mixes grid shapes".into()));
        }
        let (p, a) = features::dd_planes(inp, m_max)?;
        planes.push(p);
        aux.push(a);
    }
    let x = to_planes::<T>(planes, s_count, t_count, features::dd_channels(nr, m_max))?;
    let (out, cache) = net.forward(&x, train)?;
    let out: Vec<f64> = out.as_slice().iter().map(|v| v.f64()).collect();
    let per = s_count * t_count * m_max;
    let mut pre_clip = Vec::with_capacity(batch.len());
    let mut llrs = Vec::with_capacity(batch.len());
    for (b, a) in aux.iter().enumerate() {
        let (v, pre) = features::dd_output(a, &out[b * per..(b + 1) * per], m_max)?;
        llrs.push(v);
        pre_clip.push(pre);
    }
    Ok(DdRecord {
        cache,
        aux,
        pre_clip,
        llrs,
    })
}

/// Backpropagates one iteration: `d_llr[b]` is `∂loss/∂LLR` of DD instance
/// `b` and `d_h[b]` is the direct `∂loss/∂Ĥ` of CE instance `b` (the same
/// layer). Gradients reach the CE network both directly and through the
/// detector's use of `Ĥ`.
#[allow(clippy::too_many_arguments)]
pub fn backward_iteration<T: Scalar>(
    nets: &ReceiverNets<T>,
    ce: &CeRecord<T>,
    dd: &DdRecord<T>,
    book: &PilotBook,
    d_llr: &[Vec<f64>],
    d_h: &[Vec<C64>],
    grads_ce: &mut Grads<T>,
    grads_dd: &mut Grads<T>,
) -> Result<()> {
    let n = ce.layers.len();
    if dd.aux.len() != n || d_llr.len() != n || d_h.len() != n {
        return Err(Error::Shape("iteration records disagree on the batch".into()));
    }
    if dd.aux.iter().zip(&ce.layers).any(|(a, &l)| a.layer != l) {
        return Err(Error::Shape("CE and DD batches list different layers".into()));
    }
    let m_max = nets.config.m_max;
    let nr = nets.config.rx_antennas;
    let (s_count, t_count, _) = dd.aux[0].y_d.shape();
    let res = s_count * t_count;

    // DD network output and skip-path gradients.
    let mut d_out = Planes::<T>::zeros(n, s_count, t_count, m_max);
    let mut d_skip = Vec::with_capacity(n);
    for b in 0..n {
        let m = dd.aux[b].bits;
        let mut skip = vec![0.0; res * m];
        for re in 0..res {
            for k in 0..m {
                let i = re * m + k;
                if dd.pre_clip[b][i].abs() < LLR_CLIP {
                    let g = d_llr[b][i];
                    skip[i] = g;
                    d_out.as_mut_slice()[(b * res + re) * m_max + k] = T::of(g);
                }
            }
        }
        d_skip.push(skip);
    }
    let d_in = nets.dd.backward(&dd.cache, &d_out, grads_dd, true)?.expect("input gradient requested");
    let d_in: Vec<f64> = d_in.as_slice().iter().map(|v| v.f64()).collect();
    let c_dd = features::dd_channels(nr, m_max);

    let mut d_ce = Planes::<T>::zeros(n, s_count, t_count, 2 * nr);
    for b in 0..n {
        let aux = &dd.aux[b];
        let (mut dh, dy) = features::dd_input_backward(aux, &d_in[b * res * c_dd..(b + 1) * res * c_dd], &d_skip[b], m_max);
        features::pilot_path_backward(&mut dh, &dy, book.grid(aux.layer), aux.alpha, nr);
        let scale = ce.scales[b];
        let dst = &mut d_ce.as_mut_slice()[b * res * 2 * nr..(b + 1) * res * 2 * nr];
        for (i, (g, direct)) in dh.iter().zip(&d_h[b]).enumerate() {
            let total = (g + direct) * scale;
            dst[2 * i] = T::of(total.re);
            dst[2 * i + 1] = T::of(total.im);
        }
    }
    nets.ce.backward(&ce.cache, &d_ce, grads_ce, false)?;
    Ok(())
}

/// Inference CE backend: classical estimate refined by the CE network.
#[derive(Clone, Debug)]
pub struct NeuralCe<T = f32> {
    pub config: ModelConfig,
    pub net: ResNet<T>,
    pub classic: ClassicCe,
}

impl<T: Scalar> CeBackend for NeuralCe<T> {
    fn estimate(&self, batch: &[CeInput<'_>]) -> sipsim_core::Result<Vec<LayerChannel>> {
        Ok(ce_forward(&self.net, &self.config, &self.classic, batch, false)?.h_hat)
    }
}

/// Inference DD backend: max-log MRC LLRs refined by the DD network.
#[derive(Clone, Debug)]
pub struct NeuralDd<T = f32> {
    pub config: ModelConfig,
    pub net: ResNet<T>,
}

impl<T: Scalar> DdBackend for NeuralDd<T> {
    fn detect(&self, batch: &[DdInput<'_>]) -> sipsim_core::Result<Vec<LlrGrid>> {
        Ok(dd_forward(&self.net, &self.config, batch, false)?.llrs)
    }
}

impl<T: Scalar> ReceiverNets<T> {
    /// Inference backends; `classic` supplies the CE network's starting estimate.
    pub fn backends(&self, classic: ClassicCe) -> (NeuralCe<T>, NeuralDd<T>) {
        (
            NeuralCe {
                config: self.config,
                net: self.ce.clone(),
                classic,
            },
            NeuralDd {
                config: self.config,
                net: self.dd.clone(),
            },
        )
    }
}
