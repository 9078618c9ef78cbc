//! Iterative interference-cancellation receiver with pluggable channel
//! estimation (CE) and data detection (DD) backends.
//!
//! Iteration `i` updates every layer from the iteration `i-1` state of the
//! other layers (Jacobi order):
//!
//! ```text
//! Yˣ_l = Y − Σ_{l'≠l} Ŷˣ_{l'}          cancel everything but layer l
//! Ĥ_l  = CE(Yˣ_l, P_l, D̂_l, X̂_l)
//! Ŷᵖ_l = √α·Ĥ_l∘P_l                     fresh pilot reconstruction
//! Yᵈ_l = Yˣ_l − Ŷᵖ_l
//! V̂_l  = DD(Yᵈ_l, Ĥ_l)
//! D̂_l  = Mod(Enc(Dec(V̂_l)))/√L
//! X̂_l  = √(1−α)·D̂_l + √α·P_l
//! Ŷˣ_l = Ĥ_l∘X̂_l
//! ```

use serde::{Deserialize, Serialize};

use crate::grid::{ChannelTensor, LayerChannel, ResourceGrid, RxTensor};
use crate::link::{perfect_llrs, LlrGrid, TbCodec, TbDecision};
use crate::mcs::McsEntry;
use crate::pilot::{superimpose_layer, PilotBook};
use crate::{Error, Result};

/// Input of one layer's channel estimation.
#[derive(Clone, Copy, Debug)]
pub struct CeInput<'a> {
    pub layer: usize,
    pub iteration: usize,
    pub y_x: &'a RxTensor,
    pub book: &'a PilotBook,
    pub d_hat: &'a ResourceGrid,
    pub x_hat: &'a ResourceGrid,
    pub alpha: f64,
    pub sigma2: f64,
    pub mcs: &'a McsEntry,
    /// Confidence in `D̂` from the previous iteration, in `[0, 1]`.
    pub reliability: f64,
}

/// Input of one layer's data detection.
#[derive(Clone, Copy, Debug)]
pub struct DdInput<'a> {
    pub layer: usize,
    pub iteration: usize,
    pub y_d: &'a RxTensor,
    pub h_hat: &'a LayerChannel,
    pub alpha: f64,
    pub sigma2: f64,
    pub mcs: &'a McsEntry,
    pub layers: usize,
    /// Mean power of `Yˣ_l`, a reference level that does not depend on `Ĥ_l`.
    pub ref_power: f64,
}

/// Channel estimation backend. Implementations must not keep per-layer
/// state, so a batch of layers gives the same answer as one call per layer.
pub trait CeBackend {
    fn estimate(&self, batch: &[CeInput<'_>]) -> Result<Vec<LayerChannel>>;
}

/// Data detection backend producing `(S, T, M)` LLRs (positive favours 0).
pub trait DdBackend {
    fn detect(&self, batch: &[DdInput<'_>]) -> Result<Vec<LlrGrid>>;
}

/// Reconstructed per-layer tensors carried between iterations.
#[derive(Clone, Debug, PartialEq)]
pub struct IcState {
    pub iteration: usize,
    pub y_x_hat: Vec<RxTensor>,
    pub y_p_hat: Vec<RxTensor>,
    pub d_hat: Vec<ResourceGrid>,
    pub x_hat: Vec<ResourceGrid>,
    pub h_hat: Vec<LayerChannel>,
    pub crc_pass: Vec<bool>,
}

impl IcState {
    pub fn zeros(subcarriers: usize, symbols: usize, layers: usize, antennas: usize) -> Self {
        let rx = RxTensor::zeros(subcarriers, symbols, antennas);
        let grid = ResourceGrid::zeros(subcarriers, symbols);
        IcState {
            iteration: 0,
            y_x_hat: vec![rx.clone(); layers],
            y_p_hat: vec![rx.clone(); layers],
            d_hat: vec![grid.clone(); layers],
            x_hat: vec![grid; layers],
            h_hat: vec![rx; layers],
            crc_pass: vec![false; layers],
        }
    }

    pub fn num_layers(&self) -> usize {
        self.d_hat.len()
    }

    /// Fraction of layers whose transport block passed CRC.
    pub fn crc_fraction(&self) -> f64 {
        if self.iteration == 0 {
            return 0.0;
        }
        self.crc_pass.iter().filter(|&&p| p).count() as f64 / self.crc_pass.len() as f64
    }
}

/// `Yˣ_l = Y − Σ_{l'≠l} Ŷˣ_{l'}`.
pub fn cancel_for_ce(y: &RxTensor, state: &IcState, l: usize) -> Result<RxTensor> {
    let mut out = y.clone();
    for (k, yx) in state.y_x_hat.iter().enumerate() {
        if k != l {
            out.sub_assign(yx)?;
        }
    }
    Ok(out)
}

/// `Yᵈ_l = Y − Σ_{l'≠l} Ŷˣ_{l'} − Ŷᵖ_l` with a freshly reconstructed `Ŷᵖ_l`.
pub fn cancel_for_dd(y: &RxTensor, state: &IcState, l: usize, y_p_fresh: &RxTensor) -> Result<RxTensor> {
    let mut out = cancel_for_ce(y, state, l)?;
    out.sub_assign(y_p_fresh)?;
    Ok(out)
}

/// `Ŷᵖ_l = √α·Ĥ_l∘P_l`, the pilot replicated over receive antennas.
pub fn reconstruct_pilot_rx(h_hat: &LayerChannel, pilot: &ResourceGrid, alpha: f64) -> Result<RxTensor> {
    Ok(h_hat.hadamard_replicated(pilot)?.scaled(alpha.sqrt()))
}

/// `X̂_l = √(1−α)·D̂_l + √α·P_l`.
pub fn reconstruct_sip(d_hat: &ResourceGrid, pilot: &ResourceGrid, alpha: f64) -> Result<ResourceGrid> {
    superimpose_layer(d_hat, pilot, alpha)
}

/// `Ŷˣ_l = Ĥ_l∘X̂_l`, replicated over receive antennas.
pub fn reconstruct_rx(h_hat: &LayerChannel, x_hat: &ResourceGrid) -> Result<RxTensor> {
    h_hat.hadamard_replicated(x_hat)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReceiverConfig {
    /// Outer iterations `V`.
    pub iterations: usize,
    pub alpha: f64,
    /// Call backends once per iteration with all layers instead of once per layer.
    pub batched: bool,
    pub max_decode_iters: usize,
}

impl ReceiverConfig {
    pub fn new(iterations: usize, alpha: f64) -> Result<Self> {
        if iterations == 0 {
            return Err(Error::InvalidParameter("receiver needs at least one iteration".into()));
        }
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::InvalidParameter(format!("alpha {alpha} outside [0, 1)")));
        }
        Ok(ReceiverConfig {
            iterations,
            alpha,
            batched: true,
            max_decode_iters: crate::fec::ldpc::DEFAULT_MAX_ITERS,
        })
    }
}

/// One record per iteration and layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationDiagnostics {
    pub iteration: usize,
    pub layer: usize,
    /// Mean power of `Y − Σ_l Ŷˣ_l` per element after this iteration.
    pub residual_power: f64,
    /// Mean `|Ĥ_l − H_l|²`, present when the true channel was supplied.
    pub ce_mse: Option<f64>,
    pub crc_pass: bool,
}

#[derive(Clone, Debug)]
pub struct ReceiverOutput {
    /// LLRs of the last iteration.
    pub llrs: Vec<LlrGrid>,
    /// Transport-block decisions of the last iteration.
    pub decisions: Vec<TbDecision>,
    pub diagnostics: Vec<IterationDiagnostics>,
    pub state: IcState,
}

/// Runs the receiver for `cfg.iterations` iterations. `genie` (the true
/// channel) is used for diagnostics only.
#[allow(clippy::too_many_arguments)]
pub fn run_receiver(
    y: &RxTensor,
    book: &PilotBook,
    codec: &TbCodec,
    ce: &dyn CeBackend,
    dd: &dyn DdBackend,
    cfg: &ReceiverConfig,
    sigma2: f64,
    genie: Option<&ChannelTensor>,
) -> Result<ReceiverOutput> {
    if cfg.iterations == 0 {
        return Err(Error::InvalidParameter("receiver needs at least one iteration".into()));
    }
    let (s_count, t_count, nr) = y.shape();
    let layers = book.layers();
    if book.shape() != (s_count, t_count) {
        return Err(Error::DimensionMismatch("pilot book vs received grid".into()));
    }
    let mcs = codec.mcs();
    let mut state = IcState::zeros(s_count, t_count, layers, nr);
    let mut diagnostics = Vec::new();
    let mut llrs = Vec::new();
    let mut decisions = Vec::new();

    for i in 1..=cfg.iterations {
        let reliability = state.crc_fraction();
        let y_x: Vec<RxTensor> = (0..layers)
            .map(|l| cancel_for_ce(y, &state, l))
            .collect::<Result<_>>()?;
        let ce_inputs: Vec<CeInput> = (0..layers)
            .map(|l| CeInput {
                layer: l,
                iteration: i,
                y_x: &y_x[l],
                book,
                d_hat: &state.d_hat[l],
                x_hat: &state.x_hat[l],
                alpha: cfg.alpha,
                sigma2,
                mcs,
                reliability,
            })
            .collect();
        let h_hat = call_batched(&ce_inputs, cfg.batched, i, |b| ce.estimate(b))?;
        check_outputs(&h_hat, i, |h: &LayerChannel| h.as_slice().iter().all(|z| z.re.is_finite() && z.im.is_finite()))?;

        let y_p: Vec<RxTensor> = (0..layers)
            .map(|l| reconstruct_pilot_rx(&h_hat[l], book.grid(l), cfg.alpha))
            .collect::<Result<_>>()?;
        let y_d: Vec<RxTensor> = (0..layers)
            .map(|l| y_x[l].sub(&y_p[l]))
            .collect::<Result<_>>()?;
        let dd_inputs: Vec<DdInput> = (0..layers)
            .map(|l| DdInput {
                layer: l,
                iteration: i,
                y_d: &y_d[l],
                h_hat: &h_hat[l],
                alpha: cfg.alpha,
                sigma2,
                mcs,
                layers,
                ref_power: y_x[l].mean_power(),
            })
            .collect();
        let v_hat = call_batched(&dd_inputs, cfg.batched, i, |b| dd.detect(b))?;
        check_outputs(&v_hat, i, |v: &LlrGrid| v.as_slice().iter().all(|x| x.is_finite()))?;

        let mut next = IcState::zeros(s_count, t_count, layers, nr);
        next.iteration = i;
        let mut iter_decisions = Vec::with_capacity(layers);
        for l in 0..layers {
            let dec = codec.decode(&v_hat[l], cfg.max_decode_iters).map_err(|e| Error::Backend {
                iteration: i,
                layer: l,
                source: Box::new(e),
            })?;
            let d_hat = codec.reconstruct(&dec)?;
            let x_hat = reconstruct_sip(&d_hat, book.grid(l), cfg.alpha)?;
            next.y_x_hat[l] = reconstruct_rx(&h_hat[l], &x_hat)?;
            next.crc_pass[l] = dec.crc_ok;
            next.d_hat[l] = d_hat;
            next.x_hat[l] = x_hat;
            iter_decisions.push(dec);
        }
        next.y_p_hat = y_p;
        next.h_hat = h_hat;

        let mut residual = y.clone();
        for yx in &next.y_x_hat {
            residual.sub_assign(yx)?;
        }
        let residual_power = residual.mean_power();
        for l in 0..layers {
            let ce_mse = match genie {
                Some(h) => Some(next.h_hat[l].sub(&h.layer(l))?.mean_power()),
                None => None,
            };
            diagnostics.push(IterationDiagnostics {
                iteration: i,
                layer: l,
                residual_power,
                ce_mse,
                crc_pass: next.crc_pass[l],
            });
        }
        state = next;
        llrs = v_hat;
        decisions = iter_decisions;
    }
    Ok(ReceiverOutput {
        llrs,
        decisions,
        diagnostics,
        state,
    })
}

fn call_batched<I, O, F>(inputs: &[I], batched: bool, iteration: usize, f: F) -> Result<Vec<O>>
where
    F: Fn(&[I]) -> Result<Vec<O>>,
{
    let wrap = |layer: usize| {
        move |e: Error| Error::Backend {
            iteration,
            layer,
            source: Box::new(e),
        }
    };
    let out = if batched {
        f(inputs).map_err(wrap(0))?
    } else {
        let mut out = Vec::with_capacity(inputs.len());
        for (l, inp) in inputs.chunks(1).enumerate() {
            let mut one = f(inp).map_err(wrap(l))?;
            if one.len() != 1 {
                return Err(wrap(l)(Error::DimensionMismatch("backend returned wrong batch size".into())));
            }
            out.push(one.pop().unwrap());
        }
        out
    };
    if out.len() != inputs.len() {
        return Err(wrap(0)(Error::DimensionMismatch(format!(
            "backend returned {} outputs for {} layers",
            out.len(),
            inputs.len()
        ))));
    }
    Ok(out)
}

fn check_outputs<O>(outs: &[O], iteration: usize, finite: impl Fn(&O) -> bool) -> Result<()> {
    match outs.iter().position(|o| !finite(o)) {
        None => Ok(()),
        Some(layer) => Err(Error::Backend {
            iteration,
            layer,
            source: Box::new(Error::NonFinite),
        }),
    }
}

/// CE backend returning the true channel. For tests and upper bounds.
#[derive(Clone, Debug)]
pub struct GenieCe {
    pub h: ChannelTensor,
}

impl CeBackend for GenieCe {
    fn estimate(&self, batch: &[CeInput<'_>]) -> Result<Vec<LayerChannel>> {
        Ok(batch.iter().map(|b| self.h.layer(b.layer)).collect())
    }
}

/// DD backend returning saturated LLRs of the transmitted codewords.
#[derive(Clone, Debug)]
pub struct GenieDd {
    pub llrs: Vec<LlrGrid>,
}

impl GenieDd {
    pub fn new(codec: &TbCodec, codewords: &[Vec<u8>]) -> Self {
        GenieDd {
            llrs: codewords.iter().map(|cw| perfect_llrs(codec, cw, 20.0)).collect(),
        }
    }
}

impl DdBackend for GenieDd {
    fn detect(&self, batch: &[DdInput<'_>]) -> Result<Vec<LlrGrid>> {
        Ok(batch.iter().map(|b| self.llrs[b.layer].clone()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::C64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rx(shape: (usize, usize, usize), rng: &mut ChaCha8Rng) -> RxTensor {
        let data = (0..shape.0 * shape.1 * shape.2)
            .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        RxTensor::from_vec(shape.0, shape.1, shape.2, data).unwrap()
    }

    fn random_grid(s: usize, t: usize, rng: &mut ChaCha8Rng) -> ResourceGrid {
        let data = (0..s * t)
            .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        ResourceGrid::from_vec(s, t, data).unwrap()
    }

    #[test]
    fn zero_state_cancellation_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = random_rx((4, 3, 2), &mut rng);
        let st = IcState::zeros(4, 3, 2, 2);
        assert_eq!(cancel_for_ce(&y, &st, 0).unwrap(), y);
        let zero = RxTensor::zeros(4, 3, 2);
        assert_eq!(cancel_for_dd(&y, &st, 1, &zero).unwrap(), y);
        assert_eq!(st.crc_fraction(), 0.0);
    }

    #[test]
    fn single_layer_never_cancels() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y = random_rx((4, 3, 2), &mut rng);
        let mut st = IcState::zeros(4, 3, 1, 2);
        st.y_x_hat[0] = random_rx((4, 3, 2), &mut rng);
        assert_eq!(cancel_for_ce(&y, &st, 0).unwrap(), y);
    }

    #[test]
    fn reconstructions_match_elementwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = random_rx((4, 3, 2), &mut rng);
        let p = random_grid(4, 3, &mut rng);
        let d = random_grid(4, 3, &mut rng);
        let alpha = 0.3;
        let yp = reconstruct_pilot_rx(&h, &p, alpha).unwrap();
        let x = reconstruct_sip(&d, &p, alpha).unwrap();
        let yx = reconstruct_rx(&h, &x).unwrap();
        for s in 0..4 {
            for t in 0..3 {
                let xe = d.get(s, t) * (1.0 - alpha).sqrt() + p.get(s, t) * alpha.sqrt();
                assert!((x.get(s, t) - xe).norm() < 1e-15);
                for r in 0..2 {
                    let pe = h.get(s, t, r) * p.get(s, t) * alpha.sqrt();
                    assert!((yp.get(s, t, r) - pe).norm() < 1e-15);
                    assert!((yx.get(s, t, r) - h.get(s, t, r) * xe).norm() < 1e-14);
                }
            }
        }
        assert_eq!(reconstruct_rx(&RxTensor::zeros(4, 3, 2), &x).unwrap().sum_power(), 0.0);
        let flat = RxTensor::from_vec(4, 3, 2, vec![C64::new(1.0, 0.0); 24]).unwrap();
        let yp1 = reconstruct_pilot_rx(&flat, &p, 1.0).unwrap();
        for r in 0..2 {
            assert_eq!(yp1.antenna_plane(r), p);
        }
        assert_eq!(reconstruct_sip(&d, &p, 0.0).unwrap(), d);
    }
}
