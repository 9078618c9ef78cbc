//! Linear receivers: the DMRS baseline (LS/LMMSE channel estimation and
//! LMMSE MIMO detection) and classical CE/DD backends for the
//! interference-cancellation receiver.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::channel::ChannelCovariance;
use crate::grid::{ChannelTensor, LayerChannel, ResourceGrid, RxTensor, C64};
use crate::ic::{CeBackend, CeInput, DdBackend, DdInput};
use crate::link::{LlrGrid, TbCodec, TbDecision};
use crate::modem::Constellation;
use crate::pilot::{dmrs_comb_and_cover, DmrsGrids, PilotBook};
use crate::{Error, Result};

/// Smallest variance used anywhere a noise level divides.
const VARIANCE_FLOOR: f64 = 1e-12;

/// Channel statistics and noise level used by LMMSE filters.
#[derive(Clone, Debug)]
pub struct LmmseContext {
    pub covariance: ChannelCovariance,
    pub sigma2: f64,
}

/// Frequency interpolation method for DMRS estimates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FreqInterpolation {
    /// Linear interpolation between cover-pair centres, held at the band edges.
    Linear,
    /// Wiener filter from the channel covariance.
    Lmmse,
}

/// Despread least-squares estimates at the DMRS cover pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct DmrsLsEstimate {
    subcarriers: usize,
    symbols: usize,
    layers: usize,
    antennas: usize,
    pilot_symbols: Vec<usize>,
    /// `[layer][antenna][pilot symbol][pair]`.
    values: Vec<Vec<Vec<Vec<C64>>>>,
    /// Per-layer pilot amplitude.
    amplitude: f64,
}

impl DmrsLsEstimate {
    /// Subcarriers `(s0, s1)` of cover pair `j` in the comb of layer `l`.
    pub fn pair_subcarriers(l: usize, j: usize) -> (usize, usize) {
        let (comb, _) = dmrs_comb_and_cover(l);
        (4 * j + comb, 4 * j + 2 + comb)
    }

    pub fn num_pairs(&self) -> usize {
        self.subcarriers / 4
    }

    pub fn value(&self, l: usize, r: usize, pilot_index: usize, pair: usize) -> C64 {
        self.values[l][r][pilot_index][pair]
    }

    /// Noise variance of each despread value for per-element noise `sigma2`.
    pub fn noise_variance(&self, sigma2: f64) -> f64 {
        sigma2 / (2.0 * self.amplitude * self.amplitude)
    }
}

/// `ĥ = ½(y0/p0 + y1/p1)` over each cover pair; assumes the channel is
/// constant across the pair.
pub fn dmrs_ls_estimate(y: &RxTensor, grids: &DmrsGrids) -> Result<DmrsLsEstimate> {
    let (s_count, t_count, nr) = y.shape();
    if grids.pilots.shape() != (s_count, t_count) {
        return Err(Error::DimensionMismatch("DMRS grids vs received grid".into()));
    }
    if grids.pattern.pilot_symbols.is_empty() {
        return Err(Error::InvalidParameter("no DMRS pilot symbols".into()));
    }
    let layers = grids.pilots.num_layers();
    let pairs = s_count / 4;
    let values = (0..layers)
        .map(|l| {
            let p = grids.pilots.layer(l);
            (0..nr)
                .map(|r| {
                    grids
                        .pattern
                        .pilot_symbols
                        .iter()
                        .map(|&t| {
                            (0..pairs)
                                .map(|j| {
                                    let (s0, s1) = DmrsLsEstimate::pair_subcarriers(l, j);
                                    let (p0, p1) = (p.get(s0, t), p.get(s1, t));
                                    (y.get(s0, t, r) / p0 + y.get(s1, t, r) / p1) * 0.5
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    Ok(DmrsLsEstimate {
        subcarriers: s_count,
        symbols: t_count,
        layers,
        antennas: nr,
        pilot_symbols: grids.pattern.pilot_symbols.clone(),
        values,
        amplitude: grids.amplitude,
    })
}

/// Frequency filter mapping the pair observations of layer `l` to all
/// subcarriers, `W = R_hz·(R_zz + v·I)^{-1}` where each observation is the
/// pair mean `(h[s0] + h[s1])/2` plus noise of variance `v`.
pub fn dmrs_lmmse_filter(r_ff: &DMatrix<C64>, l: usize, noise_var: f64) -> Result<DMatrix<C64>> {
    let s_count = r_ff.nrows();
    let pairs = s_count / 4;
    let half = C64::new(0.5, 0.0);
    let quarter = C64::new(0.25, 0.0);
    let mut r_zz = DMatrix::from_fn(pairs, pairs, |i, j| {
        let (a0, a1) = DmrsLsEstimate::pair_subcarriers(l, i);
        let (b0, b1) = DmrsLsEstimate::pair_subcarriers(l, j);
        (r_ff[(a0, b0)] + r_ff[(a0, b1)] + r_ff[(a1, b0)] + r_ff[(a1, b1)]) * quarter
    });
    for i in 0..pairs {
        r_zz[(i, i)] += C64::new(noise_var.max(VARIANCE_FLOOR), 0.0);
    }
    let r_hz = DMatrix::from_fn(s_count, pairs, |s, j| {
        let (b0, b1) = DmrsLsEstimate::pair_subcarriers(l, j);
        (r_ff[(s, b0)] + r_ff[(s, b1)]) * half
    });
    let inv = r_zz
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular pilot covariance".into()))?;
    Ok(r_hz * inv)
}

fn linear_frequency(values: &[C64], l: usize, s_count: usize) -> Vec<C64> {
    let centres: Vec<f64> = (0..values.len())
        .map(|j| {
            let (a, b) = DmrsLsEstimate::pair_subcarriers(l, j);
            (a + b) as f64 / 2.0
        })
        .collect();
    (0..s_count)
        .map(|s| interpolate_linear(&centres, values, s as f64))
        .collect()
}

/// Piecewise-linear interpolation through `(xs, ys)`, constant outside.
fn interpolate_linear(xs: &[f64], ys: &[C64], x: f64) -> C64 {
    if xs.len() == 1 || x <= xs[0] {
        return ys[0];
    }
    if x >= xs[xs.len() - 1] {
        return ys[ys.len() - 1];
    }
    let k = xs.partition_point(|&v| v <= x) - 1;
    let w = (x - xs[k]) / (xs[k + 1] - xs[k]);
    ys[k] * (1.0 - w) + ys[k + 1] * w
}

/// Full-grid channel estimate from DMRS: frequency interpolation at each
/// pilot symbol, then constant (one pilot symbol) or linear (several) in time.
pub fn dmrs_channel_estimate(
    ls: &DmrsLsEstimate,
    method: FreqInterpolation,
    ctx: Option<&LmmseContext>,
) -> Result<ChannelTensor> {
    let (s_count, t_count) = (ls.subcarriers, ls.symbols);
    let mut h = ChannelTensor::zeros(s_count, t_count, ls.layers, ls.antennas);
    let pilot_t: Vec<f64> = ls.pilot_symbols.iter().map(|&t| t as f64).collect();
    for l in 0..ls.layers {
        let filter = match method {
            FreqInterpolation::Linear => None,
            FreqInterpolation::Lmmse => {
                let ctx = ctx.ok_or_else(|| {
                    Error::InvalidParameter("LMMSE interpolation needs channel statistics".into())
                })?;
                let cov = &ctx.covariance;
                if cov.r_ff.nrows() != s_count {
                    return Err(Error::DimensionMismatch("covariance size vs subcarriers".into()));
                }
                // Scale the layer-averaged prior to this layer's power.
                let mean_power = cov.layer_power.iter().sum::<f64>() / cov.layer_power.len() as f64;
                let scale = match cov.layer_power.get(l) {
                    Some(&p) if mean_power > 0.0 => p / mean_power,
                    _ => 1.0,
                };
                let r = &cov.r_ff * C64::new(scale, 0.0);
                Some(dmrs_lmmse_filter(&r, l, ls.noise_variance(ctx.sigma2))?)
            }
        };
        for r in 0..ls.antennas {
            let per_pilot: Vec<Vec<C64>> = (0..ls.pilot_symbols.len())
                .map(|pi| {
                    let obs = &ls.values[l][r][pi];
                    match &filter {
                        None => linear_frequency(obs, l, s_count),
                        Some(w) => (w * DVector::from_column_slice(obs)).iter().copied().collect(),
                    }
                })
                .collect();
            for s in 0..s_count {
                let column: Vec<C64> = per_pilot.iter().map(|v| v[s]).collect();
                for t in 0..t_count {
                    h.set(s, t, l, r, interpolate_linear(&pilot_t, &column, t as f64));
                }
            }
        }
    }
    Ok(h)
}

/// Per-RE LMMSE detection output: unbiased symbol estimates and their
/// post-detection noise variances, one grid per layer.
#[derive(Clone, Debug)]
pub struct DetectOutput {
    pub symbols: Vec<ResourceGrid>,
    pub noise_var: Vec<Vec<f64>>,
}

/// `q̂ = (AᴴA + σ²I)⁻¹Aᴴy` with `A = Ĥ/√L` so that `q` has unit power; the
/// estimate is debiased by `μ = (WA)_ll` and carries variance `(1−μ)/μ`.
pub fn lmmse_detect(y: &RxTensor, h_hat: &ChannelTensor, sigma2: f64) -> Result<DetectOutput> {
    let (s_count, t_count, layers, nr) = h_hat.shape();
    if y.shape() != (s_count, t_count, nr) {
        return Err(Error::DimensionMismatch("received grid vs channel estimate".into()));
    }
    if layers > nr {
        return Err(Error::InvalidParameter(format!("{layers} layers with {nr} receive antennas")));
    }
    let scale = 1.0 / (layers as f64).sqrt();
    let s2 = sigma2.max(VARIANCE_FLOOR);
    let mut symbols = vec![ResourceGrid::zeros(s_count, t_count); layers];
    let mut noise_var = vec![vec![0.0; s_count * t_count]; layers];
    for s in 0..s_count {
        for t in 0..t_count {
            let a = DMatrix::from_fn(nr, layers, |r, l| h_hat.get(s, t, l, r) * scale);
            let yv = DVector::from_fn(nr, |r, _| y.get(s, t, r));
            let ah = a.adjoint();
            let mut gram = &ah * &a;
            for l in 0..layers {
                gram[(l, l)] += C64::new(s2, 0.0);
            }
            let inv = gram
                .try_inverse()
                .ok_or_else(|| Error::Numerical("singular detection matrix".into()))?;
            let w = inv * ah;
            let q = &w * yv;
            let wa = &w * &a;
            for l in 0..layers {
                let mu = wa[(l, l)].re;
                let (sym, var) = if mu > VARIANCE_FLOOR {
                    (q[l] / mu, ((1.0 - mu) / mu).max(VARIANCE_FLOOR))
                } else {
                    (C64::new(0.0, 0.0), 1.0 / VARIANCE_FLOOR)
                };
                symbols[l].set(s, t, sym);
                noise_var[l][s * t_count + t] = var;
            }
        }
    }
    Ok(DetectOutput { symbols, noise_var })
}

/// Max-log LLRs of detected symbols on the codec's data REs.
pub fn demap_detected(det: &DetectOutput, l: usize, codec: &TbCodec) -> LlrGrid {
    let c = codec.constellation();
    let m = c.bits_per_symbol();
    let (s_count, t_count) = det.symbols[l].shape();
    let mut out = LlrGrid::zeros(s_count, t_count, m);
    for &re in codec.data_res() {
        let (s, t) = (re / t_count, re % t_count);
        let u = det.symbols[l].get(s, t);
        c.maxlog_mrc(u, 1.0, 1.0, det.noise_var[l][re], out.re_mut(s, t));
    }
    out
}

/// The orthogonal-pilot baseline receiver.
#[derive(Clone, Debug)]
pub struct DmrsReceiver {
    pub grids: DmrsGrids,
    pub method: FreqInterpolation,
    pub covariance: Option<ChannelCovariance>,
    pub max_decode_iters: usize,
}

#[derive(Clone, Debug)]
pub struct DmrsOutput {
    pub h_hat: ChannelTensor,
    pub llrs: Vec<LlrGrid>,
    pub decisions: Vec<TbDecision>,
}

impl DmrsReceiver {
    pub fn receive(&self, y: &RxTensor, sigma2: f64, codec: &TbCodec) -> Result<DmrsOutput> {
        let ls = dmrs_ls_estimate(y, &self.grids)?;
        let ctx = self.covariance.as_ref().map(|c| LmmseContext {
            covariance: c.clone(),
            sigma2,
        });
        let h_hat = dmrs_channel_estimate(&ls, self.method, ctx.as_ref())?;
        let det = lmmse_detect(y, &h_hat, sigma2)?;
        let llrs: Vec<LlrGrid> = (0..h_hat.num_layers()).map(|l| demap_detected(&det, l, codec)).collect();
        let decisions = llrs
            .iter()
            .map(|v| codec.decode(v, self.max_decode_iters))
            .collect::<Result<_>>()?;
        Ok(DmrsOutput { h_hat, llrs, decisions })
    }
}

/// Eigen-decomposed Kronecker prior `R_f ⊗ R_t` (both normalized to unit
/// diagonal mean) used to smooth raw per-RE estimates.
#[derive(Clone, Debug)]
pub struct SmoothingPrior {
    u_f: DMatrix<C64>,
    lambda_f: Vec<f64>,
    u_t: DMatrix<C64>,
    lambda_t: Vec<f64>,
    /// Mean channel power per layer; estimated from the observations when absent.
    layer_power: Option<Vec<f64>>,
}

impl SmoothingPrior {
    pub fn from_covariance(cov: &ChannelCovariance) -> Result<Self> {
        let s_count = cov.r_ff.nrows();
        let tr = (0..s_count).map(|i| cov.r_ff[(i, i)].re).sum::<f64>() / s_count as f64;
        if !(tr > 0.0) {
            return Err(Error::DegenerateChannel("zero-power frequency covariance".into()));
        }
        let r_f = &cov.r_ff / C64::new(tr, 0.0);
        let p0 = cov.r_t[0].re;
        if !(p0 > 0.0) {
            return Err(Error::DegenerateChannel("zero-power time correlation".into()));
        }
        let t_count = cov.r_t.len();
        let r_t = DMatrix::from_fn(t_count, t_count, |i, j| {
            if i >= j {
                cov.r_t[i - j] / p0
            } else {
                cov.r_t[j - i].conj() / p0
            }
        });
        let ef = SymmetricEigen::new(r_f);
        let et = SymmetricEigen::new(r_t);
        Ok(SmoothingPrior {
            u_f: ef.eigenvectors,
            lambda_f: ef.eigenvalues.iter().map(|&v| v.max(0.0)).collect(),
            u_t: et.eigenvectors,
            lambda_t: et.eigenvalues.iter().map(|&v| v.max(0.0)).collect(),
            layer_power: Some(cov.layer_power.clone()),
        })
    }

    /// Prior with no structure: every RE estimated independently.
    pub fn identity(subcarriers: usize, symbols: usize) -> Self {
        SmoothingPrior {
            u_f: DMatrix::identity(subcarriers, subcarriers),
            lambda_f: vec![1.0; subcarriers],
            u_t: DMatrix::identity(symbols, symbols),
            lambda_t: vec![1.0; symbols],
            layer_power: None,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.lambda_f.len(), self.lambda_t.len())
    }

    pub fn layer_power(&self, l: usize) -> Option<f64> {
        self.layer_power.as_ref().and_then(|p| p.get(l).copied())
    }

    /// Wiener smoothing of one `S×T` plane of noisy observations with prior
    /// power `power` and white observation noise `noise_var`.
    pub fn smooth(&self, obs: &DMatrix<C64>, power: f64, noise_var: f64) -> DMatrix<C64> {
        let mut coeff = self.u_f.adjoint() * obs * self.u_t.map(|z| z.conj());
        for (i, lf) in self.lambda_f.iter().enumerate() {
            for (j, lt) in self.lambda_t.iter().enumerate() {
                let sig = power * lf * lt;
                coeff[(i, j)] *= sig / (sig + noise_var);
            }
        }
        &self.u_f * coeff * self.u_t.transpose()
    }
}

/// Group-wise pilot despreading: `h̃_g = Σ_n conj(p[n])·y[n] / (√α·Σ_n |p[n]|²)`
/// per receive antenna, returned as `[antenna][group]`.
pub fn despread_pilot_groups(y_x: &RxTensor, book: &PilotBook, l: usize, alpha: f64) -> Vec<Vec<C64>> {
    let nr = y_x.antennas();
    let p = book.grid(l);
    let amp = alpha.sqrt();
    (0..nr)
        .map(|r| {
            (0..book.num_groups())
                .map(|g| {
                    let mut num = C64::new(0.0, 0.0);
                    let mut den = 0.0;
                    for (s, t) in book.group_positions(g) {
                        num += p.get(s, t).conj() * y_x.get(s, t, r);
                        den += p.get(s, t).norm_sqr();
                    }
                    if amp * den > 0.0 {
                        num / (amp * den)
                    } else {
                        C64::new(0.0, 0.0)
                    }
                })
                .collect()
        })
        .collect()
}

/// Per-RE symbol-aided estimate `y·conj(x̂)/|x̂|²` (zero where `x̂ = 0`).
pub fn symbol_branch(y_x: &RxTensor, x_hat: &ResourceGrid) -> RxTensor {
    let (s_count, t_count, nr) = y_x.shape();
    let mut out = RxTensor::zeros(s_count, t_count, nr);
    for s in 0..s_count {
        for t in 0..t_count {
            let x = x_hat.get(s, t);
            let e = x.norm_sqr();
            if e > 0.0 {
                for r in 0..nr {
                    out.set(s, t, r, y_x.get(s, t, r) * x.conj() / e);
                }
            }
        }
    }
    out
}

/// Classical CE backend for superimposed pilots.
///
/// Two raw estimates per RE are combined with Fisher-information weights:
/// the despread pilot group (information `(1−ρ)·α·|p|²/P_p`) and, once data
/// has been reconstructed, the symbol-aided estimate (information
/// `ρ·|x̂|²/P_x`), where `ρ` is the reliability passed by the engine and
/// `P_p`, `P_x` are measured interference-plus-noise powers. With `ρ = 1`
/// the pilot branch is dropped since `x̂` already contains the pilot. The
/// combined plane is then Wiener-smoothed with a Kronecker time-frequency prior.
#[derive(Clone, Debug)]
pub struct ClassicCe {
    pub prior: SmoothingPrior,
}

impl ClassicCe {
    pub fn new(prior: SmoothingPrior) -> Self {
        ClassicCe { prior }
    }

    fn estimate_one(&self, inp: &CeInput<'_>) -> Result<LayerChannel> {
        let y = inp.y_x;
        let (s_count, t_count, nr) = y.shape();
        if self.prior.shape() != (s_count, t_count) {
            return Err(Error::DimensionMismatch("smoothing prior vs grid".into()));
        }
        let book = inp.book;
        let l = inp.layer;
        let layers = book.layers() as f64;
        let alpha = inp.alpha;
        let p = book.grid(l);
        let floor = inp.sigma2.max(VARIANCE_FLOOR);
        let mean_y = y.mean_power();

        let has_x = !inp.x_hat.is_zero();
        let rho = if has_x && inp.iteration > 1 { inp.reliability.clamp(0.0, 1.0) } else { 0.0 };

        // Pilot branch and its interference power.
        let groups = if alpha > 0.0 { despread_pilot_groups(y, book, l, alpha) } else { Vec::new() };
        let p_pilot = if alpha > 0.0 {
            let mean_hp = groups.iter().flatten().map(|z| z.norm_sqr()).sum::<f64>()
                / (nr * book.num_groups()) as f64;
            if book.layers() > 1 {
                ((mean_y - alpha * mean_hp / layers) * layers / (layers - 1.0)).max(floor)
            } else {
                ((1.0 - alpha) * mean_y + alpha * inp.sigma2).max(floor)
            }
        } else {
            f64::INFINITY
        };

        // Symbol branch and its interference power, measured as the residual
        // after a first smoothing pass.
        let sym = if rho > 0.0 { Some(symbol_branch(y, inp.x_hat)) } else { None };
        let p_symbol = match &sym {
            Some(hx) => {
                let guess = if p_pilot.is_finite() { p_pilot } else { mean_y.max(floor) };
                let e_x = inp.x_hat.mean_power().max(VARIANCE_FLOOR);
                let first = self.smooth_planes(hx, l, |_, _| guess / e_x)?;
                let fit = first.hadamard_replicated(inp.x_hat)?;
                y.sub(&fit)?.mean_power().max(floor)
            }
            None => f64::INFINITY,
        };

        let mut combined = RxTensor::zeros(s_count, t_count, nr);
        let mut info = vec![0.0; s_count * t_count];
        for s in 0..s_count {
            for t in 0..t_count {
                let (g, _) = book.group_of(s, t);
                let j_p = if alpha > 0.0 {
                    (1.0 - rho) * alpha * p.get(s, t).norm_sqr() / p_pilot
                } else {
                    0.0
                };
                let j_x = if rho > 0.0 { rho * inp.x_hat.get(s, t).norm_sqr() / p_symbol } else { 0.0 };
                let j = j_p + j_x;
                info[s * t_count + t] = j;
                if j > 0.0 {
                    for r in 0..nr {
                        let mut v = C64::new(0.0, 0.0);
                        if j_p > 0.0 {
                            v += groups[r][g] * j_p;
                        }
                        if let Some(hx) = &sym {
                            v += hx.get(s, t, r) * j_x;
                        }
                        combined.set(s, t, r, v / j);
                    }
                }
            }
        }
        if info.iter().all(|&j| j == 0.0) {
            return Ok(RxTensor::zeros(s_count, t_count, nr));
        }
        self.smooth_planes(&combined, l, |s, t| {
            let j = info[s * t_count + t];
            if j > 0.0 {
                1.0 / j
            } else {
                f64::INFINITY
            }
        })
    }

    /// Smooths every antenna plane with a common noise level, the mean of
    /// the per-RE variances (REs without information are excluded). The
    /// signal power comes from the prior, or from the observations if the
    /// prior has none for layer `l`.
    fn smooth_planes(&self, raw: &RxTensor, l: usize, var: impl Fn(usize, usize) -> f64) -> Result<RxTensor> {
        let (s_count, t_count, nr) = raw.shape();
        let vars: Vec<f64> = (0..s_count)
            .flat_map(|s| (0..t_count).map(move |t| (s, t)))
            .map(|(s, t)| var(s, t))
            .filter(|v| v.is_finite())
            .collect();
        let noise = (vars.iter().sum::<f64>() / vars.len().max(1) as f64).max(VARIANCE_FLOOR);
        let coverage = vars.len() as f64 / (s_count * t_count) as f64;
        let mean_obs = raw.mean_power() / coverage.max(VARIANCE_FLOOR);
        let power = match self.prior.layer_power(l) {
            Some(p) => p.max(VARIANCE_FLOOR),
            None => (mean_obs - noise).max(1e-3 * mean_obs).max(VARIANCE_FLOOR),
        };
        let mut out = RxTensor::zeros(s_count, t_count, nr);
        for r in 0..nr {
            let plane = DMatrix::from_fn(s_count, t_count, |s, t| raw.get(s, t, r));
            let sm = self.prior.smooth(&plane, power, noise);
            for s in 0..s_count {
                for t in 0..t_count {
                    out.set(s, t, r, sm[(s, t)]);
                }
            }
        }
        Ok(out)
    }
}

impl CeBackend for ClassicCe {
    fn estimate(&self, batch: &[CeInput<'_>]) -> Result<Vec<LayerChannel>> {
        batch.iter().map(|b| self.estimate_one(b)).collect()
    }
}

/// Classical DD backend: maximal-ratio combining over receive antennas and
/// max-log demapping with the data amplitude `√((1−α)/L)`. The noise level
/// is the larger of `σ²` and the measured residual after removing the
/// expected data power.
#[derive(Clone, Copy, Debug, Default)]
pub struct ClassicDd;

impl ClassicDd {
    pub fn detect_one(inp: &DdInput<'_>) -> Result<LlrGrid> {
        let y = inp.y_d;
        let h = inp.h_hat;
        let (s_count, t_count, nr) = y.shape();
        if h.shape() != y.shape() {
            return Err(Error::DimensionMismatch("channel estimate vs detection input".into()));
        }
        let c = Constellation::new(inp.mcs.bits_per_symbol)?;
        let amp = ((1.0 - inp.alpha) / inp.layers as f64).sqrt();
        let signal = amp * amp * h.mean_power();
        let sigma2_eff = (y.mean_power() - signal).max(inp.sigma2).max(VARIANCE_FLOOR);
        let m = c.bits_per_symbol();
        let mut out = LlrGrid::zeros(s_count, t_count, m);
        for s in 0..s_count {
            for t in 0..t_count {
                let mut z = C64::new(0.0, 0.0);
                let mut g = 0.0;
                for r in 0..nr {
                    let hr = h.get(s, t, r);
                    z += hr.conj() * y.get(s, t, r);
                    g += hr.norm_sqr();
                }
                c.maxlog_mrc(z, g, amp, sigma2_eff, out.re_mut(s, t));
            }
        }
        Ok(out)
    }
}

impl DdBackend for ClassicDd {
    fn detect(&self, batch: &[DdInput<'_>]) -> Result<Vec<LlrGrid>> {
        batch.iter().map(ClassicDd::detect_one).collect()
    }
}
