//! Tapped-delay-line fading with Clarke Doppler, wideband SVD precoding and
//! the received-signal model `Y_r = Σ_l H_{r,l}∘X_l + N_r`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::grid::{ChannelTensor, MultiLayerGrid, RxTensor, C64};
use crate::{Error, Result};

const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Number of sinusoids per fading coefficient.
pub const SOS_SINUSOIDS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tap {
    /// Delay in seconds.
    pub delay: f64,
    /// Linear power.
    pub power: f64,
}

/// Power-delay profile normalized to unit total power.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TapProfile {
    taps: Vec<Tap>,
}

impl TapProfile {
    /// Builds a profile from `(delay seconds, linear power)` pairs and
    /// normalizes the powers. Taps are sorted by delay.
    pub fn new(mut taps: Vec<Tap>) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::InvalidParameter("tap profile is empty".into()));
        }
        if taps
            .iter()
            .any(|t| !(t.delay >= 0.0) || !(t.power > 0.0) || !t.delay.is_finite() || !t.power.is_finite())
        {
            return Err(Error::InvalidParameter(
                "tap delays must be nonnegative and powers positive".into(),
            ));
        }
        taps.sort_by(|a, b| a.delay.partial_cmp(&b.delay).unwrap());
        let total: f64 = taps.iter().map(|t| t.power).sum();
        for t in &mut taps {
            t.power /= total;
        }
        Ok(TapProfile { taps })
    }

    /// Profile from `(delay in ns, power in dB)` entries as written in config files.
    pub fn from_ns_db(entries: &[(f64, f64)]) -> Result<Self> {
        Self::new(
            entries
                .iter()
                .map(|&(ns, db)| Tap {
                    delay: ns * 1e-9,
                    power: 10f64.powf(db / 10.0),
                })
                .collect(),
        )
    }

    /// Flat fading: one tap at zero delay.
    pub fn flat() -> Self {
        TapProfile {
            taps: vec![Tap { delay: 0.0, power: 1.0 }],
        }
    }

    /// Exponentially decaying profile with `n_taps` taps spaced so that the
    /// profile spans four delay spreads; the realized RMS delay spread is
    /// close to but not exactly `delay_spread` because of truncation.
    pub fn exponential(delay_spread: f64, n_taps: usize) -> Result<Self> {
        if n_taps == 0 || !(delay_spread >= 0.0) {
            return Err(Error::InvalidParameter(
                "exponential profile needs taps and a nonnegative delay spread".into(),
            ));
        }
        if n_taps == 1 || delay_spread == 0.0 {
            return Ok(Self::flat());
        }
        let step = 4.0 * delay_spread / (n_taps - 1) as f64;
        Self::new(
            (0..n_taps)
                .map(|i| {
                    let delay = i as f64 * step;
                    Tap {
                        delay,
                        power: (-delay / delay_spread).exp(),
                    }
                })
                .collect(),
        )
    }

    /// Rescales delays so the RMS delay spread equals `delay_spread`.
    pub fn scaled_to(&self, delay_spread: f64) -> Result<Self> {
        let current = self.rms_delay_spread();
        if current == 0.0 {
            return Ok(self.clone());
        }
        let k = delay_spread / current;
        Self::new(
            self.taps
                .iter()
                .map(|t| Tap {
                    delay: t.delay * k,
                    power: t.power,
                })
                .collect(),
        )
    }

    pub fn taps(&self) -> &[Tap] {
        &self.taps
    }

    pub fn rms_delay_spread(&self) -> f64 {
        let mean: f64 = self.taps.iter().map(|t| t.power * t.delay).sum();
        let second: f64 = self.taps.iter().map(|t| t.power * t.delay * t.delay).sum();
        (second - mean * mean).max(0.0).sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DopplerSpec {
    /// UE speed in m/s.
    pub ue_speed: f64,
    /// Carrier frequency in Hz.
    pub carrier: f64,
}

impl DopplerSpec {
    pub fn from_kmh(kmh: f64, carrier: f64) -> Result<Self> {
        let d = DopplerSpec {
            ue_speed: kmh / 3.6,
            carrier,
        };
        if !(d.max_doppler() >= 0.0) || !d.max_doppler().is_finite() {
            return Err(Error::InvalidParameter("Doppler must be finite and nonnegative".into()));
        }
        Ok(d)
    }

    pub fn max_doppler(&self) -> f64 {
        self.ue_speed * self.carrier / SPEED_OF_LIGHT
    }
}

/// OFDM numerology: subcarrier spacing and symbol duration (cyclic prefix included).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Numerology {
    pub subcarrier_spacing: f64,
    pub symbol_duration: f64,
}

impl Numerology {
    /// 14 symbols per slot with slot length `1 ms · 15 kHz / Δf`.
    pub fn from_spacing(subcarrier_spacing: f64) -> Self {
        let slot = 1e-3 * 15e3 / subcarrier_spacing;
        Numerology {
            subcarrier_spacing,
            symbol_duration: slot / 14.0,
        }
    }
}

impl Default for Numerology {
    fn default() -> Self {
        Self::from_spacing(30e3)
    }
}

/// Antenna-domain channel `G`, shape `(S, T, Nr, Nt)`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MimoChannel {
    subcarriers: usize,
    symbols: usize,
    rx: usize,
    tx: usize,
    data: Vec<C64>,
}

impl MimoChannel {
    pub fn from_vec(subcarriers: usize, symbols: usize, rx: usize, tx: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != subcarriers * symbols * rx * tx {
            return Err(Error::DimensionMismatch("MIMO channel buffer length".into()));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(MimoChannel {
            subcarriers,
            symbols,
            rx,
            tx,
            data,
        })
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.subcarriers, self.symbols, self.rx, self.tx)
    }

    #[inline]
    pub fn get(&self, s: usize, t: usize, r: usize, n: usize) -> C64 {
        self.data[((s * self.symbols + t) * self.rx + r) * self.tx + n]
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn mean_power(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>() / self.data.len() as f64
    }
}

/// Everything needed to draw channel realizations for one grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelModel {
    pub profile: TapProfile,
    pub doppler: DopplerSpec,
    pub numerology: Numerology,
    pub subcarriers: usize,
    pub symbols: usize,
    pub rx: usize,
    pub tx: usize,
}

impl ChannelModel {
    /// Draws one realization: i.i.d. Rayleigh taps per antenna pair, each
    /// evolving as a sum of sinusoids with uniform arrival angles and phases.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> MimoChannel {
        let (s_count, t_count, nr, nt) = (self.subcarriers, self.symbols, self.rx, self.tx);
        let taps = self.profile.taps();
        let fd = self.doppler.max_doppler();
        let ts = self.numerology.symbol_duration;
        let two_pi = 2.0 * std::f64::consts::PI;
        let norm = 1.0 / (SOS_SINUSOIDS as f64).sqrt();

        // Time-domain tap coefficients a[(t, r, n, i)].
        let mut coef = vec![C64::new(0.0, 0.0); t_count * nr * nt * taps.len()];
        let mut omegas = [0.0f64; SOS_SINUSOIDS];
        let mut phases = [0.0f64; SOS_SINUSOIDS];
        for r in 0..nr {
            for n in 0..nt {
                for (i, tap) in taps.iter().enumerate() {
                    for k in 0..SOS_SINUSOIDS {
                        let theta: f64 = rng.random::<f64>() * two_pi;
                        omegas[k] = two_pi * fd * theta.cos() * ts;
                        phases[k] = rng.random::<f64>() * two_pi;
                    }
                    let amp = tap.power.sqrt() * norm;
                    for t in 0..t_count {
                        let sum: C64 = omegas
                            .iter()
                            .zip(&phases)
                            .map(|(w, p)| C64::from_polar(1.0, w * t as f64 + p))
                            .sum();
                        coef[((t * nr + r) * nt + n) * taps.len() + i] = sum * amp;
                    }
                }
            }
        }

        // Per-subcarrier delay phasors, centred on the carrier.
        let centre = (s_count as f64 - 1.0) / 2.0;
        let phasor: Vec<C64> = (0..s_count)
            .flat_map(|s| {
                let f = (s as f64 - centre) * self.numerology.subcarrier_spacing;
                taps.iter().map(move |tap| C64::from_polar(1.0, -two_pi * f * tap.delay))
            })
            .collect();

        let mut data = Vec::with_capacity(s_count * t_count * nr * nt);
        for s in 0..s_count {
            let ph = &phasor[s * taps.len()..(s + 1) * taps.len()];
            for t in 0..t_count {
                for r in 0..nr {
                    for n in 0..nt {
                        let a = &coef[((t * nr + r) * nt + n) * taps.len()..][..taps.len()];
                        data.push(a.iter().zip(ph).map(|(x, y)| x * y).sum());
                    }
                }
            }
        }
        MimoChannel {
            subcarriers: s_count,
            symbols: t_count,
            rx: nr,
            tx: nt,
            data,
        }
    }
}

/// Precoder `W` (Nt×L, orthonormal columns) from the top-`L` right singular
/// vectors of the per-subcarrier channels at the first symbol stacked on top
/// of each other, and the resulting per-layer channel `H = G·W`.
pub fn svd_precode(g: &MimoChannel, layers: usize) -> Result<(DMatrix<C64>, ChannelTensor)> {
    let (s_count, t_count, nr, nt) = g.shape();
    if layers == 0 || layers > nr.min(nt) {
        return Err(Error::InvalidParameter(format!(
            "{layers} layers with {nr} receive and {nt} transmit antennas"
        )));
    }
    let stacked = DMatrix::from_fn(s_count * nr, nt, |row, col| g.get(row / nr, 0, row % nr, col));
    if stacked.iter().all(|z| z.norm_sqr() == 0.0) {
        return Err(Error::DegenerateChannel("all-zero channel at slot start".into()));
    }
    let svd = stacked.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Numerical("SVD did not return right singular vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap());
    let w = DMatrix::from_fn(nt, layers, |n, l| v_t[(order[l], n)].conj());

    let mut h = ChannelTensor::zeros(s_count, t_count, layers, nr);
    for s in 0..s_count {
        for t in 0..t_count {
            for l in 0..layers {
                for r in 0..nr {
                    let v: C64 = (0..nt).map(|n| g.get(s, t, r, n) * w[(n, l)]).sum();
                    h.set(s, t, l, r, v);
                }
            }
        }
    }
    Ok((w, h))
}

/// Noiseless `Σ_l H_l∘X_l` per receive antenna.
pub fn apply_channel_noiseless(h: &ChannelTensor, x: &MultiLayerGrid) -> Result<RxTensor> {
    let (s_count, t_count, layers, nr) = h.shape();
    if x.shape() != (s_count, t_count) || x.num_layers() != layers {
        return Err(Error::DimensionMismatch(format!(
            "channel {:?} vs transmit grid {}x{:?}",
            h.shape(),
            x.num_layers(),
            x.shape()
        )));
    }
    let mut y = RxTensor::zeros(s_count, t_count, nr);
    for s in 0..s_count {
        for t in 0..t_count {
            for r in 0..nr {
                let v: C64 = (0..layers).map(|l| h.get(s, t, l, r) * x.layer(l).get(s, t)).sum();
                y.set(s, t, r, v);
            }
        }
    }
    Ok(y)
}

/// I.i.d. `CN(0, sigma2)` samples.
pub fn sample_noise<R: Rng + ?Sized>(shape: (usize, usize, usize), sigma2: f64, rng: &mut R) -> Result<RxTensor> {
    if !(sigma2 >= 0.0) || !sigma2.is_finite() {
        return Err(Error::InvalidParameter(format!("noise variance {sigma2}")));
    }
    let sd = (sigma2 / 2.0).sqrt();
    let data = (0..shape.0 * shape.1 * shape.2)
        .map(|_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            C64::new(re * sd, im * sd)
        })
        .collect();
    RxTensor::from_vec(shape.0, shape.1, shape.2, data)
}

/// `Y = Σ_l H_l∘X_l + N`, returning the noise realization alongside `Y`.
pub fn apply_channel_traced<R: Rng + ?Sized>(
    h: &ChannelTensor,
    x: &MultiLayerGrid,
    sigma2: f64,
    rng: &mut R,
) -> Result<(RxTensor, RxTensor)> {
    let mut y = apply_channel_noiseless(h, x)?;
    let noise = sample_noise(y.shape(), sigma2, rng)?;
    y.add_assign(&noise)?;
    Ok((y, noise))
}

pub fn apply_channel<R: Rng + ?Sized>(
    h: &ChannelTensor,
    x: &MultiLayerGrid,
    sigma2: f64,
    rng: &mut R,
) -> Result<RxTensor> {
    apply_channel_traced(h, x, sigma2, rng).map(|(y, _)| y)
}

/// Second-order channel statistics for LMMSE filtering.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelCovariance {
    /// `R_ff[s1, s2] = E{h[s1]·conj(h[s2])}`, averaged over symbols, layers
    /// and receive antennas.
    pub r_ff: DMatrix<C64>,
    /// `r_t[τ] = E{h[t+τ]·conj(h[t])}` for `τ = 0..T`.
    pub r_t: Vec<C64>,
    /// Mean power `E{|h|^2}` of each layer.
    pub layer_power: Vec<f64>,
}

impl ChannelCovariance {
    /// Empirical statistics over `n_samples` draws from `generator`.
    pub fn estimate<F>(mut generator: F, n_samples: usize) -> Result<Self>
    where
        F: FnMut() -> Result<ChannelTensor>,
    {
        if n_samples < 100 {
            return Err(Error::InvalidParameter(format!(
                "covariance estimation needs at least 100 samples, got {n_samples}"
            )));
        }
        let mut acc: Option<(DMatrix<C64>, Vec<C64>, f64, Vec<f64>)> = None;
        let mut layer_power: Vec<f64> = Vec::new();
        for _ in 0..n_samples {
            let h = generator()?;
            let (s_count, t_count, layers, nr) = h.shape();
            let (r_ff, r_t, nf, nt) = acc.get_or_insert_with(|| {
                (
                    DMatrix::zeros(s_count, s_count),
                    vec![C64::new(0.0, 0.0); t_count],
                    0.0,
                    vec![0.0; t_count],
                )
            });
            if r_ff.nrows() != s_count || r_t.len() != t_count {
                return Err(Error::DimensionMismatch("channel samples change shape".into()));
            }
            if layer_power.is_empty() {
                layer_power = vec![0.0; layers];
            }
            if layer_power.len() != layers {
                return Err(Error::DimensionMismatch("channel samples change layer count".into()));
            }
            for l in 0..layers {
                layer_power[l] += h.layer(l).mean_power() / n_samples as f64;
                for r in 0..nr {
                    for t in 0..t_count {
                        for a in 0..s_count {
                            let ha = h.get(a, t, l, r);
                            for b in 0..s_count {
                                r_ff[(a, b)] += ha * h.get(b, t, l, r).conj();
                            }
                        }
                        *nf += 1.0;
                    }
                    for s in 0..s_count {
                        for t0 in 0..t_count {
                            let h0 = h.get(s, t0, l, r).conj();
                            for tau in 0..t_count - t0 {
                                r_t[tau] += h.get(s, t0 + tau, l, r) * h0;
                            }
                        }
                    }
                    for (tau, c) in nt.iter_mut().enumerate() {
                        *c += (s_count * (t_count - tau)) as f64;
                    }
                }
            }
        }
        let (mut r_ff, mut r_t, nf, nt) = acc.expect("at least one sample");
        r_ff /= C64::new(nf, 0.0);
        for (v, c) in r_t.iter_mut().zip(&nt) {
            *v /= *c;
        }
        // Symmetrize away accumulated roundoff.
        let herm = (&r_ff + r_ff.adjoint()) * C64::new(0.5, 0.0);
        Ok(ChannelCovariance {
            r_ff: herm,
            r_t,
            layer_power,
        })
    }

    /// Statistics of the SVD-precoded `layers`-layer channel of `model`,
    /// from `n_samples` draws of a ChaCha stream seeded with `seed`.
    pub fn of_precoded(model: &ChannelModel, layers: usize, n_samples: usize, seed: u64) -> Result<Self> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Self::estimate(|| svd_precode(&model.sample(&mut rng), layers).map(|(_, h)| h), n_samples)
    }

    /// Time correlation normalized to `r_t[0] = 1`.
    pub fn time_correlation(&self) -> Vec<f64> {
        let p = self.r_t[0].re;
        self.r_t.iter().map(|c| if p > 0.0 { c.re / p } else { 0.0 }).collect()
    }
}
