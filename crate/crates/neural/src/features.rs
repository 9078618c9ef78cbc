//! Input planes of the two networks and the map from network outputs back
//! to channel estimates and LLRs.
//!
//! Both networks refine a classical estimate: the CE network adds a
//! correction to the classical Ĥ and the DD network adds a correction to
//! max-log MRC LLRs. Complex quantities become `(re, im)` channel pairs,
//! antenna-major. All plane data here is pixel-major `(s, t)` with channels
//! innermost, i.e. one NHWC batch entry.

use sipsim_core::grid::{LayerChannel, ResourceGrid, RxTensor, C64};
use sipsim_core::ic::{CeInput, DdInput};
use sipsim_core::link::LlrGrid;
use sipsim_core::modem::Constellation;

use crate::loss::LLR_CLIP;
use crate::{Error, Result};

/// Smallest power used when normalizing.
pub const POWER_FLOOR: f64 = 1e-12;

/// Divisor of log-power scalar planes, keeping them near unit range.
const LOG_SCALE: f64 = 10.0;

pub fn ce_channels(nr: usize) -> usize {
    4 * nr + 9
}

pub fn dd_channels(nr: usize, m_max: usize) -> usize {
    4 * nr + m_max + 2
}

fn put_complex(px: &mut [f64], c: usize, z: C64) {
    px[c] = z.re;
    px[c + 1] = z.im;
}

/// CE input planes:
///
/// | channels | content |
/// |---|---|
/// | `2·Nr` | `Yˣ / s_y` |
/// | 2 | `P·√L` |
/// | 2 | `D̂·√L` |
/// | 2 | `X̂·√L` |
/// | `2·Nr` | `Ĥ_cls / (s_y·√L)` |
/// | 1 | `ln(σ²/s_y²)/10` |
/// | 1 | reliability `ρ` |
/// | 1 | `α` |
///
/// with `s_y = RMS(Yˣ)`. Returns the planes and the output scale `s_y·√L`.
pub fn ce_planes(inp: &CeInput<'_>, h_cls: &LayerChannel) -> Result<(Vec<f64>, f64)> {
    let y = inp.y_x;
    let (s_count, t_count, nr) = y.shape();
    if h_cls.shape() != y.shape() {
        return Err(Error::Shape("classical estimate vs received grid".into()));
    }
    let layers = inp.book.layers() as f64;
    let root_l = layers.sqrt();
    let s_y = y.mean_power().max(POWER_FLOOR).sqrt();
    let c = ce_channels(nr);
    let p = inp.book.grid(inp.layer);
    let log_noise = (inp.sigma2.max(POWER_FLOOR) / (s_y * s_y)).ln() / LOG_SCALE;
    let mut out = vec![0.0; s_count * t_count * c];
    for s in 0..s_count {
        for t in 0..t_count {
            let px = &mut out[(s * t_count + t) * c..][..c];
            for r in 0..nr {
                put_complex(px, 2 * r, y.get(s, t, r) / s_y);
                put_complex(px, 2 * nr + 6 + 2 * r, h_cls.get(s, t, r) / (s_y * root_l));
            }
            put_complex(px, 2 * nr, p.get(s, t) * root_l);
            put_complex(px, 2 * nr + 2, inp.d_hat.get(s, t) * root_l);
            put_complex(px, 2 * nr + 4, inp.x_hat.get(s, t) * root_l);
            px[4 * nr + 6] = log_noise;
            px[4 * nr + 7] = inp.reliability;
            px[4 * nr + 8] = inp.alpha;
        }
    }
    Ok((out, s_y * root_l))
}

/// `Ĥ = Ĥ_cls + scale·(out_re + i·out_im)` from `2·Nr` output planes.
pub fn ce_output(h_cls: &LayerChannel, out: &[f64], scale: f64) -> Result<LayerChannel> {
    let (s_count, t_count, nr) = h_cls.shape();
    if out.len() != s_count * t_count * 2 * nr {
        return Err(Error::Shape("CE output planes".into()));
    }
    let mut h = h_cls.clone();
    for (i, z) in h.as_mut_slice().iter_mut().enumerate() {
        *z += C64::new(out[2 * i], out[2 * i + 1]) * scale;
    }
    Ok(h)
}

/// Quantities of the classical detector kept for the backward pass.
#[derive(Clone, Debug)]
pub struct DdAux {
    pub layer: usize,
    pub alpha: f64,
    pub bits: usize,
    pub y_d: RxTensor,
    pub h_hat: LayerChannel,
    /// Data amplitude `√((1−α)/L)`.
    pub amp: f64,
    /// Input normalization `√ref_power`.
    pub scale: f64,
    pub sigma2_eff: f64,
    /// Whether `σ²_eff` came from the measured residual rather than a floor.
    pub sigma2_measured: bool,
    /// Unclipped classical LLRs, `(s, t, bit)` order.
    pub llr_cls: Vec<f64>,
    /// Winning axis levels `(bit = 1, bit = 0)` per LLR.
    pub levels: Vec<(f64, f64)>,
}

impl DdAux {
    pub fn llr_cls_clipped(&self, i: usize) -> f64 {
        self.llr_cls[i].clamp(-LLR_CLIP, LLR_CLIP)
    }
}

/// DD input planes:
///
/// | channels | content |
/// |---|---|
/// | `2·Nr` | `Yᵈ / s` |
/// | `2·Nr` | `Ĥ·a / s` |
/// | `M_max` | clipped classical LLRs `/ 20`, zero beyond `M` |
/// | 1 | MCS conditioning `m / 15` |
/// | 1 | `ln(σ²/s²)/10` |
///
/// where `s = √ref_power` and `a = √((1−α)/L)` is the data amplitude.
pub fn dd_planes(inp: &DdInput<'_>, m_max: usize) -> Result<(Vec<f64>, DdAux)> {
    let y = inp.y_d;
    let h = inp.h_hat;
    let (s_count, t_count, nr) = y.shape();
    if h.shape() != y.shape() {
        return Err(Error::Shape("channel estimate vs detection input".into()));
    }
    let m = inp.mcs.bits_per_symbol;
    if m > m_max {
        return Err(Error::Shape(format!("{m} bits per symbol exceed the model's {m_max}")));
    }
    let constellation = Constellation::new(m)?;
    let amp = ((1.0 - inp.alpha) / inp.layers as f64).sqrt();
    let residual = y.mean_power() - amp * amp * h.mean_power();
    let floor = inp.sigma2.max(POWER_FLOOR);
    let (sigma2_eff, sigma2_measured) = if residual > floor { (residual, true) } else { (floor, false) };
    let scale = inp.ref_power.max(POWER_FLOOR).sqrt();
    let c = dd_channels(nr, m_max);
    let cond = inp.mcs.conditioning();
    let log_noise = (floor / (scale * scale)).ln() / LOG_SCALE;

    let mut llr_cls = vec![0.0; s_count * t_count * m];
    let mut levels = vec![(0.0, 0.0); s_count * t_count * m];
    let mut out = vec![0.0; s_count * t_count * c];
    for s in 0..s_count {
        for t in 0..t_count {
            let re = s * t_count + t;
            let px = &mut out[re * c..][..c];
            let mut z = C64::new(0.0, 0.0);
            let mut g = 0.0;
            for r in 0..nr {
                let (yr, hr) = (y.get(s, t, r), h.get(s, t, r));
                z += hr.conj() * yr;
                g += hr.norm_sqr();
                put_complex(px, 2 * r, yr / scale);
                put_complex(px, 2 * nr + 2 * r, hr * (amp / scale));
            }
            let llr = &mut llr_cls[re * m..][..m];
            constellation.maxlog_mrc_traced(z, g, amp, sigma2_eff, llr, Some(&mut levels[re * m..][..m]));
            for (k, v) in llr.iter().enumerate() {
                px[4 * nr + k] = v.clamp(-LLR_CLIP, LLR_CLIP) / LLR_CLIP;
            }
            px[4 * nr + m_max] = cond;
            px[4 * nr + m_max + 1] = log_noise;
        }
    }
    Ok((
        out,
        DdAux {
            layer: inp.layer,
            alpha: inp.alpha,
            bits: m,
            y_d: y.clone(),
            h_hat: h.clone(),
            amp,
            scale,
            sigma2_eff,
            sigma2_measured,
            llr_cls,
            levels,
        },
    ))
}

/// Final LLRs `clip(clip(LLR_cls) + out[..M])` from `M_max` output planes.
/// Also returns the sums before the outer clip.
pub fn dd_output(aux: &DdAux, out: &[f64], m_max: usize) -> Result<(LlrGrid, Vec<f64>)> {
    let (s_count, t_count, _) = aux.y_d.shape();
    let m = aux.bits;
    if out.len() != s_count * t_count * m_max {
        return Err(Error::Shape("DD output planes".into()));
    }
    let mut pre = vec![0.0; s_count * t_count * m];
    for re in 0..s_count * t_count {
        for k in 0..m {
            let i = re * m + k;
            pre[i] = aux.llr_cls_clipped(i) + out[re * m_max + k];
        }
    }
    let llrs = pre.iter().map(|v| v.clamp(-LLR_CLIP, LLR_CLIP)).collect();
    Ok((LlrGrid::from_vec(s_count, t_count, m, llrs)?, pre))
}

/// Gradients of one DD instance with respect to `Ĥ` and `Yᵈ`, given the
/// gradients of its input planes and of its clipped classical LLRs (the
/// skip path around the network).
pub fn dd_input_backward(aux: &DdAux, d_planes: &[f64], d_llr_cls: &[f64], m_max: usize) -> (Vec<C64>, Vec<C64>) {
    let (s_count, t_count, nr) = aux.y_d.shape();
    let m = aux.bits;
    let c = dd_channels(nr, m_max);
    let amp = aux.amp;
    let sig = aux.sigma2_eff;
    let n = aux.y_d.as_slice().len();
    let mut dh = vec![C64::new(0.0, 0.0); n];
    let mut dy = vec![C64::new(0.0, 0.0); n];
    let mut d_sigma = 0.0;
    for s in 0..s_count {
        for t in 0..t_count {
            let re = s * t_count + t;
            let px = &d_planes[re * c..][..c];
            let mut dz = C64::new(0.0, 0.0);
            let mut dg = 0.0;
            for k in 0..m {
                let i = re * m + k;
                let mut d = d_llr_cls[i] + px[4 * nr + k] / LLR_CLIP;
                if aux.llr_cls[i].abs() >= LLR_CLIP {
                    d = 0.0;
                }
                if d == 0.0 {
                    continue;
                }
                let (q1, q0) = aux.levels[i];
                let dz_axis = d * -2.0 * amp * (q1 - q0) / sig;
                if k % 2 == 0 {
                    dz.re += dz_axis;
                } else {
                    dz.im += dz_axis;
                }
                dg += d * amp * amp * (q1 * q1 - q0 * q0) / sig;
                d_sigma += d * -aux.llr_cls[i] / sig;
            }
            for r in 0..nr {
                let idx = aux.y_d.index(s, t, r);
                let (yr, hr) = (aux.y_d.get(s, t, r), aux.h_hat.get(s, t, r));
                // z = Σ conj(h)·y, g = Σ |h|².
                dy[idx] += hr * dz + C64::new(px[2 * r], px[2 * r + 1]) / aux.scale;
                dh[idx] += yr * dz.conj()
                    + hr * (2.0 * dg)
                    + C64::new(px[2 * nr + 2 * r], px[2 * nr + 2 * r + 1]) * (amp / aux.scale);
            }
        }
    }
    if aux.sigma2_measured && d_sigma != 0.0 {
        // σ²_eff = mean|Yᵈ|² − a²·mean|Ĥ|².
        let k = 2.0 * d_sigma / n as f64;
        for ((g_h, g_y), (h, y)) in dh
            .iter_mut()
            .zip(dy.iter_mut())
            .zip(aux.h_hat.as_slice().iter().zip(aux.y_d.as_slice()))
        {
            *g_y += y * k;
            *g_h -= h * (k * amp * amp);
        }
    }
    (dh, dy)
}

/// `Yᵈ = Yˣ − √α·Ĥ∘P`, so `dĤ += −√α·conj(P)·dYᵈ`.
pub fn pilot_path_backward(dh: &mut [C64], dy_d: &[C64], pilot: &ResourceGrid, alpha: f64, nr: usize) {
    let root = alpha.sqrt();
    if root == 0.0 {
        return;
    }
    for (i, (g, d)) in dh.iter_mut().zip(dy_d).enumerate() {
        let re = i / nr;
        *g -= pilot.as_slice()[re].conj() * *d * root;
    }
}
