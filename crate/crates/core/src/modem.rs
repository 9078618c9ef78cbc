//! Gray-mapped square QAM and max-log soft demapping.
//!
//! Labelling table (per axis, reflected Gray, bits `a0 a1 ...` where `a0`
//! is the sign bit). The in-phase axis takes the even-indexed bits
//! `b0, b2, b4`, the quadrature axis the odd-indexed bits `b1, b3, b5`:
//!
//! | M | axis bits | level (before normalization)                         | scale    |
//! |---|-----------|------------------------------------------------------|----------|
//! | 2 | a0        | `(1-2a0)`                                            | `1/√2`   |
//! | 4 | a0 a1     | `(1-2a0)(2-(1-2a1))`                                 | `1/√10`  |
//! | 6 | a0 a1 a2  | `(1-2a0)(4-(1-2a1)(2-(1-2a2)))`                      | `1/√42`  |
//!
//! So for 16QAM the in-phase levels `+3, +1, -1, -3` (times `1/√10`) carry
//! `(a0 a1) = 01, 00, 10, 11`.
//!
//! LLR convention: positive favours bit 0.

use crate::fec::Bit;
use crate::grid::C64;
use crate::{Error, Result};

/// One PAM level of an axis together with its axis label bits.
#[derive(Clone, Debug, PartialEq)]
pub struct AxisLevel {
    pub value: f64,
    pub bits: Vec<Bit>,
}

/// Square Gray QAM with unit average power.
#[derive(Clone, Debug, PartialEq)]
pub struct Constellation {
    bits_per_symbol: usize,
    axis: Vec<AxisLevel>,
}

impl Constellation {
    pub fn new(bits_per_symbol: usize) -> Result<Self> {
        if bits_per_symbol == 0 || bits_per_symbol % 2 != 0 || bits_per_symbol > 8 {
            return Err(Error::InvalidParameter(format!(
                "square QAM needs an even, positive bits-per-symbol (<= 8), got {bits_per_symbol}"
            )));
        }
        let per_axis = bits_per_symbol / 2;
        let scale = 1.0 / (2.0 * ((1u64 << (2 * per_axis)) - 1) as f64 / 3.0).sqrt();
        let mut axis: Vec<AxisLevel> = (0..1usize << per_axis)
            .map(|label| {
                let bits: Vec<Bit> = (0..per_axis)
                    .map(|i| ((label >> (per_axis - 1 - i)) & 1) as Bit)
                    .collect();
                AxisLevel {
                    value: axis_level(&bits) * scale,
                    bits,
                }
            })
            .collect();
        axis.sort_by(|a, b| b.value.partial_cmp(&a.value).unwrap());
        Ok(Constellation {
            bits_per_symbol,
            axis,
        })
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol
    }

    /// Axis levels sorted from largest to smallest.
    pub fn axis_levels(&self) -> &[AxisLevel] {
        &self.axis
    }

    /// Maps one symbol's `M` bits to a point.
    pub fn map(&self, bits: &[Bit]) -> C64 {
        let per_axis = self.bits_per_symbol / 2;
        let pick = |offset: usize| -> f64 {
            let mut label = 0usize;
            for i in 0..per_axis {
                label = (label << 1) | (bits[2 * i + offset] & 1) as usize;
            }
            let bits_of: Vec<Bit> = (0..per_axis)
                .map(|i| ((label >> (per_axis - 1 - i)) & 1) as Bit)
                .collect();
            axis_level_scaled(&bits_of, per_axis)
        };
        C64::new(pick(0), pick(1))
    }

    /// All `2^M` points indexed by label, `b0` being the most significant bit.
    pub fn points(&self) -> Vec<(Vec<Bit>, C64)> {
        let m = self.bits_per_symbol;
        (0..1usize << m)
            .map(|label| {
                let bits: Vec<Bit> = (0..m).map(|i| ((label >> (m - 1 - i)) & 1) as Bit).collect();
                let p = self.map(&bits);
                (bits, p)
            })
            .collect()
    }

    /// Nearest-point bit decisions for an equalized sample.
    pub fn hard_demap(&self, u: C64, out: &mut [Bit]) {
        let per_axis = self.bits_per_symbol / 2;
        for (offset, v) in [(0, u.re), (1, u.im)] {
            let best = self
                .axis
                .iter()
                .min_by(|a, b| (v - a.value).abs().partial_cmp(&(v - b.value).abs()).unwrap())
                .unwrap();
            for i in 0..per_axis {
                out[2 * i + offset] = best.bits[i];
            }
        }
    }

    /// Max-log LLRs given the matched-filter statistic `z = conj(h)·y`
    /// (summed over antennas), channel energy `g = |h|^2` and a known
    /// amplitude `amp` applied to the constellation at the transmitter.
    ///
    /// Uses `|y - amp·h·q|^2 = |y|^2 + g·amp^2·|q|^2 - 2·amp·Re(conj(q)·z)`, which
    /// separates over the two axes.
    pub fn maxlog_mrc(&self, z: C64, g: f64, amp: f64, sigma2: f64, out: &mut [f64]) {
        self.maxlog_mrc_traced(z, g, amp, sigma2, out, None);
    }

    /// As [`Constellation::maxlog_mrc`], additionally reporting the winning
    /// level for each bit hypothesis: `(level for bit=1, level for bit=0)`.
    pub fn maxlog_mrc_traced(
        &self,
        z: C64,
        g: f64,
        amp: f64,
        sigma2: f64,
        out: &mut [f64],
        mut trace: Option<&mut [(f64, f64)]>,
    ) {
        let per_axis = self.bits_per_symbol / 2;
        for (offset, zc) in [(0, z.re), (1, z.im)] {
            for i in 0..per_axis {
                let mut best = [(f64::INFINITY, 0.0f64); 2];
                for lvl in &self.axis {
                    let q = lvl.value;
                    let metric = g * amp * amp * q * q - 2.0 * amp * q * zc;
                    let b = lvl.bits[i] as usize;
                    if metric < best[b].0 {
                        best[b] = (metric, q);
                    }
                }
                out[2 * i + offset] = (best[1].0 - best[0].0) / sigma2;
                if let Some(t) = trace.as_deref_mut() {
                    t[2 * i + offset] = (best[1].1, best[0].1);
                }
            }
        }
    }
}

fn axis_level(bits: &[Bit]) -> f64 {
    let m = bits.len();
    let mut v = 1.0;
    for i in (1..m).rev() {
        v = (1u64 << (m - i)) as f64 - (1.0 - 2.0 * bits[i] as f64) * v;
    }
    (1.0 - 2.0 * bits[0] as f64) * v
}

fn axis_level_scaled(bits: &[Bit], per_axis: usize) -> f64 {
    let scale = 1.0 / (2.0 * ((1u64 << (2 * per_axis)) - 1) as f64 / 3.0).sqrt();
    axis_level(bits) * scale
}

/// Maps a bit stream to QAM symbols.
pub fn qam_modulate(bits: &[Bit], bits_per_symbol: usize) -> Result<Vec<C64>> {
    let c = Constellation::new(bits_per_symbol)?;
    if bits.len() % bits_per_symbol != 0 {
        return Err(Error::DimensionMismatch(format!(
            "{} bits is not a multiple of {}",
            bits.len(),
            bits_per_symbol
        )));
    }
    Ok(bits.chunks(bits_per_symbol).map(|b| c.map(b)).collect())
}

/// Max-log LLRs for `y = h_eff·q + n`, `n ~ CN(0, sigma2_eff)`.
pub fn maxlog_demap(y: C64, h_eff: C64, sigma2_eff: f64, bits_per_symbol: usize) -> Result<Vec<f64>> {
    if !(sigma2_eff > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "demapper noise variance must be positive, got {sigma2_eff}"
        )));
    }
    let c = Constellation::new(bits_per_symbol)?;
    let mut out = vec![0.0; bits_per_symbol];
    c.maxlog_mrc(h_eff.conj() * y, h_eff.norm_sqr(), 1.0, sigma2_eff, &mut out);
    Ok(out)
}
