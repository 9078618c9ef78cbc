//! Link throughput `R = N_slot · N_RE · Ω · γ · M · (1 − BLER)` with
//! `N_RE = S·T·L`, evaluated in exact rational arithmetic.

use num_rational::Ratio;

use crate::{Error, Result};

pub type Rational = Ratio<u128>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ThroughputInputs {
    pub n_slot: u64,
    pub subcarriers: usize,
    pub symbols: usize,
    pub layers: usize,
    /// Data-RE ratio Ω in `(0, 1]`.
    pub omega: Rational,
    /// Target code rate γ.
    pub gamma: Rational,
    pub bits_per_symbol: usize,
}

/// Throughput in bit/s for a block error rate in `[0, 1]`.
pub fn compute_throughput(inp: &ThroughputInputs, bler: Rational) -> Result<Rational> {
    let one = Rational::from_integer(1);
    if inp.omega == Rational::from_integer(0) || inp.omega > one {
        return Err(Error::Config(format!("omega {} outside (0, 1]", inp.omega)));
    }
    if bler > one {
        return Err(Error::Config(format!("BLER {bler} exceeds 1")));
    }
    let n_re = (inp.subcarriers * inp.symbols * inp.layers) as u128;
    let scale = Rational::from_integer(inp.n_slot as u128 * n_re * inp.bits_per_symbol as u128);
    Ok(scale * inp.omega * inp.gamma * (one - bler))
}

/// `errors / blocks` as an exact ratio.
pub fn bler_ratio(errors: u64, blocks: u64) -> Result<Rational> {
    if blocks == 0 || errors > blocks {
        return Err(Error::Config(format!("{errors} errors in {blocks} blocks")));
    }
    Ok(Rational::new(errors as u128, blocks as u128))
}

pub fn to_f64(r: Rational) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(omega: Rational) -> ThroughputInputs {
        ThroughputInputs {
            n_slot: 2000,
            subcarriers: 96,
            symbols: 12,
            layers: 4,
            omega,
            gamma: Rational::new(490, 1024),
            bits_per_symbol: 4,
        }
    }

    #[test]
    fn hand_evaluated_value() {
        // 2000 · 96·12·4 · 490/1024 · 4 = 17 640 000
        let r = compute_throughput(&inputs(Rational::from_integer(1)), Rational::from_integer(0)).unwrap();
        assert_eq!(r, Rational::from_integer(17_640_000));
    }

    #[test]
    fn total_block_loss_gives_zero() {
        let r = compute_throughput(&inputs(Rational::from_integer(1)), Rational::from_integer(1)).unwrap();
        assert_eq!(r, Rational::from_integer(0));
    }

    #[test]
    fn omega_scales_exactly() {
        let full = compute_throughput(&inputs(Rational::from_integer(1)), Rational::new(1, 7)).unwrap();
        for omega in [Rational::new(11, 12), Rational::new(10, 12)] {
            let r = compute_throughput(&inputs(omega), Rational::new(1, 7)).unwrap();
            assert_eq!(r, full * omega);
            assert_eq!(full / r, omega.recip());
        }
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(compute_throughput(&inputs(Rational::from_integer(0)), Rational::from_integer(0)).is_err());
        assert!(compute_throughput(&inputs(Rational::new(13, 12)), Rational::from_integer(0)).is_err());
        assert!(compute_throughput(&inputs(Rational::from_integer(1)), Rational::new(3, 2)).is_err());
        assert!(bler_ratio(3, 0).is_err());
        assert!(bler_ratio(4, 3).is_err());
    }
}
