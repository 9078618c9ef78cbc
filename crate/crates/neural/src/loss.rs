//! Training objective: per iteration `τ·BCE + (1−τ)·MSE`, averaged over
//! the unrolled iterations.

use serde::{Deserialize, Serialize};
use sipsim_core::grid::{LayerChannel, C64};
use sipsim_core::link::LlrGrid;

use crate::{Error, Result};

/// LLR magnitude limit applied before BCE and decoding.
pub const LLR_CLIP: f64 = 20.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub tau: f64,
    pub iterations: usize,
}

impl LossWeights {
    pub fn new(tau: f64, iterations: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::Config(format!("tau {tau} outside [0, 1]")));
        }
        if iterations == 0 {
            return Err(Error::Config("at least one iteration".into()));
        }
        Ok(LossWeights { tau, iterations })
    }

    pub fn combine(&self, bce: f64, mse: f64) -> f64 {
        self.tau * bce + (1.0 - self.tau) * mse
    }

    /// Mean of the per-iteration losses.
    pub fn total(&self, per_iteration: &[(f64, f64)]) -> f64 {
        per_iteration.iter().map(|&(b, m)| self.combine(b, m)).sum::<f64>() / self.iterations as f64
    }
}

/// `ln(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Cross-entropy of bit `label` under `P(bit = 1) = sigmoid(−llr)`.
pub fn bce_term(llr: f64, label: f64) -> f64 {
    label * softplus(llr) + (1.0 - label) * softplus(-llr)
}

/// Derivative of [`bce_term`] with respect to the LLR.
pub fn bce_term_grad(llr: f64, label: f64) -> f64 {
    sigmoid(llr) - (1.0 - label)
}

/// Mean BCE over every entry of every grid, plus `dBCE/dLLR` per entry.
pub fn bce(llrs: &[LlrGrid], labels: &[LlrGrid]) -> Result<(f64, Vec<Vec<f64>>)> {
    check_pairs(llrs.len(), labels.len())?;
    let count: usize = llrs.iter().map(|g| g.as_slice().len()).sum();
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(llrs.len());
    for (v, b) in llrs.iter().zip(labels) {
        if v.shape() != b.shape() {
            return Err(Error::Shape(format!("LLRs {:?} vs labels {:?}", v.shape(), b.shape())));
        }
        let mut g = Vec::with_capacity(v.as_slice().len());
        for (&x, &y) in v.as_slice().iter().zip(b.as_slice()) {
            total += bce_term(x, y);
            g.push(bce_term_grad(x, y) / count as f64);
        }
        grads.push(g);
    }
    Ok((total / count as f64, grads))
}

/// Mean `|Ĥ − H|²` over all elements, plus the gradient
/// `∂/∂Re + i·∂/∂Im` with respect to `Ĥ`.
pub fn mse(h_hat: &[LayerChannel], h: &[LayerChannel]) -> Result<(f64, Vec<Vec<C64>>)> {
    check_pairs(h_hat.len(), h.len())?;
    let count: usize = h_hat.iter().map(|g| g.as_slice().len()).sum();
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(h_hat.len());
    for (a, b) in h_hat.iter().zip(h) {
        if a.shape() != b.shape() {
            return Err(Error::Shape(format!("estimate {:?} vs channel {:?}", a.shape(), b.shape())));
        }
        let g = a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| {
                let e = x - y;
                total += e.norm_sqr();
                e * (2.0 / count as f64)
            })
            .collect();
        grads.push(g);
    }
    Ok((total / count as f64, grads))
}

fn check_pairs(a: usize, b: usize) -> Result<()> {
    if a != b || a == 0 {
        return Err(Error::Shape(format!("{a} estimates for {b} targets")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_matches_naive_formula_and_stays_finite() {
        for x in [-30.0, -2.0, 0.0, 0.5, 3.0, 30.0] {
            let naive: f64 = (1.0 + f64::exp(x)).ln();
            assert!((softplus(x) - naive).abs() < 1e-12);
        }
        assert!(softplus(800.0).is_finite());
        assert_eq!(softplus(-800.0), 0.0);
    }

    #[test]
    fn bce_gradient_matches_finite_difference() {
        for (x, b) in [(-3.0, 0.0), (0.2, 1.0), (5.0, 0.0), (-0.7, 1.0)] {
            let h = 1e-6;
            let fd = (bce_term(x + h, b) - bce_term(x - h, b)) / (2.0 * h);
            assert!((fd - bce_term_grad(x, b)).abs() < 1e-8);
        }
    }

    #[test]
    fn perfect_llrs_and_estimates_give_tiny_loss() {
        let labels = LlrGrid::from_vec(1, 2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let llrs = LlrGrid::from_vec(1, 2, 2, vec![LLR_CLIP, -LLR_CLIP, -LLR_CLIP, LLR_CLIP]).unwrap();
        let (b, _) = bce(&[llrs], &[labels]).unwrap();
        let h = LayerChannel::from_vec(1, 2, 1, vec![C64::new(0.3, -1.0), C64::new(2.0, 0.1)]).unwrap();
        let (m, _) = mse(&[h.clone()], &[h]).unwrap();
        assert_eq!(m, 0.0);
        let w = LossWeights::new(0.5, 1).unwrap();
        assert!(w.total(&[(b, m)]) < 1e-6);
    }

    #[test]
    fn tau_selects_terms_and_iterations_average() {
        assert_eq!(LossWeights::new(1.0, 1).unwrap().total(&[(0.7, 9.0)]), 0.7);
        assert_eq!(LossWeights::new(0.0, 1).unwrap().total(&[(0.7, 9.0)]), 9.0);
        let w = LossWeights::new(0.5, 2).unwrap();
        let a = w.combine(0.4, 0.2);
        let b = w.combine(1.0, 0.6);
        assert!((w.total(&[(0.4, 0.2), (1.0, 0.6)]) - (a + b) / 2.0).abs() < 1e-15);
        assert!(LossWeights::new(1.5, 1).is_err());
        assert!(LossWeights::new(0.5, 0).is_err());
    }
}
