//! Convolution, batch normalization and ReLU with explicit caches for the
//! backward pass. Convolutions are 3×3, stride 1, zero padded ("same").

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::scalar::Scalar;
use crate::tensor::Planes;
use crate::{Error, Result};

const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    pub cin: usize,
    pub cout: usize,
    /// `[(ky·3 + kx)·cin + ci][co]`, row-major `9·cin × cout`.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// im2col matrix of the forward input, `pixels × 9·cin`.
#[derive(Clone, Debug)]
pub struct ConvCache<T> {
    shape: [usize; 4],
    cols: Vec<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn zeros(cin: usize, cout: usize) -> Self {
        Conv2d {
            cin,
            cout,
            weight: vec![T::zero(); TAPS * cin * cout],
            bias: vec![T::zero(); cout],
        }
    }

    /// He-normal weights, zero bias.
    pub fn he<R: Rng + ?Sized>(cin: usize, cout: usize, rng: &mut R) -> Self {
        let std = (2.0 / (TAPS * cin) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive standard deviation");
        let mut conv = Self::zeros(cin, cout);
        for w in &mut conv.weight {
            *w = T::of(normal.sample(rng));
        }
        conv
    }

    fn im2col(&self, x: &Planes<T>) -> Vec<T> {
        let [n, h, w, c] = x.shape();
        let width = TAPS * c;
        let mut cols = vec![T::zero(); n * h * w * width];
        let src = x.as_slice();
        for b in 0..n {
            for y in 0..h {
                for xx in 0..w {
                    let row = ((b * h + y) * w + xx) * width;
                    for ky in 0..KERNEL {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for kx in 0..KERNEL {
                            let sx = xx as isize + kx as isize - 1;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            let from = ((b * h + sy as usize) * w + sx as usize) * c;
                            let to = row + (ky * KERNEL + kx) * c;
                            cols[to..to + c].copy_from_slice(&src[from..from + c]);
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[T], shape: [usize; 4]) -> Planes<T> {
        let [n, h, w, c] = shape;
        let width = TAPS * c;
        let mut out = Planes::zeros(n, h, w, c);
        let dst = out.as_mut_slice();
        for b in 0..n {
            for y in 0..h {
                for xx in 0..w {
                    let row = ((b * h + y) * w + xx) * width;
                    for ky in 0..KERNEL {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for kx in 0..KERNEL {
                            let sx = xx as isize + kx as isize - 1;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            let to = ((b * h + sy as usize) * w + sx as usize) * c;
                            let from = row + (ky * KERNEL + kx) * c;
                            for ci in 0..c {
                                dst[to + ci] = dst[to + ci] + cols[from + ci];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn forward(&self, x: &Planes<T>) -> Result<(Planes<T>, ConvCache<T>)> {
        let [n, h, w, c] = x.shape();
        if c != self.cin {
            return Err(Error::Shape(format!("conv expects {} input channels, got {c}", self.cin)));
        }
        let cols = self.im2col(x);
        let pixels = n * h * w;
        let mut out = Planes::zeros(n, h, w, self.cout);
        {
            let o = out.as_mut_slice();
            for px in o.chunks_mut(self.cout) {
                px.copy_from_slice(&self.bias);
            }
            T::gemm(false, false, pixels, TAPS * c, self.cout, &cols, &self.weight, T::one(), o);
        }
        Ok((out, ConvCache { shape: x.shape(), cols }))
    }

    /// Accumulates `dW`, `db` into `grads = [weight, bias]` and returns the
    /// input gradient when `need_input`.
    pub fn backward(
        &self,
        cache: &ConvCache<T>,
        dout: &Planes<T>,
        grads: &mut [Vec<T>],
        need_input: bool,
    ) -> Result<Option<Planes<T>>> {
        let [n, h, w, _] = cache.shape;
        if dout.shape() != [n, h, w, self.cout] {
            return Err(Error::Shape(format!("conv output gradient {:?}", dout.shape())));
        }
        let pixels = n * h * w;
        let k = TAPS * self.cin;
        let d = dout.as_slice();
        let [gw, gb] = grads else {
            return Err(Error::Shape("conv needs two gradient buffers".into()));
        };
        T::gemm(true, false, k, pixels, self.cout, &cache.cols, d, T::one(), gw);
        for px in d.chunks(self.cout) {
            for (g, v) in gb.iter_mut().zip(px) {
                *g = *g + *v;
            }
        }
        if !need_input {
            return Ok(None);
        }
        let mut dcols = vec![T::zero(); pixels * k];
        T::gemm(false, true, pixels, self.cout, k, d, &self.weight, T::zero(), &mut dcols);
        Ok(Some(self.col2im(&dcols, cache.shape)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Normalized activations, per-channel `1/√(var + eps)` and, in train
/// mode, the batch mean, biased variance and pixel count.
#[derive(Clone, Debug)]
pub struct BnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    batch_stats: Option<(Vec<f64>, Vec<f64>, usize)>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Train mode normalizes with batch statistics (reported in the cache,
    /// see [`BatchNorm::update_running`]); eval mode applies the running ones.
    pub fn forward(&self, x: &Planes<T>, train: bool) -> Result<(Planes<T>, BnCache<T>)> {
        let c = self.channels();
        if x.channels() != c {
            return Err(Error::Shape(format!("batch norm expects {c} channels, got {}", x.channels())));
        }
        let pixels = x.pixels();
        let src = x.as_slice();
        let eps = T::of(BN_EPS);
        let (mean, var, batch_stats) = if train {
            if pixels < 2 {
                return Err(Error::Shape("batch norm in train mode needs at least two pixels".into()));
            }
            let mut mean = vec![0.0f64; c];
            for px in src.chunks(c) {
                for (m, v) in mean.iter_mut().zip(px) {
                    *m += v.f64();
                }
            }
            mean.iter_mut().for_each(|m| *m /= pixels as f64);
            let mut var = vec![0.0f64; c];
            for px in src.chunks(c) {
                for ((s, v), m) in var.iter_mut().zip(px).zip(&mean) {
                    let d = v.f64() - m;
                    *s += d * d;
                }
            }
            var.iter_mut().for_each(|v| *v /= pixels as f64);
            (
                mean.iter().map(|&m| T::of(m)).collect::<Vec<T>>(),
                var.iter().map(|&v| T::of(v)).collect::<Vec<T>>(),
                Some((mean, var, pixels)),
            )
        } else {
            (self.running_mean.clone(), self.running_var.clone(), None)
        };
        let inv_std: Vec<T> = var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); src.len()];
        let mut out = Planes::zeros(x.shape()[0], x.shape()[1], x.shape()[2], c);
        for ((px, xh), o) in src.chunks(c).zip(xhat.chunks_mut(c)).zip(out.as_mut_slice().chunks_mut(c)) {
            for ch in 0..c {
                xh[ch] = (px[ch] - mean[ch]) * inv_std[ch];
                o[ch] = self.gamma[ch] * xh[ch] + self.beta[ch];
            }
        }
        Ok((
            out,
            BnCache {
                xhat,
                inv_std,
                batch_stats,
            },
        ))
    }

    /// Folds the batch statistics of a train-mode forward into the running
    /// statistics (unbiased variance).
    pub fn update_running(&mut self, cache: &BnCache<T>) {
        let Some((mean, var, pixels)) = &cache.batch_stats else {
            return;
        };
        let unbiased = *pixels as f64 / (*pixels - 1) as f64;
        let mom = BN_MOMENTUM;
        for ch in 0..self.channels() {
            self.running_mean[ch] = T::of((1.0 - mom) * self.running_mean[ch].f64() + mom * mean[ch]);
            self.running_var[ch] = T::of((1.0 - mom) * self.running_var[ch].f64() + mom * var[ch] * unbiased);
        }
    }

    /// Accumulates `[dgamma, dbeta]` into `grads` and returns the input gradient.
    pub fn backward(&self, cache: &BnCache<T>, dy: &Planes<T>, grads: &mut [Vec<T>]) -> Result<Planes<T>> {
        let c = self.channels();
        let pixels = dy.pixels();
        if dy.as_slice().len() != cache.xhat.len() {
            return Err(Error::Shape("batch norm gradient does not match forward".into()));
        }
        let [gg, gb] = grads else {
            return Err(Error::Shape("batch norm needs two gradient buffers".into()));
        };
        let d = dy.as_slice();
        let mut sum_d = vec![0.0f64; c];
        let mut sum_dx = vec![0.0f64; c];
        for (px, xh) in d.chunks(c).zip(cache.xhat.chunks(c)) {
            for ch in 0..c {
                sum_d[ch] += px[ch].f64();
                sum_dx[ch] += (px[ch] * xh[ch]).f64();
            }
        }
        for ch in 0..c {
            gg[ch] = gg[ch] + T::of(sum_dx[ch]);
            gb[ch] = gb[ch] + T::of(sum_d[ch]);
        }
        let mut dx = Planes::zeros(dy.shape()[0], dy.shape()[1], dy.shape()[2], c);
        let n = T::of(pixels as f64);
        for ((o, px), xh) in dx.as_mut_slice().chunks_mut(c).zip(d.chunks(c)).zip(cache.xhat.chunks(c)) {
            for ch in 0..c {
                let scale = self.gamma[ch] * cache.inv_std[ch];
                o[ch] = if cache.batch_stats.is_some() {
                    // dx = γ/σ · (dy − mean(dy) − x̂·mean(dy·x̂))
                    scale * (px[ch] - T::of(sum_d[ch]) / n - xh[ch] * T::of(sum_dx[ch]) / n)
                } else {
                    scale * px[ch]
                };
            }
        }
        Ok(dx)
    }
}

/// ReLU; the cache is the input itself.
pub fn relu<T: Scalar>(x: &Planes<T>) -> Planes<T> {
    let mut out = x.clone();
    for v in out.as_mut_slice() {
        if !(*v > T::zero()) {
            *v = T::zero();
        }
    }
    out
}

pub fn relu_backward<T: Scalar>(x: &Planes<T>, dy: &Planes<T>) -> Planes<T> {
    let mut dx = dy.clone();
    for (d, v) in dx.as_mut_slice().iter_mut().zip(x.as_slice()) {
        if !(*v > T::zero()) {
            *d = T::zero();
        }
    }
    dx
}
