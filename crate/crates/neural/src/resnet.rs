//! Residual CNN backbone: input conv, `N` residual blocks
//! (BN→ReLU→Conv twice, plus skip), output conv.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::layers::{relu, relu_backward, BatchNorm, BnCache, Conv2d, ConvCache};
use crate::scalar::Scalar;
use crate::tensor::Planes;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub in_channels: usize,
    pub width: usize,
    pub blocks: usize,
    pub out_channels: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResBlock<T> {
    pub bn1: BatchNorm<T>,
    pub conv1: Conv2d<T>,
    pub bn2: BatchNorm<T>,
    pub conv2: Conv2d<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResNet<T> {
    pub input: Conv2d<T>,
    pub blocks: Vec<ResBlock<T>>,
    pub output: Conv2d<T>,
}

struct BlockCache<T> {
    bn1: BnCache<T>,
    a1: Planes<T>,
    conv1: ConvCache<T>,
    bn2: BnCache<T>,
    a2: Planes<T>,
    conv2: ConvCache<T>,
}

/// Intermediates of one forward pass.
pub struct NetCache<T> {
    input: ConvCache<T>,
    blocks: Vec<BlockCache<T>>,
    output: ConvCache<T>,
}

/// Gradient buffers, one per trainable tensor in [`ResNet::params`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads<T>(pub Vec<Vec<T>>);

impl<T: Scalar> Grads<T> {
    pub fn scale(&mut self, k: T) {
        for g in &mut self.0 {
            g.iter_mut().for_each(|v| *v = *v * k);
        }
    }

    pub fn add(&mut self, other: &Grads<T>) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x = *x + *y;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().flatten().map(|v| v.f64() * v.f64()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }
}

impl<T: Scalar> ResNet<T> {
    /// He-initialized hidden convolutions and a zero output convolution.
    pub fn new<R: Rng + ?Sized>(spec: NetSpec, rng: &mut R) -> Self {
        let w = spec.width;
        ResNet {
            input: Conv2d::he(spec.in_channels, w, rng),
            blocks: (0..spec.blocks)
                .map(|_| ResBlock {
                    bn1: BatchNorm::new(w),
                    conv1: Conv2d::he(w, w, rng),
                    bn2: BatchNorm::new(w),
                    conv2: Conv2d::he(w, w, rng),
                })
                .collect(),
            output: Conv2d::zeros(w, spec.out_channels),
        }
    }

    /// All-zero convolutions and identity batch norms.
    pub fn zeros(spec: NetSpec) -> Self {
        let w = spec.width;
        ResNet {
            input: Conv2d::zeros(spec.in_channels, w),
            blocks: (0..spec.blocks)
                .map(|_| ResBlock {
                    bn1: BatchNorm::new(w),
                    conv1: Conv2d::zeros(w, w),
                    bn2: BatchNorm::new(w),
                    conv2: Conv2d::zeros(w, w),
                })
                .collect(),
            output: Conv2d::zeros(w, spec.out_channels),
        }
    }

    pub fn spec(&self) -> NetSpec {
        NetSpec {
            in_channels: self.input.cin,
            width: self.input.cout,
            blocks: self.blocks.len(),
            out_channels: self.output.cout,
        }
    }

    /// Trainable tensors in declaration order.
    pub fn params(&self) -> Vec<&Vec<T>> {
        let mut out = vec![&self.input.weight, &self.input.bias];
        for b in &self.blocks {
            out.extend([
                &b.bn1.gamma,
                &b.bn1.beta,
                &b.conv1.weight,
                &b.conv1.bias,
                &b.bn2.gamma,
                &b.bn2.beta,
                &b.conv2.weight,
                &b.conv2.bias,
            ]);
        }
        out.extend([&self.output.weight, &self.output.bias]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out = vec![&mut self.input.weight, &mut self.input.bias];
        for b in &mut self.blocks {
            out.extend([
                &mut b.bn1.gamma,
                &mut b.bn1.beta,
                &mut b.conv1.weight,
                &mut b.conv1.bias,
                &mut b.bn2.gamma,
                &mut b.bn2.beta,
                &mut b.conv2.weight,
                &mut b.conv2.bias,
            ]);
        }
        out.extend([&mut self.output.weight, &mut self.output.bias]);
        out
    }

    /// Running statistics in declaration order.
    pub fn buffers(&self) -> Vec<&Vec<T>> {
        self.blocks
            .iter()
            .flat_map(|b| [&b.bn1.running_mean, &b.bn1.running_var, &b.bn2.running_mean, &b.bn2.running_var])
            .collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Vec<T>> {
        self.blocks
            .iter_mut()
            .flat_map(|b| {
                [
                    &mut b.bn1.running_mean,
                    &mut b.bn1.running_var,
                    &mut b.bn2.running_mean,
                    &mut b.bn2.running_var,
                ]
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grads(&self) -> Grads<T> {
        Grads(self.params().iter().map(|p| vec![T::zero(); p.len()]).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().chain(self.buffers().iter()).all(|p| p.iter().all(|v| v.is_finite()))
    }

    pub fn cast<U: Scalar>(&self) -> ResNet<U> {
        let conv = |c: &Conv2d<T>| Conv2d {
            cin: c.cin,
            cout: c.cout,
            weight: c.weight.iter().map(|v| U::of(v.f64())).collect(),
            bias: c.bias.iter().map(|v| U::of(v.f64())).collect(),
        };
        let cv = |v: &[T]| v.iter().map(|x| U::of(x.f64())).collect::<Vec<U>>();
        let bn = |b: &BatchNorm<T>| BatchNorm {
            gamma: cv(&b.gamma),
            beta: cv(&b.beta),
            running_mean: cv(&b.running_mean),
            running_var: cv(&b.running_var),
        };
        ResNet {
            input: conv(&self.input),
            blocks: self
                .blocks
                .iter()
                .map(|b| ResBlock {
                    bn1: bn(&b.bn1),
                    conv1: conv(&b.conv1),
                    bn2: bn(&b.bn2),
                    conv2: conv(&b.conv2),
                })
                .collect(),
            output: conv(&self.output),
        }
    }

    pub fn forward(&self, x: &Planes<T>, train: bool) -> Result<(Planes<T>, NetCache<T>)> {
        let (mut h, input) = self.input.forward(x)?;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (n1, bn1) = b.bn1.forward(&h, train)?;
            let (c1, conv1) = b.conv1.forward(&relu(&n1))?;
            let (n2, bn2) = b.bn2.forward(&c1, train)?;
            let (mut c2, conv2) = b.conv2.forward(&relu(&n2))?;
            c2.add_assign(&h)?;
            h = c2;
            blocks.push(BlockCache {
                bn1,
                a1: n1,
                conv1,
                bn2,
                a2: n2,
                conv2,
            });
        }
        let (out, output) = self.output.forward(&h)?;
        Ok((out, NetCache { input, blocks, output }))
    }

    /// Eval-mode forward without keeping intermediates.
    pub fn infer(&self, x: &Planes<T>) -> Result<Planes<T>> {
        Ok(self.forward(x, false)?.0)
    }

    /// Applies the batch statistics recorded by a train-mode forward.
    pub fn update_running(&mut self, cache: &NetCache<T>) {
        for (b, c) in self.blocks.iter_mut().zip(&cache.blocks) {
            b.bn1.update_running(&c.bn1);
            b.bn2.update_running(&c.bn2);
        }
    }

    /// Accumulates parameter gradients into `grads`; returns the input
    /// gradient when `need_input`.
    pub fn backward(
        &self,
        cache: &NetCache<T>,
        dout: &Planes<T>,
        grads: &mut Grads<T>,
        need_input: bool,
    ) -> Result<Option<Planes<T>>> {
        let expected = 4 + 8 * self.blocks.len();
        if grads.0.len() != expected || cache.blocks.len() != self.blocks.len() {
            return Err(Error::Shape("gradient buffers do not match the network".into()));
        }
        let g = &mut grads.0;
        let last = expected - 2;
        let mut dh = self.output.backward(&cache.output, dout, &mut g[last..], true)?.expect("input gradient requested");
        for (i, (b, c)) in self.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            let base = 2 + 8 * i;
            // Skip path carries dh unchanged; the residual path adds to it.
            let d_r2 = b.conv2.backward(&c.conv2, &dh, &mut g[base + 6..base + 8], true)?.expect("requested");
            let d_n2 = relu_backward(&c.a2, &d_r2);
            let d_c1 = b.bn2.backward(&c.bn2, &d_n2, &mut g[base + 4..base + 6])?;
            let d_r1 = b.conv1.backward(&c.conv1, &d_c1, &mut g[base + 2..base + 4], true)?.expect("requested");
            let d_n1 = relu_backward(&c.a1, &d_r1);
            let d_h = b.bn1.backward(&c.bn1, &d_n1, &mut g[base..base + 2])?;
            dh.add_assign(&d_h)?;
        }
        self.input.backward(&cache.input, &dh, &mut g[0..2], need_input)
    }
}
