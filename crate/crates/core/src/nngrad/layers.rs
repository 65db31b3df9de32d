//! Layer wrappers owning parameters: convolution, batch normalization and
//! the dense head.

use std::cell::RefCell;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::ops::{dense, BatchNormOp, BnMode};
use super::{conv2d, NnError, Tensor};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics only.
    Infer,
}

fn normal_draws<S: Scalar, R: Rng>(rng: &mut R, n: usize, std: f64) -> Vec<S> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            S::of(z * std)
        })
        .collect()
}

pub struct Conv2d<S: Scalar> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
    pub stride: usize,
    pub pad: usize,
}

impl<S: Scalar> Conv2d<S> {
    /// Fan-in scaled normal init (gain sqrt(2) for ReLU-family activations).
    pub fn new<R: Rng>(
        rng: &mut R,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let fan_in = (in_ch * kernel * kernel) as f64;
        let std = (2.0 / fan_in).sqrt();
        Self {
            weight: Tensor::parameter(
                vec![out_ch, in_ch, kernel, kernel],
                normal_draws(rng, out_ch * in_ch * kernel * kernel, std),
            ),
            bias: Tensor::parameter(vec![out_ch], vec![S::zero(); out_ch]),
            stride,
            pad,
        }
    }

    /// All-zero weights and bias; used for the generator tail so training
    /// starts from the identity restoration.
    pub fn zeroed(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            weight: Tensor::parameter(
                vec![out_ch, in_ch, kernel, kernel],
                vec![S::zero(); out_ch * in_ch * kernel * kernel],
            ),
            bias: Tensor::parameter(vec![out_ch], vec![S::zero(); out_ch]),
            stride,
            pad,
        }
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>, NnError> {
        conv2d(x, &self.weight, &self.bias, self.stride, self.pad)
    }
}

pub struct BatchNorm2d<S: Scalar> {
    pub gamma: Tensor<S>,
    pub beta: Tensor<S>,
    pub running_mean: RefCell<Vec<S>>,
    pub running_var: RefCell<Vec<S>>,
    pub eps: S,
    pub momentum: S,
}

impl<S: Scalar> BatchNorm2d<S> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::parameter(vec![channels], vec![S::one(); channels]),
            beta: Tensor::parameter(vec![channels], vec![S::zero(); channels]),
            running_mean: RefCell::new(vec![S::zero(); channels]),
            running_var: RefCell::new(vec![S::one(); channels]),
            eps: S::of(1e-5),
            momentum: S::of(0.1),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }

    pub fn forward(&self, x: &Tensor<S>, mode: Mode) -> Result<Tensor<S>, NnError> {
        let shape = x.shape().to_vec();
        if shape.len() != 4 || shape[1] != self.channels() {
            return Err(NnError::ShapeMismatch {
                op: "batchnorm",
                expected: format!("(N,{},H,W)", self.channels()),
                got: format!("{shape:?}"),
            });
        }
        let channels = shape[1];
        let plane = shape[2] * shape[3];
        let per_item = channels * plane;
        let total = x.numel();
        let items = total / per_item;
        let m = (items * plane) as f64;

        let xd = x.data();
        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![S::zero(); channels];
                let mut var = vec![S::zero(); channels];
                for c in 0..channels {
                    let mut acc = S::zero();
                    for n in 0..items {
                        let base = n * per_item + c * plane;
                        for i in 0..plane {
                            acc += xd[base + i];
                        }
                    }
                    mean[c] = acc / S::of(m);
                    let mut acc2 = S::zero();
                    for n in 0..items {
                        let base = n * per_item + c * plane;
                        for i in 0..plane {
                            let d = xd[base + i] - mean[c];
                            acc2 += d * d;
                        }
                    }
                    var[c] = acc2 / S::of(m);
                }
                // track running statistics (unbiased variance when possible)
                let correction = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
                let mut rm = self.running_mean.borrow_mut();
                let mut rv = self.running_var.borrow_mut();
                for c in 0..channels {
                    rm[c] = (S::one() - self.momentum) * rm[c] + self.momentum * mean[c];
                    rv[c] = (S::one() - self.momentum) * rv[c]
                        + self.momentum * var[c] * S::of(correction);
                }
                (mean, var)
            }
            Mode::Infer => (
                self.running_mean.borrow().clone(),
                self.running_var.borrow().clone(),
            ),
        };

        let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v + self.eps).sqrt()).collect();
        let gd = self.gamma.data();
        let bd = self.beta.data();
        let mut out = vec![S::zero(); total];
        let mut xnorm = vec![S::zero(); total];
        for c in 0..channels {
            for n in 0..items {
                let base = n * per_item + c * plane;
                for i in 0..plane {
                    let xn = (xd[base + i] - mean[c]) * inv_std[c];
                    xnorm[base + i] = xn;
                    out[base + i] = gd[c] * xn + bd[c];
                }
            }
        }
        drop(xd);
        drop(gd);
        drop(bd);
        let op_mode = match mode {
            Mode::Train => BnMode::Train,
            Mode::Infer => BnMode::Infer {
                marker: std::marker::PhantomData,
            },
        };
        Ok(Tensor::from_op(
            shape,
            out,
            vec![x.clone(), self.gamma.clone(), self.beta.clone()],
            Box::new(BatchNormOp {
                xnorm,
                inv_std,
                mode: op_mode,
            }),
        ))
    }
}

pub struct Dense<S: Scalar> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

impl<S: Scalar> Dense<S> {
    pub fn new<R: Rng>(rng: &mut R, in_features: usize, out_features: usize) -> Self {
        let std = 1.0 / (in_features as f64).sqrt();
        Self {
            weight: Tensor::parameter(
                vec![out_features, in_features],
                normal_draws(rng, out_features * in_features, std),
            ),
            bias: Tensor::parameter(vec![out_features], vec![S::zero(); out_features]),
        }
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>, NnError> {
        dense(x, &self.weight, &self.bias)
    }
}
