//! The residual generator and the patch discriminator.

use rand::Rng;

use super::layers::{BatchNorm2d, Conv2d, Dense, Mode};
use super::{NnError, Tensor};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeneratorConfig {
    /// Image channels (1 or 3).
    pub channels: usize,
    /// Feature width of every internal convolution.
    pub width: usize,
    pub residual_units: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            channels: 3,
            width: 64,
            residual_units: 16,
        }
    }
}

pub struct ResidualUnit<S: Scalar> {
    pub conv1: Conv2d<S>,
    pub bn1: BatchNorm2d<S>,
    pub conv2: Conv2d<S>,
    pub bn2: BatchNorm2d<S>,
}

impl<S: Scalar> ResidualUnit<S> {
    fn new<R: Rng>(rng: &mut R, width: usize) -> Self {
        Self {
            conv1: Conv2d::new(rng, width, width, 3, 1, 1),
            bn1: BatchNorm2d::new(width),
            conv2: Conv2d::new(rng, width, width, 3, 1, 1),
            bn2: BatchNorm2d::new(width),
        }
    }

    fn forward(&self, x: &Tensor<S>, mode: Mode) -> Result<Tensor<S>, NnError> {
        let h = self.bn1.forward(&self.conv1.forward(x)?, mode)?.relu();
        let h = self.bn2.forward(&self.conv2.forward(&h)?, mode)?;
        Ok(x.add(&h))
    }
}

/// Fully convolutional residual predictor: head conv, a stack of residual
/// units, and a zero-initialized tail conv so the untrained net predicts a
/// zero residual.
pub struct GeneratorNet<S: Scalar> {
    pub config: GeneratorConfig,
    pub head: Conv2d<S>,
    pub units: Vec<ResidualUnit<S>>,
    pub tail: Conv2d<S>,
}

impl<S: Scalar> GeneratorNet<S> {
    pub fn new<R: Rng>(config: GeneratorConfig, rng: &mut R) -> Self {
        let head = Conv2d::new(rng, config.channels, config.width, 3, 1, 1);
        let units = (0..config.residual_units)
            .map(|_| ResidualUnit::new(rng, config.width))
            .collect();
        let tail = Conv2d::zeroed(config.width, config.channels, 3, 1, 1);
        Self {
            config,
            head,
            units,
            tail,
        }
    }

    /// Predicted restoration residual, same shape as the input.
    pub fn forward(&self, x: &Tensor<S>, mode: Mode) -> Result<Tensor<S>, NnError> {
        if x.shape().len() != 4 || x.shape()[1] != self.config.channels {
            return Err(NnError::ShapeMismatch {
                op: "generator",
                expected: format!("(N,{},H,W)", self.config.channels),
                got: format!("{:?}", x.shape()),
            });
        }
        let mut h = self.head.forward(x)?;
        for unit in &self.units {
            h = unit.forward(&h, mode)?;
        }
        self.tail.forward(&h)
    }

    /// Restored image: input plus predicted residual, clamped to `[0, 1]`.
    pub fn restore(&self, x: &Tensor<S>, mode: Mode) -> Result<Tensor<S>, NnError> {
        Ok(x.add(&self.forward(x, mode)?).clamp01())
    }

    pub fn named_parameters(&self) -> Vec<(String, Tensor<S>)> {
        let mut out = vec![
            ("head.weight".into(), self.head.weight.clone()),
            ("head.bias".into(), self.head.bias.clone()),
        ];
        for (i, u) in self.units.iter().enumerate() {
            out.push((format!("unit{i}.conv1.weight"), u.conv1.weight.clone()));
            out.push((format!("unit{i}.conv1.bias"), u.conv1.bias.clone()));
            out.push((format!("unit{i}.bn1.gamma"), u.bn1.gamma.clone()));
            out.push((format!("unit{i}.bn1.beta"), u.bn1.beta.clone()));
            out.push((format!("unit{i}.conv2.weight"), u.conv2.weight.clone()));
            out.push((format!("unit{i}.conv2.bias"), u.conv2.bias.clone()));
            out.push((format!("unit{i}.bn2.gamma"), u.bn2.gamma.clone()));
            out.push((format!("unit{i}.bn2.beta"), u.bn2.beta.clone()));
        }
        out.push(("tail.weight".into(), self.tail.weight.clone()));
        out.push(("tail.bias".into(), self.tail.bias.clone()));
        out
    }

    pub fn named_buffers(&self) -> Vec<(String, Vec<S>)> {
        let mut out = Vec::new();
        for (i, u) in self.units.iter().enumerate() {
            out.push((format!("unit{i}.bn1.running_mean"), u.bn1.running_mean.borrow().clone()));
            out.push((format!("unit{i}.bn1.running_var"), u.bn1.running_var.borrow().clone()));
            out.push((format!("unit{i}.bn2.running_mean"), u.bn2.running_mean.borrow().clone()));
            out.push((format!("unit{i}.bn2.running_var"), u.bn2.running_var.borrow().clone()));
        }
        out
    }

    pub fn load_buffer(&self, name: &str, data: &[S]) -> Result<(), NnError> {
        for (i, u) in self.units.iter().enumerate() {
            for (bn, tag) in [(&u.bn1, "bn1"), (&u.bn2, "bn2")] {
                if name == format!("unit{i}.{tag}.running_mean") {
                    bn.running_mean.borrow_mut().copy_from_slice(data);
                    return Ok(());
                }
                if name == format!("unit{i}.{tag}.running_var") {
                    bn.running_var.borrow_mut().copy_from_slice(data);
                    return Ok(());
                }
            }
        }
        Err(NnError::UnknownName(name.into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiscriminatorConfig {
    pub channels: usize,
    /// Width of the first unit; later units double it.
    pub base_width: usize,
    pub patch_h: usize,
    pub patch_w: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            channels: 3,
            base_width: 64,
            patch_h: 64,
            patch_w: 64,
        }
    }
}

pub struct DiscUnit<S: Scalar> {
    pub conv1: Conv2d<S>,
    pub bn1: BatchNorm2d<S>,
    pub conv2: Conv2d<S>,
    pub bn2: BatchNorm2d<S>,
}

/// Patch classifier: four convolution units (stride 1 then stride 2, each
/// conv followed by batchnorm and leaky-ReLU 0.2) and a dense sigmoid head
/// producing one probability per image.
pub struct DiscriminatorNet<S: Scalar> {
    pub config: DiscriminatorConfig,
    pub units: Vec<DiscUnit<S>>,
    pub dense: Dense<S>,
    final_shape: (usize, usize, usize),
}

impl<S: Scalar> DiscriminatorNet<S> {
    pub fn new<R: Rng>(config: DiscriminatorConfig, rng: &mut R) -> Self {
        let widths = [
            config.base_width,
            config.base_width * 2,
            config.base_width * 4,
            config.base_width * 8,
        ];
        let mut in_ch = config.channels;
        let (mut h, mut w) = (config.patch_h, config.patch_w);
        let mut units = Vec::with_capacity(4);
        for &width in &widths {
            let conv1 = Conv2d::new(rng, in_ch, width, 3, 1, 1);
            // stride-2 pad grows when a spatial dim has shrunk to one so the
            // 4x4 kernel still fits
            let pad = if h.min(w) == 1 { 2 } else { 1 };
            let conv2 = Conv2d::new(rng, width, width, 4, 2, pad);
            h = (h + 2 * pad - 4) / 2 + 1;
            w = (w + 2 * pad - 4) / 2 + 1;
            units.push(DiscUnit {
                conv1,
                bn1: BatchNorm2d::new(width),
                conv2,
                bn2: BatchNorm2d::new(width),
            });
            in_ch = width;
        }
        let dense = Dense::new(rng, widths[3] * h * w, 1);
        Self {
            config,
            units,
            dense,
            final_shape: (widths[3], h, w),
        }
    }

    /// Probability in (0, 1) that each image in the batch is a properly
    /// exposed original; shape `(N, 1)`.
    pub fn forward(&self, x: &Tensor<S>, mode: Mode) -> Result<Tensor<S>, NnError> {
        let shape = x.shape();
        if shape.len() != 4
            || shape[1] != self.config.channels
            || shape[2] != self.config.patch_h
            || shape[3] != self.config.patch_w
        {
            return Err(NnError::ShapeMismatch {
                op: "discriminator",
                expected: format!(
                    "(N,{},{},{})",
                    self.config.channels, self.config.patch_h, self.config.patch_w
                ),
                got: format!("{shape:?}"),
            });
        }
        let n = shape[0];
        let slope = S::of(0.2);
        let mut h = x.clone();
        for unit in &self.units {
            h = unit
                .bn1
                .forward(&unit.conv1.forward(&h)?, mode)?
                .leaky_relu(slope);
            h = unit
                .bn2
                .forward(&unit.conv2.forward(&h)?, mode)?
                .leaky_relu(slope);
        }
        let (c, fh, fw) = self.final_shape;
        let flat = h.reshape(vec![n, c * fh * fw]);
        Ok(self.dense.forward(&flat)?.sigmoid())
    }

    pub fn named_parameters(&self) -> Vec<(String, Tensor<S>)> {
        let mut out = Vec::new();
        for (i, u) in self.units.iter().enumerate() {
            out.push((format!("unit{i}.conv1.weight"), u.conv1.weight.clone()));
            out.push((format!("unit{i}.conv1.bias"), u.conv1.bias.clone()));
            out.push((format!("unit{i}.bn1.gamma"), u.bn1.gamma.clone()));
            out.push((format!("unit{i}.bn1.beta"), u.bn1.beta.clone()));
            out.push((format!("unit{i}.conv2.weight"), u.conv2.weight.clone()));
            out.push((format!("unit{i}.conv2.bias"), u.conv2.bias.clone()));
            out.push((format!("unit{i}.bn2.gamma"), u.bn2.gamma.clone()));
            out.push((format!("unit{i}.bn2.beta"), u.bn2.beta.clone()));
        }
        out.push(("dense.weight".into(), self.dense.weight.clone()));
        out.push(("dense.bias".into(), self.dense.bias.clone()));
        out
    }

    pub fn named_buffers(&self) -> Vec<(String, Vec<S>)> {
        let mut out = Vec::new();
        for (i, u) in self.units.iter().enumerate() {
            out.push((format!("unit{i}.bn1.running_mean"), u.bn1.running_mean.borrow().clone()));
            out.push((format!("unit{i}.bn1.running_var"), u.bn1.running_var.borrow().clone()));
            out.push((format!("unit{i}.bn2.running_mean"), u.bn2.running_mean.borrow().clone()));
            out.push((format!("unit{i}.bn2.running_var"), u.bn2.running_var.borrow().clone()));
        }
        out
    }

    pub fn load_buffer(&self, name: &str, data: &[S]) -> Result<(), NnError> {
        for (i, u) in self.units.iter().enumerate() {
            for (bn, tag) in [(&u.bn1, "bn1"), (&u.bn2, "bn2")] {
                if name == format!("unit{i}.{tag}.running_mean") {
                    bn.running_mean.borrow_mut().copy_from_slice(data);
                    return Ok(());
                }
                if name == format!("unit{i}.{tag}.running_var") {
                    bn.running_var.borrow_mut().copy_from_slice(data);
                    return Ok(());
                }
            }
        }
        Err(NnError::UnknownName(name.into()))
    }
}
