//! Adversarial training loop, checkpoint persistence and the inference-time
//! dequantization entry point.

mod adam;
mod checkpoint;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use adam::Adam;
pub use checkpoint::{crc32, Checkpoint, CheckpointError, Payload, Record, FORMAT_VERSION};

use crate::nngrad::{
    loss_adv, loss_disc, loss_generator_total, loss_linf_batch, DiscriminatorConfig,
    DiscriminatorNet, GeneratorConfig, GeneratorNet, LossBundle, Mode, NnError, Tensor,
};
use crate::raster::{Raster, RasterError};
use crate::scalar::Scalar;
use crate::synth::{make_training_pair, DegradeParams, SynthError, TrainingSample};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("non-finite {loss} at iteration {iteration}")]
    NonFinite { loss: &'static str, iteration: u64 },
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("image {index} ({h}x{w}) is smaller than the {patch_h}x{patch_w} patch")]
    ImageTooSmall {
        index: usize,
        h: usize,
        w: usize,
        patch_h: usize,
        patch_w: usize,
    },
    #[error("batch mixes patch shapes or channel counts")]
    BatchShapeMismatch,
    #[error("checkpoint was trained with {expected} channels, input has {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub patch_h: usize,
    pub patch_w: usize,
    /// Weight of the adversarial term in the generator objective.
    pub lambda: f64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    pub residual_units: usize,
    pub g_width: usize,
    pub d_width: usize,
    pub channels: usize,
    /// Periodic checkpoint interval in iterations; 0 disables.
    pub checkpoint_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            batch_size: 16,
            patch_h: 64,
            patch_w: 64,
            lambda: 1e-3,
            lr_g: 1e-4,
            lr_d: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            seed: 0,
            residual_units: 16,
            g_width: 64,
            d_width: 64,
            channels: 3,
            checkpoint_interval: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let positives = [
            ("iterations", self.iterations),
            ("batch_size", self.batch_size),
            ("patch_h", self.patch_h),
            ("patch_w", self.patch_w),
            ("residual_units", self.residual_units),
            ("g_width", self.g_width),
            ("d_width", self.d_width),
        ];
        for (name, v) in positives {
            if v == 0 {
                return Err(TrainError::BadConfig(format!("{name} must be positive")));
            }
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(TrainError::BadConfig("channels must be 1 or 3".into()));
        }
        if self.lambda < 0.0 {
            return Err(TrainError::BadConfig("lambda must be >= 0".into()));
        }
        for (name, v) in [
            ("lr_g", self.lr_g),
            ("lr_d", self.lr_d),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
        ] {
            if !(v > 0.0 && v < 1.0) && name != "lr_g" && name != "lr_d" {
                return Err(TrainError::BadConfig(format!("{name} must be in (0, 1)")));
            }
            if !(v > 0.0) {
                return Err(TrainError::BadConfig(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    fn to_text(self) -> String {
        format!(
            "iterations = {}\nbatch_size = {}\npatch_h = {}\npatch_w = {}\nlambda = {}\n\
             lr_g = {}\nlr_d = {}\nbeta1 = {}\nbeta2 = {}\nseed = {}\nresidual_units = {}\n\
             g_width = {}\nd_width = {}\nchannels = {}\ncheckpoint_interval = {}\n",
            self.iterations,
            self.batch_size,
            self.patch_h,
            self.patch_w,
            self.lambda,
            self.lr_g,
            self.lr_d,
            self.beta1,
            self.beta2,
            self.seed,
            self.residual_units,
            self.g_width,
            self.d_width,
            self.channels,
            self.checkpoint_interval
        )
    }

    fn from_text(text: &str) -> Result<Self, TrainError> {
        let mut cfg = Self::default();
        for line in text.lines() {
            let Some((k, v)) = line.split_once('=') else {
                continue;
            };
            let (k, v) = (k.trim(), v.trim());
            let bad = |e: std::num::ParseIntError| TrainError::BadConfig(format!("{k}: {e}"));
            let badf = |e: std::num::ParseFloatError| TrainError::BadConfig(format!("{k}: {e}"));
            match k {
                "iterations" => cfg.iterations = v.parse().map_err(bad)?,
                "batch_size" => cfg.batch_size = v.parse().map_err(bad)?,
                "patch_h" => cfg.patch_h = v.parse().map_err(bad)?,
                "patch_w" => cfg.patch_w = v.parse().map_err(bad)?,
                "lambda" => cfg.lambda = v.parse().map_err(badf)?,
                "lr_g" => cfg.lr_g = v.parse().map_err(badf)?,
                "lr_d" => cfg.lr_d = v.parse().map_err(badf)?,
                "beta1" => cfg.beta1 = v.parse().map_err(badf)?,
                "beta2" => cfg.beta2 = v.parse().map_err(badf)?,
                "seed" => cfg.seed = v.parse().map_err(bad)?,
                "residual_units" => cfg.residual_units = v.parse().map_err(bad)?,
                "g_width" => cfg.g_width = v.parse().map_err(bad)?,
                "d_width" => cfg.d_width = v.parse().map_err(bad)?,
                "channels" => cfg.channels = v.parse().map_err(bad)?,
                "checkpoint_interval" => cfg.checkpoint_interval = v.parse().map_err(bad)?,
                other => return Err(TrainError::BadConfig(format!("unknown key {other}"))),
            }
        }
        Ok(cfg)
    }
}

/// Degradation parameter ranges sampled per training pair; they bracket both
/// synthetic-experiment presets.
#[derive(Debug, Clone, Copy)]
pub struct ParamRanges {
    pub dim_gain: (f64, f64),
    pub gamma_ratio: (f64, f64),
    pub sigma: (f64, f64),
    pub q: f64,
}

impl Default for ParamRanges {
    fn default() -> Self {
        Self {
            dim_gain: (1.0 / 30.0, 0.5),
            gamma_ratio: (0.8, 1.6),
            sigma: (0.0, 0.5),
            q: 1.0 / 255.0,
        }
    }
}

impl ParamRanges {
    pub fn sample<S: Scalar, R: Rng>(&self, rng: &mut R) -> DegradeParams<S> {
        DegradeParams {
            dim_gain: S::of(rng.gen_range(self.dim_gain.0..=self.dim_gain.1)),
            gamma_ratio: S::of(rng.gen_range(self.gamma_ratio.0..=self.gamma_ratio.1)),
            q: S::of(self.q),
            noise_sigma: S::of(rng.gen_range(self.sigma.0..=self.sigma.1)),
            seed: 0,
        }
    }
}

/// NCHW-planar copy of a channel-interleaved raster.
pub fn raster_to_planar<S: Scalar>(r: &Raster<S>) -> Vec<S> {
    let (h, w, c) = (r.height(), r.width(), r.channels());
    let mut out = vec![S::zero(); h * w * c];
    let data = r.data();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out[(ch * h + y) * w + x] = data[(y * w + x) * c + ch];
            }
        }
    }
    out
}

/// Inverse of [`raster_to_planar`]; values are clamped into `[0, 1]`.
pub fn planar_to_raster<S: Scalar>(h: usize, w: usize, c: usize, planar: &[S]) -> Raster<S> {
    Raster::from_fn(h, w, c, |y, x, ch| planar[(ch * h + y) * w + x])
}

pub struct Trainer<S: Scalar> {
    pub config: TrainConfig,
    pub ranges: ParamRanges,
    pub generator: GeneratorNet<S>,
    pub discriminator: DiscriminatorNet<S>,
    opt_g: Adam<S>,
    opt_d: Adam<S>,
    rng: ChaCha8Rng,
    iteration: u64,
    image_order: Vec<usize>,
    image_cursor: usize,
}

impl<S: Scalar> Trainer<S> {
    pub fn new(config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let generator = GeneratorNet::new(
            GeneratorConfig {
                channels: config.channels,
                width: config.g_width,
                residual_units: config.residual_units,
            },
            &mut rng,
        );
        let discriminator = DiscriminatorNet::new(
            DiscriminatorConfig {
                channels: config.channels,
                base_width: config.d_width,
                patch_h: config.patch_h,
                patch_w: config.patch_w,
            },
            &mut rng,
        );
        let opt_g = Adam::new(
            S::of(config.lr_g),
            S::of(config.beta1),
            S::of(config.beta2),
            &generator.named_parameters(),
        );
        let opt_d = Adam::new(
            S::of(config.lr_d),
            S::of(config.beta1),
            S::of(config.beta2),
            &discriminator.named_parameters(),
        );
        Ok(Self {
            config,
            ranges: ParamRanges::default(),
            generator,
            discriminator,
            opt_g,
            opt_d,
            rng,
            iteration: 0,
            image_order: Vec::new(),
            image_cursor: 0,
        })
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    fn batch_tensors(
        &self,
        batch: &[TrainingSample<S>],
    ) -> Result<(Tensor<S>, Tensor<S>, Tensor<S>, Vec<DegradeParams<S>>), TrainError> {
        let first = &batch[0].degraded;
        let (h, w, c) = (first.height(), first.width(), first.channels());
        let plane = h * w * c;
        let mut real = Vec::with_capacity(batch.len() * plane);
        let mut degraded = Vec::with_capacity(batch.len() * plane);
        let mut noise = Vec::with_capacity(batch.len() * plane);
        let mut params = Vec::with_capacity(batch.len());
        for s in batch {
            if !s.degraded.same_shape(first) || !s.ground_truth.same_shape(first) {
                return Err(TrainError::BatchShapeMismatch);
            }
            real.extend(raster_to_planar(&s.ground_truth));
            degraded.extend(raster_to_planar(&s.degraded));
            // the noise map is interleaved like the raster it came from
            let mut planar_noise = vec![S::zero(); plane];
            for y in 0..h {
                for x in 0..w {
                    for ch in 0..c {
                        planar_noise[(ch * h + y) * w + x] = s.noise_map[(y * w + x) * c + ch];
                    }
                }
            }
            noise.extend(planar_noise);
            params.push(s.params);
        }
        let shape = vec![batch.len(), c, h, w];
        Ok((
            Tensor::from_vec(shape.clone(), real),
            Tensor::from_vec(shape.clone(), degraded),
            Tensor::from_vec(shape, noise),
            params,
        ))
    }

    /// One alternating update: discriminator first against a detached
    /// restoration, then the generator against the refreshed discriminator.
    pub fn train_step(&mut self, batch: &[TrainingSample<S>]) -> Result<LossBundle<S>, TrainError> {
        if batch.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let (real, degraded, noise, params) = self.batch_tensors(batch)?;
        let batch_n = S::of(batch.len() as f64);
        let g_params = self.generator.named_parameters();
        let d_params = self.discriminator.named_parameters();

        // restoration graph, shared by both phases
        let fake = self.generator.restore(&degraded, Mode::Train)?;

        // discriminator phase: generator treated as constant
        for (_, p) in &d_params {
            p.zero_grad();
        }
        let d_real = self.discriminator.forward(&real, Mode::Train)?;
        let d_fake = self.discriminator.forward(&fake.detach(), Mode::Train)?;
        let l_disc_t = loss_disc(&d_real, &d_fake);
        let l_disc = l_disc_t.item();
        self.ensure_finite(l_disc, "discriminator loss")?;
        l_disc_t.backward()?;
        self.opt_d.step(&d_params);

        // generator phase: discriminator treated as constant
        for (_, p) in &g_params {
            p.zero_grad();
        }
        for (_, p) in &d_params {
            p.zero_grad(); // gradients flow through D here but are never applied
        }
        let d_fake2 = self.discriminator.forward(&fake, Mode::Train)?;
        let l_adv_t = loss_adv(&d_fake2);
        let l_inf_t = loss_linf_batch(&fake, &degraded, &noise, &params)
            .affine(S::one() / batch_n, S::zero());
        let l_gen_t = loss_generator_total(&l_inf_t, &l_adv_t, S::of(self.config.lambda));
        let (l_adv, l_inf, l_gen) = (l_adv_t.item(), l_inf_t.item(), l_gen_t.item());
        self.ensure_finite(l_inf, "barrier loss")?;
        self.ensure_finite(l_adv, "adversarial loss")?;
        self.ensure_finite(l_gen, "generator loss")?;
        l_gen_t.backward()?;
        self.opt_g.step(&g_params);

        self.iteration += 1;
        Ok(LossBundle {
            l_inf,
            l_adv,
            l_gen,
            l_disc,
        })
    }

    fn ensure_finite(&self, v: S, loss: &'static str) -> Result<(), TrainError> {
        if v.is_finite() {
            Ok(())
        } else {
            Err(TrainError::NonFinite {
                loss,
                iteration: self.iteration,
            })
        }
    }

    fn next_image_index(&mut self, count: usize) -> usize {
        if self.image_order.len() != count {
            self.image_order = (0..count).collect();
            self.image_cursor = count; // force reshuffle
        }
        if self.image_cursor >= count {
            self.image_order.shuffle(&mut self.rng);
            self.image_cursor = 0;
        }
        let idx = self.image_order[self.image_cursor];
        self.image_cursor += 1;
        idx
    }

    /// Synthesizes the next batch from the image pool, one fresh parameter
    /// draw per pair.
    pub fn next_batch(&mut self, images: &[Raster<S>]) -> Result<Vec<TrainingSample<S>>, TrainError> {
        let mut batch = Vec::with_capacity(self.config.batch_size);
        for _ in 0..self.config.batch_size {
            let idx = self.next_image_index(images.len());
            let mut params: DegradeParams<S> = self.ranges.sample(&mut self.rng);
            params.seed = self.rng.gen();
            let sample = make_training_pair(
                &images[idx],
                &params,
                self.config.patch_h,
                self.config.patch_w,
                &mut self.rng,
            )?;
            batch.push(sample);
        }
        Ok(batch)
    }

    /// Runs the configured number of iterations over the image pool, writing
    /// one tab-separated log line per iteration
    /// (`iter<TAB>l_inf<TAB>l_adv<TAB>l_disc`) and periodic checkpoints.
    pub fn train(
        &mut self,
        images: &[Raster<S>],
        log: &mut dyn Write,
        checkpoint_dir: Option<&Path>,
    ) -> Result<Checkpoint, TrainError> {
        if images.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        for (index, img) in images.iter().enumerate() {
            if img.height() < self.config.patch_h || img.width() < self.config.patch_w {
                return Err(TrainError::ImageTooSmall {
                    index,
                    h: img.height(),
                    w: img.width(),
                    patch_h: self.config.patch_h,
                    patch_w: self.config.patch_w,
                });
            }
            if img.channels() != self.config.channels {
                return Err(TrainError::ChannelMismatch {
                    expected: self.config.channels,
                    got: img.channels(),
                });
            }
        }
        while self.iteration < self.config.iterations as u64 {
            let batch = self.next_batch(images)?;
            let losses = self.train_step(&batch)?;
            writeln!(
                log,
                "{}\t{}\t{}\t{}",
                self.iteration,
                losses.l_inf.to_f64_lossy(),
                losses.l_adv.to_f64_lossy(),
                losses.l_disc.to_f64_lossy()
            )?;
            if self.config.checkpoint_interval > 0
                && self.iteration % self.config.checkpoint_interval as u64 == 0
            {
                if let Some(dir) = checkpoint_dir {
                    self.to_checkpoint()
                        .save(dir.join(format!("checkpoint_{:08}.dlma", self.iteration)))?;
                }
            }
        }
        Ok(self.to_checkpoint())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut records = vec![
            Record {
                name: "meta.iteration".into(),
                payload: Payload::Bytes(checkpoint::u64_bytes(self.iteration)),
            },
            Record {
                name: "meta.config".into(),
                payload: Payload::Bytes(self.config.to_text().into_bytes()),
            },
            Record {
                name: "meta.rng".into(),
                payload: Payload::Bytes(rng_state_bytes(&self.rng)),
            },
            // shuffled-cycle state; resuming against the same dataset
            // continues the exact sampling sequence
            Record {
                name: "meta.image_order".into(),
                payload: Payload::Bytes(order_bytes(&self.image_order, self.image_cursor)),
            },
        ];
        let tensor_record = |name: String, t: &Tensor<S>| Record {
            name,
            payload: Payload::F32 {
                dims: t.shape().iter().map(|&d| d as u32).collect(),
                data: t.data().iter().map(|v| v.to_f64_lossy() as f32).collect(),
            },
        };
        let vec_record = |name: String, v: &[S]| Record {
            name,
            payload: Payload::F32 {
                dims: vec![v.len() as u32],
                data: v.iter().map(|v| v.to_f64_lossy() as f32).collect(),
            },
        };
        for (name, t) in self.generator.named_parameters() {
            records.push(tensor_record(format!("g.{name}"), &t));
        }
        for (name, buf) in self.generator.named_buffers() {
            records.push(vec_record(format!("g_buf.{name}"), &buf));
        }
        for (name, t) in self.discriminator.named_parameters() {
            records.push(tensor_record(format!("d.{name}"), &t));
        }
        for (name, buf) in self.discriminator.named_buffers() {
            records.push(vec_record(format!("d_buf.{name}"), &buf));
        }
        for (prefix, opt, params) in [
            ("opt_g", &self.opt_g, self.generator.named_parameters()),
            ("opt_d", &self.opt_d, self.discriminator.named_parameters()),
        ] {
            let (t, first, second) = opt.state();
            records.push(Record {
                name: format!("{prefix}.step_count"),
                payload: Payload::Bytes(checkpoint::u64_bytes(t)),
            });
            for (i, (name, _)) in params.iter().enumerate() {
                records.push(vec_record(format!("{prefix}.m.{name}"), &first[i]));
                records.push(vec_record(format!("{prefix}.v.{name}"), &second[i]));
            }
        }
        Checkpoint::new(records)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, TrainError> {
        let config_text = String::from_utf8(ck.bytes("meta.config")?.to_vec())
            .map_err(|e| CheckpointError::Corrupt(format!("meta.config: {e}")))?;
        let config = TrainConfig::from_text(&config_text)?;
        let mut trainer = Self::new(config)?;
        trainer.iteration = checkpoint::u64_from(ck.bytes("meta.iteration")?)?;
        restore_rng(&mut trainer.rng, ck.bytes("meta.rng")?)?;
        if let Ok(bytes) = ck.bytes("meta.image_order") {
            let (order, cursor) = order_from_bytes(bytes)?;
            trainer.image_order = order;
            trainer.image_cursor = cursor;
        }

        let load_tensor = |name: &str, t: &Tensor<S>| -> Result<(), TrainError> {
            let (dims, data) = ck.tensor(name)?;
            let expect: Vec<u32> = t.shape().iter().map(|&d| d as u32).collect();
            if dims != expect {
                return Err(CheckpointError::Corrupt(format!(
                    "{name}: dims {dims:?} != expected {expect:?}"
                ))
                .into());
            }
            let vals: Vec<S> = data.iter().map(|&v| S::of(v as f64)).collect();
            t.set_data(&vals);
            Ok(())
        };
        for (name, t) in trainer.generator.named_parameters() {
            load_tensor(&format!("g.{name}"), &t)?;
        }
        for (name, _) in trainer.generator.named_buffers() {
            let (_, data) = ck.tensor(&format!("g_buf.{name}"))?;
            let vals: Vec<S> = data.iter().map(|&v| S::of(v as f64)).collect();
            trainer.generator.load_buffer(&name, &vals)?;
        }
        for (name, t) in trainer.discriminator.named_parameters() {
            load_tensor(&format!("d.{name}"), &t)?;
        }
        for (name, _) in trainer.discriminator.named_buffers() {
            let (_, data) = ck.tensor(&format!("d_buf.{name}"))?;
            let vals: Vec<S> = data.iter().map(|&v| S::of(v as f64)).collect();
            trainer.discriminator.load_buffer(&name, &vals)?;
        }
        for (prefix, opt, params) in [
            ("opt_g", &mut trainer.opt_g, trainer.generator.named_parameters()),
            (
                "opt_d",
                &mut trainer.opt_d,
                trainer.discriminator.named_parameters(),
            ),
        ] {
            let t = checkpoint::u64_from(ck.bytes(&format!("{prefix}.step_count"))?)?;
            let mut first = Vec::with_capacity(params.len());
            let mut second = Vec::with_capacity(params.len());
            for (name, _) in &params {
                let (_, m) = ck.tensor(&format!("{prefix}.m.{name}"))?;
                let (_, v) = ck.tensor(&format!("{prefix}.v.{name}"))?;
                first.push(m.iter().map(|&x| S::of(x as f64)).collect());
                second.push(v.iter().map(|&x| S::of(x as f64)).collect());
            }
            opt.restore(t, first, second);
        }
        Ok(trainer)
    }

    /// Loads only the generator (for inference tools).
    pub fn generator_from_checkpoint(ck: &Checkpoint) -> Result<GeneratorNet<S>, TrainError> {
        let trainer = Self::from_checkpoint(ck)?;
        Ok(trainer.generator)
    }
}

fn order_bytes(order: &[usize], cursor: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + order.len() * 4 + 4);
    out.extend_from_slice(&(order.len() as u32).to_le_bytes());
    out.extend_from_slice(&(cursor as u32).to_le_bytes());
    for &i in order {
        out.extend_from_slice(&(i as u32).to_le_bytes());
    }
    out
}

fn order_from_bytes(bytes: &[u8]) -> Result<(Vec<usize>, usize), CheckpointError> {
    let word = |at: usize| -> Result<u32, CheckpointError> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| CheckpointError::Corrupt("meta.image_order truncated".into()))
    };
    let len = word(0)? as usize;
    let cursor = word(4)? as usize;
    let mut order = Vec::with_capacity(len);
    for i in 0..len {
        order.push(word(8 + 4 * i)? as usize);
    }
    Ok((order, cursor))
}

fn rng_state_bytes(rng: &ChaCha8Rng) -> Vec<u8> {
    let mut out = Vec::with_capacity(56);
    out.extend_from_slice(&rng.get_seed());
    out.extend_from_slice(&rng.get_word_pos().to_le_bytes());
    out.extend_from_slice(&rng.get_stream().to_le_bytes());
    out
}

fn restore_rng(rng: &mut ChaCha8Rng, bytes: &[u8]) -> Result<(), CheckpointError> {
    if bytes.len() != 56 {
        return Err(CheckpointError::Corrupt("meta.rng: wrong length".into()));
    }
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&bytes[..32]);
    *rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(u64::from_le_bytes(bytes[48..56].try_into().unwrap()));
    rng.set_word_pos(u128::from_le_bytes(bytes[32..48].try_into().unwrap()));
    Ok(())
}

pub const DEFAULT_TILE: usize = 128;
pub const DEFAULT_OVERLAP: usize = 16;

/// Restores a tone-mapped image with the generator: `clamp(x + G(x))`,
/// processed in overlapping feather-blended tiles when the image exceeds the
/// tile size.
pub fn dequantize<S: Scalar>(
    g: &GeneratorNet<S>,
    stretched: &Raster<S>,
) -> Result<Raster<S>, TrainError> {
    dequantize_tiled(g, stretched, DEFAULT_TILE, DEFAULT_OVERLAP)
}

pub fn dequantize_tiled<S: Scalar>(
    g: &GeneratorNet<S>,
    stretched: &Raster<S>,
    tile: usize,
    overlap: usize,
) -> Result<Raster<S>, TrainError> {
    assert!(tile > 2 * overlap, "tile must exceed twice the overlap");
    if stretched.channels() != g.config.channels {
        return Err(TrainError::ChannelMismatch {
            expected: g.config.channels,
            got: stretched.channels(),
        });
    }
    let (h, w, c) = (stretched.height(), stretched.width(), stretched.channels());
    if h <= tile && w <= tile {
        let x = Tensor::from_vec(vec![1, c, h, w], raster_to_planar(stretched));
        let restored = g.restore(&x, Mode::Infer)?;
        return Ok(planar_to_raster(h, w, c, &restored.data()));
    }

    let step = tile - overlap;
    let starts = |len: usize| -> Vec<usize> {
        if len <= tile {
            return vec![0];
        }
        let mut v: Vec<usize> = (0..).map(|i| i * step).take_while(|&s| s + tile < len).collect();
        v.push(len - tile);
        v
    };
    let mut acc = vec![0.0f64; h * w * c];
    let mut weight_acc = vec![0.0f64; h * w];
    for &y0 in &starts(h) {
        for &x0 in &starts(w) {
            let th = tile.min(h - y0);
            let tw = tile.min(w - x0);
            let patch = stretched.crop(y0, x0, th, tw);
            let x = Tensor::from_vec(vec![1, c, th, tw], raster_to_planar(&patch));
            let restored = g.restore(&x, Mode::Infer)?;
            let rd = restored.data();
            // linear feather on sides that border another tile
            let ramp = |local: usize, len: usize, lo_edge: bool, hi_edge: bool| -> f64 {
                let mut wgt = 1.0f64;
                if !lo_edge {
                    wgt = wgt.min((local + 1) as f64 / (overlap + 1) as f64);
                }
                if !hi_edge {
                    wgt = wgt.min((len - local) as f64 / (overlap + 1) as f64);
                }
                wgt.min(1.0)
            };
            for ly in 0..th {
                let wy = ramp(ly, th, y0 == 0, y0 + th == h);
                for lx in 0..tw {
                    let wx = ramp(lx, tw, x0 == 0, x0 + tw == w);
                    let wgt = wy * wx;
                    let (gy, gx) = (y0 + ly, x0 + lx);
                    weight_acc[gy * w + gx] += wgt;
                    for ch in 0..c {
                        acc[(gy * w + gx) * c + ch] +=
                            wgt * rd[(ch * th + ly) * tw + lx].to_f64_lossy();
                    }
                }
            }
        }
    }
    Ok(Raster::from_fn(h, w, c, |y, x, ch| {
        S::of(acc[(y * w + x) * c + ch] / weight_acc[y * w + x])
    }))
}

#[cfg(test)]
mod tests;
