use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::nngrad::{loss_disc, DiscriminatorConfig, GeneratorConfig};

fn tiny_config() -> TrainConfig {
    TrainConfig {
        iterations: 4,
        batch_size: 2,
        patch_h: 16,
        patch_w: 16,
        lambda: 1e-3,
        lr_g: 1e-3,
        lr_d: 1e-3,
        seed: 7,
        residual_units: 1,
        g_width: 4,
        d_width: 4,
        channels: 1,
        checkpoint_interval: 0,
        ..TrainConfig::default()
    }
}

fn toy_images(count: usize, size: usize, seed: u64) -> Vec<Raster<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let base: f32 = rng.gen_range(0.2..0.8);
            Raster::from_fn(size, size, 1, |y, x, _| {
                base + 0.2 * ((x as f32 / 7.0).sin() * (y as f32 / 5.0).cos())
            })
        })
        .collect()
}

#[test]
fn config_text_round_trip() {
    let cfg = tiny_config();
    let back = TrainConfig::from_text(&cfg.to_text()).unwrap();
    assert_eq!(cfg, back);
    assert!(TrainConfig::from_text("bogus_key = 3").is_err());
}

#[test]
fn first_step_loss_is_zero_for_noiseless_synthesis() {
    // zero-initialized tail and sigma = 0: the restoration equals the
    // degraded input, which sits inside its own quantization interval
    let mut config = tiny_config();
    config.lambda = 0.0;
    let mut trainer = Trainer::<f32>::new(config).unwrap();
    let p = DegradeParams::new(0.2f32, 1.3, 1.0 / 255.0, 0.0, 3).unwrap();
    let img = &toy_images(1, 24, 11)[0];
    let batch: Vec<_> = (0..2)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + i);
            make_training_pair(img, &p, 16, 16, &mut rng).unwrap()
        })
        .collect();
    let losses = trainer.train_step(&batch).unwrap();
    assert_eq!(losses.l_inf, 0.0);
    assert_eq!(losses.l_gen, 0.0);
    assert!(losses.l_disc > 0.0);
}

#[test]
fn training_is_deterministic_across_runs() {
    let images = toy_images(3, 24, 5);
    let run = || {
        let mut trainer = Trainer::<f32>::new(tiny_config()).unwrap();
        let mut log = Vec::new();
        trainer.train(&images, &mut log, None).unwrap();
        String::from_utf8(log).unwrap()
    };
    let a = run();
    let b = run();
    assert_eq!(a, b);
    assert_eq!(a.lines().count(), 4);
    for line in a.lines() {
        assert_eq!(line.split('\t').count(), 4);
    }
}

#[test]
fn discriminator_step_descends_on_fixed_batch() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let d = DiscriminatorNet::<f64>::new(
        DiscriminatorConfig {
            channels: 1,
            base_width: 4,
            patch_h: 16,
            patch_w: 16,
        },
        &mut rng,
    );
    let real = Tensor::from_vec(
        vec![2, 1, 16, 16],
        (0..512).map(|i| 0.5 + 0.3 * ((i as f64) / 97.0).sin()).collect(),
    );
    let fake = Tensor::from_vec(
        vec![2, 1, 16, 16],
        (0..512).map(|i| 0.5 + 0.3 * ((i as f64) / 31.0).cos()).collect(),
    );
    let params = d.named_parameters();
    let mut opt = Adam::new(1e-4, 0.9, 0.999, &params);
    let eval = |d: &DiscriminatorNet<f64>| {
        let dr = d.forward(&real, Mode::Train).unwrap();
        let df = d.forward(&fake, Mode::Train).unwrap();
        loss_disc(&dr, &df)
    };
    let before = eval(&d).item();
    for (_, p) in &params {
        p.zero_grad();
    }
    eval(&d).backward().unwrap();
    opt.step(&params);
    let after = eval(&d).item();
    assert!(
        after <= before + 1e-9,
        "discriminator loss rose from {before} to {after}"
    );
}

#[test]
fn generator_step_leaves_discriminator_untouched() {
    let images = toy_images(2, 24, 9);
    let mut trainer = Trainer::<f32>::new(tiny_config()).unwrap();
    let batch = trainer.next_batch(&images).unwrap();

    let checksum = |params: &[(String, Tensor<f32>)]| -> f32 {
        params
            .iter()
            .flat_map(|(_, t)| t.data().iter().copied().collect::<Vec<_>>())
            .sum()
    };
    let d_before = checksum(&trainer.discriminator.named_parameters());
    let g_before = checksum(&trainer.generator.named_parameters());
    trainer.train_step(&batch).unwrap();
    let d_after = checksum(&trainer.discriminator.named_parameters());
    let g_after = checksum(&trainer.generator.named_parameters());
    // both optimizers ran exactly once, each on its own network
    assert_ne!(d_before, d_after);
    assert_ne!(g_before, g_after);
    assert_eq!(trainer.opt_g.step_count(), 1);
    assert_eq!(trainer.opt_d.step_count(), 1);
}

#[test]
fn empty_dataset_rejected() {
    let mut trainer = Trainer::<f32>::new(tiny_config()).unwrap();
    let mut log = Vec::new();
    assert!(matches!(
        trainer.train(&[], &mut log, None),
        Err(TrainError::EmptyDataset)
    ));
    let small = toy_images(1, 8, 1);
    assert!(matches!(
        trainer.train(&small, &mut log, None),
        Err(TrainError::ImageTooSmall { .. })
    ));
}

#[test]
fn checkpoint_round_trip_preserves_forward_bits() {
    let images = toy_images(2, 24, 13);
    let mut trainer = Trainer::<f32>::new(tiny_config()).unwrap();
    for _ in 0..3 {
        let batch = trainer.next_batch(&images).unwrap();
        trainer.train_step(&batch).unwrap();
    }
    let probe = Tensor::from_vec(
        vec![1, 1, 16, 16],
        (0..256).map(|i| (i as f32) / 300.0).collect(),
    );
    let out_before = trainer
        .generator
        .restore(&probe, Mode::Infer)
        .unwrap()
        .data()
        .clone();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.dlma");
    trainer.to_checkpoint().save(&path).unwrap();
    let restored = Trainer::<f32>::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
    let out_after = restored
        .generator
        .restore(&probe, Mode::Infer)
        .unwrap()
        .data()
        .clone();
    assert_eq!(out_before, out_after);
    assert_eq!(restored.iteration(), 3);

    // save -> load -> save produces identical bytes
    let path2 = dir.path().join("ck2.dlma");
    restored.to_checkpoint().save(&path2).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
}

#[test]
fn resume_continues_the_exact_loss_sequence() {
    let images = toy_images(3, 24, 17);
    let mut config = tiny_config();
    config.iterations = 6;

    let mut full = Trainer::<f32>::new(config).unwrap();
    let mut full_losses = Vec::new();
    for _ in 0..6 {
        let batch = full.next_batch(&images).unwrap();
        full_losses.push(full.train_step(&batch).unwrap());
    }

    let mut half = Trainer::<f32>::new(config).unwrap();
    for _ in 0..3 {
        let batch = half.next_batch(&images).unwrap();
        half.train_step(&batch).unwrap();
    }
    let ck = half.to_checkpoint();
    let mut resumed = Trainer::<f32>::from_checkpoint(&ck).unwrap();
    for step in 3..6 {
        let batch = resumed.next_batch(&images).unwrap();
        let losses = resumed.train_step(&batch).unwrap();
        assert_eq!(losses.l_inf, full_losses[step].l_inf, "step {step}");
        assert_eq!(losses.l_adv, full_losses[step].l_adv, "step {step}");
        assert_eq!(losses.l_disc, full_losses[step].l_disc, "step {step}");
    }
}

fn zero_tail_generator(channels: usize) -> GeneratorNet<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    GeneratorNet::new(
        GeneratorConfig {
            channels,
            width: 4,
            residual_units: 2,
        },
        &mut rng,
    )
}

#[test]
fn dequantize_zero_residual_is_identity() {
    let g = zero_tail_generator(1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let img = Raster::<f32>::from_fn(20, 20, 1, |_, _, _| rng.gen_range(0.0..1.0));
    let out = dequantize(&g, &img).unwrap();
    assert_eq!(out.data(), img.data());
}

#[test]
fn dequantize_tiled_matches_untiled_in_tile_cores() {
    // train briefly so the residual is non-zero, then compare a 160x160
    // restoration against 64/16 tiling
    let images = toy_images(2, 48, 23);
    let mut config = tiny_config();
    config.patch_h = 32;
    config.patch_w = 32;
    let mut trainer = Trainer::<f32>::new(config).unwrap();
    for _ in 0..2 {
        let batch = trainer.next_batch(&images).unwrap();
        trainer.train_step(&batch).unwrap();
    }
    let g = trainer.generator;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let img = Raster::<f32>::from_fn(160, 160, 1, |y, x, _| {
        0.3 + 0.2 * ((x as f32 / 11.0).sin() + (y as f32 / 13.0).cos()) + rng.gen_range(0.0..0.05)
    });
    let untiled = dequantize_tiled(&g, &img, 256, 16).unwrap();
    let tiled = dequantize_tiled(&g, &img, 64, 16).unwrap();
    // 64/16 tiles start at 0, 48, 96, so internal tile edges sit at 48, 64,
    // 96 and 112; exclude those bands plus the receptive-field margin
    let in_core = |v: usize| !(40..72).contains(&v) && !(88..120).contains(&v);
    let mut max_diff = 0.0f32;
    for y in 0..160 {
        for x in 0..160 {
            if in_core(y) && in_core(x) {
                max_diff = max_diff.max((untiled.get(y, x, 0) - tiled.get(y, x, 0)).abs());
            }
        }
    }
    assert!(max_diff < 1e-5, "core difference {max_diff}");
}

#[test]
fn dequantize_output_bounded_and_channel_checked() {
    let g = zero_tail_generator(3);
    let gray = Raster::<f32>::constant(10, 10, 1, 0.5);
    assert!(matches!(
        dequantize(&g, &gray),
        Err(TrainError::ChannelMismatch { .. })
    ));
    let rgb = Raster::<f32>::from_fn(10, 10, 3, |y, x, c| {
        (y as f32 * 0.09 + x as f32 * 0.01 + c as f32 * 0.02).min(1.0)
    });
    let out = dequantize(&g, &rgb).unwrap();
    assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
}
