//! Loss functions: the adversarial pair and the quantization-interval
//! barrier.

use super::Tensor;
use crate::scalar::Scalar;
use crate::synth::TrainingSample;

/// Floor applied inside the gamma power; keeps its derivative bounded at
/// black pixels when the exponent is below one.
pub const POWER_FLOOR: f64 = 1e-6;
/// The barrier diverges as the excess approaches one; the excess is clamped
/// to `1 - BARRIER_CLAMP_DELTA` so early training stays finite.
pub const BARRIER_CLAMP_DELTA: f64 = 1e-6;

/// All four loss values of one training step.
#[derive(Debug, Clone, Copy)]
pub struct LossBundle<S> {
    pub l_inf: S,
    pub l_adv: S,
    pub l_gen: S,
    pub l_disc: S,
}

/// Generator adversarial term: mean over the batch of `-log D(restored)`.
pub fn loss_adv<S: Scalar>(d_fake: &Tensor<S>) -> Tensor<S> {
    let n = S::of(d_fake.shape()[0] as f64);
    d_fake.neg_log().sum_all().affine(S::one() / n, S::zero())
}

/// Discriminator binary cross entropy: mean over the batch of
/// `-[log D(real) + log(1 - D(fake))]`.
pub fn loss_disc<S: Scalar>(d_real: &Tensor<S>, d_fake: &Tensor<S>) -> Tensor<S> {
    let n = S::of(d_real.shape()[0] as f64);
    d_real
        .neg_log()
        .add(&d_fake.neg_log1m())
        .sum_all()
        .affine(S::one() / n, S::zero())
}

/// Barrier loss over the whole tensor (sum over batch, channels and pixels).
///
/// Per sample the restored image is pushed back into the quantization
/// interval of the degraded capture: with
/// `c = dim_gain * (degraded^gamma_ratio - restored^gamma_ratio) - noise`,
/// any excess of `|c|` beyond `q/2` pays `-log(1 - excess)`. The loss is
/// exactly zero while every sample sits inside its interval, and the excess
/// clamp keeps it finite for any restored image in `[0, 1]`.
pub fn loss_linf_graph<S: Scalar>(
    restored: &Tensor<S>,
    degraded: &Tensor<S>,
    noise: &Tensor<S>,
    dim_gain: S,
    gamma_ratio: S,
    q: S,
) -> Tensor<S> {
    let floor = S::of(POWER_FLOOR);
    let p_deg = degraded.pow_guarded(gamma_ratio, floor);
    let p_res = restored.pow_guarded(gamma_ratio, floor);
    let c = p_deg
        .sub(&p_res)
        .affine(dim_gain, S::zero())
        .sub(noise);
    let excess = c.abs().affine(S::one(), -q / S::of(2.0)).relu();
    let clamped = excess.clamp_max(S::one() - S::of(BARRIER_CLAMP_DELTA));
    clamped.neg_log1m().sum_all()
}

/// Batched barrier loss where each item carries its own degradation
/// parameters; returns the sum over every sample of every item.
pub fn loss_linf_batch<S: Scalar>(
    restored: &Tensor<S>,
    degraded: &Tensor<S>,
    noise: &Tensor<S>,
    params: &[crate::synth::DegradeParams<S>],
) -> Tensor<S> {
    assert_eq!(restored.shape()[0], params.len(), "one param set per item");
    let floor = S::of(POWER_FLOOR);
    let gammas: Vec<S> = params.iter().map(|p| p.gamma_ratio).collect();
    let dims: Vec<S> = params.iter().map(|p| p.dim_gain).collect();
    let zeros = vec![S::zero(); params.len()];
    let ones = vec![S::one(); params.len()];
    let neg_half_q: Vec<S> = params.iter().map(|p| -p.q / S::of(2.0)).collect();

    let p_deg = degraded.pow_guarded_per_item(gammas.clone(), floor);
    let p_res = restored.pow_guarded_per_item(gammas, floor);
    let c = p_deg
        .sub(&p_res)
        .per_item_affine(dims, zeros)
        .sub(noise);
    let excess = c.abs().per_item_affine(ones, neg_half_q).relu();
    let clamped = excess.clamp_max(S::one() - S::of(BARRIER_CLAMP_DELTA));
    clamped.neg_log1m().sum_all()
}

/// Barrier loss of one restored patch against its training sample.
pub fn loss_linf<S: Scalar>(restored: &Tensor<S>, sample: &TrainingSample<S>) -> S {
    let dims = vec![
        1,
        sample.degraded.channels(),
        sample.degraded.height(),
        sample.degraded.width(),
    ];
    assert_eq!(
        restored.numel(),
        sample.degraded.data().len(),
        "restored patch does not match the sample"
    );
    let degraded = Tensor::from_vec(dims.clone(), sample.degraded.data().to_vec());
    let noise = Tensor::from_vec(dims, sample.noise_map.clone());
    loss_linf_graph(
        restored,
        &degraded,
        &noise,
        sample.params.dim_gain,
        sample.params.gamma_ratio,
        sample.params.q,
    )
    .item()
}

/// Joint generator objective: barrier plus `lambda` times the adversarial
/// term.
pub fn loss_generator_total<S: Scalar>(
    l_inf: &Tensor<S>,
    l_adv: &Tensor<S>,
    lambda: S,
) -> Tensor<S> {
    l_inf.add(&l_adv.affine(lambda, S::zero()))
}
