//! Adaptive-moment gradient descent with bias correction.

use crate::nngrad::Tensor;
use crate::scalar::Scalar;

pub struct Adam<S: Scalar> {
    pub lr: S,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
    step_count: u64,
    first: Vec<Vec<S>>,
    second: Vec<Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(lr: S, beta1: S, beta2: S, params: &[(String, Tensor<S>)]) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: S::of(1e-8),
            step_count: 0,
            first: params.iter().map(|(_, p)| vec![S::zero(); p.numel()]).collect(),
            second: params.iter().map(|(_, p)| vec![S::zero(); p.numel()]).collect(),
        }
    }

    /// One update over the parameter list this optimizer was built for.
    /// Parameters without a gradient are treated as having gradient zero.
    pub fn step(&mut self, params: &[(String, Tensor<S>)]) {
        assert_eq!(params.len(), self.first.len(), "parameter list changed");
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = S::one() - self.beta1.powi(t);
        let bc2 = S::one() - self.beta2.powi(t);
        for (i, (_, p)) in params.iter().enumerate() {
            let grad = p.grad();
            let g_of = |j: usize| grad.as_ref().map_or(S::zero(), |g| g[j]);
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            let mut j = 0;
            p.update_data(|w| {
                let g = g_of(j);
                m[j] = self.beta1 * m[j] + (S::one() - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (S::one() - self.beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *w = *w - self.lr * m_hat / (v_hat.sqrt() + self.eps);
                j += 1;
            });
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Moment buffers in parameter order, for checkpointing.
    pub fn state(&self) -> (u64, &[Vec<S>], &[Vec<S>]) {
        (self.step_count, &self.first, &self.second)
    }

    pub fn restore(&mut self, step_count: u64, first: Vec<Vec<S>>, second: Vec<Vec<S>>) {
        assert_eq!(first.len(), self.first.len());
        assert_eq!(second.len(), self.second.len());
        self.step_count = step_count;
        self.first = first;
        self.second = second;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_moves_against_gradient() {
        let w = Tensor::parameter(vec![2], vec![1.0f64, -2.0]);
        let params = vec![("w".to_string(), w.clone())];
        let mut opt = Adam::new(0.1, 0.9, 0.999, &params);
        // loss = sum(w^2), grad = 2w
        w.mul(&w).sum_all().backward().unwrap();
        opt.step(&params);
        let d = w.data();
        // first Adam step moves by ~lr in the sign direction of the gradient
        assert!(d[0] < 1.0 && (1.0 - d[0] - 0.1).abs() < 1e-6);
        assert!(d[1] > -2.0 && (d[1] + 2.0 - 0.1).abs() < 1e-6);
    }

    #[test]
    fn missing_grad_decays_moments_only() {
        let w = Tensor::parameter(vec![1], vec![0.5f64]);
        let params = vec![("w".to_string(), w.clone())];
        let mut opt = Adam::new(0.1, 0.9, 0.999, &params);
        opt.step(&params);
        assert_eq!(w.data()[0], 0.5); // zero gradient, zero moments: no move
    }
}
