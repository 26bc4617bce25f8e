use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::layers::Parameters;

/// Adam moment estimates over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One bias-corrected Adam update of `theta` in place.
    pub fn update(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        if theta.len() != self.len() || grad.len() != self.len() {
            return Err(Error::DimensionMismatch {
                op: "adam_step",
                expected: (self.len(), 1),
                found: (theta.len().max(grad.len()), 1),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - libm::pow(self.beta1, t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, t as f64);
        let (b1, b2) = (self.beta1, self.beta2);
        for i in 0..theta.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            theta[i] -= lr * m_hat / (libm::sqrt(v_hat) + self.eps);
        }
        Ok(())
    }
}

/// Adam update of any parameter container from a congruent gradient.
pub fn adam_step<P: Parameters + ?Sized, G: Parameters + ?Sized>(
    params: &mut P,
    grads: &G,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    let mut theta = params.to_flat();
    state.update(&mut theta, &grads.to_flat(), lr)?;
    params.set_flat(&theta);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = AdamState::new(3, 0.9, 0.999, 1e-8);
        let mut th = [1.0, -2.0, 3.0];
        s.update(&mut th, &[0.0; 3], 0.1).unwrap();
        assert_eq!(th, [1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_is_sign_like() {
        let mut s = AdamState::new(3, 0.9, 0.999, 1e-8);
        let g = [0.5, -3.0, 1e-3];
        let mut th = [0.0; 3];
        s.update(&mut th, &g, 0.01).unwrap();
        for (t, gi) in th.iter().zip(g) {
            let want = -0.01 * gi / (gi.abs() + 1e-8);
            assert!((t - want).abs() < 1e-15, "{t} vs {want}");
        }
    }

    #[test]
    fn two_constant_steps_follow_recurrence() {
        let (b1, b2, eps, lr, g) = (0.9f64, 0.999f64, 1e-8, 0.05, 0.7f64);
        let mut s = AdamState::new(1, b1, b2, eps);
        let mut th = [1.0];
        s.update(&mut th, &[g], lr).unwrap();
        s.update(&mut th, &[g], lr).unwrap();
        let mut want = 1.0;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            want -= lr * mh / (vh.sqrt() + eps);
        }
        assert!((th[0] - want).abs() < 1e-15);
        assert_eq!(s.step, 2);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut s = AdamState::new(2, 0.9, 0.999, 1e-8);
        assert!(s.update(&mut [0.0; 3], &[0.0; 3], 0.1).is_err());
    }
}
