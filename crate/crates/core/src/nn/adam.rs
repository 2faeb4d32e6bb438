//! Adam with bias correction over flat parameter slices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        AdamHyper {
            lr,
            ..AdamHyper::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub hyper: AdamHyper,
}

impl AdamState {
    pub fn new(n_params: usize, hyper: AdamHyper) -> Self {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            hyper,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update step in place. First and second moment estimates are
    /// bias-corrected by `1 - beta^t`.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(format!(
                "adam state sized for {} params, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let AdamHyper {
            lr,
            beta1,
            beta2,
            eps,
        } = self.hyper;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_matches_closed_form() {
        // With zeroed moments, g = 1 and t = 1 the bias corrections cancel
        // exactly: mhat = 1, vhat = 1, so theta moves by -lr / (1 + eps).
        let hyper = AdamHyper::with_lr(1e-3);
        let mut st = AdamState::new(1, hyper);
        let mut p = vec![0.0];
        st.update(&mut p, &[1.0]).unwrap();
        let expect = -1e-3 / (1.0 + 1e-8);
        assert!(
            (p[0] - expect).abs() < 1e-18,
            "got {}, closed form {}",
            p[0],
            expect
        );
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut st = AdamState::new(3, AdamHyper::with_lr(0.0));
        let mut p = vec![0.4, -0.7, 2.0];
        let before = p.clone();
        for _ in 0..5 {
            st.update(&mut p, &[1.0, -2.0, 0.5]).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(st.step_count(), 5);
    }

    #[test]
    fn invariant_direction_and_magnitude() {
        // each coordinate moves opposite its gradient and at most ~lr in
        // magnitude once vhat is saturated with a constant gradient
        let mut st = AdamState::new(2, AdamHyper::with_lr(1e-2));
        let mut p = vec![0.0, 0.0];
        for _ in 0..200 {
            st.update(&mut p, &[3.0, -0.25]).unwrap();
        }
        assert!(p[0] < 0.0 && p[1] > 0.0);
    }

    #[test]
    fn mismatched_sizes_error() {
        let mut st = AdamState::new(2, AdamHyper::default());
        let mut p = vec![0.0; 3];
        assert!(st.update(&mut p, &[0.0; 3]).is_err());
    }
}
