use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adam moment state. beta1=0.9, beta2=0.999, eps=1e-8 unless overridden.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(param_count: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            step_count: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grad: &[f64]) -> Result<()> {
    if params.len() != state.m.len() || grad.len() != state.m.len() {
        return Err(Error::ShapeMismatch(format!(
            "adam state {} vs params {} vs grad {}",
            state.m.len(),
            params.len(),
            grad.len()
        )));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grad[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_is_signed_lr() {
        let mut state = AdamState::new(3, 0.01);
        let mut params = vec![1.0, -0.5, 2.0];
        let before = params.clone();
        let grad = vec![0.5, -2.0, 0.05];
        adam_step(&mut state, &mut params, &grad).unwrap();
        for i in 0..3 {
            let update = params[i] - before[i];
            let expected = -0.01 * grad[i].signum();
            assert!(
                (update - expected).abs() < 1e-6 * 0.01,
                "update {update} vs {expected}"
            );
        }
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut state = AdamState::new(4, 0.1);
        let mut params = vec![1.0, 2.0, 3.0, 4.0];
        let before = params.clone();
        adam_step(&mut state, &mut params, &[0.0; 4]).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn quadratic_converges_like_scalar_oracle() {
        // Oracle: the same recursion written out independently on a scalar.
        let (lr, b1, b2, eps) = (0.1, 0.9, 0.999, 1e-8);
        let mut theta_oracle = 1.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for t in 1..=100 {
            let g = 2.0 * theta_oracle;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            theta_oracle -= lr * mh / (vh.sqrt() + eps);
        }

        let mut state = AdamState::new(1, lr);
        let mut params = vec![1.0];
        for _ in 0..100 {
            let g = vec![2.0 * params[0]];
            adam_step(&mut state, &mut params, &g).unwrap();
        }
        assert!((params[0] - theta_oracle).abs() < 1e-12);
        assert!(params[0].abs() < 0.1, "theta {}", params[0]);
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        let mut state = AdamState::new(2, 0.1);
        let mut params = vec![0.0; 3];
        assert!(adam_step(&mut state, &mut params, &[0.0; 3]).is_err());
    }
}
