//! Adam with bias-corrected moment estimates.

use serde::{Deserialize, Serialize};

use crate::error::{GlaError, Result};
use crate::matrix::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    first: Vec<Matrix>,
    second: Vec<Matrix>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Matrix>) -> Self {
        let (first, second) = params
            .into_iter()
            .map(|p| (Matrix::zeros(p.rows(), p.cols()), Matrix::zeros(p.rows(), p.cols())))
            .unzip();
        Self {
            first,
            second,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

pub fn adam_step(params: &mut [&mut Matrix], grads: &[Matrix], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(GlaError::Shape {
            op: "adam_step",
            left: (params.len(), state.first.len()),
            right: (grads.len(), 1),
        });
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.first) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(GlaError::Shape {
                op: "adam_step",
                left: p.shape(),
                right: g.shape(),
            });
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (k, p) in params.iter_mut().enumerate() {
        let g = grads[k].as_slice();
        let m = state.first[k].as_mut_slice();
        let v = state.second[k].as_mut_slice();
        for (i, w) in p.as_mut_slice().iter_mut().enumerate() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Matrix::from_rows(&[[1.0, -2.0]]);
        let before = p.clone();
        let mut st = AdamState::new([&p]);
        adam_step(&mut [&mut p], &[Matrix::zeros(1, 2)], &mut st, 0.1).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Matrix::from_rows(&[[0.0, 0.0, 0.0]]);
        let g = Matrix::from_rows(&[[3.0, -0.5, 1e-3]]);
        let mut st = AdamState::new([&p]);
        adam_step(&mut [&mut p], &[g], &mut st, 0.01).unwrap();
        // m̂ = g and v̂ = g², so each step is lr·g/(|g| + ε).
        for (w, gv) in p.as_slice().iter().zip([3.0f64, -0.5, 1e-3]) {
            let expected = -0.01 * gv / (gv.abs() + 1e-8);
            assert!((w - expected).abs() < 1e-15, "{w} vs {expected}");
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut p = Matrix::zeros(2, 2);
        let mut st = AdamState::new([&p]);
        assert!(adam_step(&mut [&mut p], &[Matrix::zeros(1, 2)], &mut st, 0.1).is_err());
    }
}
