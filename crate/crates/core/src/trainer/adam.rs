use crate::matrix::Matrix;
use crate::Real;

pub const BETA1: Real = 0.9;
pub const BETA2: Real = 0.999;
pub const EPSILON: Real = 1e-8;

/// First and second moment estimates for a list of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub step: u64,
    pub beta1: Real,
    pub beta2: Real,
    pub eps: Real,
}

impl AdamState {
    pub fn new<'m>(params: impl IntoIterator<Item = &'m Matrix>) -> Self {
        let (m, v) = params
            .into_iter()
            .map(|p| (Matrix::zeros(p.rows(), p.cols()), Matrix::zeros(p.rows(), p.cols())))
            .unzip();
        AdamState {
            m,
            v,
            step: 0,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
        }
    }
}

/// One bias-corrected Adam update. Weight decay enters as the ℓ2 gradient
/// term `g + λθ`.
pub fn adam_step(params: &mut [&mut Matrix], grads: &[&Matrix], state: &mut AdamState, lr: Real, weight_decay: Real) {
    assert_eq!(params.len(), grads.len(), "one gradient per parameter");
    assert_eq!(params.len(), state.m.len(), "state built for a different parameter list");
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        assert_eq!(p.shape(), g.shape(), "gradient shape for parameter {k}");
        let m = state.m[k].data_mut();
        let v = state.v[k].data_mut();
        for (((theta, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            let gi = gi + weight_decay * *theta;
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *theta -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_no_decay_is_a_no_op() {
        let mut p = Matrix::from_rows(&[[1.0, -2.0]]);
        let before = p.clone();
        let g = Matrix::zeros(1, 2);
        let mut s = AdamState::new([&p]);
        adam_step(&mut [&mut p], &[&g], &mut s, 0.1, 0.0);
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr_against_the_sign() {
        let mut p = Matrix::from_rows(&[[1.0, 1.0, 1.0]]);
        let g = Matrix::from_rows(&[[0.3, -5.0, 1e-3]]);
        let mut s = AdamState::new([&p]);
        adam_step(&mut [&mut p], &[&g], &mut s, 0.01, 0.0);
        for (x, gi) in p.data().iter().zip(g.data()) {
            let expected = 1.0 - 0.01 * gi.signum();
            assert!((x - expected).abs() < 1e-7, "{x} vs {expected}");
        }
    }

    #[test]
    fn identical_state_identical_result() {
        let g = Matrix::from_rows(&[[0.5, -0.25]]);
        let run = || {
            let mut p = Matrix::from_rows(&[[0.1, 0.2]]);
            let mut s = AdamState::new([&p]);
            for _ in 0..3 {
                adam_step(&mut [&mut p], &[&g], &mut s, 0.05, 1e-3);
            }
            (p, s)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn decay_alone_shrinks_weights() {
        let mut p = Matrix::from_rows(&[[2.0, -3.0]]);
        let g = Matrix::zeros(1, 2);
        let mut s = AdamState::new([&p]);
        adam_step(&mut [&mut p], &[&g], &mut s, 0.1, 0.5);
        assert!(p.get(0, 0) < 2.0 && p.get(0, 1) > -3.0);
    }
}
