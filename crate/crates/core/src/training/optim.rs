//! SGD with momentum (L2 decay folded into the gradient) and AdamW
//! (decoupled decay).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numkernel::Tensor2;

pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("non-finite gradient in tensor {tensor}; step skipped")]
    NonFiniteGradient { tensor: usize },
    #[error("optimizer state does not match parameters: {0}")]
    StateMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Sgd { lr: f64, momentum: f64 },
    #[serde(rename = "adamw")]
    AdamW { lr: f64, beta1: f64, beta2: f64 },
}

impl OptimizerConfig {
    pub fn adamw(lr: f64) -> Self {
        OptimizerConfig::AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
        }
    }

    pub fn sgd(lr: f64, momentum: f64) -> Self {
        OptimizerConfig::Sgd { lr, momentum }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Sgd { lr, .. } | OptimizerConfig::AdamW { lr, .. } => lr,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            OptimizerConfig::Sgd { lr, momentum } => format!("sgd(lr={lr},m={momentum})"),
            OptimizerConfig::AdamW { lr, beta1, beta2 } => {
                format!("adamw(lr={lr},b=({beta1},{beta2}))")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor2>,
    pub v: Vec<Tensor2>,
    pub t: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OptimState {
    Sgd { velocity: Vec<Tensor2> },
    AdamW(AdamState),
}

fn zeros_like(params: &[Tensor2]) -> Vec<Tensor2> {
    params.iter().map(|p| Tensor2::zeros(p.rows(), p.cols())).collect()
}

impl OptimState {
    pub fn new(config: &OptimizerConfig, params: &[Tensor2]) -> Self {
        match config {
            OptimizerConfig::Sgd { .. } => OptimState::Sgd {
                velocity: zeros_like(params),
            },
            OptimizerConfig::AdamW { .. } => OptimState::AdamW(AdamState {
                m: zeros_like(params),
                v: zeros_like(params),
                t: 0,
            }),
        }
    }

    /// Applies one update with the given learning rate, which overrides the
    /// base rate stored in `config`.
    pub fn step(
        &mut self,
        config: &OptimizerConfig,
        params: &mut [Tensor2],
        grads: &[Tensor2],
        lr: f64,
        weight_decay: f64,
    ) -> Result<(), OptimError> {
        match (self, config) {
            (OptimState::Sgd { velocity }, OptimizerConfig::Sgd { momentum, .. }) => {
                sgd_step(params, grads, lr, *momentum, weight_decay, velocity)
            }
            (OptimState::AdamW(state), OptimizerConfig::AdamW { beta1, beta2, .. }) => {
                adamw_step(params, grads, lr, (*beta1, *beta2), weight_decay, state)
            }
            _ => Err(OptimError::StateMismatch(
                "optimizer state built for a different optimizer".into(),
            )),
        }
    }
}

fn check(params: &[Tensor2], grads: &[Tensor2], state: &[Tensor2]) -> Result<(), OptimError> {
    if params.len() != grads.len() || params.len() != state.len() {
        return Err(OptimError::StateMismatch(format!(
            "{} params, {} grads, {} state buffers",
            params.len(),
            grads.len(),
            state.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(OptimError::StateMismatch(format!(
                "tensor {i}: param {:?} vs grad {:?}",
                p.shape(),
                g.shape()
            )));
        }
        if !g.is_finite() {
            return Err(OptimError::NonFiniteGradient { tensor: i });
        }
    }
    Ok(())
}

/// `v ← μ·v + g + λ·p`, then `p ← p − lr·v`.
pub fn sgd_step(
    params: &mut [Tensor2],
    grads: &[Tensor2],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
    velocity: &mut [Tensor2],
) -> Result<(), OptimError> {
    check(params, grads, velocity)?;
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        for ((pi, gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vi = momentum * *vi + gi + weight_decay * *pi;
            *pi -= lr * *vi;
        }
    }
    Ok(())
}

/// Bias-corrected Adam moments with decoupled weight decay:
/// `p ← p − lr·(m̂ / (√v̂ + ε) + λ·p)`.
pub fn adamw_step(
    params: &mut [Tensor2],
    grads: &[Tensor2],
    lr: f64,
    betas: (f64, f64),
    weight_decay: f64,
    state: &mut AdamState,
) -> Result<(), OptimError> {
    check(params, grads, &state.m)?;
    check(params, grads, &state.v)?;
    let (b1, b2) = betas;
    state.t += 1;
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        let iter = p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut());
        for (((pi, &gi), mi), vi) in iter {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *pi -= lr * (m_hat / (v_hat.sqrt() + ADAM_EPS) + weight_decay * *pi);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Vec<Tensor2> {
        vec![Tensor2::from_vec(1, 1, vec![v])]
    }

    #[test]
    fn vanilla_sgd() {
        let mut p = vec![Tensor2::row_vector(vec![1.0, -2.0])];
        let g = vec![Tensor2::row_vector(vec![0.5, 0.25])];
        let mut v = vec![Tensor2::zeros(1, 2)];
        sgd_step(&mut p, &g, 0.1, 0.0, 0.0, &mut v).unwrap();
        assert_eq!(p[0].data(), &[1.0 - 0.05, -2.0 - 0.025]);
    }

    #[test]
    fn sgd_quadratic_three_steps() {
        // f = p²/2, g = p, p_{t+1} = 0.9 p_t
        let mut p = scalar(1.0);
        let mut v = scalar(0.0);
        for _ in 0..3 {
            let g = p.clone();
            sgd_step(&mut p, &g, 0.1, 0.0, 0.0, &mut v).unwrap();
        }
        assert!((p[0].data()[0] - 0.729).abs() < 1e-12);
    }

    #[test]
    fn sgd_momentum_two_step_hand_trace() {
        // g = p; v1 = 1, p1 = 0.9; v2 = 0.9 + 0.9 = 1.8, p2 = 0.9 - 0.18 = 0.72
        let mut p = scalar(1.0);
        let mut v = scalar(0.0);
        for _ in 0..2 {
            let g = p.clone();
            sgd_step(&mut p, &g, 0.1, 0.9, 0.0, &mut v).unwrap();
        }
        assert!((v[0].data()[0] - 1.8).abs() < 1e-12);
        assert!((p[0].data()[0] - 0.72).abs() < 1e-12);
    }

    #[test]
    fn adamw_first_step() {
        let mut p = scalar(0.0);
        let mut st = AdamState {
            m: scalar(0.0),
            v: scalar(0.0),
            t: 0,
        };
        adamw_step(&mut p, &scalar(1.0), 1e-3, (0.9, 0.999), 0.0, &mut st).unwrap();
        assert!((p[0].data()[0] + 1e-3 / (1.0 + 1e-8)).abs() < 1e-15);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn adamw_zero_grad_and_decay() {
        let mut p = scalar(2.0);
        let mut st = AdamState {
            m: scalar(0.0),
            v: scalar(0.0),
            t: 0,
        };
        for _ in 0..5 {
            adamw_step(&mut p, &scalar(0.0), 1e-2, (0.9, 0.999), 0.0, &mut st).unwrap();
        }
        assert_eq!(p[0].data()[0], 2.0);
        let mut expected = 2.0;
        for _ in 0..5 {
            adamw_step(&mut p, &scalar(0.0), 1e-2, (0.9, 0.999), 1e-1, &mut st).unwrap();
            expected *= 1.0 - 1e-2 * 1e-1;
        }
        assert!((p[0].data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_leaves_params_untouched() {
        let mut p = scalar(1.0);
        let mut v = scalar(0.0);
        let err = sgd_step(&mut p, &scalar(f64::NAN), 0.1, 0.0, 0.0, &mut v).unwrap_err();
        assert_eq!(err, OptimError::NonFiniteGradient { tensor: 0 });
        assert_eq!(p[0].data()[0], 1.0);
    }
}
