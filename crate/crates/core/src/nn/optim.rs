use crate::error::{Error, Result};

use super::NetworkParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    SgdMomentum { lr: f64, momentum: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn sgd(lr: f64, momentum: f64) -> Self {
        OptimizerKind::SgdMomentum { lr, momentum }
    }

    /// Adam with (β₁, β₂, ε) = (0.9, 0.999, 1e-8).
    pub fn adam(lr: f64) -> Self {
        OptimizerKind::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter optimizer buffers. For SGD only `first` is used (velocity).
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub steps: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, num_params: usize) -> Self {
        let second = match kind {
            OptimizerKind::Adam { .. } => vec![0.0; num_params],
            OptimizerKind::SgdMomentum { .. } => Vec::new(),
        };
        OptimizerState {
            kind,
            first: vec![0.0; num_params],
            second,
            steps: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }

    /// One update of `params` from `grad`. A pure function of
    /// (params, grad, state).
    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.first.len() || grad.len() != self.first.len() {
            return Err(Error::Contract(format!(
                "optimizer sized for {} parameters, got {} params / {} grads",
                self.first.len(),
                params.len(),
                grad.len()
            )));
        }
        self.steps += 1;
        match self.kind {
            OptimizerKind::SgdMomentum { lr, momentum } => {
                for ((p, v), g) in params.iter_mut().zip(&mut self.first).zip(grad) {
                    *v = momentum * *v + g;
                    *p -= lr * *v;
                }
            }
            OptimizerKind::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (((p, m), v), g) in params
                    .iter_mut()
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                    .zip(grad)
                {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

/// Applies the pending gradient of `net` and clears it.
pub fn step(opt: &mut OptimizerState, net: &mut NetworkParams) -> Result<()> {
    let grad = net
        .take_grad()
        .ok_or_else(|| Error::Contract(format!("{} has no pending gradient", net.role())))?;
    opt.update(net.flatten_mut(), &grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, LayerSpec, NetworkRole};

    fn tiny() -> NetworkParams {
        NetworkParams::new(
            NetworkRole::Critic,
            vec![LayerSpec {
                in_dim: 1,
                out_dim: 1,
                activation: Activation::Linear,
            }],
        )
        .unwrap()
    }

    #[test]
    fn sgd_first_and_second_step() {
        let mut net = tiny();
        let mut opt = OptimizerState::new(OptimizerKind::sgd(0.001, 0.9), net.num_params());
        net.accumulate_grad(&[1.0, 1.0]).unwrap();
        step(&mut opt, &mut net).unwrap();
        assert!((net.flatten()[0] + 0.001).abs() < 1e-15);
        net.accumulate_grad(&[1.0, 1.0]).unwrap();
        let before = net.flatten()[0];
        step(&mut opt, &mut net).unwrap();
        assert!((net.flatten()[0] - before + 0.0019).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_learning_rate() {
        let mut p = vec![0.3, -2.0, 5.0];
        let mut opt = OptimizerState::new(OptimizerKind::adam(1e-3), 3);
        opt.update(&mut p, &[0.7, 0.7, 0.7]).unwrap();
        // bias-corrected m̂ = g, v̂ = g²: step = lr·g/(|g|+ε)
        let expect = 1e-3 * 0.7 / (0.7 + 1e-8);
        assert!((0.3 - p[0] - expect).abs() < 1e-15);
        assert!((-2.0 - p[1] - expect).abs() < 1e-15);
    }

    #[test]
    fn missing_grad_is_contract_error() {
        let mut net = tiny();
        let mut opt = OptimizerState::new(OptimizerKind::adam(1e-3), net.num_params());
        assert!(matches!(step(&mut opt, &mut net), Err(Error::Contract(_))));
        net.accumulate_grad(&[0.1, 0.2]).unwrap();
        step(&mut opt, &mut net).unwrap();
        assert!(net.grad().is_none());
    }

    #[test]
    fn replay_is_bit_identical() {
        let run = || {
            let mut p = vec![0.1, 0.2, 0.3];
            let mut opt = OptimizerState::new(OptimizerKind::adam(1e-2), 3);
            for k in 0..20 {
                let g: Vec<f64> = p.iter().map(|x| x * (k as f64).sin() + 0.01).collect();
                opt.update(&mut p, &g).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }
}
