use serde::{Deserialize, Serialize};

use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    /// Plain gradient descent.
    Sgd,
    /// First/second moment recursion with bias correction
    /// (beta1 0.9, beta2 0.999, eps 1e-8).
    #[default]
    Adam,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    kind: OptimizerKind,
    step: i32,
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(kind: OptimizerKind, num_params: usize) -> Self {
        let moments = if kind == OptimizerKind::Adam { num_params } else { 0 };
        Self { kind, step: 0, m: vec![T::zero(); moments], v: vec![T::zero(); moments] }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    pub fn step(&mut self, params: &mut [T], grads: &[T], lr: T) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient length mismatch");
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, &g) in params.iter_mut().zip(grads) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                assert_eq!(self.m.len(), params.len(), "optimizer built for a different model");
                let (b1, b2) = (T::lit(BETA1), T::lit(BETA2));
                let c1 = T::one() - b1.powi(self.step);
                let c2 = T::one() - b2.powi(self.step);
                let eps = T::lit(ADAM_EPS);
                for i in 0..params.len() {
                    let g = grads[i];
                    self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
                    self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
                    let mh = self.m[i] / c1;
                    let vh = self.v[i] / c2;
                    params[i] -= lr * mh / (vh.sqrt() + eps);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step() {
        let mut p = vec![1.0, -2.0];
        OptimizerState::new(OptimizerKind::Sgd, 2).step(&mut p, &[0.5, -1.0], 0.1);
        assert_eq!(p, vec![0.95, -1.9]);
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let mut p = vec![1.0f64, -2.0, 0.0];
        let mut opt = OptimizerState::new(OptimizerKind::Adam, 3);
        opt.step(&mut p, &[3.0, -0.01, 0.0], 0.1);
        assert!((p[0] - 0.9).abs() < 1e-7);
        assert!((p[1] + 1.9).abs() < 1e-5);
        assert_eq!(p[2], 0.0);
    }

    #[test]
    fn adam_matches_reference_recursion() {
        let grads = [[0.3, -1.0], [0.1, 0.4], [-0.2, 0.2]];
        let mut p = vec![0.5f64, 0.5];
        let mut opt = OptimizerState::new(OptimizerKind::Adam, 2);
        let (mut m, mut v, mut q) = ([0.0f64; 2], [0.0f64; 2], [0.5f64; 2]);
        for (t, g) in grads.iter().enumerate() {
            opt.step(&mut p, g, 0.01);
            for i in 0..2 {
                m[i] = 0.9 * m[i] + 0.1 * g[i];
                v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
                let mh = m[i] / (1.0 - 0.9f64.powi(t as i32 + 1));
                let vh = v[i] / (1.0 - 0.999f64.powi(t as i32 + 1));
                q[i] -= 0.01 * mh / (vh.sqrt() + 1e-8);
            }
        }
        assert!((p[0] - q[0]).abs() < 1e-15 && (p[1] - q[1]).abs() < 1e-15);
    }
}
