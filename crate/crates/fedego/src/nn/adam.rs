//! Adam optimizer with bias correction.

use serde::{Deserialize, Serialize};

use super::params::ParamTensors;
use crate::error::{Error, Result};

/// First/second moment accumulators, shape-congruent with the parameter set
/// they optimize.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &impl ParamTensors, learning_rate: f64) -> AdamState {
        let sizes: Vec<usize> = params.tensors().iter().map(|t| t.data.len()).collect();
        AdamState {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one Adam update. Moments accumulate even when the learning rate
    /// is zero.
    pub fn step(&mut self, params: &mut impl ParamTensors, grads: &impl ParamTensors) -> Result<()> {
        let mut p = params.tensors_mut();
        let g = grads.tensors();
        if p.len() != self.m.len() || g.len() != self.m.len() {
            return Err(Error::dim("adam tensors", self.m.len(), p.len().max(g.len())));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((pt, gt), (m, v)) in p
            .iter_mut()
            .zip(g.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if pt.data.len() != gt.data.len() || pt.data.len() != m.len() {
                return Err(Error::dim(
                    &format!("adam tensor {}", pt.name),
                    m.len(),
                    pt.data.len().max(gt.data.len()),
                ));
            }
            for i in 0..m.len() {
                let grad = gt.data[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad * grad;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                pt.data[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::{ModelDims, ModelParams, ParamTensors};
    use crate::nn::Activation;
    use crate::rng::derive_stream;

    fn model() -> ModelParams {
        let dims = ModelDims {
            feature_dim: 3,
            reduction_layers: 1,
            reduction_dim: 2,
            hidden_dim: 2,
            num_classes: 2,
            hops: 1,
        };
        let mut rng = derive_stream(8, "init", 0);
        ModelParams::init(&dims, Activation::Relu, Activation::Relu, &mut rng)
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut m = model();
        let before = m.clone();
        let grads = m.zeros_like();
        let mut adam = AdamState::new(&m, 0.01);
        adam.step(&mut m, &grads).unwrap();
        assert_eq!(m, before);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With g = 1 the bias-corrected ratio m_hat / sqrt(v_hat) is 1, so the
        // first step decreases the parameter by about the learning rate.
        let mut m = model();
        let before: Vec<f64> = m.tensors()[0].data.to_vec();
        let mut grads = m.zeros_like();
        for t in grads.tensors_mut() {
            for g in t.data.iter_mut() {
                *g = 1.0;
            }
        }
        let mut adam = AdamState::new(&m, 0.01);
        adam.step(&mut m, &grads).unwrap();
        for (a, b) in m.tensors()[0].data.iter().zip(&before) {
            assert!((b - a - 0.01).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_learning_rate_accumulates_moments() {
        let mut m = model();
        let before = m.clone();
        let mut grads = m.zeros_like();
        for t in grads.tensors_mut() {
            for g in t.data.iter_mut() {
                *g = 0.5;
            }
        }
        let mut adam = AdamState::new(&m, 0.0);
        adam.step(&mut m, &grads).unwrap();
        assert_eq!(m, before);
        assert!(adam.m[0].iter().all(|&v| v != 0.0));
    }
}
