use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::substrate::{ParamSet, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// Adam with bias correction. Moments live beside the parameter set they
/// were created for and are indexed the same way.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamSet<f32>) -> Self {
        let zeros = || params.iter().map(|(_, _, p)| Tensor::zeros(p.value.shape())).collect();
        Self {
            config,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Apply the accumulated gradients, then clear them.
    pub fn step(&mut self, params: &mut ParamSet<f32>) -> Result<()> {
        if self.m.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer holds {} moments for {} parameters",
                self.m.len(),
                params.len()
            )));
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powf(self.t as f64);
        let c2 = 1.0 - beta2.powf(self.t as f64);
        for ((p, m), v) in params.params_mut().zip(&mut self.m).zip(&mut self.v) {
            if p.trainable {
                let it = p.value.data_mut().iter_mut().zip(p.grad.data());
                for ((x, &g), (mi, vi)) in it.zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut())) {
                    let g = f64::from(g);
                    let mn = beta1 * f64::from(*mi) + (1.0 - beta1) * g;
                    let vn = beta2 * f64::from(*vi) + (1.0 - beta2) * g * g;
                    *mi = mn as f32;
                    *vi = vn as f32;
                    let update = lr * (mn / c1) / ((vn / c2).sqrt() + eps);
                    *x = (f64::from(*x) - update) as f32;
                }
            }
            p.zero_grad();
        }
        Ok(())
    }
}
