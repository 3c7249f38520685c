//! Adam with bias correction.

use std::collections::BTreeMap;

use super::params::ParamSet;
use super::tape::Gradients;
use super::tensor::Tensor;
use super::AutodiffError;

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update over every parameter; parameters without a gradient entry
    /// are treated as having zero gradient.
    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients) -> Result<(), AutodiffError> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let names: Vec<String> = params.names().map(str::to_string).collect();
        for name in names {
            let value = params.get_mut(&name)?;
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(&value.shape));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(&value.shape));
            let grad = grads.get(&name);
            if let Some(g) = grad {
                if g.shape != value.shape {
                    return Err(AutodiffError::Shape {
                        op: "adam_step",
                        detail: format!(
                            "gradient for '{}' has shape {:?}, parameter is {:?}",
                            name, g.shape, value.shape
                        ),
                    });
                }
            }
            for i in 0..value.data.len() {
                let g = grad.map_or(0.0, |g| g.data[i]);
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * g;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m.data[i] / bc1;
                let v_hat = v.data[i] / bc2;
                value.data[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
