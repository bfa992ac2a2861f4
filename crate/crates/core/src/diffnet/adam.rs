use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update. `grads` must list tensors in the same order and with the
    /// same lengths as `params`.
    pub fn step<P: ParamStore, G: ParamStore>(&mut self, params: &mut P, grads: &G) -> Result<()> {
        let grad_tensors = grads.tensors();
        let mut param_tensors = params.tensors_mut();
        if grad_tensors.len() != param_tensors.len() {
            return Err(Error::Shape {
                context: "adam tensor count",
                expected: param_tensors.len(),
                actual: grad_tensors.len(),
            });
        }
        if self.first.is_empty() {
            self.first = param_tensors
                .iter()
                .map(|(_, t)| vec![0.0; t.len()])
                .collect();
            self.second = self.first.clone();
        }
        for (i, ((_, p), (_, g))) in param_tensors.iter().zip(&grad_tensors).enumerate() {
            if p.len() != g.len() || self.first[i].len() != p.len() {
                return Err(Error::Shape {
                    context: "adam tensor length",
                    expected: p.len(),
                    actual: g.len(),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let correction1 = 1.0 - self.beta1.powi(t);
        let correction2 = 1.0 - self.beta2.powi(t);
        for (i, (_, p)) in param_tensors.iter_mut().enumerate() {
            let g = grad_tensors[i].1;
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            for k in 0..p.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let m_hat = m[k] / correction1;
                let v_hat = v[k] / correction2;
                p[k] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
