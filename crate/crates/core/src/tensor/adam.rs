use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for one parameter group.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step_count: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl AdamState {
    /// Zeroed moments matching the given parameter shapes.
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let first_moment: Vec<Tensor> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        let second_moment = first_moment.clone();
        AdamState {
            config,
            step_count: 0,
            first_moment,
            second_moment,
        }
    }

    /// One bias-corrected Adam update. A missing gradient counts as zero.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Option<&Tensor>]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::Shape {
                op: "adam_step",
                shapes: vec![
                    vec![params.len()],
                    vec![grads.len()],
                    vec![self.first_moment.len()],
                ],
            });
        }
        for (i, p) in params.iter().enumerate() {
            let m = self.first_moment[i].shape();
            let g_ok = grads[i].is_none_or(|g| g.shape() == p.shape());
            if p.shape() != m || !g_ok {
                return Err(Error::Shape {
                    op: "adam_step",
                    shapes: vec![
                        p.shape().to_vec(),
                        grads[i].map_or(vec![], |g| g.shape().to_vec()),
                        m.to_vec(),
                    ],
                });
            }
        }
        self.step_count += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            let pd = p.data_mut();
            for k in 0..pd.len() {
                let g = grads[i].map_or(0.0, |g| g.data()[k]);
                m[k] = beta1 * m[k] + (1.0 - beta1) * g;
                v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                pd[k] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
