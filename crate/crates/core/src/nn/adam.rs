use super::{Grads, MlpParams, TrainConfig};
use crate::error::{Error, Result};

/// Adam moments for one network.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(params: &MlpParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update. Non-finite gradients leave both the
    /// parameters and the moments untouched.
    pub fn step(&mut self, params: &mut MlpParams, grads: &Grads, cfg: &TrainConfig) -> Result<()> {
        if grads.tensors.len() != params.tensors.len() {
            return Err(Error::Shape("gradient buffer does not match parameters".into()));
        }
        if !grads.all_finite() {
            return Err(Error::NanGrad(format!("adam step {}", self.t + 1)));
        }
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for (i, tensor) in params.tensors.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &grads.tensors[i]);
            for j in 0..tensor.data.len() {
                let gj = g[j] + cfg.weight_decay * tensor.data[j];
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                tensor.data[j] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
            }
        }
        if !params.all_finite() {
            return Err(Error::NanGrad(format!("parameters became non-finite at adam step {}", self.t)));
        }
        Ok(())
    }
}

/// Free-function form of [`Adam::step`]; the step index lives in `state`.
pub fn adam_step(params: &mut MlpParams, grads: &Grads, cfg: &TrainConfig, state: &mut Adam) -> Result<()> {
    state.step(params, grads, cfg)
}
