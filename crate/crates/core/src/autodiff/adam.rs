use super::params::ParamStore;
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates for every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        Self {
            m: params.zero_grads(),
            v: params.zero_grads(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut ParamStore, grads: &[Vec<f64>], state: &mut AdamState, lr: f64) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::shape(
            "adam_step",
            format!(
                "{} params, {} grads, {} moments",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    let ids: Vec<_> = params.ids().collect();
    for (i, id) in ids.into_iter().enumerate() {
        let p = params.get_mut(id).data_mut();
        let (g, m, v) = (&grads[i], &mut state.m[i], &mut state.v[i]);
        if g.len() != p.len() || m.len() != p.len() {
            return Err(Error::shape("adam_step", format!("parameter {i} size mismatch")));
        }
        for j in 0..p.len() {
            m[j] = BETA1 * m[j] + (1.0 - BETA1) * g[j];
            v[j] = BETA2 * v[j] + (1.0 - BETA2) * g[j] * g[j];
            let mh = m[j] / c1;
            let vh = v[j] / c2;
            p[j] -= lr * mh / (vh.sqrt() + EPSILON);
        }
    }
    Ok(())
}

/// Step-decay learning rate: `initial · factor^⌊epoch / step_epochs⌋`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub factor: f64,
    pub step_epochs: usize,
}

impl LrSchedule {
    /// 1e-3, ×0.2 every 100 epochs (250-epoch runs).
    pub const FULL: LrSchedule = LrSchedule {
        initial: 1e-3,
        factor: 0.2,
        step_epochs: 100,
    };

    /// The 250-epoch schedule compressed proportionally onto `epochs`.
    pub fn compressed(epochs: usize) -> Self {
        let step = ((epochs as f64) * 100.0 / 250.0).round().max(1.0) as usize;
        Self {
            step_epochs: step,
            ..Self::FULL
        }
    }

    pub fn rate(&self, epoch: usize) -> f64 {
        self.initial * self.factor.powi((epoch / self.step_epochs.max(1)) as i32)
    }
}

pub fn lr_schedule(epoch: usize) -> f64 {
    LrSchedule::FULL.rate(epoch)
}
