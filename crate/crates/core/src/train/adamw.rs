//! AdamW: bias-corrected Adam moments with decoupled weight decay applied
//! directly to the parameters, skipping LN parameters and biases.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::params::ParamSet;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub base_lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            base_lr: 1e-4,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates mirroring the parameter set, plus the
/// update counter.
#[derive(Debug, Clone)]
pub struct OptimState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: usize,
}

impl OptimState {
    pub fn new(pset: &ParamSet) -> Self {
        OptimState {
            m: pset.zero_grads(),
            v: pset.zero_grads(),
            step: 0,
        }
    }
}

/// One AdamW update at learning rate `lr`. Weight decay shrinks decayed
/// parameters by `lr * wd` independently of the gradient-based update.
pub fn adamw_step(
    pset: &mut ParamSet,
    grads: &[Tensor],
    opt: &mut OptimState,
    cfg: &AdamWConfig,
    lr: f64,
) -> Result<()> {
    assert_eq!(grads.len(), pset.len(), "gradient count mismatch");
    opt.step += 1;
    let t = opt.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);

    for pid in 0..pset.len() {
        let g = &grads[pid];
        if !g.is_finite() {
            return Err(Error::NonFiniteGrad {
                name: pset.entry(pid).name.clone(),
            });
        }
        let decay = pset.entry(pid).decay;
        let m = opt.m[pid].data_mut();
        let v = opt.v[pid].data_mut();
        let p = pset.get_mut(pid).data_mut();
        for i in 0..p.len() {
            let gi = g.data()[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            p[i] -= lr * mhat / (vhat.sqrt() + cfg.eps);
            if decay {
                p[i] -= lr * cfg.weight_decay * p[i];
            }
        }
    }
    Ok(())
}
