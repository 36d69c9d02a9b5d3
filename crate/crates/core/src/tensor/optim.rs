use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segnet::ParamSet;

/// SGD-with-momentum state plus the polynomial schedule it runs under.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OptimState {
    #[serde(skip)]
    pub momentum_buffers: Vec<Vec<f64>>,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub power: f64,
    pub max_iter: usize,
}

impl OptimState {
    pub fn new(base_lr: f64, momentum: f64, weight_decay: f64, power: f64, max_iter: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::config(format!("momentum {momentum} is outside [0, 1]")));
        }
        if weight_decay < 0.0 {
            return Err(Error::config(format!("weight decay {weight_decay} is negative")));
        }
        if max_iter == 0 {
            return Err(Error::config("max_iter must be positive"));
        }
        Ok(OptimState {
            momentum_buffers: Vec::new(),
            base_lr,
            momentum,
            weight_decay,
            power,
            max_iter,
        })
    }
}

/// Learning rate `base_lr * (1 - iter / max_iter)^power`, zero past the end.
pub fn poly_lr(iter: usize, state: &OptimState) -> f64 {
    if iter >= state.max_iter {
        return 0.0;
    }
    let frac = 1.0 - iter as f64 / state.max_iter as f64;
    state.base_lr * frac.powf(state.power)
}

/// One momentum SGD step with L2 weight decay:
/// `v <- m v + (g + wd theta)`, `theta <- theta - lr v`.
///
/// Every parameter must carry a gradient.
pub fn sgd_step(params: &mut ParamSet, state: &mut OptimState, lr: f64) -> Result<()> {
    if let Some(missing) = params.iter().find(|p| p.grad().is_none()) {
        return Err(Error::contract(format!(
            "sgd_step: parameter '{}' has no gradient",
            missing.name()
        )));
    }
    if state.momentum_buffers.is_empty() {
        state.momentum_buffers = params.iter().map(|p| vec![0.0; p.value().len()]).collect();
    }
    if state.momentum_buffers.len() != params.len()
        || state
            .momentum_buffers
            .iter()
            .zip(params.iter())
            .any(|(b, p)| b.len() != p.value().len())
    {
        return Err(Error::shape("momentum buffers do not mirror the parameter set"));
    }
    let (m, wd) = (state.momentum, state.weight_decay);
    for (param, buf) in params.iter_mut().zip(&mut state.momentum_buffers) {
        let (value, grad) = param.value_and_grad_mut();
        let grad = grad.expect("checked above");
        for ((theta, v), g) in value.data_mut().iter_mut().zip(buf.iter_mut()).zip(grad) {
            *v = m * *v + (g + wd * *theta);
            *theta -= lr * *v;
        }
    }
    Ok(())
}
