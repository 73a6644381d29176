use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// SGD with Nesterov momentum and lr-coupled L2 weight decay.
///
/// With `d = g + wd·θ`: `v ← m·v + d`, then `θ ← θ − lr·(d + m·v)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64, shapes: &[&[usize]]) -> Result<Self> {
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::Parameter(format!("learning rate must be > 0, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Parameter(format!("momentum must be in [0,1), got {momentum}")));
        }
        if !(weight_decay.is_finite() && weight_decay >= 0.0) {
            return Err(Error::Parameter(format!(
                "weight decay must be >= 0, got {weight_decay}"
            )));
        }
        Ok(OptimizerState {
            lr,
            momentum,
            weight_decay,
            velocity: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        })
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }
}

/// Applies one optimizer step in place. `names` labels parameters in error messages.
pub fn sgd_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    names: &[String],
    state: &mut OptimizerState,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(Error::Dimension(format!(
            "{} params, {} grads, {} velocity slots",
            params.len(),
            grads.len(),
            state.velocity.len()
        )));
    }
    for (i, g) in grads.iter().enumerate() {
        let name = names.get(i).map_or("?", String::as_str);
        if g.shape() != params[i].shape() || g.shape() != state.velocity[i].shape() {
            return Err(Error::Dimension(format!(
                "gradient for {name} has shape {:?}, parameter {:?}",
                g.shape(),
                params[i].shape()
            )));
        }
        if !g.is_finite() {
            return Err(Error::Training(format!("non-finite gradient for parameter {name}")));
        }
    }
    let (lr, m, wd) = (state.lr, state.momentum, state.weight_decay);
    for ((p, g), v) in params.iter_mut().zip(grads).zip(state.velocity.iter_mut()) {
        let n = p.len();
        let mut new_v = Vec::with_capacity(n);
        let mut new_p = Vec::with_capacity(n);
        for i in 0..n {
            let theta = p.data()[i];
            let d = g.data()[i] + wd * theta;
            let vel = m * v.data()[i] + d;
            new_v.push(vel);
            new_p.push(theta - lr * (d + m * vel));
        }
        *v = Tensor::from_parts(v.shape().to_vec(), new_v);
        *p = Tensor::from_parts(p.shape().to_vec(), new_p);
    }
    Ok(())
}
