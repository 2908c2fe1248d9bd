use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::params::ParamStore;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Adam => "adam",
            Self::Sgd => "sgd",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(Self::Adam),
            "sgd" => Ok(Self::Sgd),
            other => Err(Error::Config(format!("unknown optimizer '{other}' (expected adam or sgd)"))),
        }
    }
}

/// Step count and per-parameter moment buffers. Buffers are empty for
/// parameters that do not train and for plain SGD.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, params: &ParamStore<f64>) -> Self {
        let buffers = || -> Vec<Vec<f64>> {
            params
                .tensors()
                .iter()
                .map(|t| match kind {
                    OptimizerKind::Adam if t.requires_grad() => vec![0.0; t.len()],
                    _ => Vec::new(),
                })
                .collect()
        };
        Self {
            kind,
            step: 0,
            m: buffers(),
            v: buffers(),
        }
    }

    fn check(&self, params: &ParamStore<f64>) -> Result<()> {
        if self.m.len() != params.len() || self.v.len() != params.len() {
            return Err(Error::dims("optimizer state", &[self.m.len(), self.v.len()], &[params.len()]));
        }
        for (i, t) in params.tensors().iter().enumerate() {
            let want = if self.kind == OptimizerKind::Adam && t.requires_grad() {
                t.len()
            } else {
                0
            };
            if self.m[i].len() != want || self.v[i].len() != want {
                return Err(Error::dims("optimizer moments", &[self.m[i].len(), self.v[i].len()], &[want]));
            }
        }
        Ok(())
    }

    /// Applies one update from the accumulated gradients.
    pub fn update(&mut self, params: &mut ParamStore<f64>, lr: f64) -> Result<()> {
        match self.kind {
            OptimizerKind::Adam => adam_step(params, self, lr),
            OptimizerKind::Sgd => sgd_step(params, self, lr),
        }
    }
}

/// Bias-corrected Adam over every trainable parameter, skipping frozen rows.
/// A parameter without a gradient buffer is treated as having zero gradient.
pub fn adam_step(params: &mut ParamStore<f64>, state: &mut OptimizerState, lr: f64) -> Result<()> {
    state.check(params)?;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (i, tensor) in params.tensors_mut().iter_mut().enumerate() {
        if !tensor.requires_grad() {
            continue;
        }
        let cols = tensor.cols();
        let frozen = tensor.frozen_rows().to_vec();
        let grad = tensor.grad().map(<[f64]>::to_vec);
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let values = tensor.values_mut();
        for k in 0..values.len() {
            if frozen.contains(&(k / cols)) {
                continue;
            }
            let gk = grad.as_ref().map_or(0.0, |g| g[k]);
            m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * gk;
            v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * gk * gk;
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            values[k] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
        }
    }
    Ok(())
}

/// Plain gradient descent, skipping frozen rows.
pub fn sgd_step(params: &mut ParamStore<f64>, state: &mut OptimizerState, lr: f64) -> Result<()> {
    state.check(params)?;
    state.step += 1;
    for tensor in params.tensors_mut() {
        if !tensor.requires_grad() {
            continue;
        }
        let Some(grad) = tensor.grad().map(<[f64]>::to_vec) else {
            continue;
        };
        let cols = tensor.cols();
        let frozen = tensor.frozen_rows().to_vec();
        for (k, (x, g)) in tensor.values_mut().iter_mut().zip(grad).enumerate() {
            if !frozen.contains(&(k / cols)) {
                *x -= lr * g;
            }
        }
    }
    Ok(())
}

/// Rescales all gradients so their global norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm(params: &mut ParamStore<f64>, max_norm: f64) -> f64 {
    let norm = params.grad_norm();
    if norm > max_norm {
        params.scale_grads(max_norm / norm);
    }
    norm
}
