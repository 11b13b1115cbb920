//! First-order optimizers over flat parameter vectors.

use std::ops::Range;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    /// Adaptive moments with bias correction.
    Adam,
    /// Plain gradient descent, `θ ← θ − lr·g`.
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerHyper {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerHyper {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidConfig("moment decay rates must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidConfig("optimizer eps must be > 0".into()));
        }
        Ok(())
    }
}

/// First/second moment accumulators and the step count used for bias
/// correction. SGD leaves the moments at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// Pure update: returns new parameters and state, inputs untouched.
pub fn step_optimizer(
    params: &[f64],
    grads: &[f64],
    state: &OptimizerState,
    hyper: &OptimizerHyper,
) -> Result<(Vec<f64>, OptimizerState)> {
    let mut p = params.to_vec();
    let mut s = state.clone();
    step_in_place(&mut p, grads, &mut s, hyper, None)?;
    Ok((p, s))
}

/// In-place update. Parameters in `frozen` keep their values and moments.
pub(crate) fn step_in_place(
    params: &mut [f64],
    grads: &[f64],
    state: &mut OptimizerState,
    hyper: &OptimizerHyper,
    frozen: Option<Range<usize>>,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} gradients and moments", params.len()),
            actual: format!("{} / {} / {}", grads.len(), state.m.len(), state.v.len()),
        });
    }
    if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::DivergenceDetected { index });
    }
    let frozen = frozen.unwrap_or(0..0);
    state.t += 1;
    match hyper.kind {
        OptimizerKind::Sgd => {
            for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                if !frozen.contains(&i) {
                    *p -= hyper.lr * g;
                }
            }
        }
        OptimizerKind::Adam => {
            let t = state.t as i32;
            let c1 = 1.0 - hyper.beta1.powi(t);
            let c2 = 1.0 - hyper.beta2.powi(t);
            for i in 0..params.len() {
                if frozen.contains(&i) {
                    continue;
                }
                let g = grads[i];
                let m = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
                let v = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g * g;
                state.m[i] = m;
                state.v[i] = v;
                params[i] -= hyper.lr * (m / c1) / ((v / c2).sqrt() + hyper.eps);
            }
        }
    }
    Ok(())
}
