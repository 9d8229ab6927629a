//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{Param, ParamRole};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-4,
        }
    }
}

/// First and second moments per parameter tensor. Each tensor keeps its
/// own step count, so tensors frozen for a while get correct bias
/// correction once they start updating.
#[derive(Clone, Debug, PartialEq)]
pub struct OptState<F> {
    pub m: Vec<Vec<F>>,
    pub v: Vec<Vec<F>>,
    pub t: Vec<u64>,
}

impl<F: Real> OptState<F> {
    pub fn new(params: &[Param<F>]) -> Self {
        OptState {
            m: params.iter().map(|p| vec![F::zero(); p.value.len()]).collect(),
            v: params.iter().map(|p| vec![F::zero(); p.value.len()]).collect(),
            t: vec![0; params.len()],
        }
    }
}

/// One update:
/// `theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * weight_decay * theta`.
/// Buffers are never touched; with `freeze_backbone` neither are backbone
/// tensors or their moments. `lr` already includes any schedule multiplier.
/// Any non-finite gradient aborts before a single value changes.
pub fn adamw_step<F: Real>(
    params: &mut [Param<F>],
    grads: &[Vec<F>],
    state: &mut OptState<F>,
    hyper: &AdamW,
    lr: f64,
    freeze_backbone: bool,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} parameters, {} gradients, {} optimizer slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    let active = |p: &Param<F>| p.role != ParamRole::Buffer && !(freeze_backbone && p.role == ParamRole::Backbone);
    for (p, g) in params.iter().zip(grads) {
        if !active(p) {
            continue;
        }
        if g.len() != p.value.len() {
            return Err(Error::DimensionMismatch(format!(
                "gradient for `{}` has the wrong length",
                p.name
            )));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(p.name.clone()));
        }
    }
    let (b1, b2) = (F::of(hyper.beta1), F::of(hyper.beta2));
    let (eps, lr_f, decay) = (F::of(hyper.eps), F::of(lr), F::of(lr * hyper.weight_decay));
    let one = F::one();
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        if !active(p) {
            continue;
        }
        state.t[i] += 1;
        let t = state.t[i] as i32;
        let c1 = one - b1.powi(t);
        let c2 = one - b2.powi(t);
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..p.value.len() {
            let gj = g[j];
            m[j] = b1 * m[j] + (one - b1) * gj;
            v[j] = b2 * v[j] + (one - b2) * gj * gj;
            let mhat = m[j] / c1;
            let vhat = v[j] / c2;
            let theta = p.value[j];
            p.value[j] = theta - lr_f * mhat / (vhat.sqrt() + eps) - decay * theta;
        }
    }
    Ok(())
}
