use super::{Result, TrainConfig, TrainError};
use crate::model::ModelParams;
use crate::Scalar;

/// First and second moments for every parameter (empty for buffers), plus
/// the number of updates taken.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<S> {
    pub m: Vec<Vec<S>>,
    pub v: Vec<Vec<S>>,
    pub step: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &ModelParams<S>) -> Self {
        let zeros: Vec<Vec<S>> = params
            .iter()
            .map(|p| if p.trainable { vec![S::zero(); p.array.values.len()] } else { Vec::new() })
            .collect();
        Self { m: zeros.clone(), v: zeros, step: 0 }
    }
}

/// One bias-corrected Adam update of `values` in place. `t` is the 1-based
/// step number.
pub fn adam_update<S: Scalar>(values: &mut [S], grad: &[S], m: &mut [S], v: &mut [S], t: u64, cfg: &TrainConfig) {
    let b1 = S::from_f64_lossy(cfg.adam_beta1);
    let b2 = S::from_f64_lossy(cfg.adam_beta2);
    let one = S::one();
    let c1 = one - S::from_f64_lossy(cfg.adam_beta1.powi(t as i32));
    let c2 = one - S::from_f64_lossy(cfg.adam_beta2.powi(t as i32));
    let lr = S::from_f64_lossy(cfg.learning_rate);
    let eps = S::from_f64_lossy(cfg.adam_eps);
    for i in 0..values.len() {
        m[i] = b1 * m[i] + (one - b1) * grad[i];
        v[i] = b2 * v[i] + (one - b2) * grad[i] * grad[i];
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Updates every trainable parameter from `grads` (aligned with the
/// parameter order). Buffers are left alone.
pub fn adam_step<S: Scalar>(
    params: &mut ModelParams<S>,
    grads: &[Option<Vec<S>>],
    state: &mut AdamState<S>,
    cfg: &TrainConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(TrainError::InvalidConfig("gradient list does not match the parameters".into()));
    }
    for (i, g) in grads.iter().enumerate() {
        let p = params.at(i);
        if p.trainable && g.as_ref().is_none_or(|g| g.len() != p.array.values.len()) {
            return Err(TrainError::MissingGradient(p.array.name.clone()));
        }
    }
    state.step += 1;
    for (i, g) in grads.iter().enumerate() {
        let p = params.at_mut(i);
        if let (true, Some(g)) = (p.trainable, g) {
            adam_update(&mut p.array.values, g, &mut state.m[i], &mut state.v[i], state.step, cfg);
        }
    }
    Ok(())
}
