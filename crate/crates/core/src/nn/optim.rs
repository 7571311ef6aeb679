use super::params::ParamStore;
use crate::scalar::Scalar;
use crate::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam first and second moments plus the update counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: ParamStore<T>,
    pub v: ParamStore<T>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    pub fn reset(&mut self) {
        self.m.fill_zero();
        self.v.fill_zero();
        self.step = 0;
    }
}

/// One bias-corrected Adam update. Aborts without touching `params` when
/// any gradient component is non-finite.
pub fn adam_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &ParamStore<T>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::Param(format!("learning rate must be positive, got {lr}")));
    }
    params.check_layout(grads)?;
    params.check_layout(&state.m)?;
    if grads.iter().any(|(_, t)| t.data.iter().any(|g| !g.is_finite())) {
        return Err(Error::Numeric("non-finite gradient component".into()));
    }
    state.step += 1;
    let bc1 = 1.0 - BETA1.powi(state.step as i32);
    let bc2 = 1.0 - BETA2.powi(state.step as i32);
    let m_iter = state.m.values_mut();
    let v_iter = state.v.values_mut();
    let g_iter = grads.iter().flat_map(|(_, t)| t.data.iter());
    for (((p, g), m), v) in params.values_mut().zip(g_iter).zip(m_iter).zip(v_iter) {
        let g = g.f64();
        let mn = BETA1 * m.f64() + (1.0 - BETA1) * g;
        let vn = BETA2 * v.f64() + (1.0 - BETA2) * g * g;
        *m = T::lit(mn);
        *v = T::lit(vn);
        let update = lr * (mn / bc1) / ((vn / bc2).sqrt() + EPSILON);
        *p = T::lit(p.f64() - update);
    }
    Ok(())
}

/// Divide gradients by the utterance count, then rescale so the global L2
/// norm does not exceed `max_norm`. Returns the norm before clipping.
pub fn clip_gradients<T: Scalar>(grads: &mut ParamStore<T>, max_norm: f64, num_utterances: usize) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(Error::Param("max_norm must be positive".into()));
    }
    if num_utterances == 0 {
        return Err(Error::Param("num_utterances must be >= 1".into()));
    }
    if num_utterances > 1 {
        let inv = 1.0 / num_utterances as f64;
        for v in grads.values_mut() {
            *v = T::lit(v.f64() * inv);
        }
    }
    let norm = grads.l2_norm();
    if !norm.is_finite() {
        return Err(Error::Numeric("non-finite gradient norm".into()));
    }
    if norm > max_norm {
        let s = max_norm / norm;
        for v in grads.values_mut() {
            *v = T::lit(v.f64() * s);
        }
    }
    Ok(norm)
}
