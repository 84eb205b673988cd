//! Adam with bias correction over the fixed parameter layout.

use super::{Gradients, ModelParams};

/// Moment accumulators plus hyperparameters. The training loop owns one of
/// these and replaces it wholesale on every step; `learning_rate` is public
/// so schedules can decay it between epochs.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub t: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &ModelParams, learning_rate: f64) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One Adam update. Functional: returns fresh parameters and state, inputs
/// untouched. Panics if the three structures disagree in shape (that is a
/// caller bug, not an input condition).
pub fn adam_step(
    params: &ModelParams,
    grads: &Gradients,
    state: &AdamState,
) -> (ModelParams, AdamState) {
    let mut new_params = params.clone();
    let mut new_state = state.clone();
    new_state.t += 1;
    let bc1 = 1.0 - state.beta1.powi(new_state.t as i32);
    let bc2 = 1.0 - state.beta2.powi(new_state.t as i32);
    let lr = state.learning_rate;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);

    let g_tensors = grads.tensors();
    let mut p_tensors = new_params.tensors_mut();
    let mut m_tensors = new_state.m.tensors_mut();
    let mut v_tensors = new_state.v.tensors_mut();
    assert_eq!(p_tensors.len(), g_tensors.len());

    for idx in 0..p_tensors.len() {
        let (p_name, p) = &mut p_tensors[idx];
        let (g_name, g) = &g_tensors[idx];
        assert_eq!(p_name, g_name);
        assert_eq!(p.shape(), g.shape(), "gradient shape mismatch for {p_name}");
        let (_, m) = &mut m_tensors[idx];
        let (_, v) = &mut v_tensors[idx];
        for (((pv, &gv), mv), vv) in
            p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut())
        {
            *mv = b1 * *mv + (1.0 - b1) * gv;
            *vv = b2 * *vv + (1.0 - b2) * gv * gv;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *pv -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    (new_params, new_state)
}
