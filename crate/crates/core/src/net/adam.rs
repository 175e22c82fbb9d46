//! Bias-corrected Adam over the flat tensor list.

use super::{NetError, NetTensors};

#[derive(Debug, Clone)]
pub struct AdamState {
    m: NetTensors,
    v: NetTensors,
    /// Completed steps; bias correction uses t+1 on the next call.
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(like: &NetTensors) -> Self {
        Self {
            m: like.zeros_like(),
            v: like.zeros_like(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

pub fn adam_step(
    params: &mut NetTensors,
    grads: &NetTensors,
    state: &mut AdamState,
    lr: f64,
) -> Result<(), NetError> {
    state.t += 1;
    let bc1 = 1.0 - state.beta1.powi(state.t as i32);
    let bc2 = 1.0 - state.beta2.powi(state.t as i32);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);

    let mut p_flat = params.flat_mut();
    let g_flat = grads.flat();
    let mut m_flat = state.m.flat_mut();
    let mut v_flat = state.v.flat_mut();
    if p_flat.len() != g_flat.len() {
        return Err(NetError::ShapeMismatch { context: "gradient tensor list".into() });
    }
    for ((p, g), (m, v)) in p_flat
        .iter_mut()
        .zip(&g_flat)
        .zip(m_flat.iter_mut().zip(v_flat.iter_mut()))
    {
        if p.len() != g.len() {
            return Err(NetError::ShapeMismatch {
                context: format!("tensor of {} params vs {} grads", p.len(), g.len()),
            });
        }
        for k in 0..p.len() {
            let gk = g[k];
            m[k] = b1 * m[k] + (1.0 - b1) * gk;
            v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
