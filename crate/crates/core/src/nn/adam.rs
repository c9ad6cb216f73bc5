//! Adam optimizer with bias correction.

use std::collections::BTreeMap;

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps_hat: f32,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps_hat: 1e-8,
        }
    }
}

/// Per-parameter first/second moment estimates plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
    t: u64,
    hyper: AdamHyper,
}

impl AdamState {
    pub fn new(params: &BTreeMap<String, Tensor>, hyper: AdamHyper) -> Self {
        let zeros: BTreeMap<String, Tensor> = params
            .iter()
            .map(|(k, p)| (k.clone(), Tensor::zeros(p.shape().to_vec())))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            hyper,
        }
    }

    pub fn timestep(&self) -> u64 {
        self.t
    }

    pub fn hyper(&self) -> AdamHyper {
        self.hyper
    }
}

/// One Adam update: m and v track the first and second gradient moments,
/// bias-corrected by the step count, and each parameter moves by
/// lr * m_hat / (sqrt(v_hat) + eps_hat).
pub fn adam_step(
    params: &mut BTreeMap<String, Tensor>,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
) {
    state.t += 1;
    let h = state.hyper;
    // Correction factors computed in f64; beta powers underflow f32 quickly.
    let c1 = 1.0 - f64::from(h.beta1).powi(state.t as i32);
    let c2 = 1.0 - f64::from(h.beta2).powi(state.t as i32);
    for (name, grad) in grads {
        let p = params.get_mut(name).expect("gradient for unknown parameter");
        let m = state.m.get_mut(name).expect("moment for unknown parameter");
        let v = state.v.get_mut(name).expect("moment for unknown parameter");
        let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
        for (i, &g) in grad.data().iter().enumerate() {
            md[i] = h.beta1 * md[i] + (1.0 - h.beta1) * g;
            vd[i] = h.beta2 * vd[i] + (1.0 - h.beta2) * g * g;
            let m_hat = f64::from(md[i]) / c1;
            let v_hat = f64::from(vd[i]) / c2;
            pd[i] -= (f64::from(h.lr) * m_hat / (v_hat.sqrt() + f64::from(h.eps_hat))) as f32;
        }
    }
}
