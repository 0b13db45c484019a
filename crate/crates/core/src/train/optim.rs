//! AdamW: Adam moment estimates with decoupled weight decay.

use crate::fusion::ParamSet;
use crate::scalar::Scalar;

pub struct AdamW<F: Scalar> {
    lr: F,
    beta1: F,
    beta2: F,
    eps: F,
    weight_decay: F,
    step: u64,
    m: ParamSet<F>,
    v: ParamSet<F>,
}

impl<F: Scalar> AdamW<F> {
    pub fn new(template: &ParamSet<F>, lr: f64, weight_decay: f64) -> Self {
        Self {
            lr: F::from_f64(lr),
            beta1: F::from_f64(0.9),
            beta2: F::from_f64(0.999),
            eps: F::from_f64(1e-8),
            weight_decay: F::from_f64(weight_decay),
            step: 0,
            m: template.zeros_like(),
            v: template.zeros_like(),
        }
    }

    /// One update over every tensor. `params` and `grads` must share the
    /// structure of the template.
    pub fn step(&mut self, params: &mut ParamSet<F>, grads: &ParamSet<F>) {
        self.step += 1;
        let t = self.step as i32;
        let bias1 = F::one() - self.beta1.powi(t);
        let bias2 = F::one() - self.beta2.powi(t);
        let one = F::one();

        let mut p_slices = params.named_slices_mut();
        let g_slices = grads.named_slices();
        let mut m_slices = self.m.named_slices_mut();
        let mut v_slices = self.v.named_slices_mut();
        debug_assert_eq!(p_slices.len(), g_slices.len());

        for i in 0..p_slices.len() {
            debug_assert_eq!(p_slices[i].0, g_slices[i].0);
            let p = &mut p_slices[i].1;
            let g = g_slices[i].1;
            let m = &mut m_slices[i].1;
            let v = &mut v_slices[i].1;
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (one - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (one - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / bias1;
                let v_hat = v[j] / bias2;
                p[j] = p[j] - self.lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * p[j]);
            }
        }
    }
}
