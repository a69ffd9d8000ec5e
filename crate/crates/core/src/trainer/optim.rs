use super::schedule::AdamW;
use crate::model::ParamStore;
use crate::numeric::{Real, Tensor};

/// First/second moment estimates for every parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new<T: Real>(params: &ParamStore<T>) -> Self {
        let zeros = || params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self { m: zeros(), v: zeros(), t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One decoupled-weight-decay Adam update. Tensors with `decay[i] == false`
    /// (norm gains) are not decayed.
    pub fn update<T: Real>(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>], lr: f64, hp: &AdamW, decay: &[bool]) {
        self.t += 1;
        let b1t = 1.0 - hp.beta1.powi(self.t as i32);
        let b2t = 1.0 - hp.beta2.powi(self.t as i32);
        for (i, (p, g)) in params.tensors_mut().iter_mut().zip(grads).enumerate() {
            let wd = if decay[i] { hp.weight_decay } else { 0.0 };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (x, &gr)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let gr = gr.f64();
                m[j] = hp.beta1 * m[j] + (1.0 - hp.beta1) * gr;
                v[j] = hp.beta2 * v[j] + (1.0 - hp.beta2) * gr * gr;
                let step = (m[j] / b1t) / ((v[j] / b2t).sqrt() + hp.eps);
                let xv = x.f64();
                *x = T::of(xv - lr * (step + wd * xv));
            }
        }
    }
}
