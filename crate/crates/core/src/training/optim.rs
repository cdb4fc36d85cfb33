use std::ops::Range;

use crate::kernels::Float;
use crate::model::Params;

/// Adam with decoupled weight decay on matrix-shaped tensors only.
#[derive(Debug, Clone)]
pub struct AdamW<F> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `0` disables clipping.
    pub grad_clip: f64,
    pub m: Vec<F>,
    pub v: Vec<F>,
    /// Completed updates (drives bias correction).
    pub t: usize,
    decayed: Vec<Range<usize>>,
}

impl<F: Float> AdamW<F> {
    pub fn new(params: &Params<F>, beta1: f64, beta2: f64, eps: f64, weight_decay: f64, grad_clip: f64) -> AdamW<F> {
        let decayed = params.index.entries.iter().filter(|e| e.decay).map(|e| e.range()).collect();
        AdamW {
            beta1,
            beta2,
            eps,
            weight_decay,
            grad_clip,
            m: vec![F::zero(); params.len()],
            v: vec![F::zero(); params.len()],
            t: 0,
            decayed,
        }
    }

    /// Apply one update in place; returns the pre-clip gradient norm.
    pub fn update(&mut self, params: &mut Params<F>, grads: &[F], lr: f64) -> f64 {
        assert_eq!(grads.len(), params.len(), "gradient length");
        let norm = grads.iter().map(|g| g.f64() * g.f64()).sum::<f64>().sqrt();
        let scale = if self.grad_clip > 0.0 && norm > self.grad_clip {
            self.grad_clip / norm
        } else {
            1.0
        };
        self.t += 1;
        let (b1, b2) = (F::of(self.beta1), F::of(self.beta2));
        let bc1 = F::of(1.0 - self.beta1.powi(self.t as i32));
        let bc2 = F::of(1.0 - self.beta2.powi(self.t as i32));
        let (scale, eps, lr_f) = (F::of(scale), F::of(self.eps), F::of(lr));
        for i in 0..grads.len() {
            let g = grads[i] * scale;
            self.m[i] = b1 * self.m[i] + (F::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (F::one() - b2) * g * g;
            let step = (self.m[i] / bc1) / ((self.v[i] / bc2).sqrt() + eps);
            params.data[i] -= lr_f * step;
        }
        let wd = F::of(lr * self.weight_decay);
        if wd != F::zero() {
            for r in &self.decayed {
                for x in &mut params.data[r.clone()] {
                    *x -= wd * *x;
                }
            }
        }
        norm
    }
}
