//! AdamW with decoupled weight decay over flat parameter buffers.

use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    steps: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(sizes: &[usize], weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            steps: 0,
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update of every buffer; `grads[i]` is scaled by `grad_scale` first.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]], grad_scale: f64, lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.steps += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let one = T::one();
        let t = self.steps as i32;
        let c1 = one - b1.powi(t);
        let c2 = one - b2.powi(t);
        let lr = T::lit(lr);
        let wd = T::lit(self.weight_decay);
        let eps = T::lit(self.eps);
        let scale = T::lit(grad_scale);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                let gi = g[i] * scale;
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= lr * (mhat / (vhat.sqrt() + eps) + wd * p[i]);
            }
        }
    }
}

/// First non-finite entry of a gradient buffer, if any.
pub(crate) fn first_non_finite<T: Scalar>(g: &[T]) -> Option<usize> {
    g.iter().position(|x| !x.is_finite())
}
