//! Adam with bias correction, one state pair per parameter. Every grid
//! parameter is updated each step (dense), which keeps the update rule
//! independent of which rays happened to touch a cell.

use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct Adam<S> {
    beta1: S,
    beta2: S,
    eps: S,
    m: Vec<S>,
    v: Vec<S>,
    t: u32,
}

impl<S: Scalar> Adam<S> {
    pub fn new(n: usize) -> Self {
        Self {
            beta1: S::of(0.9),
            beta2: S::of(0.999),
            eps: S::of(1e-8),
            m: vec![S::zero(); n],
            v: vec![S::zero(); n],
            t: 0,
        }
    }

    pub fn step(&mut self, values: &mut [S], grads: &[S], lr: S) {
        assert_eq!(values.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let b1 = self.beta1;
        let b2 = self.beta2;
        let c1 = S::one() - b1.powi(self.t as i32);
        let c2 = S::one() - b2.powi(self.t as i32);
        for i in 0..values.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (S::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (S::one() - b2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            values[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
