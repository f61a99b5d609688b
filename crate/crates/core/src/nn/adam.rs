use crate::autodiff::ParamStore;
use crate::tensor::Tensor;

/// Adam with bias correction.
///
/// A parameter tensor whose gradient is entirely zero at a step keeps its
/// value; its moments still decay. Tasks that are absent from a batch
/// therefore leave their private parameters untouched.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamStore, learning_rate: f64) -> Self {
        Self::with_betas(params, learning_rate, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(params: &ParamStore, learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let zeros = || params.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        AdamState {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamStore) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let p = params.get_mut(id);
            let m = &mut self.m[id.0];
            let v = &mut self.v[id.0];
            let any_grad = p.grad.data().iter().any(|&g| g != 0.0);
            for ((mi, vi), &g) in m.data_mut().iter_mut().zip(v.data_mut().iter_mut()).zip(p.grad.data()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
            }
            if !any_grad {
                continue;
            }
            for ((w, &mi), &vi) in p.value.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                *w -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(x: f64) -> (ParamStore, crate::ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("x", Tensor::scalar(x));
        (s, id)
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let (mut s, id) = scalar_store(0.3);
        let mut adam = AdamState::new(&s, 0.01);
        adam.step(&mut s);
        assert_eq!(s.value(id).item().to_bits(), 0.3f64.to_bits());
    }

    #[test]
    fn first_step_matches_direct_formula() {
        let (mut s, id) = scalar_store(0.0);
        s.get_mut(id).grad = Tensor::scalar(1.0);
        let mut adam = AdamState::new(&s, 0.001);
        adam.step(&mut s);
        // m̂ = 1, v̂ = 1 after bias correction
        let m_hat = (0.1 * 1.0) / (1.0 - 0.9);
        let v_hat = (0.001 * 1.0) / (1.0 - 0.999);
        let expected = -0.001 * m_hat / (f64::sqrt(v_hat) + 1e-8);
        assert!((s.value(id).item() - expected).abs() < 1e-15);
        assert!((s.value(id).item() + 0.000999999990).abs() < 1e-12);
    }

    #[test]
    fn constant_gradient_decreases_monotonically() {
        let (mut s, id) = scalar_store(1.0);
        let mut adam = AdamState::new(&s, 0.01);
        let mut prev = 1.0;
        for _ in 0..50 {
            s.get_mut(id).grad = Tensor::scalar(0.5);
            adam.step(&mut s);
            let now = s.value(id).item();
            assert!(now < prev);
            prev = now;
        }
        assert_eq!(adam.steps(), 50);
    }
}
