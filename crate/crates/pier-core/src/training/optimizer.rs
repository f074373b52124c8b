//! Adaptive-moment gradient descent (Adam) over the parameter store.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::model::params::{ParamId, ParamStore};
use crate::numerics::real::Real;

#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: Vec<Option<(Vec<F>, Vec<F>)>>,
}

impl<F: Real> Adam<F> {
    pub fn new(lr: f64, n_params: usize) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: alloc::vec![None; n_params],
        }
    }

    /// Applies one update over `(parameter, gradient)` pairs. Pairs must
    /// arrive in a fixed order across steps; moment state is keyed by the
    /// parameter's store index.
    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &[(ParamId, Vec<F>)]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let lr_t = self.lr * bc2.sqrt() / bc1;
        let b1 = F::from_f64(self.beta1);
        let b2 = F::from_f64(self.beta2);
        let one_m_b1 = F::from_f64(1.0 - self.beta1);
        let one_m_b2 = F::from_f64(1.0 - self.beta2);
        let eps = F::from_f64(self.eps);
        let lr = F::from_f64(lr_t);

        for (id, grad) in grads {
            let n = store.tensor(*id).numel();
            debug_assert_eq!(n, grad.len());
            let slot = self.moments[id.0]
                .get_or_insert_with(|| (alloc::vec![F::zero(); n], alloc::vec![F::zero(); n]));
            let (m, v) = slot;
            let data = store.tensor_mut(*id).data_mut();
            for i in 0..n {
                let g = grad[i];
                m[i] = b1 * m[i] + one_m_b1 * g;
                v[i] = b2 * v[i] + one_m_b2 * g * g;
                data[i] = data[i] - lr * m[i] / (v[i].sqrt() + eps);
            }
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tensor::Tensor;

    #[test]
    fn adam_descends_a_quadratic() {
        // minimize f(x) = sum((x - 3)^2); gradient 2(x - 3)
        let mut store = ParamStore::<f64>::new();
        let id = store.add(
            alloc::string::String::from("x"),
            Tensor::from_vec(alloc::vec![3], alloc::vec![0.0, 10.0, -4.0]).unwrap(),
        );
        let mut adam = Adam::new(0.05, 1);
        for _ in 0..2000 {
            let grad: alloc::vec::Vec<f64> = store
                .tensor(id)
                .data()
                .iter()
                .map(|x| 2.0 * (x - 3.0))
                .collect();
            adam.step(&mut store, &[(id, grad)]);
        }
        for x in store.tensor(id).data() {
            assert!((x - 3.0).abs() < 1e-3, "converged to {x}");
        }
    }

    #[test]
    fn first_step_magnitude_matches_reference() {
        // with bias correction the first Adam step is lr * sign(g)
        let mut store = ParamStore::<f64>::new();
        let id = store.add(
            alloc::string::String::from("x"),
            Tensor::from_vec(alloc::vec![2], alloc::vec![1.0, -1.0]).unwrap(),
        );
        let mut adam = Adam::new(0.1, 1);
        adam.step(&mut store, &[(id, alloc::vec![0.5, -2.0])]);
        let d = store.tensor(id).data();
        assert!((d[0] - (1.0 - 0.1)).abs() < 1e-6, "{}", d[0]);
        assert!((d[1] - (-1.0 + 0.1)).abs() < 1e-6, "{}", d[1]);
    }
}
