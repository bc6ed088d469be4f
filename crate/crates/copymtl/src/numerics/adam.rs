//! Adam with bias correction.

use super::array::DenseArray;
use super::params::ParamStore;

#[derive(Debug, Clone)]
pub struct AdamState {
    first_moment: Vec<DenseArray>,
    second_moment: Vec<DenseArray>,
    step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(store: &ParamStore, learning_rate: f64) -> Self {
        let first_moment = store
            .iter()
            .map(|(_, p)| DenseArray::zeros(p.value.shape().to_vec()))
            .collect();
        let second_moment = store
            .iter()
            .map(|(_, p)| DenseArray::zeros(p.value.shape().to_vec()))
            .collect();
        AdamState {
            first_moment,
            second_moment,
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update from the gradients currently in the store. Gradients
    /// are left untouched; the caller zeroes them between batches.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (idx, param) in store.iter_mut().enumerate() {
            let m = self.first_moment[idx].values_mut();
            let v = self.second_moment[idx].values_mut();
            let g = param.grad.values();
            let x = param.value.values_mut();
            for i in 0..x.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                x[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}
