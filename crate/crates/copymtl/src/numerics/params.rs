//! Learnable parameters and their gradient slots.

use super::array::DenseArray;
use super::rng::Rng;

/// Handle into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

/// One named learnable array plus its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: DenseArray,
    pub grad: DenseArray,
}

/// Flat registry of parameters in registration order. Registration order
/// is the canonical order for Adam state and checkpoint blobs.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn register(&mut self, name: impl Into<String>, value: DenseArray) -> ParamId {
        let grad = DenseArray::zeros(value.shape().to_vec());
        self.params.push(Param {
            name: name.into(),
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    /// Register a matrix with entries uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
    pub fn register_uniform(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        fan_in: usize,
        rng: &mut Rng,
    ) -> ParamId {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let len: usize = shape.iter().product();
        let values: Vec<f64> = (0..len).map(|_| rng.uniform(-bound, bound)).collect();
        self.register(name, DenseArray::new(shape, values).expect("checked shape"))
    }

    /// Register an all-zero parameter (biases).
    pub fn register_zeros(&mut self, name: impl Into<String>, shape: Vec<usize>) -> ParamId {
        self.register(name, DenseArray::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &DenseArray {
        &self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &DenseArray {
        &self.params[id.0].grad
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Total parameter count (scalar entries, not arrays).
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// L2 norm over all gradients.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.values())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Scale every gradient so the global norm does not exceed `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let scale = max_norm / norm;
            for p in &mut self.params {
                for g in p.grad.values_mut() {
                    *g *= scale;
                }
            }
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grads_start_zero_and_reset() {
        let mut store = ParamStore::new();
        let id = store.register("w", DenseArray::vector(vec![1.0, 2.0]));
        assert!(store.grad(id).values().iter().all(|&g| g == 0.0));
        store.get_mut(id).grad.values_mut()[0] = 3.0;
        store.zero_grads();
        assert!(store.grad(id).values().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn clip_rescales_to_max_norm() {
        let mut store = ParamStore::new();
        let id = store.register("w", DenseArray::vector(vec![0.0, 0.0]));
        store.get_mut(id).grad.values_mut().copy_from_slice(&[3.0, 4.0]);
        let before = store.clip_grad_norm(1.0);
        assert!((before - 5.0).abs() < 1e-12);
        assert!((store.grad_norm() - 1.0).abs() < 1e-12);
    }
}
