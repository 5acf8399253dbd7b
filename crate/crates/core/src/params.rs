//! Named parameter storage. Blocks hold [`ParamId`]s; values live here so
//! checkpointing, the optimizer and the gradient-check harness can walk
//! every trainable tensor by name.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;
use crate::shape::Shape;
use crate::tensor::Tensor;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ParamId(pub(crate) usize);

struct Slot<T> {
    name: String,
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
}

pub struct ParamStore<T: Scalar> {
    slots: Vec<Slot<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            slots: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    /// Names are unique within a model; a duplicate is a construction bug.
    pub fn register(&mut self, name: String, value: Tensor<T>) -> ParamId {
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name '{}'",
            name
        );
        let id = ParamId(self.slots.len());
        self.by_name.insert(name.clone(), id);
        self.slots.push(Slot {
            name,
            value,
            grad: None,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.slots[id.0].value
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor<T>) {
        assert_eq!(
            self.slots[id.0].value.shape(),
            value.shape(),
            "set_value: shape change for '{}'",
            self.slots[id.0].name
        );
        self.slots[id.0].value = value;
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.slots[id.0].name
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.slots.len()).map(ParamId)
    }

    /// (name, value) pairs in registration order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.slots.iter().map(|s| (s.name.as_str(), &s.value))
    }

    pub fn grad(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.slots[id.0].grad.as_ref()
    }

    pub fn accumulate_grad(&mut self, id: ParamId, g: &Tensor<T>) {
        let slot = &mut self.slots[id.0];
        assert_eq!(
            slot.value.shape(),
            g.shape(),
            "gradient shape mismatch for '{}'",
            slot.name
        );
        slot.grad = Some(match slot.grad.take() {
            Some(acc) => acc.add(g),
            None => g.clone(),
        });
    }

    pub fn zero_grads(&mut self) {
        for s in &mut self.slots {
            s.grad = None;
        }
    }

    /// Total number of scalar parameters.
    pub fn count_scalars(&self) -> usize {
        self.slots.iter().map(|s| s.value.len()).sum()
    }

    /// L2 norm of the gradients of a named subtree (prefix match).
    pub fn grad_norm_of_prefix(&self, prefix: &str) -> f64 {
        let mut acc = 0.0;
        for s in &self.slots {
            if s.name.starts_with(prefix) {
                if let Some(g) = &s.grad {
                    acc += g.sq_norm().as_f64();
                }
            }
        }
        acc.sqrt()
    }
}

/// Scoped registration helper threading the init RNG through block
/// construction, producing names like "sr.rag0.rcab1.conv0.w".
pub struct ParamBuilder<'a, T: Scalar> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut ChaCha8Rng,
    path: String,
}

impl<'a, T: Scalar> ParamBuilder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut ChaCha8Rng) -> Self {
        ParamBuilder {
            store,
            rng,
            path: String::new(),
        }
    }

    pub fn scope(&mut self, seg: impl AsRef<str>) -> ParamBuilder<'_, T> {
        let path = if self.path.is_empty() {
            seg.as_ref().to_string()
        } else {
            format!("{}.{}", self.path, seg.as_ref())
        };
        ParamBuilder {
            store: self.store,
            rng: self.rng,
            path,
        }
    }

    pub fn register(&mut self, name: &str, value: Tensor<T>) -> ParamId {
        let full = if self.path.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.path, name)
        };
        self.store.register(full, value)
    }

    /// Kaiming-uniform fan-in init: U(-b, b) with b = sqrt(6 / fan_in).
    /// Draws are made in f64 so f32/f64 twins built from the same seed
    /// hold identical values.
    pub fn kaiming(&mut self, name: &str, shape: Shape, fan_in: usize) -> ParamId {
        let bound = (6.0 / fan_in as f64).sqrt();
        let data: Vec<f64> = (0..shape.len())
            .map(|_| self.rng.gen_range(-bound..bound))
            .collect();
        self.register(name, Tensor::from_f64s(shape, &data))
    }

    pub fn zeros(&mut self, name: &str, shape: Shape) -> ParamId {
        self.register(name, Tensor::zeros(shape))
    }

    pub fn ones(&mut self, name: &str, shape: Shape) -> ParamId {
        self.register(name, Tensor::full(shape, T::one()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_names_panic() {
        let mut ps = ParamStore::<f32>::new();
        ps.register("a.w".into(), Tensor::zeros(Shape::scalar()));
        ps.register("a.w".into(), Tensor::zeros(Shape::scalar()));
    }

    #[test]
    fn grads_accumulate() {
        let mut ps = ParamStore::<f64>::new();
        let id = ps.register("p".into(), Tensor::zeros(Shape::new(1, 1, 1, 2)));
        ps.accumulate_grad(id, &Tensor::from_f64s(Shape::new(1, 1, 1, 2), &[1.0, 2.0]));
        ps.accumulate_grad(id, &Tensor::from_f64s(Shape::new(1, 1, 1, 2), &[0.5, 0.5]));
        assert_eq!(ps.grad(id).unwrap().data(), &[1.5, 2.5]);
        ps.zero_grads();
        assert!(ps.grad(id).is_none());
    }

    #[test]
    fn scoped_names() {
        let mut ps = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut b = ParamBuilder::new(&mut ps, &mut rng);
        let mut sr = b.scope("sr");
        let mut rag = sr.scope("rag0");
        rag.zeros("w", Shape::scalar());
        assert!(ps.id_of("sr.rag0.w").is_some());
    }

    #[test]
    fn same_seed_same_values_across_dtypes() {
        let build = |store32: bool| -> Vec<f64> {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            if store32 {
                let mut ps = ParamStore::<f32>::new();
                let mut b = ParamBuilder::new(&mut ps, &mut rng);
                let id = b.kaiming("w", Shape::new(4, 4, 3, 3), 36);
                ps.value(id).data().iter().map(|&v| v as f64).collect()
            } else {
                let mut ps = ParamStore::<f64>::new();
                let mut b = ParamBuilder::new(&mut ps, &mut rng);
                let id = b.kaiming("w", Shape::new(4, 4, 3, 3), 36);
                ps.value(id).data().to_vec()
            }
        };
        let v32 = build(true);
        let v64 = build(false);
        for (a, b) in v32.iter().zip(v64.iter()) {
            assert!((a - b).abs() < 1e-7);
        }
    }
}
