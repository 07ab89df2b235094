use std::collections::HashMap;
use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Tensor, TensorError};

/// Index of a parameter in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

/// A named, trainable tensor that persists across forward passes.
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Rc<Vec<f64>>,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn numel(&self) -> usize {
        self.value.len()
    }
}

/// Ordered collection of model parameters. Registration order is fixed by
/// model construction, which keeps optimizer sweeps and checkpoints
/// deterministic.
#[derive(Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> ParamId {
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "param {name}: data length does not match shape"
        );
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name {name}"
        );
        let id = self.params.len();
        self.by_name.insert(name.to_string(), id);
        let len = data.len();
        self.params.push(Param {
            name: name.to_string(),
            shape: shape.to_vec(),
            value: Rc::new(data),
            grad: vec![0.0; len],
        });
        ParamId(id)
    }

    /// Uniform init in +-sqrt(1/fan_in).
    pub fn add_uniform(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        rng: &mut ChaCha8Rng,
    ) -> ParamId {
        self.add_uniform_gain(name, shape, fan_in, 1.0, rng)
    }

    /// Uniform init in +-gain*sqrt(1/fan_in).
    pub fn add_uniform_gain(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        gain: f64,
        rng: &mut ChaCha8Rng,
    ) -> ParamId {
        let bound = gain * (1.0 / fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        self.add(name, shape, data)
    }

    pub fn add_zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        let n: usize = shape.iter().product();
        self.add(name, shape, vec![0.0; n])
    }

    pub fn add_ones(&mut self, name: &str, shape: &[usize]) -> ParamId {
        let n: usize = shape.iter().product();
        self.add(name, shape, vec![1.0; n])
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn total_elements(&self) -> usize {
        self.params.iter().map(Param::numel).sum()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.by_name.get(name).map(|&i| &self.params[i])
    }

    pub fn id_by_name(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].value
    }

    /// Mutable access to a parameter's values. Clones the buffer only if a
    /// graph still holds a reference to it.
    pub fn value_mut(&mut self, id: ParamId) -> &mut Vec<f64> {
        Rc::make_mut(&mut self.params[id.0].value)
    }

    /// Overwrite a parameter by name. Panics on unknown names or length
    /// mismatch; intended for checkpoint restore and tests.
    pub fn set_value(&mut self, name: &str, data: Vec<f64>) {
        let idx = *self
            .by_name
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        let p = &mut self.params[idx];
        assert_eq!(p.value.len(), data.len(), "length mismatch for {name}");
        p.value = Rc::new(data);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    /// Bind every parameter into `graph` as a tracked leaf. Exactly one leaf
    /// per parameter per graph, so gradients accumulate in one place.
    pub fn bind(&self, graph: &Graph) -> Result<Bound, TensorError> {
        let mut tensors = Vec::with_capacity(self.params.len());
        for p in &self.params {
            tensors.push(graph.input_shared(Rc::clone(&p.value), &p.shape, true)?);
        }
        Ok(Bound { tensors })
    }

    /// Bind every parameter as an untracked constant (inference).
    pub fn bind_frozen(&self, graph: &Graph) -> Result<Bound, TensorError> {
        let mut tensors = Vec::with_capacity(self.params.len());
        for p in &self.params {
            tensors.push(graph.input_shared(Rc::clone(&p.value), &p.shape, false)?);
        }
        Ok(Bound { tensors })
    }

    /// Copy gradients from the graph leaves back into the store. Parameters
    /// the loss did not reach get zero gradient.
    pub fn absorb_grads(&mut self, graph: &Graph, bound: &Bound) {
        for (p, t) in self.params.iter_mut().zip(bound.tensors.iter()) {
            match graph.grad(t) {
                Some(g) => p.grad = g,
                None => p.grad.iter_mut().for_each(|v| *v = 0.0),
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// Per-graph leaf tensors for a [`ParamStore`], indexed by [`ParamId`].
pub struct Bound {
    tensors: Vec<Tensor>,
}

impl Bound {
    pub fn t(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::component_rng;

    #[test]
    fn bind_and_absorb_round_trip() {
        let mut rng = component_rng(1, "p");
        let mut store = ParamStore::new();
        let w = store.add_uniform("w", &[2, 2], 2, &mut rng);
        let g = Graph::new();
        let bound = store.bind(&g).unwrap();
        let x = g.input(vec![1.0, 2.0], &[2], false).unwrap();
        let y = g.linear(&x, bound.t(w), None).unwrap();
        let loss = g.sum_all(&y).unwrap();
        g.backward(&loss).unwrap();
        store.absorb_grads(&g, &bound);
        // d(sum(Wx))/dW = [x; x]
        assert_eq!(store.get(w).grad, vec![1.0, 2.0, 1.0, 2.0]);
    }

    #[test]
    fn duplicate_binding_is_single_leaf() {
        let mut store = ParamStore::new();
        let w = store.add("w", &[2], vec![3.0, 4.0]);
        let g = Graph::new();
        let bound = store.bind(&g).unwrap();
        // Use the same bound tensor twice; grads must accumulate once per use.
        let s = g.add(bound.t(w), bound.t(w)).unwrap();
        let loss = g.sum_all(&s).unwrap();
        g.backward(&loss).unwrap();
        store.absorb_grads(&g, &bound);
        assert_eq!(store.get(w).grad, vec![2.0, 2.0]);
    }
}
