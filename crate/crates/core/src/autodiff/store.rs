use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AutodiffError, Gradients, Tensor};

/// Handle to a parameter registered in a [`ParameterStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How a freshly registered parameter is filled.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Constant(f64),
    /// Uniform in `[-b, b]` with `b = sqrt(6 / (fan_in + fan_out))`.
    GlorotUniform,
    Uniform(f64),
}

#[derive(Clone, Debug)]
pub struct Parameter {
    name: String,
    value: Tensor,
    grad: Tensor,
}

impl Parameter {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn grad(&self) -> &Tensor {
        &self.grad
    }
}

/// Owns every trainable tensor together with its accumulated gradient.
///
/// Parameters are addressed by a unique slash-separated path. Registration
/// order is significant: it fixes both the random initialization stream and
/// the serialization order, so two stores built the same way from the same
/// seed are bit-identical.
#[derive(Clone, Debug)]
pub struct ParameterStore {
    params: Vec<Parameter>,
    index: BTreeMap<String, ParamId>,
    seed: u64,
    rng: ChaCha8Rng,
}

impl ParameterStore {
    pub fn new(seed: u64) -> Self {
        ParameterStore {
            params: Vec::new(),
            index: BTreeMap::new(),
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn add(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId, AutodiffError> {
        if self.index.contains_key(name) {
            return Err(AutodiffError::DuplicateParameter(name.to_string()));
        }
        let mut value = Tensor::new(shape.to_vec(), vec![0.0; shape.iter().product()])?;
        match init {
            Init::Zeros => {}
            Init::Constant(c) => value.data_mut().iter_mut().for_each(|v| *v = c),
            Init::GlorotUniform => {
                let (fan_out, fan_in) = if shape.len() >= 2 {
                    (shape[0], shape[1..].iter().product())
                } else {
                    (shape[0], 1)
                };
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                for v in value.data_mut() {
                    *v = self.rng.gen_range(-bound..=bound);
                }
            }
            Init::Uniform(bound) => {
                for v in value.data_mut() {
                    *v = self.rng.gen_range(-bound..=bound);
                }
            }
        }
        self.insert(name, value)
    }

    /// Registers a parameter with an explicit initial value.
    pub fn add_tensor(&mut self, name: &str, value: Tensor) -> Result<ParamId, AutodiffError> {
        if self.index.contains_key(name) {
            return Err(AutodiffError::DuplicateParameter(name.to_string()));
        }
        self.insert(name, value)
    }

    fn insert(&mut self, name: &str, value: Tensor) -> Result<ParamId, AutodiffError> {
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            grad,
        });
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn get(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub(crate) fn value_and_grad_mut(&mut self, id: ParamId) -> (&mut Tensor, &mut Tensor) {
        let p = &mut self.params[id.0];
        (&mut p.value, &mut p.grad)
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Adds a backward pass's parameter gradients into the accumulated slots.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (id, g) in grads.params() {
            let slot = self.params[id.0].grad.data_mut();
            for (s, v) in slot.iter_mut().zip(g.data()) {
                *s += v;
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }
}
