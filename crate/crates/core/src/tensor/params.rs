use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::{Scalar, Tensor};
use crate::error::{structure_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitKind {
    /// Glorot-uniform over a `fan_in x fan_out` weight.
    Glorot,
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: InitKind,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn sample<R: Rng + ?Sized, T: Scalar>(&self, rng: &mut R) -> Tensor<T> {
        match self.init {
            InitKind::Zeros => Tensor::zeros(&self.shape),
            InitKind::Ones => Tensor::filled(&self.shape, T::one()),
            InitKind::Glorot => {
                let fan_in = self.shape[0];
                let fan_out = self.shape.get(1).copied().unwrap_or(1);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit).expect("finite glorot bound");
                let data = (0..self.numel())
                    .map(|_| T::from_f64(dist.sample(rng)))
                    .collect();
                Tensor {
                    shape: self.shape.clone(),
                    data,
                }
            }
        }
    }
}

/// Ordered collection of named parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T: Scalar = f32> {
    specs: Vec<ParamSpec>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            specs: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, spec: ParamSpec, tensor: Tensor<T>) -> Result<usize> {
        if tensor.shape() != spec.shape.as_slice() {
            return structure_err(format!(
                "{}: tensor shape {:?} != declared {:?}",
                spec.name,
                tensor.shape(),
                spec.shape
            ));
        }
        if self.index.contains_key(&spec.name) {
            return structure_err(format!("duplicate parameter name {}", spec.name));
        }
        let id = self.tensors.len();
        self.index.insert(spec.name.clone(), id);
        self.specs.push(spec);
        self.tensors.push(tensor);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.specs[id].name
    }

    pub fn spec(&self, id: usize) -> &ParamSpec {
        &self.specs[id]
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn tensor(&self, id: usize) -> &Tensor<T> {
        &self.tensors[id]
    }

    pub fn tensor_mut(&mut self, id: usize) -> &mut Tensor<T> {
        &mut self.tensors[id]
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.specs
            .iter()
            .map(|s| s.name.as_str())
            .zip(&self.tensors)
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            specs: self.specs.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
            index: self.index.clone(),
        }
    }

    /// Replaces the value of parameter `id`, keeping its shape.
    pub fn set(&mut self, id: usize, tensor: Tensor<T>) -> Result<()> {
        if tensor.shape() != self.specs[id].shape.as_slice() {
            return structure_err(format!(
                "{}: cannot assign shape {:?} to {:?}",
                self.specs[id].name,
                tensor.shape(),
                self.specs[id].shape
            ));
        }
        self.tensors[id] = tensor;
        Ok(())
    }
}

/// Parameter gradients, indexed like the owning [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T: Scalar = f32> {
    slots: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn new(num_params: usize) -> Self {
        Self {
            slots: vec![None; num_params],
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&Tensor<T>> {
        self.slots[id].as_ref()
    }

    pub(crate) fn accumulate(&mut self, id: usize, like: &Tensor<T>, grad: Vec<T>) {
        match &mut self.slots[id] {
            Some(t) => t.data_mut().iter_mut().zip(grad).for_each(|(d, s)| *d += s),
            slot @ None => {
                *slot = Some(Tensor {
                    shape: like.shape().to_vec(),
                    data: grad,
                })
            }
        }
    }

    /// Adds `scale * delta` to the gradient of `id`.
    pub fn add_scaled(&mut self, id: usize, delta: &Tensor<T>, scale: f64) {
        let s = T::from_f64(scale);
        let scaled: Vec<T> = delta.data().iter().map(|&v| s * v).collect();
        self.accumulate(id, delta, scaled);
    }

    /// Sums another gradient set into this one.
    pub fn merge(&mut self, other: Gradients<T>) {
        for (id, slot) in other.slots.into_iter().enumerate() {
            if let Some(t) = slot {
                let like = t.clone();
                self.accumulate(id, &like, t.into_data());
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        let f = T::from_f64(factor);
        for t in self.slots.iter_mut().flatten() {
            t.data_mut().iter_mut().for_each(|v| *v *= f);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.slots.iter().flatten().all(|t| t.all_finite())
    }
}
