use std::collections::HashMap;

use super::tensor::Mat;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub type ParamId = usize;

/// Named tensors in registration order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Mat<T>>,
    index: HashMap<String, ParamId>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self { names: Vec::new(), tensors: Vec::new(), index: HashMap::new() }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn insert(&mut self, name: impl Into<String>, value: Mat<T>) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(value);
        id
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id]
    }

    pub fn get(&self, id: ParamId) -> &Mat<T> {
        &self.tensors[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat<T> {
        &mut self.tensors[id]
    }

    pub fn by_name(&self, name: &str) -> Option<&Mat<T>> {
        self.id(name).map(|id| &self.tensors[id])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Mat<T>> {
        self.id(name).map(move |id| &mut self.tensors[id])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Mat::len).sum()
    }

    /// Zero tensors shaped like the store, for gradient accumulation.
    pub fn zeros_like(&self) -> Grads<T> {
        Grads { tensors: self.tensors.iter().map(|t| Mat::zeros(t.rows, t.cols)).collect() }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Mat::cast).collect(),
            index: self.index.clone(),
        }
    }
}

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads<T> {
    pub tensors: Vec<Mat<T>>,
}

impl<T: Scalar> Grads<T> {
    pub fn add_assign(&mut self, other: &Grads<T>) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: T) {
        for t in &mut self.tensors {
            for v in &mut t.data {
                *v *= s;
            }
        }
    }

    pub fn norm(&self) -> T {
        self.tensors.iter().flat_map(|t| t.data.iter()).map(|v| *v * *v).sum::<T>().sqrt()
    }

    /// Fails with the name of the first parameter whose gradient is not finite.
    pub fn check_finite(&self, store: &ParamStore<T>) -> Result<()> {
        match self.tensors.iter().position(|t| !t.is_finite()) {
            Some(id) => Err(Error::numerical(format!("non-finite gradient for parameter {}", store.name(id)))),
            None => Ok(()),
        }
    }
}
