use std::collections::HashMap;

use crate::{Result, Scalar, Tensor, TensorError};

/// A named trainable tensor plus its SGD momentum buffer.
pub struct Parameter<T: Scalar = f32> {
    name: String,
    tensor: Tensor<T>,
    pub(crate) momentum: Vec<T>,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, tensor: Tensor<T>) -> Self {
        let momentum = vec![T::zero(); tensor.numel()];
        Parameter {
            name: name.into(),
            tensor,
            momentum,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.tensor
    }

    pub fn momentum(&self) -> &[T] {
        &self.momentum
    }

    pub fn numel(&self) -> usize {
        self.tensor.numel()
    }
}

/// Ordered collection of uniquely named parameters.
pub struct ParamStore<T: Scalar = f32> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a new leaf tensor under `name` and return a handle to it.
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<T>) -> Result<Tensor<T>> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(TensorError::DuplicateParam(name));
        }
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(TensorError::shape("param", format!("invalid parameter name {name:?}")));
        }
        let tensor = Tensor::leaf(shape, data)?;
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Parameter::new(name, tensor.clone()));
        Ok(tensor)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| self.params[i].tensor())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalars across all parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(Parameter::numel).sum()
    }

    /// Scalar count of parameters whose name starts with `prefix`.
    pub fn numel_with_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(Parameter::numel)
            .sum()
    }

    pub fn zero_grads(&self) {
        for p in &self.params {
            p.tensor.zero_grad();
        }
    }

    /// Copy values from `other` by name. Every parameter must be present
    /// with the same shape.
    pub fn assign(&self, entries: &[(String, Vec<usize>, Vec<T>)]) -> Result<()> {
        if entries.len() != self.params.len() {
            return Err(TensorError::Checkpoint(format!(
                "checkpoint has {} tensors, model has {}",
                entries.len(),
                self.params.len()
            )));
        }
        for (name, shape, data) in entries {
            let t = self
                .get(name)
                .ok_or_else(|| TensorError::UnknownParam(name.clone()))?;
            if t.shape() != shape.as_slice() {
                return Err(TensorError::Checkpoint(format!(
                    "`{name}` has shape {shape:?}, model expects {:?}",
                    t.shape()
                )));
            }
            t.set_data(data);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut store = ParamStore::<f32>::new();
        store.add("conv.weight", &[2], vec![0.0; 2]).unwrap();
        assert!(matches!(
            store.add("conv.weight", &[2], vec![0.0; 2]),
            Err(TensorError::DuplicateParam(_))
        ));
    }

    #[test]
    fn counts_by_prefix() {
        let mut store = ParamStore::<f32>::new();
        store.add("a.w", &[2, 3], vec![0.0; 6]).unwrap();
        store.add("a.b", &[2], vec![0.0; 2]).unwrap();
        store.add("b.w", &[4], vec![0.0; 4]).unwrap();
        assert_eq!(store.numel(), 12);
        assert_eq!(store.numel_with_prefix("a."), 8);
    }
}
