use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors, in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Zero-filled buffers shaped like each parameter.
    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.values.iter().map(|t| vec![0.0; t.len()]).collect()
    }

    /// Overwrites values from `(name, tensor)` pairs; every parameter must be
    /// present with a matching shape. Unknown names are ignored.
    pub fn load_from(&mut self, entries: &[(String, Tensor)]) -> Result<()> {
        for (i, name) in self.names.iter().enumerate() {
            let (_, t) = entries
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::invalid(format!("checkpoint lacks parameter {name}")))?;
            if t.shape() != self.values[i].shape() {
                return Err(Error::shape(
                    "load_from",
                    format!("{name}: {:?} vs {:?}", t.shape(), self.values[i].shape()),
                ));
            }
            self.values[i] = t.clone();
        }
        Ok(())
    }
}
