use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{GaitError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorKind {
    /// Trainable, subject to weight decay.
    Weight,
    /// Trainable, exempt from weight decay (batch-norm affine terms).
    Affine,
    /// Non-trainable state such as batch-norm running statistics.
    Buffer,
}

impl TensorKind {
    pub fn trainable(self) -> bool {
        !matches!(self, TensorKind::Buffer)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: TensorKind,
    pub data: Vec<f64>,
}

/// Handle into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Flat registry of every named tensor of a network.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: Vec<NamedTensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        kind: TensorKind,
        data: Vec<f64>,
    ) -> ParamId {
        let name = name.into();
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor {name} shape/data mismatch"
        );
        assert!(!self.index.contains_key(&name), "duplicate tensor {name}");
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.tensors.push(NamedTensor {
            name,
            shape,
            kind,
            data,
        });
        ParamId(id)
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.tensors[id.0].data
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.tensors[id.0].data
    }

    pub fn tensor(&self, id: ParamId) -> &NamedTensor {
        &self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&NamedTensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &NamedTensor)> {
        self.tensors.iter().enumerate().map(|(i, t)| (ParamId(i), t))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut NamedTensor> {
        self.tensors.iter_mut()
    }

    pub fn num_trainable(&self) -> usize {
        self.tensors
            .iter()
            .filter(|t| t.kind.trainable())
            .map(|t| t.data.len())
            .sum()
    }

    /// Overwrites tensors of `self` from `other` by name. Every tensor of
    /// `self` must be present in `other` with the same shape; extra tensors in
    /// `other` are ignored.
    pub fn copy_from(&mut self, other: &ParamStore) -> Result<()> {
        for t in &mut self.tensors {
            let src = other.by_name(&t.name).ok_or_else(|| {
                GaitError::Checkpoint(format!("missing tensor {}", t.name))
            })?;
            if src.shape != t.shape {
                return Err(GaitError::Checkpoint(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    t.name, src.shape, t.shape
                )));
            }
            t.data.copy_from_slice(&src.data);
        }
        Ok(())
    }
}

/// Gradient buffers aligned with a [`ParamStore`]; buffers get empty slots.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    slots: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            slots: store
                .tensors
                .iter()
                .map(|t| {
                    if t.kind.trainable() {
                        vec![0.0; t.data.len()]
                    } else {
                        Vec::new()
                    }
                })
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.slots[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.slots[id.0]
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.slots.iter_mut().zip(&other.slots) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.slots.iter_mut().flatten().for_each(|v| *v *= factor);
    }

    pub fn slots(&self) -> &[Vec<f64>] {
        &self.slots
    }

    pub fn is_finite(&self) -> bool {
        self.slots.iter().flatten().all(|v| v.is_finite())
    }
}
