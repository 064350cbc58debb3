use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major array of 64-bit floats with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorValue {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Option<Vec<f64>>,
}

impl TensorValue {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Self { shape, data, grad: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![0.0; n], grad: None }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// (rows, cols) view: vectors are a single row, higher ranks fold the
    /// leading dimensions into rows.
    pub fn matrix_dims(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [] => (1, 1),
            [n] => (1, *n),
            [.., c] => (self.data.len() / c.max(&1), *c),
        }
    }
}

/// Architecture hyperparameters shared by both models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    /// Width of the factorized token embedding, if used.
    pub embed_dim: Option<usize>,
}

impl ModelConfig {
    /// Desk-scale default: 2 layers, d=64, 4 heads.
    pub fn desk() -> Self {
        Self { n_layers: 2, d_model: 64, n_heads: 4, d_ff: 128, embed_dim: None }
    }

    /// Full-size ingredient editor: 6 layers, hidden size 128.
    pub fn paper_editor() -> Self {
        Self { n_layers: 6, d_model: 128, n_heads: 8, d_ff: 512, embed_dim: None }
    }

    /// Full-size step generator: 8 layers, hidden size 256, 64-dim factorized
    /// embedding.
    pub fn paper_generator() -> Self {
        Self { n_layers: 8, d_model: 256, n_heads: 8, d_ff: 1024, embed_dim: Some(64) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_ff == 0 || self.embed_dim == Some(0) {
            return Err(Error::Config("zero-width layer".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named model parameters in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore {
    pub config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<TensorValue>,
    index: HashMap<String, usize>,
}

impl ParameterStore {
    pub fn new(config: ModelConfig) -> Self {
        Self { config, names: Vec::new(), tensors: Vec::new(), index: HashMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: TensorValue) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Validation(format!("duplicate parameter `{name}`")));
        }
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(ParamId(id))
    }

    pub fn add_zeros(&mut self, name: &str, shape: Vec<usize>) -> Result<ParamId> {
        self.insert(name, TensorValue::zeros(shape))
    }

    pub fn add_filled(&mut self, name: &str, shape: Vec<usize>, value: f64) -> Result<ParamId> {
        let mut t = TensorValue::zeros(shape);
        t.data.fill(value);
        self.insert(name, t)
    }

    pub fn add_normal<R: Rng>(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        std: f64,
        rng: &mut R,
    ) -> Result<ParamId> {
        let normal = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
        let mut t = TensorValue::zeros(shape);
        for x in &mut t.data {
            *x = normal.sample(rng);
        }
        self.insert(name, t)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn require(&self, name: &str) -> Result<ParamId> {
        self.id(name).ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))
    }

    pub fn get(&self, id: ParamId) -> &TensorValue {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut TensorValue {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &TensorValue)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(TensorValue::numel).sum()
    }

    /// Adds `grads` into each parameter's gradient buffer.
    pub fn accumulate_grads(&mut self, grads: &super::Gradients) {
        for (i, g) in grads.iter() {
            let t = &mut self.tensors[i.0];
            let buf = t.grad.get_or_insert_with(|| vec![0.0; t.data.len()]);
            for (b, x) in buf.iter_mut().zip(g) {
                *b += x;
            }
        }
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for t in &mut self.tensors {
            if let Some(g) = &mut t.grad {
                g.iter_mut().for_each(|x| *x *= factor);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            t.grad = None;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|x| x.is_finite()))
    }
}
