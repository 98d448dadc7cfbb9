use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Real, Result, Tensor, TensorError};

/// How a parameter is initialised.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Glorot-uniform in `±sqrt(6 / (fan_in + fan_out))`.
    Matrix,
    /// All zeros.
    Bias,
    /// Uniform in `±0.05`.
    Embedding,
}

#[derive(Clone, Debug, Default)]
pub struct ParamSpec {
    entries: Vec<(String, Vec<usize>, ParamKind)>,
}

impl ParamSpec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], kind: ParamKind) -> &mut Self {
        self.entries.push((name.into(), shape.to_vec(), kind));
        self
    }

    pub fn matrix(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> &mut Self {
        self.push(name, &[rows, cols], ParamKind::Matrix)
    }

    pub fn bias(&mut self, name: impl Into<String>, cols: usize) -> &mut Self {
        self.push(name, &[1, cols], ParamKind::Bias)
    }

    pub fn embedding(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> &mut Self {
        self.push(name, &[rows, cols], ParamKind::Embedding)
    }

    pub fn entries(&self) -> &[(String, Vec<usize>, ParamKind)] {
        &self.entries
    }
}

/// Named parameter tensors, iterated in sorted-name order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<F> {
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
    index: BTreeMap<String, usize>,
}

impl<F: Real> Default for ParamStore<F> {
    fn default() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            index: BTreeMap::new(),
        }
    }
}

impl<F: Real> ParamStore<F> {
    /// Builds a store from `(name, tensor)` pairs; order of the input is irrelevant.
    pub fn from_tensors(items: impl IntoIterator<Item = (String, Tensor<F>)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (name, t) in items {
            if map.contains_key(&name) {
                return Err(TensorError::DuplicateParam(name));
            }
            map.insert(name, t);
        }
        let mut store = ParamStore::default();
        for (i, (name, t)) in map.into_iter().enumerate() {
            store.index.insert(name.clone(), i);
            store.names.push(name);
            store.tensors.push(t);
        }
        Ok(store)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<F>> {
        match self.index_of(name) {
            Some(i) => Some(&mut self.tensors[i]),
            None => None,
        }
    }

    pub fn by_index(&self, i: usize) -> &Tensor<F> {
        &self.tensors[i]
    }

    pub(crate) fn by_index_mut(&mut self, i: usize) -> &mut Tensor<F> {
        &mut self.tensors[i]
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }

    pub fn total_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// Initialises every entry of `spec` deterministically from `seed`.
pub fn init_params<F: Real>(spec: &ParamSpec, seed: u64) -> Result<ParamStore<F>> {
    let mut sorted: Vec<_> = spec.entries().iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    for w in sorted.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(TensorError::DuplicateParam(w[0].0.clone()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::with_capacity(sorted.len());
    for (name, shape, kind) in sorted {
        let n: usize = shape.iter().product();
        let data: Vec<F> = match kind {
            ParamKind::Bias => vec![F::zero(); n],
            ParamKind::Embedding => (0..n).map(|_| F::of(rng.gen_range(-0.05..=0.05))).collect(),
            ParamKind::Matrix => {
                let fan_in = if shape.len() > 1 { shape[0] } else { 1 };
                let fan_out = *shape.last().unwrap_or(&1);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| F::of(rng.gen_range(-bound..=bound))).collect()
            }
        };
        items.push((name.clone(), Tensor::new(shape.clone(), data)?));
    }
    ParamStore::from_tensors(items)
}
