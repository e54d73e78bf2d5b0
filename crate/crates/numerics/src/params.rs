//! Named parameter storage and its binding onto a tape.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{NumericsError, Result};
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::{Scalar, Tensor};

/// Initialization rule for a parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Constant(f64),
    /// Zero-mean normal with the given standard deviation.
    Normal(f64),
    /// He-normal: std = sqrt(2 / fan_in).
    HeNormal { fan_in: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: impl Into<Vec<usize>>, init: Init) -> Self {
        ParamSpec { name: name.into(), shape: shape.into(), init }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Tensor<f32> {
        let n: usize = self.shape.iter().product();
        let data = match self.init {
            Init::Zeros => vec![0.0; n],
            Init::Constant(v) => vec![v as f32; n],
            Init::Normal(std) => normal_samples(n, std, rng),
            Init::HeNormal { fan_in } => normal_samples(n, (2.0 / fan_in.max(1) as f64).sqrt(), rng),
        };
        Tensor::new(self.shape.clone(), data).expect("spec shape matches sample count")
    }
}

fn normal_samples(n: usize, std: f64, rng: &mut impl Rng) -> Vec<f32> {
    let dist = Normal::new(0.0, std).expect("finite std");
    (0..n).map(|_| dist.sample(rng) as f32).collect()
}

/// Ordered, uniquely named tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T: Scalar = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore { names: Vec::new(), tensors: Vec::new(), index: HashMap::new() }
    }
}

impl ParamStore<f32> {
    /// Samples every spec in order from one RNG stream.
    pub fn from_specs(specs: &[ParamSpec], rng: &mut impl Rng) -> Result<Self> {
        let mut store = ParamStore::default();
        for spec in specs {
            store.insert(&spec.name, spec.sample(rng))?;
        }
        Ok(store)
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn insert(&mut self, name: &str, tensor: Tensor<T>) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(NumericsError::Usage(format!("duplicate parameter name {name}")));
        }
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.position(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.position(name).map(move |i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Places every parameter on `tape`; `trainable(name)` decides which
    /// ones require gradients.
    pub fn bind<'s>(&'s self, tape: &Tape<T>, trainable: impl Fn(&str) -> bool) -> Result<Bound<'s>> {
        let mut vars = Vec::with_capacity(self.len());
        for (name, t) in self.iter() {
            vars.push(tape.leaf(t.clone(), trainable(name))?);
        }
        Ok(Bound { vars, index: &self.index })
    }
}

/// Parameters of a [`ParamStore`] placed on a tape.
pub struct Bound<'s> {
    vars: Vec<Var>,
    index: &'s HashMap<String, usize>,
}

impl Bound<'_> {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| NumericsError::Usage(format!("unknown parameter {name}")))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients in store order; `None` for frozen or unused parameters.
    pub fn collect<T: Scalar>(&self, grads: &mut Gradients<T>) -> Vec<Option<Tensor<T>>> {
        self.vars.iter().map(|&v| grads.take(v)).collect()
    }
}
