//! Named trainable parameters and their initializers.

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::scalar::Real;
use crate::tensor::{Gradients, Graph, Tensor, Var};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    /// The leaf bound for this parameter by [`ParamStore::bind`].
    pub fn var(self, bound: &[Var]) -> Var {
        bound[self.0]
    }

    pub fn index(self) -> usize {
        self.0
    }
}

/// Coarse grouping used for gradient-check reporting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    Embeddings,
    CharCnn,
    Gru,
    Attention,
    Head,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 5] = [
        ParamGroup::Embeddings,
        ParamGroup::CharCnn,
        ParamGroup::Gru,
        ParamGroup::Attention,
        ParamGroup::Head,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Embeddings => "embeddings",
            ParamGroup::CharCnn => "char_cnn",
            ParamGroup::Gru => "gru",
            ParamGroup::Attention => "attention",
            ParamGroup::Head => "head",
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    groups: Vec<ParamGroup>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            groups: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, tensor: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(Error::Contract(format!("duplicate parameter name {name}")));
        }
        self.names.push(name);
        self.groups.push(group);
        self.tensors.push(tensor);
        Ok(ParamId(self.tensors.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn group(&self, id: ParamId) -> ParamGroup {
        self.groups[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    /// Indices of the parameters in `group`.
    pub fn group_indices(&self, group: ParamGroup) -> Vec<usize> {
        (0..self.groups.len()).filter(|&i| self.groups[i] == group).collect()
    }

    /// Records every parameter as a leaf on `g`; index the result with
    /// [`ParamId::var`].
    pub fn bind(&self, g: &mut Graph<T>) -> Vec<Var> {
        self.tensors.iter().map(|t| g.leaf(t)).collect()
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Adds the gradients of a backward pass into each parameter's buffer.
    pub fn accumulate(&mut self, grads: &Gradients<T>, bound: &[Var]) -> Result<()> {
        for (t, v) in self.tensors.iter_mut().zip(bound) {
            if let Some(d) = grads.get(*v) {
                t.accumulate_grad(d)?;
            }
        }
        Ok(())
    }

    /// Euclidean norm of all gradient buffers taken together.
    pub fn grad_norm(&self) -> T {
        self.tensors
            .iter()
            .filter_map(|t| t.grad())
            .flat_map(|g| g.iter())
            .map(|&x| x * x)
            .sum::<T>()
            .sqrt()
    }

    pub fn scale_grads(&mut self, s: T) {
        for t in &mut self.tensors {
            if let Some(g) = t.grad_mut() {
                g.iter_mut().for_each(|x| *x *= s);
            }
        }
    }

    /// Name of the first parameter whose values or gradient are not finite.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.tensors.iter().position(|t| !t.all_finite()).map(|i| self.names[i].as_str())
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// Xavier/Glorot uniform: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<T: Real>(fan_in: usize, fan_out: usize, rng: &mut SeededRng) -> Tensor<T> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(&[fan_in, fan_out], a, rng)
}

/// `U(-a, a)` entries of the given shape.
pub fn uniform<T: Real>(shape: &[usize], a: f64, rng: &mut SeededRng) -> Tensor<T> {
    let n = shape.iter().product();
    let values = (0..n).map(|_| T::lit(rng.uniform_range(-a, a))).collect();
    Tensor::new(shape.to_vec(), values).expect("positive shape")
}
