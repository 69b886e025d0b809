//! Named parameter and buffer storage shared by all layers of a model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BufferId(usize);

/// How a parameter is filled by [`ParamStore::initialize`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform on ±√(6 / fan_in).
    HeUniform { fan_in: usize },
    Zeros,
    Ones,
}

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
    pub init: Init,
}

/// Non-trainable state such as batch-norm running statistics.
#[derive(Debug, Clone)]
pub struct Buffer<T> {
    pub name: String,
    pub value: Tensor<T>,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    buffers: Vec<Buffer<T>>,
}

/// Tape variables standing for every parameter of a store during one
/// forward pass.
#[derive(Debug, Clone)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Wraps externally created leaves, one per parameter in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Binding { vars }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            buffers: Vec::new(),
        }
    }

    pub fn add_param(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> ParamId {
        let value = match init {
            Init::Ones => Tensor::ones(shape.to_vec()),
            _ => Tensor::zeros(shape.to_vec()),
        };
        self.params.push(Param {
            name: name.into(),
            value,
            grad: None,
            init,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor<T>) -> BufferId {
        self.buffers.push(Buffer {
            name: name.into(),
            value,
        });
        BufferId(self.buffers.len() - 1)
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[Buffer<T>] {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut [Buffer<T>] {
        &mut self.buffers
    }

    pub fn param(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Total number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Fills every parameter from its [`Init`] rule using one generator
    /// seeded with `seed`, visiting parameters in registration order.
    pub fn initialize(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut self.params {
            match p.init {
                Init::HeUniform { fan_in } => {
                    let bound = (6.0 / fan_in as f64).sqrt();
                    for v in p.value.data_mut() {
                        *v = T::from_f64(rng.gen_range(-bound..bound));
                    }
                }
                Init::Zeros => p.value.data_mut().fill(T::zero()),
                Init::Ones => p.value.data_mut().fill(T::one()),
            }
            p.grad = None;
        }
    }

    /// Records every parameter as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Binding {
        Binding {
            vars: self.params.iter().map(|p| tape.leaf(p.value.clone())).collect(),
        }
    }

    /// Adds the gradients of a backward pass into each parameter's
    /// gradient slot.
    pub fn accumulate_grads(&mut self, grads: &Gradients<T>, binding: &Binding) -> Result<()> {
        if binding.vars.len() != self.params.len() {
            return Err(Error::Usage(format!(
                "binding has {} vars for {} parameters",
                binding.vars.len(),
                self.params.len()
            )));
        }
        for (p, &v) in self.params.iter_mut().zip(&binding.vars) {
            if let Some(g) = grads.get(v) {
                match &mut p.grad {
                    Some(acc) => acc.add_assign(g),
                    slot => *slot = Some(g.clone()),
                }
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    pub(crate) fn buffer_pair_mut(&mut self, a: BufferId, b: BufferId) -> (&mut [T], &mut [T]) {
        assert!(a.0 < b.0, "buffer pair must be registered in order");
        let (lo, hi) = self.buffers.split_at_mut(b.0);
        (lo[a.0].value.data_mut(), hi[0].value.data_mut())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn he_uniform_spread_matches_fan_in() {
        let mut store = ParamStore::<f64>::new();
        let fan_in = 256 * 9;
        store.add_param("w", &[256, 256, 3, 3], Init::HeUniform { fan_in });
        store.initialize(0);
        let w = store.params()[0].value.data();
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let std = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        // uniform(−b, b) has deviation b/√3 = √(2 / fan_in)
        let want = (2.0 / fan_in as f64).sqrt();
        assert!((std / want - 1.0).abs() < 0.05, "{std} vs {want}");
    }

    #[test]
    fn initialize_is_seeded() {
        let mut a = ParamStore::<f32>::new();
        a.add_param("w", &[4, 3, 3, 3], Init::HeUniform { fan_in: 27 });
        a.add_param("g", &[4], Init::Ones);
        let mut b = a.clone();
        a.initialize(5);
        b.initialize(5);
        assert_eq!(a.params()[0].value, b.params()[0].value);
        b.initialize(6);
        assert_ne!(a.params()[0].value, b.params()[0].value);
        assert!(a.params()[1].value.data().iter().all(|&v| v == 1.0));
        let bound = (6.0f32 / 27.0).sqrt();
        assert!(a.params()[0].value.data().iter().all(|v| v.abs() < bound));
    }
}
