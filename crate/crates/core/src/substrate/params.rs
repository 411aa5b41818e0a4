use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Array, Checkpoint};
use crate::error::{Error, Result};
use crate::seed::derive_seed;

/// A trainable value and its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Array,
    pub grad: Array,
}

pub const PARAM_PREFIX: &str = "param/";
pub const BUFFER_PREFIX: &str = "buffer/";

/// Named trainable arrays plus non-trainable buffers (batch-norm running
/// statistics). Iteration order is the lexicographic name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
    buffers: BTreeMap<String, Array>,
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    Constant(f64),
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    Xavier { fan_in: usize, fan_out: usize },
    Normal(f64),
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Array) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter {name:?}")));
        }
        let grad = Array::zeros(value.shape());
        self.params.insert(name.to_string(), Param { value, grad });
        Ok(())
    }

    /// Creates a parameter initialised from a stream keyed by `(seed, name)`,
    /// so the value does not depend on creation order.
    pub fn init(&mut self, name: &str, shape: &[usize], init: Init, seed: u64) -> Result<()> {
        let n: usize = shape.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, name, 0));
        let data: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Constant(c) => vec![c; n],
            Init::Xavier { fan_in, fan_out } => {
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-a..a)).collect()
            }
            Init::Normal(std) => (0..n).map(|_| std * standard_normal(&mut rng)).collect(),
        };
        self.insert(name, Array::new(shape.to_vec(), data)?)
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    pub fn value(&self, name: &str) -> Result<&Array> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name:?}")))
    }

    pub fn value_mut(&mut self, name: &str) -> Option<&mut Array> {
        self.params.get_mut(name).map(|p| &mut p.value)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    /// Gradients are never reset implicitly; call this between steps.
    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad.data_mut().fill(0.0);
        }
    }

    pub(crate) fn accumulate_grad(&mut self, name: &str, g: &Array) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name:?}")))?;
        if p.grad.shape() != g.shape() {
            return Err(Error::shape("accumulate_grad", p.grad.shape(), g.shape()));
        }
        p.grad.add_assign(g);
        Ok(())
    }

    pub fn buffer(&self, name: &str) -> Option<&Array> {
        self.buffers.get(name)
    }

    pub fn set_buffer(&mut self, name: &str, value: Array) {
        self.buffers.insert(name.to_string(), value);
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&str, &Array)> {
        self.buffers.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Writes values as `param/<name>` and buffers as `buffer/<name>`.
    /// Gradients are not saved.
    pub fn save_into(&self, ck: &mut Checkpoint) {
        for (k, p) in &self.params {
            ck.insert(format!("{PARAM_PREFIX}{k}"), p.value.clone());
        }
        for (k, b) in &self.buffers {
            ck.insert(format!("{BUFFER_PREFIX}{k}"), b.clone());
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut s = ParamStore::new();
        for (k, a) in &ck.arrays {
            if let Some(name) = k.strip_prefix(PARAM_PREFIX) {
                s.insert(name, a.clone())?;
            } else if let Some(name) = k.strip_prefix(BUFFER_PREFIX) {
                s.set_buffer(name, a.clone());
            }
        }
        Ok(s)
    }

    /// Removes every parameter and buffer whose name starts with `prefix`.
    pub fn remove_prefix(&mut self, prefix: &str) {
        self.params.retain(|k, _| !k.starts_with(prefix));
        self.buffers.retain(|k, _| !k.starts_with(prefix));
    }
}

/// Box-Muller draw; keeps the dependency set to `rand` core.
pub(crate) fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
