use std::collections::BTreeMap;

use crate::diffcore::{Graph, Real, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::Xoshiro256;

/// How a parameter tensor is initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// uniform in `±sqrt(6 / fan_in)`
    HeUniform { fan_in: usize },
    Uniform(f64),
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], init: Init) -> Self {
        Self { name: name.into(), shape: shape.to_vec(), init }
    }

    /// Conv weight `[out, in, k, k]` plus zero bias `[out]`.
    pub fn conv(prefix: &str, cout: usize, cin: usize, k: usize) -> [Self; 2] {
        [
            Self::new(format!("{prefix}.weight"), &[cout, cin, k, k], Init::HeUniform { fan_in: cin * k * k }),
            Self::new(format!("{prefix}.bias"), &[cout], Init::Zeros),
        ]
    }

    /// Linear weight `[in, out]` plus zero bias `[out]`.
    pub fn linear(prefix: &str, din: usize, dout: usize) -> [Self; 2] {
        [
            Self::new(format!("{prefix}.weight"), &[din, dout], Init::HeUniform { fan_in: din }),
            Self::new(format!("{prefix}.bias"), &[dout], Init::Zeros),
        ]
    }
}

/// Named learnable tensors, ordered by name.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T: Real> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> Default for ParamSet<T> {
    fn default() -> Self {
        Self { tensors: BTreeMap::new() }
    }
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Draws every spec in order from one stream seeded by `seed`.
    pub fn from_specs(specs: &[ParamSpec], seed: u64) -> Result<Self> {
        let mut rng = Xoshiro256::derived(seed, 0x696e_6974);
        let mut set = Self::new();
        for s in specs {
            let t = match s.init {
                Init::HeUniform { fan_in } => {
                    let b = (6.0 / fan_in.max(1) as f64).sqrt();
                    Tensor::from_fn(&s.shape, |_| T::c(rng.uniform(-b, b)))
                }
                Init::Uniform(b) => Tensor::from_fn(&s.shape, |_| T::c(rng.uniform(-b, b))),
                Init::Zeros => Tensor::zeros(&s.shape),
                Init::Ones => Tensor::ones(&s.shape),
            };
            set.insert(s.name.clone(), t)?;
        }
        Ok(set)
    }

    pub fn insert(&mut self, name: String, t: Tensor<T>) -> Result<()> {
        if self.tensors.contains_key(&name) {
            return Err(Error::Validation(format!("duplicate parameter {name}")));
        }
        self.tensors.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors.get(name).ok_or_else(|| Error::Lookup(format!("parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.tensors.get_mut(name).ok_or_else(|| Error::Lookup(format!("parameter {name}")))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet { tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }

    /// Checks that names and shapes match `specs` exactly.
    pub fn check_specs(&self, specs: &[ParamSpec]) -> Result<()> {
        if specs.len() != self.len() {
            return Err(Error::Validation(format!("expected {} parameters, found {}", specs.len(), self.len())));
        }
        for s in specs {
            let t = self.tensors.get(&s.name).ok_or_else(|| Error::Validation(format!("missing parameter {}", s.name)))?;
            if t.shape() != s.shape.as_slice() {
                return Err(Error::Validation(format!("parameter {} has shape {:?}, expected {:?}", s.name, t.shape(), s.shape)));
            }
        }
        Ok(())
    }

    /// Places every tensor on `g`, tracked when `trainable`.
    pub fn bind(&self, g: &Graph<T>, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(k, v)| {
                let var = if trainable { g.param(v.clone()) } else { g.constant(v.clone()) };
                (k.clone(), var)
            })
            .collect();
        Bound { vars }
    }
}

/// Parameters placed on a graph.
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::Lookup(format!("parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn insert(&mut self, name: impl Into<String>, v: Var) {
        self.vars.insert(name.into(), v);
    }
}
