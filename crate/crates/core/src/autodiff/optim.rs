use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A named tensor with its optional gradient buffer.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Arc<Tensor>,
    pub requires_grad: bool,
    pub grad: Option<Tensor>,
}

/// Named tensors in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor, requires_grad: bool) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::Config(format!("parameter {name} registered twice")));
        }
        self.index.insert(name.to_string(), self.params.len());
        self.params.push(Param {
            name: name.to_string(),
            value: Arc::new(value),
            requires_grad,
            grad: None,
        });
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Arc<Tensor>> {
        self.index
            .get(name)
            .map(|&i| &self.params[i].value)
            .ok_or_else(|| Error::Lookup(format!("no parameter named {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| Error::Lookup(format!("no parameter named {name}")))?;
        Ok(Arc::make_mut(&mut self.params[i].value))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn set_grads(&mut self, mut grads: BTreeMap<String, Tensor>) {
        for p in &mut self.params {
            p.grad = grads.remove(&p.name);
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }
}

/// Every parameter of a store placed on one tape.
pub struct Bound<'t> {
    vars: Vec<(String, Var<'t>, bool)>,
    index: HashMap<String, usize>,
}

impl<'t> Bound<'t> {
    pub fn get(&self, name: &str) -> Result<Var<'t>> {
        self.index
            .get(name)
            .map(|&i| self.vars[i].1)
            .ok_or_else(|| Error::Lookup(format!("no parameter named {name}")))
    }

    /// Gradients for every trainable parameter, zero where the loss does not
    /// depend on it.
    pub fn gradients(&self, grads: &Gradients) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .filter(|(_, _, trainable)| *trainable)
            .map(|(name, v, _)| (name.clone(), grads.get_or_zeros(*v)))
            .collect()
    }
}

impl ParamStore {
    /// Registers every parameter as a leaf on `tape`; frozen ones become
    /// constants.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        let vars = self
            .params
            .iter()
            .map(|p| {
                let v = if p.requires_grad {
                    tape.param(p.value.clone())
                } else {
                    tape.constant_shared(p.value.clone())
                };
                (p.name.clone(), v, p.requires_grad)
            })
            .collect();
        Bound {
            vars,
            index: self.index.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments kept per parameter name.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    t: u64,
    moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            t: 0,
            moments: HashMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update from the gradients stored on `store`. Every
    /// trainable parameter must carry a gradient.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        for p in store.params.iter().filter(|p| p.requires_grad) {
            match &p.grad {
                None => {
                    return Err(Error::Config(format!("missing gradient for parameter {}", p.name)))
                }
                Some(g) if g.shape() != p.value.shape() => {
                    return Err(Error::dim("adam_step", g.shape(), p.value.shape()))
                }
                _ => {}
            }
        }
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for p in store.params.iter_mut().filter(|p| p.requires_grad) {
            let g = p.grad.take().expect("checked above");
            let n = g.numel();
            let (m, v) = self
                .moments
                .entry(p.name.clone())
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            let w = Arc::make_mut(&mut p.value).data_mut();
            for (i, &gi) in g.data().iter().enumerate() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                w[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(w: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::scalar(w), true).unwrap();
        s
    }

    fn set_grad(s: &mut ParamStore, g: f64) {
        s.set_grads(BTreeMap::from([("w".to_string(), Tensor::scalar(g))]));
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut s = scalar_store(1.0);
        let mut adam = Adam::new(AdamConfig::default());
        set_grad(&mut s, 0.0);
        adam.step(&mut s).unwrap();
        assert_eq!(s.get("w").unwrap().item(), 1.0);
    }

    #[test]
    fn descends_on_square() {
        let mut s = scalar_store(1.0);
        let mut adam = Adam::new(AdamConfig {
            lr: 0.1,
            ..Default::default()
        });
        set_grad(&mut s, 2.0);
        adam.step(&mut s).unwrap();
        assert!(s.get("w").unwrap().item() < 1.0);
    }

    #[test]
    fn converges_on_shifted_quadratic() {
        let mut s = scalar_store(0.0);
        let mut adam = Adam::new(AdamConfig {
            lr: 0.1,
            ..Default::default()
        });
        for _ in 0..500 {
            let w = s.get("w").unwrap().item();
            set_grad(&mut s, 2.0 * (w - 3.0));
            adam.step(&mut s).unwrap();
        }
        let w = s.get("w").unwrap().item();
        assert!((w - 3.0).abs() < 1e-3, "w={w}");
    }

    #[test]
    fn missing_gradient_names_parameter() {
        let mut s = scalar_store(1.0);
        let mut adam = Adam::new(AdamConfig::default());
        let err = adam.step(&mut s).unwrap_err().to_string();
        assert!(err.contains("w"), "{err}");
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = scalar_store(1.0);
        assert!(s.insert("w", Tensor::scalar(0.0), true).is_err());
    }
}
