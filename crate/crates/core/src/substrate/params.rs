use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

use super::graph::{Graph, Var};
use super::tensor::{Real, Tensor};

/// A learned tensor plus its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub trainable: bool,
}

impl<T: Real> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            value,
            grad,
            trainable: true,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameters in registration order. Names are hierarchical
/// (`"synthesis.b8.conv0.weight"`) and stable across runs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    params: Vec<Param<T>>,
    index: HashMap<String, usize>,
}

/// Graph leaves for every parameter of a set, indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Same bindings with parameter `id` replaced by `v`.
    pub fn with(mut self, id: ParamId, v: Var) -> Self {
        self.vars[id.0] = v;
        self
    }
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.params.len());
        self.names.push(name);
        self.params.push(Param::new(value));
        ParamId(self.params.len() - 1)
    }

    /// Standard-normal initialised parameter.
    pub fn add_normal(&mut self, name: impl Into<String>, shape: &[usize], rng: &mut impl Rng) -> ParamId {
        let t = Tensor::from_fn(shape, |_| T::of(rng.sample::<f64, _>(StandardNormal)));
        self.add(name, t)
    }

    pub fn add_const(&mut self, name: impl Into<String>, shape: &[usize], v: f64) -> ParamId {
        self.add(name, Tensor::full(shape, T::of(v)))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Param<T>)> {
        self.names
            .iter()
            .zip(&self.params)
            .enumerate()
            .map(|(i, (n, p))| (ParamId(i), n.as_str(), p))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Param::zero_grad);
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Register every parameter value as a graph leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> Bound {
        Bound {
            vars: self.params.iter().map(|p| g.leaf(p.value.clone())).collect(),
        }
    }

    /// Differentiate `loss` with respect to every trainable parameter and add
    /// the result into `Param::grad`.
    pub fn accumulate_grads(&mut self, g: &mut Graph<T>, bound: &Bound, loss: Var) -> Result<()> {
        let ids: Vec<usize> = (0..self.params.len()).filter(|&i| self.params[i].trainable).collect();
        let wrt: Vec<Var> = ids.iter().map(|&i| bound.vars[i]).collect();
        let grads = g.grad(loss, &wrt)?;
        for (&i, gv) in ids.iter().zip(grads) {
            let gt = g.value(gv);
            if !gt.is_finite() {
                return Err(Error::NonFinite {
                    what: "parameter gradient".into(),
                    location: Some(self.names[i].clone()),
                });
            }
            let p = &mut self.params[i];
            p.grad
                .data_mut()
                .iter_mut()
                .zip(gt.data())
                .for_each(|(a, &b)| *a = *a + b);
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                    trainable: p.trainable,
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Overwrite values from `(name, tensor)` pairs; every parameter must be
    /// present with a matching shape.
    pub fn load_values(&mut self, values: &HashMap<String, Tensor<T>>) -> Result<()> {
        for (name, p) in self.names.iter().zip(self.params.iter_mut()) {
            let v = values
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if v.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: stored shape {:?} differs from expected {:?}",
                    v.shape(),
                    p.value.shape()
                )));
            }
            p.value = v.clone();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grads_accumulate_and_reset() {
        let mut ps = ParamSet::<f64>::new();
        let a = ps.add("a", Tensor::full(&[2], 3.0));
        for _ in 0..2 {
            let mut g = Graph::new();
            let b = ps.bind(&mut g);
            let sq = g.square(b.var(a)).unwrap();
            let loss = g.sum(sq).unwrap();
            ps.accumulate_grads(&mut g, &b, loss).unwrap();
        }
        assert_eq!(ps.get(a).grad.data(), &[12.0, 12.0]);
        ps.zero_grad();
        assert_eq!(ps.get(a).grad.data(), &[0.0, 0.0]);
        assert_eq!(ps.get(a).grad.shape(), ps.get(a).value.shape());
    }

    #[test]
    fn frozen_params_get_no_grad() {
        let mut ps = ParamSet::<f64>::new();
        let a = ps.add("a", Tensor::full(&[1], 3.0));
        ps.get_mut(a).trainable = false;
        let mut g = Graph::new();
        let b = ps.bind(&mut g);
        let loss = g.sum(b.var(a)).unwrap();
        ps.accumulate_grads(&mut g, &b, loss).unwrap();
        assert_eq!(ps.get(a).grad.data(), &[0.0]);
    }
}
