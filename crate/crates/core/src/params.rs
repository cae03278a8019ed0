//! Named learnable parameters.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tape::{Gradients, Tape};
use crate::tensor::{Shape, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor4,
    pub grad: Tensor4,
}

/// Ordered collection of uniquely named parameters. Insertion order is the
/// canonical order used by checkpoints and the optimizer.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelParams {
    params: Vec<Parameter>,
    index: HashMap<String, usize>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor4) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::DuplicateParameter(name));
        }
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        let grad = Tensor4::zeros(value.shape());
        self.params.push(Parameter { name, value, grad });
        Ok(ParamId(id))
    }

    /// Inserts a He-normal tensor (std `sqrt(2 / fan_in)`). The stream is keyed
    /// on `(seed, name)`, so a parameter's initial value does not depend on
    /// which other parameters exist.
    pub fn insert_he(&mut self, name: &str, shape: Shape, fan_in: usize, seed: u64) -> Result<ParamId> {
        let std = (2.0 / fan_in as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(name.as_bytes()));
        let normal = Normal::new(0.0, std).expect("positive std");
        let data = (0..shape.len()).map(|_| normal.sample(&mut rng)).collect();
        self.insert(name, Tensor4::new(shape, data)?)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count across all parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| Error::UnknownParameter(name.to_owned()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn by_id(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn by_id_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, name: &str) -> Result<&Tensor4> {
        self.get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::UnknownParameter(name.to_owned()))
    }

    /// Replaces a value, keeping the shape.
    pub fn set_value(&mut self, name: &str, value: Tensor4) -> Result<()> {
        let id = self.id(name)?;
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "set_value",
                lhs: p.value.shape(),
                rhs: value.shape(),
            });
        }
        p.value = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = Tensor4::zeros(p.value.shape());
        }
    }

    /// Adds the gradients of every parameter bound on `tape` into `grad`.
    pub fn accumulate(&mut self, tape: &Tape, grads: &Gradients) {
        for (id, g) in grads.param_grads(tape) {
            let dst = self.params[id.0].grad.data_mut();
            for (d, v) in dst.iter_mut().zip(g) {
                *d += v;
            }
        }
    }

    /// Keeps only the parameters whose names satisfy `keep`, preserving order.
    pub fn filtered(&self, keep: impl Fn(&str) -> bool) -> ModelParams {
        let mut out = ModelParams::new();
        for p in self.params.iter().filter(|p| keep(&p.name)) {
            out.insert(p.name.clone(), p.value.clone())
                .expect("names unique in source");
        }
        out
    }
}

/// 64-bit FNV-1a; stable across platforms and releases.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut p = ModelParams::new();
        p.insert("a", Tensor4::scalar(1.0)).unwrap();
        assert!(matches!(
            p.insert("a", Tensor4::scalar(2.0)),
            Err(Error::DuplicateParameter(_))
        ));
    }

    #[test]
    fn he_init_is_keyed_by_name_and_seed() {
        let shape = Shape::new(4, 3, 3, 3);
        let mut a = ModelParams::new();
        a.insert_he("x.weight", shape, 27, 7).unwrap();
        let mut b = ModelParams::new();
        b.insert_he("other", shape, 27, 7).unwrap();
        b.insert_he("x.weight", shape, 27, 7).unwrap();
        assert_eq!(a.value("x.weight").unwrap(), b.value("x.weight").unwrap());
        assert_ne!(a.value("x.weight").unwrap(), b.value("other").unwrap());
    }

    #[test]
    fn he_init_scale() {
        let mut p = ModelParams::new();
        p.insert_he("w", Shape::new(64, 64, 3, 3), 576, 1).unwrap();
        let v = p.value("w").unwrap().data();
        let var = v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
        assert!((var - 2.0 / 576.0).abs() < 0.1 * 2.0 / 576.0);
    }
}
