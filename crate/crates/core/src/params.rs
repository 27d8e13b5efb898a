//! Named parameter storage.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{invalid, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

static NEXT_TAG: AtomicU64 = AtomicU64::new(1);

fn fresh_tag() -> u64 {
    NEXT_TAG.fetch_add(1, Ordering::Relaxed)
}

/// Ordered collection of named parameter tensors.
///
/// Every store carries a process-unique tag so gradients can be matched to the
/// store that produced them. Cloning yields a new tag.
#[derive(Debug)]
pub struct ParamStore<T> {
    tag: u64,
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Real> Clone for ParamStore<T> {
    fn clone(&self) -> Self {
        ParamStore {
            tag: fresh_tag(),
            names: self.names.clone(),
            values: self.values.clone(),
        }
    }
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            tag: fresh_tag(),
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn tag(&self) -> u64 {
        self.tag
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let id = ParamId(self.values.len());
        self.names.push(name.into());
        self.values.push(value);
        id
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub(crate) fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    /// Replaces a parameter value; the shape must not change.
    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let cur = &self.values[id.0];
        if cur.shape() != value.shape() {
            return Err(invalid(alloc::format!(
                "parameter {} has shape {:?}, got {:?}",
                self.names[id.0],
                cur.shape(),
                value.shape()
            )));
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    /// Number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// A new store holding the first `n` parameters with identical ids.
    pub fn prefix(&self, n: usize) -> Self {
        ParamStore {
            tag: fresh_tag(),
            names: self.names[..n].to_vec(),
            values: self.values[..n].to_vec(),
        }
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            tag: fresh_tag(),
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
        }
    }

    /// Overwrites every parameter whose name appears in `other` with matching shape.
    /// Returns the names that were copied.
    pub fn load_matching<U: Real>(&mut self, other: &ParamStore<U>) -> Vec<String> {
        let mut copied = Vec::new();
        for (_, name, value) in other.iter() {
            if let Some(id) = self.find(name) {
                if self.values[id.0].shape() == value.shape() {
                    self.values[id.0] = value.cast();
                    copied.push(name.to_string());
                }
            }
        }
        copied
    }
}

/// Gaussian `N(0, std²)` tensor.
pub fn normal_tensor<T: Real, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], std: f64) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("std must be finite and non-negative");
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::of(dist.sample(rng))).collect();
    Tensor::from_parts(shape.to_vec(), data)
}

/// Uniform `U(-bound, bound)` tensor.
pub fn uniform_tensor<T: Real, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    if bound == 0.0 {
        return Tensor::zeros(shape);
    }
    let dist = Uniform::new(-bound, bound).expect("bound must be positive");
    let data = (0..n).map(|_| T::of(dist.sample(rng))).collect();
    Tensor::from_parts(shape.to_vec(), data)
}
