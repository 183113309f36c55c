//! Named parameter storage and gradient buffers.

use std::collections::HashMap;

use crate::real::Real;
use crate::rng::SplitMix64;

use super::{Graph, Result, TensorError, Var};

/// Identifies one tensor of one parameter set inside a graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamKey {
    pub set: u32,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// An ordered, named collection of trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    tag: u32,
    params: Vec<Param<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Real> ParamSet<T> {
    pub fn new(tag: u32) -> Self {
        Self {
            tag,
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn tag(&self) -> u32 {
        self.tag
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn get(&self, index: usize) -> &Param<T> {
        &self.params[index]
    }

    pub fn get_mut(&mut self, index: usize) -> &mut Param<T> {
        &mut self.params[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<T>) -> usize {
        let name = name.into();
        assert_eq!(data.len(), shape.iter().product::<usize>(), "{name}");
        assert!(!self.by_name.contains_key(&name), "duplicate parameter {name}");
        self.by_name.insert(name.clone(), self.params.len());
        self.params.push(Param {
            name,
            shape: shape.to_vec(),
            data,
        });
        self.params.len() - 1
    }

    /// Uniform init with standard deviation `1/sqrt(fan_in)`.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut SplitMix64,
    ) -> usize {
        let bound = (3.0 / fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::lit(rng.symmetric() * bound)).collect();
        self.add(name, shape, data)
    }

    /// Places parameter `index` into `graph` as a gradient-tracking leaf.
    pub fn leaf(&self, graph: &mut Graph<T>, index: usize) -> Result<Var> {
        let p = &self.params[index];
        graph.param(
            ParamKey {
                set: self.tag,
                index,
            },
            &p.data,
            &p.shape,
        )
    }

    /// Places parameter `index` into `graph` as a constant.
    pub fn frozen(&self, graph: &mut Graph<T>, index: usize) -> Result<Var> {
        let p = &self.params[index];
        graph.constant(p.data.clone(), &p.shape)
    }

    /// Overwrites a parameter's data after checking the shape.
    pub fn assign(&mut self, name: &str, shape: &[usize], data: Vec<T>) -> Result<()> {
        let i = self.index_of(name).ok_or_else(|| TensorError::Invalid {
            op: "assign",
            msg: format!("unknown parameter {name}"),
        })?;
        let p = &mut self.params[i];
        if p.shape != shape {
            return Err(TensorError::ShapeMismatch {
                op: "assign",
                lhs: p.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        p.data = data;
        Ok(())
    }

    /// Order-independent-of-thread-count fingerprint of all values.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in &self.params {
            let mut bytes = Vec::with_capacity(p.data.len() * T::BYTES);
            for &v in &p.data {
                v.write_le(&mut bytes);
            }
            for b in p.name.bytes().chain(bytes) {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

/// Gradient buffers aligned with a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub tensors: Vec<Vec<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(set: &ParamSet<T>) -> Self {
        Self {
            tensors: set.iter().map(|p| vec![T::zero(); p.data.len()]).collect(),
        }
    }

    pub fn add_at(&mut self, index: usize, g: &[T]) {
        for (a, &b) in self.tensors[index].iter_mut().zip(g) {
            *a = *a + b;
        }
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (i, t) in other.tensors.iter().enumerate() {
            self.add_at(i, t);
        }
    }

    pub fn global_norm(&self) -> T {
        self.tensors
            .iter()
            .map(|t| crate::real::dot(t, t))
            .sum::<T>()
            .sqrt()
    }

    pub fn scale(&mut self, s: T) {
        for t in &mut self.tensors {
            t.iter_mut().for_each(|v| *v = *v * s);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|v| v.is_finite())
    }

    /// Rescales to `max_norm` when the global norm exceeds it.
    /// Returns the norm before clipping and whether clipping happened.
    pub fn clip_global_norm(&mut self, max_norm: T) -> (T, bool) {
        let norm = self.global_norm();
        if norm > max_norm {
            self.scale(max_norm / norm);
            (norm, true)
        } else {
            (norm, false)
        }
    }
}
