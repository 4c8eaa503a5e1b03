//! Named parameter storage with deterministic ordering and Xavier init.
//!
//! Parameters live in insertion order (the order the network builder creates
//! them), which fixes the iteration order everywhere they are consumed:
//! gradient updates, checkpoint serialization, and name listings.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

#[derive(Clone)]
pub struct ParamSet<E: Element> {
    entries: Vec<(String, Tensor<E>)>,
    by_name: HashMap<String, usize>,
}

impl<E: Element> Default for ParamSet<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> ParamSet<E> {
    pub fn new() -> Self {
        ParamSet { entries: Vec::new(), by_name: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_elements(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<E>) -> Result<()> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::contract(format!("duplicate parameter name {name:?}")));
        }
        self.by_name.insert(name.clone(), self.entries.len());
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<E>> {
        self.by_name.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<E>> {
        self.by_name.get(name).map(|&i| &mut self.entries[i].1)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<E>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<E>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    /// Replaces the stored tensor for `name`, requiring an exact shape match.
    pub fn restore(&mut self, name: &str, tensor: Tensor<E>) -> Result<()> {
        match self.get_mut(name) {
            Some(t) if t.shape() == tensor.shape() => {
                *t = tensor;
                Ok(())
            }
            Some(t) => Err(Error::contract(format!(
                "parameter {name:?} has shape {} but restore provides {}",
                t.shape(),
                tensor.shape()
            ))),
            None => Err(Error::contract(format!("unknown parameter {name:?}"))),
        }
    }

    /// Creates `{name}.w` (Xavier-uniform) and `{name}.b` (zeros) for a
    /// convolution with the given geometry.
    pub fn add_conv(
        &mut self,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_out: usize,
        c_in: usize,
        k: usize,
    ) -> Result<()> {
        let w = xavier_uniform(rng, Shape::new(c_out, c_in, k, k));
        self.insert(format!("{name}.w"), w)?;
        self.insert(format!("{name}.b"), Tensor::zeros(Shape::new(1, c_out, 1, 1)))
    }

    /// Creates `{name}.p`, one slope per channel, initialized to 0.25.
    pub fn add_prelu(&mut self, name: &str, channels: usize) -> Result<()> {
        self.insert(format!("{name}.p"), Tensor::full(Shape::new(1, channels, 1, 1), E::from_f64(0.25)))
    }
}

/// Xavier (Glorot) uniform init for conv weights shaped (C_out, C_in, k, k):
/// uniform in [-b, b] with b = sqrt(6 / (fan_in + fan_out)), where the fans
/// include the kernel area. Samples are drawn in flat row-major order.
pub fn xavier_uniform<E: Element>(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor<E> {
    let fan_in = shape.c * shape.h * shape.w;
    let fan_out = shape.n * shape.h * shape.w;
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..shape.numel())
        .map(|_| E::from_f64(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}
