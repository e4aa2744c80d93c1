use std::collections::HashMap;

use super::config::Group;
use crate::autodiff::RunningStats;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub group: Group,
    pub tensor: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Buffer {
    pub name: String,
    pub stats: RunningStats,
}

/// Every trainable tensor of a model plus its batch-norm running statistics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    pub params: Vec<Parameter>,
    pub buffers: Vec<Buffer>,
}

impl ParamStore {
    pub fn add(&mut self, name: String, group: Group, tensor: Tensor) -> usize {
        debug_assert!(self.params.iter().all(|p| p.name != name), "duplicate parameter {name}");
        self.params.push(Parameter { name, group, tensor });
        self.params.len() - 1
    }

    pub fn add_buffer(&mut self, name: String, channels: usize) -> usize {
        self.buffers.push(Buffer { name, stats: RunningStats::new(channels) });
        self.buffers.len() - 1
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn num_scalars_in(&self, group: Group) -> usize {
        self.params.iter().filter(|p| p.group == group).map(|p| p.tensor.len()).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn group_map(&self) -> HashMap<String, Group> {
        self.params.iter().map(|p| (p.name.clone(), p.group)).collect()
    }

    /// Bit patterns of all parameters in `group`, in store order.
    pub fn group_bits(&self, group: Group) -> Vec<u64> {
        self.params
            .iter()
            .filter(|p| p.group == group)
            .flat_map(|p| p.tensor.data().iter().map(|v| v.to_bits()))
            .collect()
    }

    pub fn bit_eq(&self, other: &ParamStore) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.name == b.name && a.group == b.group && a.tensor.bit_eq(&b.tensor))
            && self.buffers.len() == other.buffers.len()
            && self.buffers.iter().zip(&other.buffers).all(|(a, b)| {
                a.name == b.name
                    && a.stats.mean.iter().zip(&b.stats.mean).all(|(x, y)| x.to_bits() == y.to_bits())
                    && a.stats.var.iter().zip(&b.stats.var).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }

    /// Replaces values of matching parameters, requiring identical names and shapes.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        if self.params.len() != other.params.len() || self.buffers.len() != other.buffers.len() {
            return Err(Error::Format("parameter sets differ in size".into()));
        }
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            if a.name != b.name || a.tensor.shape() != b.tensor.shape() {
                return Err(Error::Format(format!("parameter {} does not match {}", a.name, b.name)));
            }
            a.tensor = b.tensor.clone();
        }
        for (a, b) in self.buffers.iter_mut().zip(&other.buffers) {
            if a.name != b.name || a.stats.mean.len() != b.stats.mean.len() {
                return Err(Error::Format(format!("buffer {} does not match {}", a.name, b.name)));
            }
            a.stats = b.stats.clone();
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Conv {
    pub weight: usize,
    pub bias: usize,
    pub stride: usize,
    pub dilation: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Norm {
    pub gamma: usize,
    pub beta: usize,
    pub stats: usize,
}

/// Allocates named parameters with Gaussian weights.
pub(crate) struct Builder<'a> {
    pub store: ParamStore,
    pub rng: &'a mut Rng,
    pub std: f64,
}

impl Builder<'_> {
    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        &mut self,
        name: &str,
        group: Group,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        dilation: usize,
    ) -> Conv {
        let n = out_c * in_c * k * k;
        let data = (0..n).map(|_| self.rng.normal(0.0, self.std)).collect();
        let w = Tensor::new(vec![out_c, in_c, k, k], data).expect("sized above");
        let weight = self.store.add(format!("{name}/weight"), group, w);
        let bias = self.store.add(format!("{name}/bias"), group, Tensor::zeros(&[out_c]));
        Conv { weight, bias, stride, dilation }
    }

    pub fn norm(&mut self, name: &str, group: Group, channels: usize) -> Norm {
        let gamma = self.store.add(format!("{name}/gamma"), group, Tensor::full(&[channels], 1.0));
        let beta = self.store.add(format!("{name}/beta"), group, Tensor::zeros(&[channels]));
        let stats = self.store.add_buffer(format!("{name}/running"), channels);
        Norm { gamma, beta, stats }
    }
}
