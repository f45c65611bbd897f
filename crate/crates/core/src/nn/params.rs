//! Named parameter storage and registration onto a [`Graph`].

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::graph::{Gradients, Graph, Var};
use crate::nn::tensor::Tensor;

/// Weight and bias of one layer. Normalization layers store scale in
/// `weight` and shift in `bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Layer identifier → parameters. Ordered, so iteration (and therefore
/// serialization and optimizer updates) is deterministic.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    pub layers: BTreeMap<String, LayerParams>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, weight: Tensor, bias: Tensor) {
        self.layers.insert(name.into(), LayerParams { weight, bias });
    }

    pub fn get(&self, name: &str) -> Result<&LayerParams> {
        self.layers.get(name).ok_or_else(|| Error::Config(format!("missing parameters for layer `{name}`")))
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.layers.values().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Zero-filled set with identical layer names and shapes.
    pub fn zeros_like(&self) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|(k, l)| {
                (
                    k.clone(),
                    LayerParams {
                        weight: Tensor::zeros(l.weight.shape()),
                        bias: Tensor::zeros(l.bias.shape()),
                    },
                )
            })
            .collect();
        Self { layers }
    }

    pub fn same_layout(&self, other: &ParameterSet) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|((ka, a), (kb, b))| {
                ka == kb && a.weight.shape() == b.weight.shape() && a.bias.shape() == b.bias.shape()
            })
    }

    /// Every tensor, in a fixed order, paired with `"layer.weight"` /
    /// `"layer.bias"` keys.
    pub fn tensors(&self) -> impl Iterator<Item = (String, &Tensor)> {
        self.layers
            .iter()
            .flat_map(|(k, l)| [(format!("{k}.weight"), &l.weight), (format!("{k}.bias"), &l.bias)])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = (String, &mut Tensor)> {
        self.layers
            .iter_mut()
            .flat_map(|(k, l)| [(format!("{k}.weight"), &mut l.weight), (format!("{k}.bias"), &mut l.bias)])
    }

    /// Puts every tensor on the graph as a differentiable leaf.
    pub fn register(&self, graph: &mut Graph) -> ParamVars {
        let vars = self
            .layers
            .iter()
            .map(|(k, l)| {
                let w = graph.leaf(l.weight.clone());
                let b = graph.leaf(l.bias.clone());
                (k.clone(), (w, b))
            })
            .collect();
        ParamVars { vars }
    }
}

/// Graph handles for a registered [`ParameterSet`].
pub struct ParamVars {
    vars: BTreeMap<String, (Var, Var)>,
}

impl ParamVars {
    /// Pairs existing graph leaves with the layers of `like`; `leaves` must
    /// follow the order of [`ParameterSet::tensors`].
    pub fn from_leaves(like: &ParameterSet, leaves: &[Var]) -> Result<Self> {
        if leaves.len() != 2 * like.layers.len() {
            return Err(Error::Shape(format!("{} leaves for {} layers", leaves.len(), like.layers.len())));
        }
        let vars = like
            .layers
            .keys()
            .zip(leaves.chunks_exact(2))
            .map(|(k, wb)| (k.clone(), (wb[0], wb[1])))
            .collect();
        Ok(Self { vars })
    }

    pub fn get(&self, name: &str) -> Result<(Var, Var)> {
        self.vars.get(name).copied().ok_or_else(|| Error::Config(format!("layer `{name}` not registered")))
    }

    /// Collects gradients into a set shaped like `like`; untouched layers get zeros.
    pub fn gradients(&self, grads: &mut Gradients, like: &ParameterSet) -> ParameterSet {
        let mut out = like.zeros_like();
        for (name, layer) in out.layers.iter_mut() {
            if let Some(&(w, b)) = self.vars.get(name) {
                if let Some(g) = grads.take(w) {
                    layer.weight = g;
                }
                if let Some(g) = grads.take(b) {
                    layer.bias = g;
                }
            }
        }
        out
    }
}

/// Fan-in uniform initialization: weight and bias drawn from
/// `U(-1/√fan_in, 1/√fan_in)`. `shape` is the weight shape; `fan_in` is
/// supplied by the caller since its position depends on the layer kind.
pub fn init_uniform(
    rng: &mut ChaCha8Rng,
    shape: &[usize],
    bias_len: usize,
    fan_in: usize,
) -> (Tensor, Tensor) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..bound)).collect() };
    let wlen = shape.iter().product();
    let w = Tensor::from_parts(shape.to_vec(), draw(wlen));
    let b = Tensor::from_parts(vec![bias_len], draw(bias_len));
    (w, b)
}

/// Scale 1 / shift 0 for a normalization layer of width `dim`.
pub fn init_norm(dim: usize) -> (Tensor, Tensor) {
    (Tensor::full(&[dim], 1.0), Tensor::zeros(&[dim]))
}
