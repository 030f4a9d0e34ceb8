use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::tape::{Act, Mat, NodeId, Tape};
use super::tensor::{bind, Module, Tensor};
use crate::math;
use crate::{Error, Result, Rng};

/// Negative slope used by every leaky-ReLU layer unless overridden.
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu,
    Tanh,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Init {
    /// Glorot-uniform weights, zero biases.
    Xavier,
    /// Glorot-uniform scaled by a factor.
    ScaledXavier(f64),
    Zeros,
}

/// Architecture of a [`DenseNet`]: layer widths and per-layer activations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseSpec {
    pub dims: Vec<usize>,
    pub activations: Vec<Activation>,
    pub leaky_slope: f64,
}

impl DenseSpec {
    /// Hidden layers share `hidden`, the last layer uses `output`.
    pub fn mlp(dims: &[usize], hidden: Activation, output: Activation) -> Self {
        let n = dims.len().saturating_sub(1);
        let activations = (0..n).map(|i| if i + 1 == n { output } else { hidden }).collect();
        DenseSpec { dims: dims.to_vec(), activations, leaky_slope: DEFAULT_LEAKY_SLOPE }
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

/// Stack of fully connected layers, `y = act(x·W + b)` per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Dense>,
    leaky_slope: f64,
}

impl DenseNet {
    pub fn new(spec: &DenseSpec, init: Init, rng: &mut Rng) -> Result<Self> {
        if spec.dims.len() < 2 || spec.activations.len() + 1 != spec.dims.len() {
            return Err(Error::Config("dense spec needs one activation per layer".into()));
        }
        if spec.dims.contains(&0) {
            return Err(Error::Config("zero-width layer".into()));
        }
        let layers = spec
            .dims
            .windows(2)
            .zip(&spec.activations)
            .map(|(w, &activation)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = math::sqrt(6.0 / (fan_in + fan_out) as f64);
                let scale = match init {
                    Init::Xavier => limit,
                    Init::ScaledXavier(s) => limit * s,
                    Init::Zeros => 0.0,
                };
                let values = (0..fan_in * fan_out)
                    .map(|_| if scale == 0.0 { 0.0 } else { rng.random_range(-scale..scale) })
                    .collect();
                Dense {
                    weight: Tensor::new(alloc::vec![fan_in, fan_out], values).unwrap(),
                    bias: Tensor::zeros(alloc::vec![fan_out]),
                    activation,
                }
            })
            .collect();
        Ok(DenseNet { layers, leaky_slope: spec.leaky_slope })
    }

    /// Builds a net from explicit layers; adjacent widths must agree.
    pub fn from_layers(layers: Vec<Dense>, leaky_slope: f64) -> Result<Self> {
        for l in &layers {
            let [fin, fout] = l.weight.shape() else {
                return Err(Error::Shape("weight must be rank 2".into()));
            };
            if l.bias.shape() != [*fout] || *fin == 0 {
                return Err(Error::Shape("bias width".into()));
            }
        }
        for pair in layers.windows(2) {
            if pair[0].weight.shape()[1] != pair[1].weight.shape()[0] {
                return Err(Error::Shape("adjacent layer widths differ".into()));
            }
        }
        Ok(DenseNet { layers, leaky_slope })
    }

    pub fn spec(&self) -> DenseSpec {
        let mut dims = Vec::new();
        if let Some(first) = self.layers.first() {
            dims.push(first.weight.shape()[0]);
        }
        dims.extend(self.layers.iter().map(|l| l.weight.shape()[1]));
        DenseSpec {
            dims,
            activations: self.layers.iter().map(|l| l.activation).collect(),
            leaky_slope: self.leaky_slope,
        }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.weight.shape()[0])
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.shape()[1])
    }

    pub fn leaky_slope(&self) -> f64 {
        self.leaky_slope
    }

    /// Number of tape nodes [`DenseNet::forward`] expects in `params`.
    pub fn param_nodes(&self) -> usize {
        2 * self.layers.len()
    }

    /// Records the forward pass; `params` are this net's bound nodes
    /// (weight, bias per layer).
    pub fn forward(&self, tape: &mut Tape, params: &[NodeId], x: NodeId) -> NodeId {
        debug_assert_eq!(params.len(), self.param_nodes());
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = tape.matmul(h, params[2 * i]);
            let z = tape.add_row(z, params[2 * i + 1]);
            h = match layer.activation {
                Activation::Identity => z,
                Activation::Relu => tape.act(z, Act::Relu),
                Activation::LeakyRelu => tape.act(z, Act::LeakyRelu(self.leaky_slope)),
                Activation::Tanh => tape.act(z, Act::Tanh),
                Activation::Softmax => tape.softmax(z),
            };
        }
        h
    }
}

impl Module for DenseNet {
    fn visit(&self, f: &mut dyn FnMut(&Tensor)) {
        for l in &self.layers {
            f(&l.weight);
            f(&l.bias);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        for l in &mut self.layers {
            f(&mut l.weight);
            f(&mut l.bias);
        }
    }
}

/// Forward pass over a batch (rows of `input`), returning the output rows.
pub fn mlp_forward(net: &DenseNet, input: &Tensor) -> Result<Tensor> {
    let x = input.as_mat();
    if x.cols != net.input_dim() {
        return Err(Error::Shape(alloc::format!(
            "input width {} does not match first layer {}",
            x.cols,
            net.input_dim()
        )));
    }
    let mut tape = Tape::new();
    let b = bind(net, &mut tape);
    let xn = tape.leaf(x);
    let out = net.forward(&mut tape, b.nodes(), xn);
    let v = tape.value(out);
    Tensor::new(alloc::vec![v.rows, v.cols], v.data.clone())
}

/// Convenience for single-row inference.
pub fn forward_row(net: &DenseNet, row: &[f64]) -> Result<Vec<f64>> {
    let t = Tensor::new(alloc::vec![1, row.len()], row.to_vec())?;
    Ok(mlp_forward(net, &t)?.values().to_vec())
}

/// Input leaf from row vectors.
pub fn rows_leaf(tape: &mut Tape, rows: &[Vec<f64>]) -> NodeId {
    tape.leaf(Mat::from_rows(rows))
}
