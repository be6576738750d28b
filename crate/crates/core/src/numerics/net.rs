use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::rng::Rng;
use crate::error::{Error, Result};

static NEXT_NET_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_NET_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation value.
    pub fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Shape and initialization of a feed-forward network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub activation: Activation,
    /// Multiplier on the output layer's initial weights.
    pub output_init_scale: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            hidden_width: 32,
            hidden_layers: 2,
            activation: Activation::Relu,
            output_init_scale: 1.0,
        }
    }
}

impl NetConfig {
    pub fn layer_dims(&self, input: usize, output: usize) -> Vec<usize> {
        let mut dims = vec![input];
        dims.extend(std::iter::repeat_n(self.hidden_width, self.hidden_layers));
        dims.push(output);
        dims
    }
}

/// Dense multi-layer perceptron with a linear output layer.
///
/// Parameters live in one flat buffer. Layer `l` occupies
/// `dims[l+1] * dims[l]` row-major weights followed by `dims[l+1]` biases.
#[derive(Debug, Serialize, Deserialize)]
pub struct FeedForwardNet {
    layer_dims: Vec<usize>,
    hidden_activation: Activation,
    params: Vec<f64>,
    #[serde(skip, default = "fresh_id")]
    id: u64,
    #[serde(skip)]
    version: u64,
}

impl Clone for FeedForwardNet {
    fn clone(&self) -> Self {
        Self {
            layer_dims: self.layer_dims.clone(),
            hidden_activation: self.hidden_activation,
            params: self.params.clone(),
            id: fresh_id(),
            version: 0,
        }
    }
}

impl PartialEq for FeedForwardNet {
    fn eq(&self, other: &Self) -> bool {
        self.layer_dims == other.layer_dims
            && self.hidden_activation == other.hidden_activation
            && self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Cached activations from one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    net_id: u64,
    version: u64,
    /// Input to each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each layer.
    pre: Vec<Vec<f64>>,
}

fn param_count_for(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl FeedForwardNet {
    /// All-zero network.
    pub fn zeros(layer_dims: Vec<usize>, hidden_activation: Activation) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "layer dims must list at least input and output, all positive: {layer_dims:?}"
            )));
        }
        let n = param_count_for(&layer_dims);
        Ok(Self {
            layer_dims,
            hidden_activation,
            params: vec![0.0; n],
            id: fresh_id(),
            version: 0,
        })
    }

    /// Randomly initialized network: He-uniform weights for ReLU,
    /// Glorot-uniform for tanh, zero biases.
    pub fn init(
        layer_dims: Vec<usize>,
        hidden_activation: Activation,
        output_init_scale: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut net = Self::zeros(layer_dims, hidden_activation)?;
        let n_layers = net.n_layers();
        for l in 0..n_layers {
            let (fan_in, fan_out) = (net.layer_dims[l], net.layer_dims[l + 1]);
            let mut limit = match hidden_activation {
                Activation::Relu => (6.0 / fan_in as f64).sqrt(),
                Activation::Tanh => (6.0 / (fan_in + fan_out) as f64).sqrt(),
            };
            if l + 1 == n_layers {
                limit *= output_init_scale;
            }
            let start = net.weight_offset(l);
            for w in &mut net.params[start..start + fan_in * fan_out] {
                *w = rng.uniform_range(-limit, limit);
            }
        }
        Ok(net)
    }

    pub fn from_config(input: usize, output: usize, cfg: &NetConfig, rng: &mut Rng) -> Result<Self> {
        Self::init(
            cfg.layer_dims(input, output),
            cfg.activation,
            cfg.output_init_scale,
            rng,
        )
    }

    /// Rebuilds a network from serialized parts.
    pub fn from_parts(
        layer_dims: Vec<usize>,
        hidden_activation: Activation,
        params: Vec<f64>,
    ) -> Result<Self> {
        let mut net = Self::zeros(layer_dims, hidden_activation)?;
        if params.len() != net.params.len() {
            return Err(Error::DimensionMismatch {
                context: "FeedForwardNet::from_parts",
                expected: net.params.len(),
                got: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("network parameters".into()));
        }
        net.params = params;
        Ok(net)
    }

    /// The network with its output layer removed; the last hidden layer's
    /// pre-activations become the output.
    pub fn without_output_layer(&self) -> Result<Self> {
        if self.n_layers() < 2 {
            return Err(Error::InvalidArgument("network has no hidden layer to expose".into()));
        }
        let dims = self.layer_dims[..self.layer_dims.len() - 1].to_vec();
        let cut = self.weight_offset(self.n_layers() - 1);
        Self::from_parts(dims, self.hidden_activation, self.params[..cut].to_vec())
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activation(&self) -> Activation {
        self.hidden_activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("non-empty dims")
    }

    pub fn n_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameter access; invalidates outstanding tapes.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.version += 1;
        &mut self.params
    }

    fn weight_offset(&self, layer: usize) -> usize {
        param_count_for(&self.layer_dims[..=layer])
    }

    fn bias_offset(&self, layer: usize) -> usize {
        self.weight_offset(layer) + self.layer_dims[layer + 1] * self.layer_dims[layer]
    }

    pub fn weights(&self, layer: usize) -> Matrix {
        let (cols, rows) = (self.layer_dims[layer], self.layer_dims[layer + 1]);
        let start = self.weight_offset(layer);
        Matrix::from_vec(rows, cols, self.params[start..start + rows * cols].to_vec())
            .expect("parameters are finite")
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        let start = self.bias_offset(layer);
        &self.params[start..start + self.layer_dims[layer + 1]]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [f64] {
        let start = self.bias_offset(layer);
        let len = self.layer_dims[layer + 1];
        self.version += 1;
        &mut self.params[start..start + len]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        let start = self.weight_offset(layer);
        let len = self.layer_dims[layer + 1] * self.layer_dims[layer];
        self.version += 1;
        &mut self.params[start..start + len]
    }

    fn affine(&self, layer: usize, input: &[f64]) -> Vec<f64> {
        let (n_in, n_out) = (self.layer_dims[layer], self.layer_dims[layer + 1]);
        let w = &self.params[self.weight_offset(layer)..];
        let b = self.bias(layer);
        (0..n_out)
            .map(|o| {
                let row = &w[o * n_in..(o + 1) * n_in];
                let mut acc = b[o];
                for (wi, xi) in row.iter().zip(input) {
                    acc += wi * xi;
                }
                acc
            })
            .collect()
    }

    /// Forward pass returning the output and the tape needed by `backward`.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Tape)> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "FeedForwardNet::forward",
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let n_layers = self.n_layers();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut pre = Vec::with_capacity(n_layers);
        let mut x = input.to_vec();
        for l in 0..n_layers {
            let z = self.affine(l, &x);
            inputs.push(x);
            x = if l + 1 < n_layers {
                z.iter().map(|v| self.hidden_activation.apply(*v)).collect()
            } else {
                z.clone()
            };
            pre.push(z);
        }
        let tape = Tape {
            net_id: self.id,
            version: self.version,
            inputs,
            pre,
        };
        Ok((x, tape))
    }

    /// Forward pass without keeping a tape.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "FeedForwardNet::predict",
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let n_layers = self.n_layers();
        let mut x = input.to_vec();
        for l in 0..n_layers {
            let z = self.affine(l, &x);
            x = if l + 1 < n_layers {
                z.into_iter().map(|v| self.hidden_activation.apply(v)).collect()
            } else {
                z
            };
        }
        Ok(x)
    }

    /// Parameter gradient for `output_grad = dL/d(output)`.
    pub fn backward(&self, tape: &Tape, output_grad: &[f64]) -> Result<Vec<f64>> {
        let mut grads = vec![0.0; self.param_count()];
        self.backward_into(tape, output_grad, &mut grads)?;
        Ok(grads)
    }

    /// Adds the parameter gradient into `acc` and returns `dL/d(input)`.
    pub fn backward_into(
        &self,
        tape: &Tape,
        output_grad: &[f64],
        acc: &mut [f64],
    ) -> Result<Vec<f64>> {
        if tape.net_id != self.id {
            return Err(Error::StaleTape("tape was produced by a different network"));
        }
        if tape.version != self.version {
            return Err(Error::StaleTape("network parameters changed after forward"));
        }
        if output_grad.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                context: "FeedForwardNet::backward (output grad)",
                expected: self.output_dim(),
                got: output_grad.len(),
            });
        }
        if acc.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                context: "FeedForwardNet::backward (accumulator)",
                expected: self.param_count(),
                got: acc.len(),
            });
        }
        let n_layers = self.n_layers();
        // delta = dL/d(pre-activation of layer l)
        let mut delta = output_grad.to_vec();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let x = &tape.inputs[l];
            let w_off = self.weight_offset(l);
            let b_off = self.bias_offset(l);
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                acc[b_off + o] += d;
                let row = &mut acc[w_off + o * n_in..w_off + (o + 1) * n_in];
                for (g, xi) in row.iter_mut().zip(x) {
                    *g += d * xi;
                }
            }
            let w = &self.params[w_off..w_off + n_in * n_out];
            let mut input_grad = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (ig, wi) in input_grad.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *ig += d * wi;
                }
            }
            if l > 0 {
                let prev_pre = &tape.pre[l - 1];
                for (ig, z) in input_grad.iter_mut().zip(prev_pre) {
                    *ig *= self.hidden_activation.derivative(*z);
                }
            }
            delta = input_grad;
        }
        Ok(delta)
    }
}
