//! Dense networks, Adam, and the JSON checkpoint format.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::Stream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    LeakyRelu,
    None,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    crate::autodiff::LEAKY_SLOPE * x
                }
            }
            Activation::None => x,
        }
    }

    fn apply_matrix(self, m: Matrix) -> Matrix {
        match self {
            Activation::None => m,
            act => m.map(|x| act.apply(x)),
        }
    }

    fn apply_tensor(self, t: Tensor) -> Tensor {
        match self {
            Activation::Relu => t.relu(),
            Activation::LeakyRelu => t.leaky_relu(),
            Activation::None => t,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::LeakyRelu => "leaky-relu",
            Activation::None => "none",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "leaky-relu" => Ok(Activation::LeakyRelu),
            "none" => Ok(Activation::None),
            other => Err(Error::InvalidArgument(format!(
                "unknown activation {other:?} (expected relu, leaky-relu or none)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `fan_in × fan_out`, so a batch multiplies on the left.
    pub weight: Matrix,
    /// `1 × fan_out`.
    pub bias: Matrix,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
    /// Hidden-layer activation; the last layer is always linear.
    pub activation: Activation,
    pub seed: u64,
}

impl Network {
    /// Kaiming-uniform weights (bound `sqrt(6 / fan_in)`) and zero biases.
    pub fn init(layer_sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "a network needs at least 2 layer sizes, got {}",
                layer_sizes.len()
            )));
        }
        if let Some(pos) = layer_sizes.iter().position(|&s| s == 0) {
            return Err(Error::InvalidArgument(format!(
                "layer size at position {pos} must be positive"
            )));
        }
        let mut rng = Stream::new(seed, crate::rng::Purpose::Init);
        let n_layers = layer_sizes.len() - 1;
        let layers = layer_sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / fan_in as f64).sqrt();
                let weight = Matrix::from_fn(fan_in, fan_out, |_, _| {
                    (2.0 * rng.uniform() - 1.0) * bound
                });
                Layer {
                    weight,
                    bias: Matrix::zeros(1, fan_out),
                    activation: if i + 1 == n_layers {
                        Activation::None
                    } else {
                        activation
                    },
                }
            })
            .collect();
        Ok(Self {
            layers,
            activation,
            seed,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weight.cols()
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.weight.cols()))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Parameters in `[w0, b0, w1, b1, ...]` order.
    pub fn params(&self) -> Vec<&Matrix> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn forward(&self, batch: &Matrix) -> Result<Matrix> {
        if batch.cols() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "forward",
                shapes: format!(
                    "batch {:?} into network with input dim {}",
                    batch.shape(),
                    self.input_dim()
                ),
            });
        }
        let mut h = batch.matmul(&self.layers[0].weight)?.add_row(&self.layers[0].bias)?;
        h = self.layers[0].activation.apply_matrix(h);
        for layer in &self.layers[1..] {
            h = layer.activation.apply_matrix(h.matmul(&layer.weight)?.add_row(&layer.bias)?);
        }
        Ok(h)
    }

    /// Parameters as graph variables, for a forward pass that will be
    /// differentiated with respect to them.
    pub fn bind(&self) -> Bound {
        self.bind_with(Tensor::variable)
    }

    /// Parameters as constants: the network is frozen, but gradients still
    /// flow through it to attached inputs.
    pub fn bind_frozen(&self) -> Bound {
        self.bind_with(Tensor::constant)
    }

    fn bind_with(&self, make: impl Fn(Matrix) -> Tensor) -> Bound {
        Bound {
            layers: self
                .layers
                .iter()
                .map(|l| (make(l.weight.clone()), make(l.bias.clone()), l.activation))
                .collect(),
        }
    }

    pub fn to_checkpoint(&self, step: u64) -> NetworkCheckpoint {
        NetworkCheckpoint {
            layer_sizes: self.layer_sizes(),
            activation: self.activation,
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    weight: l.weight.as_slice().to_vec(),
                    bias: l.bias.as_slice().to_vec(),
                })
                .collect(),
            seed: self.seed,
            step,
        }
    }

    pub fn from_checkpoint(ckpt: &NetworkCheckpoint) -> Result<Self> {
        let sizes = &ckpt.layer_sizes;
        if sizes.len() < 2 || ckpt.layers.len() != sizes.len() - 1 {
            return Err(Error::InvalidArgument(format!(
                "checkpoint has {} layer sizes but {} parameter blocks",
                sizes.len(),
                ckpt.layers.len()
            )));
        }
        let n_layers = ckpt.layers.len();
        let layers = ckpt
            .layers
            .iter()
            .zip(sizes.windows(2))
            .enumerate()
            .map(|(i, (p, w))| {
                Ok(Layer {
                    weight: Matrix::new(w[0], w[1], p.weight.clone())?,
                    bias: Matrix::new(1, w[1], p.bias.clone())?,
                    activation: if i + 1 == n_layers {
                        Activation::None
                    } else {
                        ckpt.activation
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            layers,
            activation: ckpt.activation,
            seed: ckpt.seed,
        })
    }

    pub fn save(&self, path: &Path, step: u64) -> Result<()> {
        write_json(path, &self.to_checkpoint(step))
    }

    pub fn load(path: &Path) -> Result<(Self, u64)> {
        let ckpt: NetworkCheckpoint = serde_json::from_slice(&std::fs::read(path)?)?;
        Ok((Self::from_checkpoint(&ckpt)?, ckpt.step))
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

/// A network whose parameters live in the autodiff graph.
pub struct Bound {
    layers: Vec<(Tensor, Tensor, Activation)>,
}

impl Bound {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (w, b, act) in &self.layers {
            h = act.apply_tensor(h.matmul(w)?.add_row(b)?);
        }
        Ok(h)
    }

    /// Same order as [`Network::params`].
    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|(w, b, _)| [w, b]).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// On-disk form of a [`Network`]. Floats go through serde_json's shortest
/// round-trip formatting, so save → load → save is byte-stable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkCheckpoint {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub layers: Vec<LayerParams>,
    pub seed: u64,
    pub step: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.9,
            eps: 1e-8,
        }
    }
}

/// Zeroes subnormals. Moments of parameters whose gradient is exactly zero
/// (dead ReLU units) decay through the subnormal range, where arithmetic is
/// tens of times slower; their contribution to a step is far below rounding.
fn flush(x: f64) -> f64 {
    if x.abs() < f64::MIN_POSITIVE {
        0.0
    } else {
        x
    }
}

/// Bias-corrected Adam moments for one parameter set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[&Matrix]) -> Self {
        let zeros = || params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        Self {
            config,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn for_network(config: AdamConfig, net: &Network) -> Self {
        Self::new(config, &net.params())
    }

    /// One descent step: `p ← p − lr · m̂ / (sqrt(v̂) + eps)`.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                shapes: format!(
                    "{} params, {} grads, {} moment slots",
                    params.len(),
                    grads.len(),
                    self.m.len()
                ),
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    shapes: format!(
                        "param {i}: {:?}, grad {:?}, moment {:?}",
                        p.shape(),
                        g.shape(),
                        self.m[i].shape()
                    ),
                });
            }
        }
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((pi, &gi), mi), vi) in p
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .zip(m.as_mut_slice())
                .zip(v.as_mut_slice())
            {
                *mi = flush(beta1 * *mi + (1.0 - beta1) * gi);
                *vi = flush(beta2 * *vi + (1.0 - beta2) * gi * gi);
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *pi -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn step_network(&mut self, net: &mut Network, grads: &[Matrix]) -> Result<()> {
        self.step(&mut net.params_mut(), grads)
    }
}
