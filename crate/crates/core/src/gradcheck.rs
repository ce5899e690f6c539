//! Finite-difference checks of the autodiff engine.
//!
//! Everything on the reference side runs on plain matrices: central
//! differences of straight-line forward passes, and a hand-written input
//! gradient for the gradient penalty. Nothing here touches the graph except
//! the quantity under test.

use serde::Serialize;

use crate::autodiff::{gradient, Tensor};
use crate::error::{Error, Result};
use crate::losses::{gradient_penalty, FDivergence};
use crate::matrix::Matrix;
use crate::nn::{Activation, Network};
use crate::rng::{Purpose, Stream};

pub const FD_STEP: f64 = 1e-5;
/// Pre-activations closer than this to a kink cause the case to be redrawn.
pub const KINK_MARGIN: f64 = 1e-3;

/// `‖a − b‖∞ / max(‖a‖∞, ‖b‖∞, 1e-12)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    diff / inf(a).max(inf(b)).max(1e-12)
}

/// Central differences of `f` at `theta`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, theta: &[f64], step: f64) -> Vec<f64> {
    let mut probe = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            probe[i] = theta[i] + step;
            let up = f(&probe);
            probe[i] = theta[i] - step;
            let down = f(&probe);
            probe[i] = theta[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Parameters in `[w0, b0, w1, b1, …]` order, flattened.
pub fn flatten_params(net: &Network) -> Vec<f64> {
    net.params().iter().flat_map(|m| m.as_slice().iter().copied()).collect()
}

pub fn set_params(net: &mut Network, theta: &[f64]) {
    let mut offset = 0;
    for m in net.params_mut() {
        let n = m.len();
        m.as_mut_slice().copy_from_slice(&theta[offset..offset + n]);
        offset += n;
    }
    assert_eq!(offset, theta.len(), "parameter vector length");
}

fn activation_derivative(act: Activation, v: f64) -> f64 {
    match act {
        Activation::Relu => {
            if v > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::LeakyRelu => {
            if v > 0.0 {
                1.0
            } else {
                crate::autodiff::LEAKY_SLOPE
            }
        }
        Activation::None => 1.0,
    }
}

/// Pre-activations of every layer for one input row, plus the output.
fn forward_row(net: &Network, x: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut h = x.to_vec();
    let mut pre = Vec::with_capacity(net.layers.len());
    for layer in &net.layers {
        let (fan_in, fan_out) = layer.weight.shape();
        let mut a = layer.bias.as_slice().to_vec();
        for j in 0..fan_out {
            for i in 0..fan_in {
                a[j] += h[i] * layer.weight.get(i, j);
            }
        }
        h = a.iter().map(|&v| layer.activation.apply(v)).collect();
        pre.push(a);
    }
    (pre, h)
}

/// `∇ₓ f(x)` for a scalar-output network, by the chain rule written out.
pub fn input_gradient_row(net: &Network, x: &[f64]) -> Vec<f64> {
    let (pre, _) = forward_row(net, x);
    let mut delta = vec![1.0];
    for (layer, a) in net.layers.iter().zip(&pre).rev() {
        let local: Vec<f64> = delta
            .iter()
            .zip(a)
            .map(|(d, &v)| d * activation_derivative(layer.activation, v))
            .collect();
        let (fan_in, fan_out) = layer.weight.shape();
        delta = (0..fan_in)
            .map(|i| (0..fan_out).map(|j| layer.weight.get(i, j) * local[j]).sum())
            .collect();
    }
    delta
}

/// Gradient penalty evaluated without the graph.
pub fn reference_gradient_penalty(net: &Network, div: FDivergence, x_hat: &Matrix) -> f64 {
    let mut total = 0.0;
    for r in 0..x_hat.rows() {
        let row = x_hat.row(r);
        let v = forward_row(net, row).1[0];
        // Chain through the divergence's output activation.
        let outer = match div {
            FDivergence::Wasserstein => 1.0,
            FDivergence::VanillaGan => 1.0 / (1.0 + v.exp()),
        };
        let g = input_gradient_row(net, row);
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt() * outer.abs();
        total += (norm - 1.0).powi(2);
    }
    total / x_hat.rows() as f64
}

/// A random test case: network, input batch, and output mixing weights.
#[derive(Clone, Debug)]
pub struct Case {
    pub net: Network,
    pub x: Matrix,
    /// `batch × output_dim` weights turning the output into a scalar.
    pub mix: Matrix,
}

impl Case {
    /// Draws widths in `1..=max_width` and `1..=max_depth` dense layers,
    /// redrawing until no pre-activation sits within `KINK_MARGIN` of 0.
    pub fn random(rng: &mut Stream, max_width: usize, max_depth: usize, scalar_output: bool) -> Self {
        loop {
            let depth = 1 + rng.below(max_depth);
            let mut sizes: Vec<usize> = (0..=depth).map(|_| 1 + rng.below(max_width)).collect();
            if scalar_output {
                *sizes.last_mut().expect("non-empty") = 1;
            }
            let act = if rng.below(2) == 0 {
                Activation::Relu
            } else {
                Activation::LeakyRelu
            };
            let seed: u64 = rand::Rng::random(rng.rng());
            let mut net = Network::init(&sizes, act, seed).expect("valid sizes");
            for layer in &mut net.layers {
                let cols = layer.bias.cols();
                layer.bias = rng.uniform_matrix(1, cols).map(|u| u - 0.5);
            }
            let batch = 2 + rng.below(4);
            let x = rng.normal_matrix(batch, sizes[0]);
            let mix = rng.normal_matrix(batch, *sizes.last().expect("non-empty"));
            let near_kink = (0..batch).any(|r| {
                let (pre, _) = forward_row(&net, x.row(r));
                net.layers
                    .iter()
                    .zip(&pre)
                    .filter(|(l, _)| l.activation != Activation::None)
                    .any(|(_, a)| a.iter().any(|v| v.abs() < KINK_MARGIN))
            });
            if !near_kink {
                return Self { net, x, mix };
            }
        }
    }

    fn scalar_of(&self, net: &Network) -> f64 {
        let out = net.forward(&self.x).expect("shapes fixed by construction");
        out.as_slice().iter().zip(self.mix.as_slice()).map(|(a, b)| a * b).sum()
    }
}

/// Relative error of autodiff parameter gradients of `Σ mix ⊙ f(x)`.
pub fn first_order_error(case: &Case) -> Result<f64> {
    let bound = case.net.bind();
    let out = bound.forward(&Tensor::constant(case.x.clone()))?;
    let scalar = out.mul(&Tensor::constant(case.mix.clone()))?.sum();
    let grads = gradient(&scalar, &bound.params(), false)?;
    let auto: Vec<f64> = grads.iter().flat_map(|g| g.value().as_slice().to_vec()).collect();

    let theta = flatten_params(&case.net);
    let mut probe = case.net.clone();
    let fd = central_difference(
        |t| {
            set_params(&mut probe, t);
            case.scalar_of(&probe)
        },
        &theta,
        FD_STEP,
    );
    Ok(relative_error(&auto, &fd))
}

/// Relative error of autodiff input gradients of `Σ mix ⊙ f(x)`.
pub fn input_gradient_error(case: &Case) -> Result<f64> {
    let bound = case.net.bind_frozen();
    let x = Tensor::variable(case.x.clone());
    let scalar = bound.forward(&x)?.mul(&Tensor::constant(case.mix.clone()))?.sum();
    let auto = gradient(&scalar, &[&x], false)?.remove(0).into_value();
    let fd = central_difference(
        |t| {
            let xm = Matrix::new(case.x.rows(), case.x.cols(), t.to_vec()).expect("same shape");
            let out = case.net.forward(&xm).expect("shapes fixed");
            out.as_slice().iter().zip(case.mix.as_slice()).map(|(a, b)| a * b).sum()
        },
        case.x.as_slice(),
        FD_STEP,
    );
    Ok(relative_error(auto.as_slice(), &fd))
}

/// Relative error of `∂J1/∂θ` (through a recorded backward pass) against
/// central differences of the graph-free penalty. The case must have scalar
/// output.
pub fn second_order_error(case: &Case, div: FDivergence) -> Result<f64> {
    if case.net.output_dim() != 1 {
        return Err(Error::InvalidArgument("penalty check needs a scalar critic".into()));
    }
    let bound = case.net.bind();
    let j1 = gradient_penalty(&bound, div, &case.x)?;
    let grads = gradient(&j1, &bound.params(), false)?;
    let auto: Vec<f64> = grads.iter().flat_map(|g| g.value().as_slice().to_vec()).collect();

    let theta = flatten_params(&case.net);
    let mut probe = case.net.clone();
    let fd = central_difference(
        |t| {
            set_params(&mut probe, t);
            reference_gradient_penalty(&probe, div, &case.x)
        },
        &theta,
        FD_STEP,
    );
    Ok(relative_error(&auto, &fd))
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub cases: usize,
    pub max_first_order: f64,
    pub max_input_gradient: f64,
    pub max_second_order: f64,
}

impl GradcheckReport {
    pub fn passes(&self, first_tol: f64, second_tol: f64) -> bool {
        self.max_first_order <= first_tol
            && self.max_input_gradient <= first_tol
            && self.max_second_order <= second_tol
    }
}

/// Runs `cases` random networks (widths ≤ 8, depth ≤ 3) through all checks.
pub fn run_gradcheck(cases: usize, seed: u64) -> Result<GradcheckReport> {
    let mut rng = Stream::new(seed, Purpose::Misc);
    let mut report = GradcheckReport {
        cases,
        max_first_order: 0.0,
        max_input_gradient: 0.0,
        max_second_order: 0.0,
    };
    for _ in 0..cases {
        let case = Case::random(&mut rng, 8, 3, false);
        report.max_first_order = report.max_first_order.max(first_order_error(&case)?);
        report.max_input_gradient = report.max_input_gradient.max(input_gradient_error(&case)?);
        let critic = Case::random(&mut rng, 8, 3, true);
        report.max_second_order = report
            .max_second_order
            .max(second_order_error(&critic, FDivergence::Wasserstein)?);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_scale() {
        assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!((relative_error(&[2.0], &[1.0]) - 0.5).abs() < 1e-15);
        assert!(relative_error(&[0.0], &[1e-14]) < 0.1);
    }

    #[test]
    fn central_difference_of_cubic() {
        let g = central_difference(|t| t[0].powi(3) + t[0] * t[1], &[2.0, 3.0], FD_STEP);
        assert!((g[0] - 15.0).abs() < 1e-8 && (g[1] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn manual_input_gradient_of_linear_net() {
        let mut net = Network::init(&[3, 1], Activation::Relu, 0).unwrap();
        net.layers[0].weight = Matrix::col_vector(&[1.0, -2.0, 0.5]);
        assert_eq!(input_gradient_row(&net, &[9.0, 9.0, 9.0]), vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn params_round_trip() {
        let mut net = Network::init(&[2, 3, 1], Activation::Relu, 4).unwrap();
        let theta = flatten_params(&net);
        assert_eq!(theta.len(), net.num_params());
        let before = net.clone();
        set_params(&mut net, &theta);
        assert_eq!(net, before);
    }

    #[test]
    fn small_batch_passes() {
        let report = run_gradcheck(5, 1).unwrap();
        assert!(report.passes(1e-5, 1e-4), "{report:?}");
    }
}
