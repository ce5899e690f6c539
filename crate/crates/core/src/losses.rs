//! Scalar objectives: the primal-dual loss `L(G, Q, f)`, the critic's
//! gradient penalty, the encoder's MMD penalty, and f-divergence conjugates.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{gradient, Tensor};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::Bound;

/// Which divergence the critic's third loss term targets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FDivergence {
    /// `h*(t) = t`, critic head is linear.
    #[default]
    Wasserstein,
    /// `h*(t) = -log(1 - e^t)` on `t < 0`, critic head `-log(1 + e^-v)`.
    VanillaGan,
}

impl FDivergence {
    /// Convex conjugate `h*(t)`.
    pub fn conjugate(self, t: f64) -> Result<f64> {
        match self {
            FDivergence::Wasserstein => Ok(t),
            FDivergence::VanillaGan => {
                if t < 0.0 {
                    Ok(-(-t.exp_m1()).ln())
                } else {
                    Err(Error::Domain {
                        what: "vanilla-gan conjugate argument",
                        value: t,
                    })
                }
            }
        }
    }

    /// Output activation that maps raw critic values into the conjugate's
    /// domain.
    pub fn activation(self, v: f64) -> f64 {
        match self {
            FDivergence::Wasserstein => v,
            FDivergence::VanillaGan => -crate::autodiff::softplus(-v),
        }
    }

    /// The critic as it enters the loss: the activation applied to `raw`.
    pub fn activate(self, raw: &Tensor) -> Tensor {
        match self {
            FDivergence::Wasserstein => raw.clone(),
            FDivergence::VanillaGan => raw.neg().softplus().neg(),
        }
    }

    /// `h*(activation(raw))`. For the vanilla GAN this simplifies to
    /// `softplus(raw)`, which stays finite where `1 - e^t` would cancel.
    pub fn conjugate_of_activated(self, raw: &Tensor) -> Tensor {
        match self {
            FDivergence::Wasserstein => raw.clone(),
            FDivergence::VanillaGan => raw.softplus(),
        }
    }
}

impl fmt::Display for FDivergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FDivergence::Wasserstein => "wasserstein",
            FDivergence::VanillaGan => "vanilla-gan",
        })
    }
}

impl FromStr for FDivergence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wasserstein" => Ok(Self::Wasserstein),
            "vanilla-gan" => Ok(Self::VanillaGan),
            other => Err(Error::InvalidArgument(format!(
                "unknown divergence {other:?} (expected wasserstein or vanilla-gan)"
            ))),
        }
    }
}

pub fn f_conjugate(div: FDivergence, t: f64) -> Result<f64> {
    div.conjugate(t)
}

/// The three terms of `L`, kept apart so callers can log them.
pub struct LossTerms {
    /// `mean ‖x − G(Q(x))‖`.
    pub recon: Tensor,
    /// `mean f(G(Q(x)))`.
    pub critic_recon: Tensor,
    /// `mean h*(f(G(z)))`.
    pub critic_prior: Tensor,
}

impl LossTerms {
    pub fn total(&self) -> Result<Tensor> {
        self.recon.add(&self.critic_recon)?.sub(&self.critic_prior)
    }
}

/// Mean row-wise Euclidean distance between two equal-shape batches.
pub fn mean_row_distance(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok(a.sub(b)?.l2norm_rows().mean())
}

/// Critic terms on precomputed data-space batches.
pub fn critic_terms(
    critic: &Bound,
    div: FDivergence,
    reconstructed: &Tensor,
    generated: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let on_recon = div.activate(&critic.forward(reconstructed)?).mean();
    let on_prior = div.conjugate_of_activated(&critic.forward(generated)?).mean();
    Ok((on_recon, on_prior))
}

/// `L = E‖x − G(Q(x))‖ + E f(G(Q(x))) − E h*(f(G(z)))`.
///
/// The two batches may differ in size; each expectation is its own mean.
pub fn core_loss_terms(
    generator: &Bound,
    encoder: &Bound,
    critic: &Bound,
    div: FDivergence,
    x: &Tensor,
    z: &Tensor,
) -> Result<LossTerms> {
    let reconstructed = generator.forward(&encoder.forward(x)?)?;
    let generated = generator.forward(z)?;
    let recon = mean_row_distance(x, &reconstructed)?;
    let (critic_recon, critic_prior) = critic_terms(critic, div, &reconstructed, &generated)?;
    Ok(LossTerms {
        recon,
        critic_recon,
        critic_prior,
    })
}

pub fn core_loss(
    generator: &Bound,
    encoder: &Bound,
    critic: &Bound,
    div: FDivergence,
    x: &Tensor,
    z: &Tensor,
) -> Result<Tensor> {
    core_loss_terms(generator, encoder, critic, div, x, z)?.total()
}

/// `x̂ = ε x + (1 − ε) G(z)` row by row.
pub fn interpolate_pairs(x: &Matrix, gz: &Matrix, eps: &[f64]) -> Result<Matrix> {
    if x.shape() != gz.shape() || eps.len() != x.rows() {
        return Err(Error::ShapeMismatch {
            op: "interpolate_pairs",
            shapes: format!("x {:?}, G(z) {:?}, eps {}", x.shape(), gz.shape(), eps.len()),
        });
    }
    Ok(Matrix::from_fn(x.rows(), x.cols(), |r, c| {
        let e = eps[r];
        e * x.get(r, c) + (1.0 - e) * gz.get(r, c)
    }))
}

/// `mean (‖∇_x̂ f(x̂)‖ − 1)²` over the rows of `x_hat`.
///
/// Rows do not interact in the critic, so one backward pass of the summed
/// output yields every per-row input gradient. That pass is recorded, making
/// the penalty differentiable in the critic's parameters.
pub fn gradient_penalty(critic: &Bound, div: FDivergence, x_hat: &Matrix) -> Result<Tensor> {
    let x_hat = Tensor::variable(x_hat.clone());
    let out = div.activate(&critic.forward(&x_hat)?).sum();
    let grad = gradient(&out, &[&x_hat], true)?.remove(0);
    Ok(grad.l2norm_rows().add_scalar(-1.0).square().mean())
}

/// Unbiased within-set terms, biased cross term, Gaussian kernel
/// `exp(-‖a − b‖² / 2)`.
pub fn mmd_penalty(q: &Tensor, z: &Tensor) -> Result<Tensor> {
    let (n, p) = q.shape();
    let (m, p2) = z.shape();
    if p != p2 {
        return Err(Error::ShapeMismatch {
            op: "mmd_penalty",
            shapes: format!("{:?} vs {:?}", q.shape(), z.shape()),
        });
    }
    if n < 2 || m < 2 {
        return Err(Error::InvalidArgument(format!(
            "mmd needs at least 2 rows per set, got {n} and {m}"
        )));
    }
    let kernel_sum = |a: &Tensor, b: &Tensor| -> Result<Tensor> {
        Ok(a.sq_dist(b)?.scale(-0.5).exp().sum())
    };
    // Diagonal kernel values are exactly 1; drop them from the within terms.
    let within = |a: &Tensor, k: usize| -> Result<Tensor> {
        Ok(kernel_sum(a, a)?
            .add_scalar(-(k as f64))
            .scale(1.0 / (k * (k - 1)) as f64))
    };
    let cross = kernel_sum(q, z)?.scale(2.0 / (n * m) as f64);
    within(z, m)?.add(&within(q, n)?)?.sub(&cross)
}
