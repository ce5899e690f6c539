//! Held-out evaluation of a trained encoder/generator pair.

use std::path::Path;

use anyhow::{bail, Context, Result};
use iwgan::data::{Dataset, GaussianMixtureSpec};
use iwgan::metrics::{
    exact_w1, hdr_calibrate, mmd_metric, mode_coverage, reconstruction_errors, HdrRegion,
};
use iwgan::nn::Network;
use iwgan::rng::Stream;
use iwgan::Matrix;
use serde::Serialize;

use crate::config::EvalSpec;

/// Stream id for held-out evaluation draws, apart from every training stream.
pub const EVAL_STREAM: u64 = 64;

#[derive(Clone, Debug, Serialize)]
pub struct CoverageReport {
    pub samples: usize,
    pub radius: f64,
    pub captured_fraction: f64,
    pub unassigned: usize,
    pub per_mode: Vec<usize>,
    /// Each mode's share of the captured samples.
    pub mode_shares: Vec<f64>,
    pub min_share: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub dataset: Dataset,
    pub seed: u64,
    /// `W1(G(Z), X)`.
    pub w1: f64,
    /// `W1(X, G(Q(X)))`.
    pub w1_recon: f64,
    /// `W1(G(Q(X)), G(Z))`.
    pub w1_latent: f64,
    pub recon_err: f64,
    /// `MMD(Q(X), Z)`.
    pub mmd: f64,
    pub mode_coverage: CoverageReport,
    pub hdr: HdrRegion,
}

pub struct Evaluation {
    pub report: EvalReport,
    /// The generated samples used for mode coverage.
    pub generated: Matrix,
    /// The data sample used for W1.
    pub data: Matrix,
}

pub fn load_model(checkpoint: &Path) -> Result<(Network, Network)> {
    let (generator, _) = Network::load(&checkpoint.join("generator.json"))
        .with_context(|| format!("loading generator from {}", checkpoint.display()))?;
    let (encoder, _) = Network::load(&checkpoint.join("encoder.json"))
        .with_context(|| format!("loading encoder from {}", checkpoint.display()))?;
    if encoder.output_dim() != generator.input_dim() || generator.output_dim() != encoder.input_dim() {
        bail!(
            "encoder {:?} and generator {:?} do not compose",
            encoder.layer_sizes(),
            generator.layer_sizes()
        );
    }
    Ok((generator, encoder))
}

pub fn evaluate_model(
    generator: &Network,
    encoder: &Network,
    dataset: Dataset,
    spec: &GaussianMixtureSpec,
    eval: &EvalSpec,
    seed: u64,
) -> Result<Evaluation> {
    let d = generator.input_dim();
    let mut rng = Stream::with_id(seed, EVAL_STREAM);
    let (x, _) = spec.sample_with(&mut rng, eval.w1_samples);
    let z = rng.normal_matrix(eval.w1_samples, d);
    let z_cov = rng.normal_matrix(eval.coverage_samples, d);
    let (x_mmd, _) = spec.sample_with(&mut rng, eval.mmd_samples);
    let z_mmd = rng.normal_matrix(eval.mmd_samples, d);

    let gz = generator.forward(&z)?;
    let gqx = generator.forward(&encoder.forward(&x)?)?;
    let errors = reconstruction_errors(generator, encoder, &x)?;
    let recon_err = errors.iter().sum::<f64>() / errors.len() as f64;
    let mmd = mmd_metric(&z_mmd, &encoder.forward(&x_mmd)?)?;
    let hdr = hdr_calibrate(&reconstruction_errors(generator, encoder, &x_mmd)?, eval.hdr_alpha)?;

    let generated = generator.forward(&z_cov)?;
    let cov = mode_coverage(&generated, spec, eval.radius)?;
    let shares = cov.mode_shares();
    let report = EvalReport {
        dataset,
        seed,
        w1: exact_w1(&gz, &x)?.cost,
        w1_recon: exact_w1(&x, &gqx)?.cost,
        w1_latent: exact_w1(&gqx, &gz)?.cost,
        recon_err,
        mmd,
        mode_coverage: CoverageReport {
            samples: eval.coverage_samples,
            radius: eval.radius,
            captured_fraction: cov.captured_fraction,
            unassigned: cov.unassigned,
            per_mode: cov.per_mode,
            min_share: shares.iter().copied().fold(f64::INFINITY, f64::min),
            mode_shares: shares,
        },
        hdr,
    };
    Ok(Evaluation {
        report,
        generated,
        data: x,
    })
}
