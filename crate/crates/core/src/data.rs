//! Synthetic two-dimensional Gaussian mixtures and the latent prior.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{Purpose, Stream};

/// Equal-weight mixture of isotropic 2D Gaussians sharing one stddev.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixtureSpec {
    pub means: Vec<[f64; 2]>,
    pub std: f64,
}

/// How to read the spiral's mean formula.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpiralVariant {
    /// Constant radius `0.1 · 2π/20` around `(0.1, 0.1)`: a small circle.
    PaperLiteral,
    /// Radius growing with the component index, `0.1 + 0.1 · 2πi/20`.
    #[default]
    Corrected,
}

impl FromStr for SpiralVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper-literal" => Ok(Self::PaperLiteral),
            "corrected" => Ok(Self::Corrected),
            other => Err(Error::InvalidArgument(format!(
                "unknown spiral variant {other:?} (expected corrected or paper-literal)"
            ))),
        }
    }
}

/// The benchmark targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dataset {
    Ring,
    Spiral,
    Grid,
}

impl Dataset {
    pub const TAGS: [&'static str; 3] = ["ring", "spiral", "grid"];

    pub fn spec(self, spiral: SpiralVariant) -> GaussianMixtureSpec {
        match self {
            Dataset::Ring => make_ring(),
            Dataset::Spiral => make_spiral(spiral),
            Dataset::Grid => make_grid(),
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dataset::Ring => "ring",
            Dataset::Spiral => "spiral",
            Dataset::Grid => "grid",
        })
    }
}

impl FromStr for Dataset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ring" => Ok(Self::Ring),
            "spiral" => Ok(Self::Spiral),
            "grid" => Ok(Self::Grid),
            other => Err(Error::InvalidArgument(format!(
                "unknown dataset {other:?}; valid tags: {}",
                Self::TAGS.join(", ")
            ))),
        }
    }
}

const STD: f64 = 0.02;

/// 8 modes on the radius-2 circle.
pub fn make_ring() -> GaussianMixtureSpec {
    let means = (0..8)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / 8.0;
            [2.0 * a.cos(), 2.0 * a.sin()]
        })
        .collect();
    GaussianMixtureSpec { means, std: STD }
}

pub fn make_spiral(variant: SpiralVariant) -> GaussianMixtureSpec {
    let means = (0..20)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / 20.0;
            match variant {
                SpiralVariant::PaperLiteral => {
                    let r = 0.1 * (2.0 * PI / 20.0);
                    [0.1 + r * a.cos(), 0.1 + r * a.sin()]
                }
                SpiralVariant::Corrected => {
                    let r = 0.1 + 0.1 * a;
                    [0.1 + r * a.cos(), 0.1 + r * a.sin()]
                }
            }
        })
        .collect();
    GaussianMixtureSpec { means, std: STD }
}

/// 25 modes on the lattice `{-4, -2, 0, 2, 4}²`.
pub fn make_grid() -> GaussianMixtureSpec {
    let means = (-2..=2)
        .flat_map(|i| (-2..=2).map(move |j| [2.0 * i as f64, 2.0 * j as f64]))
        .collect();
    GaussianMixtureSpec { means, std: STD }
}

impl GaussianMixtureSpec {
    pub fn new(means: Vec<[f64; 2]>, std: f64) -> Result<Self> {
        if means.is_empty() {
            return Err(Error::InvalidArgument("mixture needs a component".into()));
        }
        if !(std > 0.0 && std.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "mixture stddev must be positive, got {std}"
            )));
        }
        Ok(Self { means, std })
    }

    pub fn n_components(&self) -> usize {
        self.means.len()
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.means.len() as f64
    }

    pub fn density(&self, x: [f64; 2]) -> f64 {
        let s2 = self.std * self.std;
        let norm = 1.0 / (2.0 * PI * s2);
        self.weight()
            * self
                .means
                .iter()
                .map(|m| {
                    let d2 = (x[0] - m[0]).powi(2) + (x[1] - m[1]).powi(2);
                    norm * (-0.5 * d2 / s2).exp()
                })
                .sum::<f64>()
    }

    /// `n` draws and their component indices, advancing `rng`.
    pub fn sample_with(&self, rng: &mut Stream, n: usize) -> (Matrix, Vec<usize>) {
        let mut data = Vec::with_capacity(2 * n);
        let mut modes = Vec::with_capacity(n);
        for _ in 0..n {
            let k = rng.below(self.means.len());
            let m = self.means[k];
            data.push(m[0] + self.std * rng.normal());
            data.push(m[1] + self.std * rng.normal());
            modes.push(k);
        }
        (Matrix::new(n, 2, data).expect("n >= 1"), modes)
    }

    /// Bounding box of the means, padded by `pad` stddevs.
    pub fn bounds(&self, pad: f64) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for m in &self.means {
            for d in 0..2 {
                lo[d] = lo[d].min(m[d]);
                hi[d] = hi[d].max(m[d]);
            }
        }
        let p = pad * self.std;
        ([lo[0] - p, lo[1] - p], [hi[0] + p, hi[1] + p])
    }
}

pub fn sample_mixture(spec: &GaussianMixtureSpec, n: usize, seed: u64) -> Result<Matrix> {
    Ok(sample_mixture_labeled(spec, n, seed)?.0)
}

pub fn sample_mixture_labeled(
    spec: &GaussianMixtureSpec,
    n: usize,
    seed: u64,
) -> Result<(Matrix, Vec<usize>)> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be >= 1".into()));
    }
    let mut rng = Stream::new(seed, Purpose::Data);
    Ok(spec.sample_with(&mut rng, n))
}

/// `n × dim` standard normal draws.
pub fn sample_latent(dim: usize, n: usize, seed: u64) -> Result<Matrix> {
    if n == 0 || dim == 0 {
        return Err(Error::InvalidArgument(format!(
            "latent sample needs positive sizes, got n={n}, dim={dim}"
        )));
    }
    Ok(Stream::new(seed, Purpose::Latent).normal_matrix(n, dim))
}
