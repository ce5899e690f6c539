//! Ground-truth encoder/generator pairs for analytically known 2D densities.
//!
//! The Rosenblatt transform sends `x = (x₁, x₂)` to independent uniforms
//! `u₁ = F₁(x₁)`, `u₂ = F₂|₁(x₂ | x₁)`, and normal quantiles turn those into a
//! standard bivariate normal `z`. Its inverse is the matching generator. The
//! chain order is fixed: coordinate 1 first, then 2 conditioned on 1.
//!
//! Data already lives in flat ℝ², so no manifold embedding is applied.
//!
//! CDFs are carried as `(lower, upper)` pairs so both tails keep full
//! relative precision when mapped through the normal quantile.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::data::GaussianMixtureSpec;
use crate::error::{Error, Result};

/// Forward CDF values are clipped to `[CLIP, 1 − CLIP]` before the quantile.
pub const CLIP: f64 = 1e-15;
/// Inverse root-finding stops once `|F(x) − u| ≤ ROOT_TOL`.
pub const ROOT_TOL: f64 = 1e-12;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// `Φ(x)`.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// `1 − Φ(x)`, accurate in the upper tail.
pub fn norm_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

/// `Φ⁻¹(p)`: Acklam's rational approximation followed by one Halley step on
/// the erfc-based CDF, which brings it to near machine precision.
pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p > 0.5 {
        return -norm_quantile_lower_half(1.0 - p);
    }
    norm_quantile_lower_half(p)
}

/// `−Φ⁻¹(q)` expressed through the survival probability `q = 1 − Φ(x)`.
pub fn norm_quantile_upper(q: f64) -> f64 {
    -norm_quantile(q)
}

fn norm_quantile_lower_half(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    // Halley refinement; the relative residual keeps the tail accurate.
    let e = norm_cdf(x) - p;
    let u = e * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

/// One isotropic component of an analytic mixture.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: [f64; 2],
    pub std: f64,
}

/// A mixture of isotropic Gaussians with closed-form marginal and conditional
/// CDFs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticDensity2D {
    components: Vec<Component>,
}

/// A CDF value as `(F, 1 − F)`, each computed directly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tails {
    pub lower: f64,
    pub upper: f64,
}

impl Tails {
    fn clamped(lower: f64, upper: f64) -> Self {
        Self {
            lower: lower.min(1.0),
            upper: upper.min(1.0),
        }
    }

    fn to_normal(self) -> f64 {
        if self.lower <= self.upper {
            norm_quantile(self.lower.max(CLIP))
        } else {
            norm_quantile_upper(self.upper.max(CLIP))
        }
    }
}

impl AnalyticDensity2D {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidArgument("density needs a component".into()));
        }
        if components
            .iter()
            .any(|c| !(c.std > 0.0) || !(c.weight > 0.0) || !c.mean.iter().all(|m| m.is_finite()))
        {
            return Err(Error::InvalidArgument(
                "components need positive weight and stddev and finite means".into(),
            ));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        let components = components
            .into_iter()
            .map(|c| Component {
                weight: c.weight / total,
                ..c
            })
            .collect();
        Ok(Self { components })
    }

    pub fn gaussian(mean: [f64; 2], std: f64) -> Result<Self> {
        Self::new(vec![Component {
            weight: 1.0,
            mean,
            std,
        }])
    }

    pub fn from_mixture(spec: &GaussianMixtureSpec) -> Result<Self> {
        Self::new(
            spec.means
                .iter()
                .map(|&mean| Component {
                    weight: spec.weight(),
                    mean,
                    std: spec.std,
                })
                .collect(),
        )
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    /// Marginal CDF of coordinate 1.
    pub fn marginal_cdf(&self, x1: f64) -> Tails {
        let mut lower = 0.0;
        let mut upper = 0.0;
        for c in &self.components {
            let t = (x1 - c.mean[0]) / c.std;
            lower += c.weight * norm_cdf(t);
            upper += c.weight * norm_sf(t);
        }
        Tails::clamped(lower, upper)
    }

    pub fn marginal_pdf(&self, x1: f64) -> f64 {
        self.components
            .iter()
            .map(|c| c.weight * norm_pdf((x1 - c.mean[0]) / c.std) / c.std)
            .sum()
    }

    /// Posterior component weights given `x₁`; they sum to 1.
    pub fn conditional_weights(&self, x1: f64) -> Vec<f64> {
        let logs: Vec<f64> = self
            .components
            .iter()
            .map(|c| {
                let t = (x1 - c.mean[0]) / c.std;
                c.weight.ln() - c.std.ln() - 0.5 * t * t
            })
            .collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / total).collect()
    }

    fn conditional(&self, weights: &[f64], x2: f64) -> (Tails, f64) {
        let mut lower = 0.0;
        let mut upper = 0.0;
        let mut pdf = 0.0;
        for (c, &w) in self.components.iter().zip(weights) {
            let t = (x2 - c.mean[1]) / c.std;
            lower += w * norm_cdf(t);
            upper += w * norm_sf(t);
            pdf += w * norm_pdf(t) / c.std;
        }
        (Tails::clamped(lower, upper), pdf)
    }

    /// `F₂|₁(x₂ | x₁)`.
    pub fn conditional_cdf(&self, x2: f64, x1: f64) -> Tails {
        self.conditional(&self.conditional_weights(x1), x2).0
    }

    fn span(&self, axis: usize) -> (f64, f64, f64) {
        let lo = self.components.iter().map(|c| c.mean[axis]).fold(f64::INFINITY, f64::min);
        let hi = self
            .components
            .iter()
            .map(|c| c.mean[axis])
            .fold(f64::NEG_INFINITY, f64::max);
        let s = self.components.iter().map(|c| c.std).fold(0.0, f64::max);
        (lo, hi, s)
    }

    /// Oracle encoder `Q*`.
    pub fn rosenblatt_forward(&self, x: [f64; 2]) -> Result<[f64; 2]> {
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite input {x:?}")));
        }
        let z1 = self.marginal_cdf(x[0]).to_normal();
        let z2 = self.conditional_cdf(x[1], x[0]).to_normal();
        Ok([z1, z2])
    }

    /// Oracle generator `G*`.
    pub fn rosenblatt_inverse(&self, z: [f64; 2]) -> Result<[f64; 2]> {
        if !z.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite input {z:?}")));
        }
        let (lo, hi, s) = self.span(0);
        let x1 = solve_quantile(z[0], lo, hi, s, |x| (self.marginal_cdf(x), self.marginal_pdf(x)))?;
        let weights = self.conditional_weights(x1);
        let (lo, hi, s) = self.span(1);
        let x2 = solve_quantile(z[1], lo, hi, s, |x| self.conditional(&weights, x))?;
        Ok([x1, x2])
    }
}

/// Finds `x` with `F(x) = Φ(z)`, working on whichever tail is smaller so the
/// residual is measured where it has precision. `eval` returns the CDF's
/// tails and its density at `x`.
fn solve_quantile(
    z: f64,
    lo_mean: f64,
    hi_mean: f64,
    scale: f64,
    eval: impl Fn(f64) -> (Tails, f64),
) -> Result<f64> {
    let use_upper = z > 0.0;
    let target = if use_upper { norm_sf(z) } else { norm_cdf(z) };
    // Residual increasing in x in both cases.
    let residual = |x: f64| {
        let (t, pdf) = eval(x);
        let r = if use_upper { target - t.upper } else { t.lower - target };
        (r, pdf)
    };

    let mut lo = lo_mean - 10.0 * scale;
    let mut hi = hi_mean + 10.0 * scale;
    let mut width = (hi - lo).max(scale);
    let mut expansions = 0;
    while residual(lo).0 > 0.0 {
        lo -= width;
        width *= 2.0;
        expansions += 1;
        if expansions > 200 || !lo.is_finite() {
            return Err(Error::Bracket { u: norm_cdf(z) });
        }
    }
    let mut width = (hi - lo).max(scale);
    while residual(hi).0 < 0.0 {
        hi += width;
        width *= 2.0;
        expansions += 1;
        if expansions > 400 || !hi.is_finite() {
            return Err(Error::Bracket { u: norm_cdf(z) });
        }
    }

    let mut x = 0.5 * (lo + hi);
    let mut polished = false;
    for _ in 0..500 {
        let (r, pdf) = residual(x);
        if r.abs() <= ROOT_TOL {
            if polished {
                return Ok(x);
            }
            polished = true;
        }
        if r == 0.0 {
            return Ok(x);
        }
        if r > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let newton = if pdf > 0.0 { x - r / pdf } else { f64::NAN };
        let next = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if next == x || hi - lo <= f64::EPSILON * x.abs().max(1.0) {
            if residual(next).0.abs() <= ROOT_TOL {
                return Ok(next);
            }
            break;
        }
        x = next;
    }
    let r = residual(x).0;
    if r.abs() <= ROOT_TOL {
        Ok(x)
    } else {
        Err(Error::Bracket { u: norm_cdf(z) })
    }
}
