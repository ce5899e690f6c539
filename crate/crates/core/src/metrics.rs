//! Evaluation metrics.
//!
//! `exact_w1` solves the empirical transport problem between two equal-size
//! point clouds exactly, as a linear assignment under Euclidean cost. With
//! uniform weights the optimal coupling is a permutation, so the assignment
//! optimum is the empirical 1-Wasserstein distance.

use serde::{Deserialize, Serialize};

use crate::autodiff::{gradient, Tensor};
use crate::data::GaussianMixtureSpec;
use crate::error::{Error, Result};
use crate::losses::{gradient_penalty, mmd_penalty, FDivergence};
use crate::matrix::Matrix;
use crate::nn::{Activation, Adam, AdamConfig, Network};
use crate::rng::{Purpose, Stream};

/// Largest point set `exact_w1` accepts; the solver is cubic.
pub const MAX_ASSIGNMENT_SIZE: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    /// `assignment[i]` is the row of `b` matched to row `i` of `a`.
    pub assignment: Vec<usize>,
    /// `Σᵢ ‖aᵢ − b_σ(i)‖ / n`.
    pub cost: f64,
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Optimal assignment between the rows of `a` and `b` under L2 cost.
pub fn exact_w1(a: &Matrix, b: &Matrix) -> Result<TransportPlan> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op: "exact_w1",
            shapes: format!("{:?} vs {:?}", a.shape(), b.shape()),
        });
    }
    let n = a.rows();
    if n > MAX_ASSIGNMENT_SIZE {
        return Err(Error::InvalidArgument(format!(
            "exact_w1 supports at most {MAX_ASSIGNMENT_SIZE} points, got {n}"
        )));
    }
    let mut cost = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            cost[i * n + j] = euclid(a.row(i), b.row(j));
        }
    }
    let assignment = solve_assignment(n, &cost);
    let total: f64 = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * n + j])
        .sum();
    Ok(TransportPlan {
        assignment,
        cost: total / n as f64,
    })
}

/// Shortest-augmenting-path Hungarian method with row/column potentials,
/// O(n³). `cost` is row-major `n × n`.
fn solve_assignment(n: usize, cost: &[f64]) -> Vec<usize> {
    // 1-based with a sentinel column 0, following the classic formulation.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0f64; n + 1];
    let mut used = vec![false; n + 1];

    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        minv.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let row = &cost[(i0 - 1) * n..i0 * n];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = row[j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if owner[j] > 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Row-wise `‖x − G(Q(x))‖`.
pub fn reconstruction_errors(generator: &Network, encoder: &Network, x: &Matrix) -> Result<Vec<f64>> {
    let rec = generator.forward(&encoder.forward(x)?)?;
    Ok((0..x.rows()).map(|r| euclid(x.row(r), rec.row(r))).collect())
}

pub fn reconstruction_error(generator: &Network, encoder: &Network, x: &Matrix) -> Result<f64> {
    let errs = reconstruction_errors(generator, encoder, x)?;
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

/// MMD between prior draws `z` and encodings `q`; the same estimator the
/// encoder is penalized with.
pub fn mmd_metric(z: &Matrix, q: &Matrix) -> Result<f64> {
    Ok(mmd_penalty(&Tensor::constant(q.clone()), &Tensor::constant(z.clone()))?.item())
}

/// `exp(−‖x − G(Q(x))‖)` for one point.
pub fn quality_score(generator: &Network, encoder: &Network, x: &[f64]) -> Result<f64> {
    let m = Matrix::row_vector(x);
    Ok(score_from_error(reconstruction_errors(generator, encoder, &m)?[0]))
}

pub fn quality_scores(generator: &Network, encoder: &Network, x: &Matrix) -> Result<Vec<f64>> {
    Ok(reconstruction_errors(generator, encoder, x)?
        .into_iter()
        .map(score_from_error)
        .collect())
}

pub fn score_from_error(e: f64) -> f64 {
    (-e).exp()
}

/// Highest-density region of the reconstruction error: the sublevel set
/// `[0, threshold]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HdrRegion {
    pub alpha: f64,
    pub threshold: f64,
}

pub const MIN_CALIBRATION: usize = 20;

/// Threshold at the order statistic of rank `⌈(1 − α) m⌉`, which covers at
/// least `1 − α` of the calibration errors.
pub fn hdr_calibrate(errors: &[f64], alpha: f64) -> Result<HdrRegion> {
    if errors.is_empty() {
        return Err(Error::InvalidArgument("empty calibration set".into()));
    }
    if errors.len() < MIN_CALIBRATION {
        return Err(Error::InvalidArgument(format!(
            "hdr calibration needs at least {MIN_CALIBRATION} errors, got {}",
            errors.len()
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if errors.iter().any(|e| !e.is_finite()) {
        return Err(Error::InvalidArgument("calibration errors must be finite".into()));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    // Slack absorbs rounding in (1 - α)·m so 0.95·100 stays rank 95.
    let rank = (((1.0 - alpha) * m as f64) - 1e-9).ceil().clamp(1.0, m as f64) as usize;
    Ok(HdrRegion {
        alpha,
        threshold: sorted[rank - 1],
    })
}

pub fn hdr_contains(region: &HdrRegion, e_x: f64) -> bool {
    e_x <= region.threshold
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeCoverage {
    pub per_mode: Vec<usize>,
    pub unassigned: usize,
    /// Share of all samples that landed within the radius of some mode.
    pub captured_fraction: f64,
}

impl ModeCoverage {
    /// Each mode's share of the captured samples.
    pub fn mode_shares(&self) -> Vec<f64> {
        let captured: usize = self.per_mode.iter().sum();
        self.per_mode
            .iter()
            .map(|&c| if captured == 0 { 0.0 } else { c as f64 / captured as f64 })
            .collect()
    }
}

/// Assigns each sample to its nearest mean if that mean is within `radius`.
pub fn mode_coverage(samples: &Matrix, spec: &GaussianMixtureSpec, radius: f64) -> Result<ModeCoverage> {
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!("radius must be positive, got {radius}")));
    }
    if samples.cols() != 2 {
        return Err(Error::ShapeMismatch {
            op: "mode_coverage",
            shapes: format!("samples {:?}, expected n x 2", samples.shape()),
        });
    }
    let mut per_mode = vec![0usize; spec.n_components()];
    let mut unassigned = 0;
    for r in 0..samples.rows() {
        let p = samples.row(r);
        let (best, dist) = spec
            .means
            .iter()
            .enumerate()
            .map(|(k, m)| (k, euclid(p, m)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("mixture has components");
        if dist <= radius {
            per_mode[best] += 1;
        } else {
            unassigned += 1;
        }
    }
    let captured: usize = per_mode.iter().sum();
    Ok(ModeCoverage {
        per_mode,
        unassigned,
        captured_fraction: captured as f64 / samples.rows() as f64,
    })
}

/// A function class for the Rademacher estimate: given signs, find a member
/// with large correlation `n⁻¹ Σ εᵢ f(xᵢ)` and report that correlation.
pub trait FunctionClass {
    fn max_correlation(&self, x: &Matrix, signs: &[f64], steps: usize, seed: u64) -> Result<f64>;
}

/// The single function `f ≡ c`.
pub struct ConstantClass(pub f64);

impl FunctionClass for ConstantClass {
    fn max_correlation(&self, _x: &Matrix, signs: &[f64], _steps: usize, _seed: u64) -> Result<f64> {
        Ok(self.0 * signs.iter().sum::<f64>() / signs.len() as f64)
    }
}

/// Networks anchored at the origin, `f(x) − f(0)`, pushed toward the
/// 1-Lipschitz ball by a gradient penalty. Anchoring removes the constant
/// direction, which would otherwise make the supremum unbounded.
pub struct PenalizedCritic {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub lambda: f64,
    pub adam: AdamConfig,
}

impl PenalizedCritic {
    pub fn new(layer_sizes: Vec<usize>) -> Self {
        Self {
            layer_sizes,
            activation: Activation::Relu,
            lambda: 10.0,
            adam: AdamConfig {
                lr: 1e-2,
                ..AdamConfig::default()
            },
        }
    }

    fn anchored(net: &Network, x: &Matrix) -> Result<Vec<f64>> {
        let out = net.forward(x)?;
        let origin = net.forward(&Matrix::zeros(1, x.cols()))?.item();
        Ok(out.as_slice().iter().map(|v| v - origin).collect())
    }
}

impl FunctionClass for PenalizedCritic {
    fn max_correlation(&self, x: &Matrix, signs: &[f64], steps: usize, seed: u64) -> Result<f64> {
        let n = x.rows();
        let mut net = Network::init(&self.layer_sizes, self.activation, seed)?;
        let mut adam = Adam::for_network(self.adam, &net);
        let mut rng = Stream::new(seed, Purpose::Rademacher);
        let signs_col = Tensor::constant(Matrix::col_vector(signs));
        let mean_sign = signs.iter().sum::<f64>() / n as f64;
        let origin = Tensor::constant(Matrix::zeros(1, x.cols()));
        let xt = Tensor::constant(x.clone());
        for _ in 0..steps {
            // Penalty points: segments between random sample pairs and
            // between samples and the anchor.
            let mut x_hat = Matrix::zeros(n, x.cols());
            for r in 0..n {
                let a = rng.below(n);
                let to_origin = rng.uniform() < 0.5;
                let b = rng.below(n);
                let t = rng.uniform();
                for c in 0..x.cols() {
                    let far = if to_origin { 0.0 } else { x.get(b, c) };
                    x_hat.set(r, c, t * x.get(a, c) + (1.0 - t) * far);
                }
            }
            let bound = net.bind();
            let f0 = bound.forward(&origin)?;
            let fx = bound.forward(&xt)?;
            let corr = fx.mul(&signs_col)?.mean().sub(&f0.scale(mean_sign))?;
            let gp = gradient_penalty(&bound, FDivergence::Wasserstein, &x_hat)?;
            let objective = corr.neg().add(&gp.scale(self.lambda))?;
            let grads = gradient(&objective, &bound.params(), false)?
                .into_iter()
                .map(Tensor::into_value)
                .collect::<Vec<_>>();
            drop(bound);
            adam.step_network(&mut net, &grads)?;
        }
        let f = Self::anchored(&net, x)?;
        Ok(f.iter().zip(signs).map(|(v, s)| v * s).sum::<f64>() / n as f64)
    }
}

/// Mean over `trials` Rademacher sign draws of the class's achieved
/// correlation. The inner maximization is approximate, so this estimates the
/// empirical Rademacher complexity from below.
pub fn rademacher_estimate(
    x: &Matrix,
    class: &dyn FunctionClass,
    trials: usize,
    steps: usize,
    seed: u64,
) -> Result<f64> {
    if trials == 0 {
        return Err(Error::InvalidArgument("rademacher_estimate needs trials >= 1".into()));
    }
    if x.rows() < 2 {
        return Err(Error::InvalidArgument("rademacher_estimate needs n >= 2".into()));
    }
    let mut rng = Stream::new(seed, Purpose::Rademacher);
    let mut total = 0.0;
    for trial in 0..trials {
        let signs: Vec<f64> = (0..x.rows())
            .map(|_| if rng.uniform() < 0.5 { -1.0 } else { 1.0 })
            .collect();
        total += class.max_correlation(x, &signs, steps, seed.wrapping_add(1 + trial as u64))?;
    }
    Ok(total / trials as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_ring;

    #[test]
    fn identical_sets_cost_zero() {
        let a = Stream::new(1, Purpose::Misc).normal_matrix(9, 2);
        let plan = exact_w1(&a, &a).unwrap();
        assert_eq!(plan.cost, 0.0);
        assert_eq!(plan.assignment, (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn singleton_cost_is_distance() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0]]);
        let b = Matrix::from_rows(&[vec![4.0, 6.0]]);
        assert_eq!(exact_w1(&a, &b).unwrap().cost, 5.0);
    }

    #[test]
    fn straight_matching_beats_crossed() {
        let a = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]);
        let b = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 1.0]]);
        let plan = exact_w1(&a, &b).unwrap();
        assert_eq!(plan.cost, 1.0);
        assert_eq!(plan.assignment, vec![0, 1]);
    }

    #[test]
    fn exact_w1_rejects_unequal_sizes() {
        assert!(exact_w1(&Matrix::zeros(3, 2), &Matrix::zeros(4, 2)).is_err());
    }

    #[test]
    fn hdr_order_statistics() {
        let errors: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(hdr_calibrate(&errors, 0.05).unwrap().threshold, 95.0);
        let m = errors.len() as f64;
        assert_eq!(hdr_calibrate(&errors, 1.0 - 1.0 / m).unwrap().threshold, 1.0);
        let r = hdr_calibrate(&errors, 0.05).unwrap();
        assert!(hdr_contains(&r, 95.0) && !hdr_contains(&r, 95.5));
    }

    #[test]
    fn hdr_rejects_bad_input() {
        assert!(hdr_calibrate(&[], 0.1).is_err());
        assert!(hdr_calibrate(&[1.0; 19], 0.1).is_err());
        assert!(hdr_calibrate(&[1.0; 30], 0.0).is_err());
        assert!(hdr_calibrate(&[1.0; 30], 1.0).is_err());
    }

    #[test]
    fn hdr_regions_nest() {
        let errors: Vec<f64> = Stream::new(4, Purpose::Misc)
            .normal_matrix(500, 1)
            .into_vec()
            .into_iter()
            .map(f64::abs)
            .collect();
        let mut prev = f64::INFINITY;
        for alpha in [0.01, 0.05, 0.1, 0.2, 0.5, 0.9] {
            let t = hdr_calibrate(&errors, alpha).unwrap().threshold;
            assert!(t <= prev);
            prev = t;
        }
    }

    #[test]
    fn quality_score_values() {
        assert_eq!(score_from_error(0.0), 1.0);
        assert!((score_from_error(2f64.ln()) - 0.5).abs() < 1e-15);
        assert!(score_from_error(0.3) > score_from_error(0.31));
    }

    #[test]
    fn reconstruction_error_of_zero_map_on_unit_rows() {
        let enc = Network::init(&[2, 3], Activation::None, 0).unwrap();
        let mut gen = Network::init(&[3, 2], Activation::None, 0).unwrap();
        gen.layers[0].weight = Matrix::zeros(3, 2);
        let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.6, -0.8]]);
        assert!((reconstruction_error(&gen, &enc, &x).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn coverage_of_exact_means() {
        let spec = make_ring();
        let samples = Matrix::from_rows(&spec.means.iter().map(|m| m.to_vec()).collect::<Vec<_>>());
        let cov = mode_coverage(&samples, &spec, 0.1).unwrap();
        assert!(cov.per_mode.iter().all(|&c| c >= 1));
        assert_eq!(cov.captured_fraction, 1.0);
    }

    #[test]
    fn coverage_of_origin_is_empty() {
        let cov = mode_coverage(&Matrix::zeros(10, 2), &make_ring(), 0.1).unwrap();
        assert_eq!(cov.captured_fraction, 0.0);
        assert_eq!(cov.unassigned, 10);
        assert!(mode_coverage(&Matrix::zeros(1, 2), &make_ring(), 0.0).is_err());
    }

    #[test]
    fn rademacher_degenerate_cases() {
        let x = Matrix::zeros(8, 2);
        assert!(rademacher_estimate(&x, &ConstantClass(1.0), 0, 1, 0).is_err());
        struct AllPlus(ConstantClass);
        impl FunctionClass for AllPlus {
            fn max_correlation(&self, x: &Matrix, signs: &[f64], s: usize, seed: u64) -> Result<f64> {
                let plus = vec![1.0; signs.len()];
                self.0.max_correlation(x, &plus, s, seed)
            }
        }
        let est = rademacher_estimate(&x, &AllPlus(ConstantClass(0.7)), 5, 1, 0).unwrap();
        assert!((est - 0.7).abs() < 1e-15);
    }
}
