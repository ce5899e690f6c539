//! The alternating primal-dual training loop.
//!
//! One cycle runs `n_critic` critic updates followed by `n_gen` joint
//! encoder/generator updates, each on fresh batches. At evaluation points the
//! loop records `L`, the two-point duality-gap estimate and the sample
//! metrics on a fixed held-out set.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{gradient, Tensor};
use crate::data::{Dataset, GaussianMixtureSpec, SpiralVariant};
use crate::error::{Error, Result};
use crate::losses::{core_loss, critic_terms, gradient_penalty, interpolate_pairs, mean_row_distance, mmd_penalty, FDivergence};
use crate::matrix::Matrix;
use crate::metrics::{exact_w1, mmd_metric, reconstruction_error, MAX_ASSIGNMENT_SIZE};
use crate::nn::{write_json, Activation, Adam, AdamConfig, Network};
use crate::rng::{Purpose, Stream, StreamState};

pub const HISTORY_HEADER: &str = "iter,L,dual_gap,recon_err,mmd,w1,oracle_secs";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    pub dataset: Dataset,
    #[serde(default)]
    pub spiral_variant: SpiralVariant,
    #[serde(default = "defaults::latent_dim")]
    pub latent_dim: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::n_critic")]
    pub n_critic: usize,
    #[serde(default = "defaults::n_gen")]
    pub n_gen: usize,
    /// Gradient-penalty weight λ1.
    #[serde(default = "defaults::lambda_gp")]
    pub lambda_gp: f64,
    /// MMD-penalty weight λ2.
    #[serde(default = "defaults::lambda_mmd")]
    pub lambda_mmd: f64,
    #[serde(default)]
    pub critic_adam: AdamConfig,
    /// Shared by the encoder and generator optimizers.
    #[serde(default)]
    pub generator_adam: AdamConfig,
    /// Piecewise-constant multipliers on both learning rates.
    #[serde(default)]
    pub lr_schedule: Vec<LrStep>,
    #[serde(default = "defaults::tol")]
    pub tol_gap: f64,
    #[serde(default = "defaults::tol")]
    pub tol_loss: f64,
    #[serde(default = "defaults::max_iters")]
    pub max_iters: u64,
    #[serde(default = "defaults::eval_interval")]
    pub eval_interval: u64,
    /// Held-out batch size for `L`, the gap, RE and MMD.
    #[serde(default = "defaults::eval_size")]
    pub eval_size: usize,
    /// Leading rows of the held-out set used for the exact W1 columns.
    #[serde(default = "defaults::w1_size")]
    pub w1_size: usize,
    /// Cycles between checkpoints; 0 disables them.
    #[serde(default)]
    pub checkpoint_interval: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub divergence: FDivergence,
    #[serde(default = "defaults::encoder_hidden")]
    pub encoder_hidden: Vec<usize>,
    #[serde(default = "defaults::generator_hidden")]
    pub generator_hidden: Vec<usize>,
    #[serde(default = "defaults::critic_hidden")]
    pub critic_hidden: Vec<usize>,
    #[serde(default = "defaults::activation")]
    pub activation: Activation,
    /// Write measured W1 wall time to the history; off keeps outputs
    /// byte-identical between runs.
    #[serde(default)]
    pub record_timing: bool,
}

/// From cycle `after + 1` on, learning rates are the configured ones times
/// `factor`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrStep {
    pub after: u64,
    pub factor: f64,
}

mod defaults {
    use crate::nn::Activation;

    pub fn latent_dim() -> usize {
        5
    }
    pub fn batch_size() -> usize {
        256
    }
    pub fn n_critic() -> usize {
        5
    }
    pub fn n_gen() -> usize {
        1
    }
    pub fn lambda_gp() -> f64 {
        10.0
    }
    pub fn lambda_mmd() -> f64 {
        1.0
    }
    pub fn tol() -> f64 {
        0.05
    }
    pub fn max_iters() -> u64 {
        2000
    }
    pub fn eval_interval() -> u64 {
        50
    }
    pub fn eval_size() -> usize {
        1024
    }
    pub fn w1_size() -> usize {
        512
    }
    pub fn encoder_hidden() -> Vec<usize> {
        vec![1024, 512, 256, 128]
    }
    pub fn generator_hidden() -> Vec<usize> {
        vec![512, 512, 512]
    }
    pub fn critic_hidden() -> Vec<usize> {
        vec![512, 512, 512]
    }
    pub fn activation() -> Activation {
        Activation::Relu
    }
}

impl TrainerConfig {
    pub fn new(dataset: Dataset) -> Self {
        Self {
            dataset,
            spiral_variant: SpiralVariant::default(),
            latent_dim: defaults::latent_dim(),
            batch_size: defaults::batch_size(),
            n_critic: defaults::n_critic(),
            n_gen: defaults::n_gen(),
            lambda_gp: defaults::lambda_gp(),
            lambda_mmd: defaults::lambda_mmd(),
            critic_adam: AdamConfig::default(),
            generator_adam: AdamConfig::default(),
            lr_schedule: Vec::new(),
            tol_gap: defaults::tol(),
            tol_loss: defaults::tol(),
            max_iters: defaults::max_iters(),
            eval_interval: defaults::eval_interval(),
            eval_size: defaults::eval_size(),
            w1_size: defaults::w1_size(),
            checkpoint_interval: 0,
            seed: 0,
            divergence: FDivergence::default(),
            encoder_hidden: defaults::encoder_hidden(),
            generator_hidden: defaults::generator_hidden(),
            critic_hidden: defaults::critic_hidden(),
            activation: defaults::activation(),
            record_timing: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.tol_gap > 0.0 && self.tol_loss > 0.0) {
            return fail(format!(
                "tolerances must be positive, got tol_gap={} tol_loss={}",
                self.tol_gap, self.tol_loss
            ));
        }
        if self.n_critic == 0 || self.n_gen == 0 {
            return fail("n_critic and n_gen must be >= 1".into());
        }
        if self.batch_size < 2 {
            return fail(format!("batch_size must be >= 2, got {}", self.batch_size));
        }
        if self.latent_dim == 0 {
            return fail("latent_dim must be >= 1".into());
        }
        if self.eval_interval == 0 {
            return fail("eval_interval must be >= 1".into());
        }
        if self.eval_size < 2 {
            return fail(format!("eval_size must be >= 2, got {}", self.eval_size));
        }
        if self.w1_size == 0 || self.w1_size > self.eval_size.min(MAX_ASSIGNMENT_SIZE) {
            return fail(format!(
                "w1_size must be in 1..={}, got {}",
                self.eval_size.min(MAX_ASSIGNMENT_SIZE),
                self.w1_size
            ));
        }
        if !(self.lambda_gp >= 0.0 && self.lambda_mmd >= 0.0) {
            return fail("penalty weights must be non-negative".into());
        }
        for (name, a) in [("critic_adam", &self.critic_adam), ("generator_adam", &self.generator_adam)] {
            if !(a.lr > 0.0 && a.eps > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2)) {
                return fail(format!("{name}: need lr > 0, eps > 0 and betas in [0, 1)"));
            }
        }
        if self.lr_schedule.iter().any(|s| !(s.factor > 0.0 && s.factor.is_finite()))
            || self.lr_schedule.windows(2).any(|w| w[0].after >= w[1].after)
        {
            return fail("lr_schedule needs positive finite factors at increasing cycles".into());
        }
        for (name, h) in [
            ("encoder_hidden", &self.encoder_hidden),
            ("generator_hidden", &self.generator_hidden),
            ("critic_hidden", &self.critic_hidden),
        ] {
            if h.contains(&0) {
                return fail(format!("{name} contains a zero width"));
            }
        }
        Ok(())
    }

    /// Learning-rate multiplier for the cycle after `iteration` completed ones.
    pub fn lr_factor(&self, iteration: u64) -> f64 {
        self.lr_schedule
            .iter()
            .take_while(|s| s.after <= iteration)
            .last()
            .map_or(1.0, |s| s.factor)
    }

    pub fn mixture(&self) -> GaussianMixtureSpec {
        self.dataset.spec(self.spiral_variant)
    }

    fn sizes(&self, input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
        let mut s = vec![input];
        s.extend_from_slice(hidden);
        s.push(output);
        s
    }

    pub fn encoder_sizes(&self) -> Vec<usize> {
        self.sizes(2, &self.encoder_hidden, self.latent_dim)
    }

    pub fn generator_sizes(&self) -> Vec<usize> {
        self.sizes(self.latent_dim, &self.generator_hidden, 2)
    }

    pub fn critic_sizes(&self) -> Vec<usize> {
        self.sizes(2, &self.critic_hidden, 1)
    }
}

/// Everything needed to continue a run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub generator: Network,
    pub encoder: Network,
    pub critic: Network,
    pub generator_opt: Adam,
    pub encoder_opt: Adam,
    pub critic_opt: Adam,
    /// Completed cycles.
    pub iteration: u64,
    pub data_rng: Stream,
    pub latent_rng: Stream,
    pub mixing_rng: Stream,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerFile {
    iteration: u64,
    generator: Adam,
    encoder: Adam,
    critic: Adam,
    data_rng: StreamState,
    latent_rng: StreamState,
    mixing_rng: StreamState,
}

impl TrainState {
    pub fn init(config: &TrainerConfig) -> Result<Self> {
        config.validate()?;
        let mut seeds = Stream::new(config.seed, Purpose::Init);
        let mut next = || -> u64 { seeds.rng().random() };
        let (gs, es, cs) = (next(), next(), next());
        let generator = Network::init(&config.generator_sizes(), config.activation, gs)?;
        let encoder = Network::init(&config.encoder_sizes(), config.activation, es)?;
        let critic = Network::init(&config.critic_sizes(), config.activation, cs)?;
        Ok(Self {
            generator_opt: Adam::for_network(config.generator_adam, &generator),
            encoder_opt: Adam::for_network(config.generator_adam, &encoder),
            critic_opt: Adam::for_network(config.critic_adam, &critic),
            generator,
            encoder,
            critic,
            iteration: 0,
            data_rng: Stream::new(config.seed, Purpose::Data),
            latent_rng: Stream::new(config.seed, Purpose::Latent),
            mixing_rng: Stream::new(config.seed, Purpose::Mixing),
        })
    }

    /// Writes `generator.json`, `encoder.json`, `critic.json` and
    /// `optimizer.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.generator.save(&dir.join("generator.json"), self.iteration)?;
        self.encoder.save(&dir.join("encoder.json"), self.iteration)?;
        self.critic.save(&dir.join("critic.json"), self.iteration)?;
        let opt = OptimizerFile {
            iteration: self.iteration,
            generator: self.generator_opt.clone(),
            encoder: self.encoder_opt.clone(),
            critic: self.critic_opt.clone(),
            data_rng: self.data_rng.state(),
            latent_rng: self.latent_rng.state(),
            mixing_rng: self.mixing_rng.state(),
        };
        write_json(&dir.join("optimizer.json"), &opt)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (generator, _) = Network::load(&dir.join("generator.json"))?;
        let (encoder, _) = Network::load(&dir.join("encoder.json"))?;
        let (critic, _) = Network::load(&dir.join("critic.json"))?;
        let opt: OptimizerFile = serde_json::from_slice(&fs::read(dir.join("optimizer.json"))?)?;
        for (name, net, adam) in [
            ("generator", &generator, &opt.generator),
            ("encoder", &encoder, &opt.encoder),
            ("critic", &critic, &opt.critic),
        ] {
            let shapes: Vec<_> = net.params().iter().map(|p| p.shape()).collect();
            let moments: Vec<_> = adam.m.iter().map(|p| p.shape()).collect();
            if shapes != moments || adam.v.len() != adam.m.len() {
                return Err(Error::Config(format!(
                    "optimizer state for {name} does not match its network"
                )));
            }
        }
        Ok(Self {
            generator,
            encoder,
            critic,
            generator_opt: opt.generator,
            encoder_opt: opt.encoder,
            critic_opt: opt.critic,
            iteration: opt.iteration,
            data_rng: Stream::restore(&opt.data_rng),
            latent_rng: Stream::restore(&opt.latent_rng),
            mixing_rng: Stream::restore(&opt.mixing_rng),
        })
    }
}

fn check_finite(what: &'static str, value: f64, iteration: u64, diagnostic: impl FnOnce() -> String) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite {
            what,
            iteration,
            diagnostic: diagnostic(),
        })
    }
}

/// Scalars from one critic update, before the step is applied.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriticStats {
    /// `E f(G(Q(x))) − E h*(f(G(z)))`, the part being ascended.
    pub objective: f64,
    pub penalty: f64,
}

/// Gradient of the critic loss `E h*(f(G(z))) − E f(G(Q(x))) + λ1 J1` with
/// respect to the critic parameters, with `x̂ = ε x + (1 − ε) G(z)`.
pub fn critic_gradients(
    state: &TrainState,
    config: &TrainerConfig,
    x: &Matrix,
    z: &Matrix,
    eps: &[f64],
) -> Result<(Vec<Matrix>, CriticStats)> {
    let reconstructed = state.generator.forward(&state.encoder.forward(x)?)?;
    let generated = state.generator.forward(z)?;
    let x_hat = interpolate_pairs(x, &generated, eps)?;

    let critic = state.critic.bind();
    let (on_recon, on_prior) = critic_terms(
        &critic,
        config.divergence,
        &Tensor::constant(reconstructed),
        &Tensor::constant(generated),
    )?;
    let objective = on_recon.sub(&on_prior)?;
    let mut loss = objective.neg();
    let mut penalty = 0.0;
    if config.lambda_gp != 0.0 {
        let j1 = gradient_penalty(&critic, config.divergence, &x_hat)?;
        penalty = j1.item();
        loss = loss.add(&j1.scale(config.lambda_gp))?;
    }
    let grads = gradient(&loss, &critic.params(), false)?
        .into_iter()
        .map(Tensor::into_value)
        .collect();
    Ok((
        grads,
        CriticStats {
            objective: objective.item(),
            penalty,
        },
    ))
}

/// One Adam update of the critic. Only `critic` and `critic_opt` change.
pub fn critic_step(
    state: &mut TrainState,
    config: &TrainerConfig,
    x: &Matrix,
    z: &Matrix,
    eps: &[f64],
) -> Result<CriticStats> {
    let (grads, stats) = critic_gradients(state, config, x, z, eps)?;
    let it = state.iteration;
    check_finite("critic objective", stats.objective, it, || format!("{stats:?}"))?;
    check_finite("gradient penalty", stats.penalty, it, || format!("{stats:?}"))?;
    state.critic_opt.step_network(&mut state.critic, &grads)?;
    Ok(stats)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneratorStats {
    /// `L` on the batch, before the step.
    pub loss: f64,
    pub recon: f64,
    pub mmd: f64,
}

/// Descends `E‖x − G(Q(x))‖ + E f(G(Q(x))) − E h*(f(G(z))) + λ2 J2(Q)` in
/// the generator and encoder parameters. The critic is untouched.
pub fn encoder_generator_step(
    state: &mut TrainState,
    config: &TrainerConfig,
    x: &Matrix,
    z: &Matrix,
) -> Result<GeneratorStats> {
    let generator = state.generator.bind();
    let encoder = state.encoder.bind();
    let critic = state.critic.bind_frozen();
    let x = Tensor::constant(x.clone());
    let z = Tensor::constant(z.clone());

    let qx = encoder.forward(&x)?;
    let reconstructed = generator.forward(&qx)?;
    let generated = generator.forward(&z)?;
    let recon = mean_row_distance(&x, &reconstructed)?;
    let (on_recon, on_prior) = critic_terms(&critic, config.divergence, &reconstructed, &generated)?;
    let l = recon.add(&on_recon)?.sub(&on_prior)?;
    let mut objective = l.clone();
    let mut mmd = 0.0;
    if config.lambda_mmd != 0.0 {
        let j2 = mmd_penalty(&qx, &z)?;
        mmd = j2.item();
        objective = objective.add(&j2.scale(config.lambda_mmd))?;
    }
    let stats = GeneratorStats {
        loss: l.item(),
        recon: recon.item(),
        mmd,
    };
    let it = state.iteration;
    check_finite("generator loss", stats.loss, it, || format!("{stats:?}"))?;
    check_finite("mmd penalty", stats.mmd, it, || format!("{stats:?}"))?;

    let mut wrt = generator.params();
    let n_gen = wrt.len();
    wrt.extend(encoder.params());
    let mut grads: Vec<Matrix> = gradient(&objective, &wrt, false)?
        .into_iter()
        .map(Tensor::into_value)
        .collect();
    let enc_grads = grads.split_off(n_gen);
    state.generator_opt.step_network(&mut state.generator, &grads)?;
    state.encoder_opt.step_network(&mut state.encoder, &enc_grads)?;
    Ok(stats)
}

/// `L(G, Q, f)` on fixed batches, without building a graph.
pub fn evaluate_loss(
    generator: &Network,
    encoder: &Network,
    critic: &Network,
    div: FDivergence,
    x: &Matrix,
    z: &Matrix,
) -> Result<f64> {
    Ok(core_loss(
        &generator.bind_frozen(),
        &encoder.bind_frozen(),
        &critic.bind_frozen(),
        div,
        &Tensor::constant(x.clone()),
        &Tensor::constant(z.clone()),
    )?
    .item())
}

/// `L(G_prev, Q_prev, f) − L(G_new, Q_new, f)`.
pub fn duality_gap_estimate(
    prev: (&Network, &Network),
    new: (&Network, &Network),
    critic: &Network,
    div: FDivergence,
    eval_x: &Matrix,
    eval_z: &Matrix,
) -> Result<f64> {
    let before = evaluate_loss(prev.0, prev.1, critic, div, eval_x, eval_z)?;
    let after = evaluate_loss(new.0, new.1, critic, div, eval_x, eval_z)?;
    Ok(before - after)
}

/// Metrics at one evaluation point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub iter: u64,
    #[serde(rename = "L")]
    pub loss: f64,
    pub dual_gap: f64,
    pub recon_err: f64,
    pub mmd: f64,
    /// `W1(G(Z), X)`.
    pub w1: f64,
    pub oracle_secs: f64,
    /// `W1(X, G(Q(X)))`; not written to the CSV.
    #[serde(skip)]
    pub w1_recon: f64,
    /// `W1(G(Q(X)), G(Z))`; not written to the CSV.
    #[serde(skip)]
    pub w1_latent: f64,
}

impl HistoryRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.iter, self.loss, self.dual_gap, self.recon_err, self.mmd, self.w1, self.oracle_secs
        )
    }

    fn is_finite(&self) -> bool {
        [self.loss, self.dual_gap, self.recon_err, self.mmd, self.w1, self.w1_recon, self.w1_latent]
            .iter()
            .all(|v| v.is_finite())
    }
}

pub fn write_history_csv(path: &Path, history: &[HistoryRecord]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "{HISTORY_HEADER}")?;
    for r in history {
        writeln!(out, "{}", r.csv_row())?;
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a file written by [`write_history_csv`]. The columns kept only in
/// memory come back as NaN.
pub fn read_history_csv(path: &Path) -> Result<Vec<HistoryRecord>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(HISTORY_HEADER) {
        return Err(Error::Config(format!("{} does not start with the history header", path.display())));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = || Error::Config(format!("{} line {}: malformed record", path.display(), i + 2));
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 7 {
                return Err(bad());
            }
            let f = |k: usize| fields[k].parse::<f64>().map_err(|_| bad());
            Ok(HistoryRecord {
                iter: fields[0].parse().map_err(|_| bad())?,
                loss: f(1)?,
                dual_gap: f(2)?,
                recon_err: f(3)?,
                mmd: f(4)?,
                w1: f(5)?,
                oracle_secs: f(6)?,
                w1_recon: f64::NAN,
                w1_latent: f64::NAN,
            })
        })
        .collect()
}

/// Held-out batches, drawn once from the evaluation stream.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSet {
    pub x: Matrix,
    pub z: Matrix,
}

impl EvalSet {
    pub fn new(config: &TrainerConfig) -> Self {
        let mut rng = Stream::new(config.seed, Purpose::Eval);
        let (x, _) = config.mixture().sample_with(&mut rng, config.eval_size);
        let z = rng.normal_matrix(config.eval_size, config.latent_dim);
        Self { x, z }
    }
}

fn evaluate(
    state: &TrainState,
    config: &TrainerConfig,
    eval: &EvalSet,
    dual_gap: f64,
) -> Result<HistoryRecord> {
    let g = &state.generator;
    let q = &state.encoder;
    let loss = evaluate_loss(g, q, &state.critic, config.divergence, &eval.x, &eval.z)?;
    let recon_err = reconstruction_error(g, q, &eval.x)?;
    let mmd = mmd_metric(&eval.z, &q.forward(&eval.x)?)?;

    let n = config.w1_size;
    let x = eval.x.slice_rows(0, n);
    let gqx = g.forward(&q.forward(&x)?)?;
    let gz = g.forward(&eval.z.slice_rows(0, n))?;
    let start = Instant::now();
    let w1 = exact_w1(&gz, &x)?.cost;
    let w1_recon = exact_w1(&x, &gqx)?.cost;
    let w1_latent = exact_w1(&gqx, &gz)?.cost;
    let oracle_secs = if config.record_timing {
        start.elapsed().as_secs_f64()
    } else {
        0.0
    };
    let record = HistoryRecord {
        iter: state.iteration,
        loss,
        dual_gap,
        recon_err,
        mmd,
        w1,
        oracle_secs,
        w1_recon,
        w1_latent,
    };
    if !record.is_finite() {
        return Err(Error::NonFinite {
            what: "evaluation metrics",
            iteration: state.iteration,
            diagnostic: format!("{record:?}"),
        });
    }
    Ok(record)
}

fn draw_batch(state: &mut TrainState, config: &TrainerConfig, spec: &GaussianMixtureSpec) -> (Matrix, Matrix) {
    let (x, _) = spec.sample_with(&mut state.data_rng, config.batch_size);
    let z = state.latent_rng.normal_matrix(config.batch_size, config.latent_dim);
    (x, z)
}

/// Runs one full cycle. When `track_gap` is set, returns the duality-gap
/// estimate of the cycle on the held-out set.
pub fn run_cycle(
    state: &mut TrainState,
    config: &TrainerConfig,
    spec: &GaussianMixtureSpec,
    eval: Option<&EvalSet>,
) -> Result<Option<f64>> {
    let factor = config.lr_factor(state.iteration);
    state.critic_opt.config.lr = config.critic_adam.lr * factor;
    state.generator_opt.config.lr = config.generator_adam.lr * factor;
    state.encoder_opt.config.lr = config.generator_adam.lr * factor;
    for _ in 0..config.n_critic {
        let (x, z) = draw_batch(state, config, spec);
        let eps: Vec<f64> = (0..config.batch_size).map(|_| state.mixing_rng.uniform()).collect();
        critic_step(state, config, &x, &z, &eps)?;
    }
    let prev = eval.map(|_| (state.generator.clone(), state.encoder.clone()));
    for _ in 0..config.n_gen {
        let (x, z) = draw_batch(state, config, spec);
        encoder_generator_step(state, config, &x, &z)?;
    }
    state.iteration += 1;
    match (eval, prev) {
        (Some(eval), Some((g, q))) => {
            let gap = duality_gap_estimate(
                (&g, &q),
                (&state.generator, &state.encoder),
                &state.critic,
                config.divergence,
                &eval.x,
                &eval.z,
            )?;
            check_finite("duality gap", gap, state.iteration, || {
                format!("gap {gap} at cycle {}", state.iteration)
            })?;
            Ok(Some(gap))
        }
        _ => Ok(None),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainStatus {
    Converged,
    MaxIterations,
}

pub struct TrainOutcome {
    pub state: TrainState,
    pub history: Vec<HistoryRecord>,
    pub status: TrainStatus,
}

/// Trains from scratch. The first history record is taken at iteration 0;
/// its gap is that of a discarded probe cycle run on a copy of the state.
pub fn train(config: &TrainerConfig) -> Result<TrainOutcome> {
    train_with_checkpoints(config, None)
}

/// [`train`], writing checkpoints into `checkpoint_dir` on the configured
/// schedule.
pub fn train_with_checkpoints(config: &TrainerConfig, checkpoint_dir: Option<&Path>) -> Result<TrainOutcome> {
    let state = TrainState::init(config)?;
    let eval = EvalSet::new(config);
    let spec = config.mixture();
    let mut probe = state.clone();
    let gap0 = run_cycle(&mut probe, config, &spec, Some(&eval))?.expect("tracked");
    let initial = evaluate(&state, config, &eval, gap0)?;
    train_from(state, config, vec![initial], checkpoint_dir)
}

/// Continues `state` until convergence or `config.max_iters` cycles in
/// total, appending to `history`. With `checkpoint_dir`, writes a checkpoint
/// every `checkpoint_interval` cycles.
pub fn train_from(
    mut state: TrainState,
    config: &TrainerConfig,
    mut history: Vec<HistoryRecord>,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let eval = EvalSet::new(config);
    let spec = config.mixture();
    // Both estimates are signed; noise can push them below zero long before
    // the model is any good, so the test is on magnitudes.
    let converged = |r: &HistoryRecord| r.dual_gap.abs() <= config.tol_gap && r.loss.abs() <= config.tol_loss;
    while state.iteration < config.max_iters {
        let next = state.iteration + 1;
        let at_eval = next.is_multiple_of(config.eval_interval) || next == config.max_iters;
        let gap = run_cycle(&mut state, config, &spec, at_eval.then_some(&eval))?;
        let record = match gap {
            Some(gap) => Some(evaluate(&state, config, &eval, gap)?),
            None => None,
        };
        if let Some(dir) = checkpoint_dir {
            if config.checkpoint_interval > 0 && state.iteration.is_multiple_of(config.checkpoint_interval) {
                state.save(dir)?;
            }
        }
        if let Some(record) = record {
            let done = converged(&record);
            history.push(record);
            if done {
                return Ok(TrainOutcome {
                    state,
                    history,
                    status: TrainStatus::Converged,
                });
            }
        }
    }
    Ok(TrainOutcome {
        state,
        history,
        status: TrainStatus::MaxIterations,
    })
}
