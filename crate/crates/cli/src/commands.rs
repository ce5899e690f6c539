use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use iwgan::data::{Dataset, SpiralVariant};
use iwgan::gradcheck::{run_gradcheck, GradcheckReport};
use iwgan::metrics::{mmd_metric, quality_score};
use iwgan::nn::Network;
use iwgan::oracle::AnalyticDensity2D;
use iwgan::rng::{Purpose, Stream};
use iwgan::training::{
    read_history_csv, train_from, train_with_checkpoints, write_history_csv, HistoryRecord, TrainOutcome,
    TrainState, TrainStatus,
};
use iwgan::Matrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{
    default_lambdas, prepare_dir, read_json, seed_override, validate_lambdas, write_json, ConfigError, EvalSpec,
    ExperimentConfig, RESOLVED_CONFIG,
};
use crate::evaluation::{evaluate_model, load_model, EvalReport};
use crate::svg;

pub const HISTORY_CSV: &str = "history.csv";
pub const METRICS_JSON: &str = "metrics.json";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const INTERPOLATION_CSV: &str = "interpolation.csv";
pub const INTERPOLATION_HEADER: &str = "pair,lambda,x0,x1,score";
pub const HEATMAP_CSV: &str = "heatmap.csv";
pub const HEATMAP_HEADER: &str = "x0,x1,score";
pub const SAMPLES_CSV: &str = "samples.csv";
pub const SAMPLES_HEADER: &str = "x0,x1,mode";
pub const LATENT_PAIRS_CSV: &str = "latent-pairs.csv";
pub const LATENT_PAIRS_HEADER: &str = "pair,i,j,qi,qj";
pub const LATENT_SUMMARY_JSON: &str = "latent-summary.json";
pub const ROUNDTRIP_JSON: &str = "roundtrip.json";
pub const GRADCHECK_JSON: &str = "gradcheck.json";
pub const FIRST_ORDER_TOL: f64 = 1e-5;
pub const SECOND_ORDER_TOL: f64 = 1e-4;

#[derive(Parser, Debug)]
#[command(name = "iwgan", version, about = "Autoencoder-GAN experiments on 2D Gaussian mixtures")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train from a JSON experiment config, then evaluate the result.
    Train(TrainArgs),
    /// Evaluate a checkpoint on held-out samples.
    Eval(EvalArgs),
    /// Sample a benchmark mixture.
    Datagen(DatagenArgs),
    /// Push points through the analytic Rosenblatt transform of a mixture.
    Oracle(OracleArgs),
    /// Decode straight latent paths between random pairs.
    Interpolate(InterpolateArgs),
    /// Quality scores over a rectangular lattice.
    Heatmap(HeatmapArgs),
    /// Every pair of encoded coordinates.
    LatentPairs(LatentPairsArgs),
    /// Compare autodiff against finite differences on random networks.
    Gradcheck(GradcheckArgs),
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => rerun(a, cmd_eval),
        Command::Datagen(a) => rerun(a, cmd_datagen),
        Command::Oracle(a) => rerun(a, cmd_oracle),
        Command::Interpolate(a) => rerun(a, cmd_interpolate),
        Command::Heatmap(a) => rerun(a, cmd_heatmap),
        Command::LatentPairs(a) => rerun(a, cmd_latent_pairs),
        Command::Gradcheck(a) => rerun(a, cmd_gradcheck),
    }
}

/// Flags every non-training command shares. Neither field is part of the
/// resolved config.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Rerun from a `resolved-config.json`; other flags are then ignored.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

trait Resolved: Serialize + DeserializeOwned {
    fn common(&self) -> &Common;
    fn set_common(&mut self, common: Common);
    fn set_seed(&mut self, seed: u64);
    fn validate(&self) -> Result<()>;
}

macro_rules! resolved {
    ($t:ty, seed) => {
        resolved!($t, |a: &mut $t, s| a.seed = s);
    };
    ($t:ty, $set_seed:expr) => {
        impl Resolved for $t {
            fn common(&self) -> &Common {
                &self.common
            }
            fn set_common(&mut self, common: Common) {
                self.common = common;
            }
            fn set_seed(&mut self, seed: u64) {
                #[allow(clippy::redundant_closure_call)]
                ($set_seed)(self, seed)
            }
            fn validate(&self) -> Result<()> {
                self.check()
            }
        }
    };
}

/// Loads `--config` if given, applies the seed override, validates, and
/// records the resolved arguments before running `body`.
fn rerun<T: Resolved>(args: T, body: impl FnOnce(&T, &Path) -> Result<()>) -> Result<()> {
    let common = args.common().clone();
    let mut args = match &common.config {
        Some(path) => {
            let mut loaded: T = read_json(path)?;
            loaded.set_common(common.clone());
            loaded
        }
        None => args,
    };
    if let Some(seed) = seed_override()? {
        args.set_seed(seed);
    }
    args.validate()?;
    prepare_dir(&common.out_dir)?;
    write_json(&common.out_dir.join(RESOLVED_CONFIG), &args)?;
    body(&args, &common.out_dir)
}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

fn points(m: &Matrix) -> Vec<[f64; 2]> {
    (0..m.rows()).map(|r| [m.get(r, 0), m.get(r, 1)]).collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

// ---------------------------------------------------------------- train

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Validate the config, print it with all defaults filled in, and exit.
    #[arg(long)]
    pub dry_run: bool,
    /// Continue from the checkpoint and history in the output directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Serialize)]
struct TrainMetrics<'a> {
    status: TrainStatus,
    iterations: u64,
    initial: Option<&'a HistoryRecord>,
    last: Option<&'a HistoryRecord>,
    eval: &'a EvalReport,
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg: ExperimentConfig = read_json(&args.config)?;
    if let Some(seed) = seed_override()? {
        cfg.train.seed = seed;
    }
    if let Some(dir) = args.out_dir {
        cfg.output_dir = dir;
    }
    cfg.validate()?;
    if args.dry_run {
        println!("{}", serde_json::to_string_pretty(&cfg)?);
        return Ok(());
    }
    let out = cfg.output_dir.clone();
    prepare_dir(&out)?;
    write_json(&out.join(RESOLVED_CONFIG), &cfg)?;
    let ckpt = out.join(CHECKPOINT_DIR);
    prepare_dir(&ckpt)?;

    let outcome = if args.resume {
        let state = TrainState::load(&ckpt).with_context(|| format!("resuming from {}", ckpt.display()))?;
        let mut history = read_history_csv(&out.join(HISTORY_CSV))?;
        history.retain(|r| r.iter <= state.iteration);
        eprintln!("resuming at iteration {}", state.iteration);
        train_from(state, &cfg.train, history, Some(&ckpt))?
    } else {
        train_with_checkpoints(&cfg.train, Some(&ckpt))?
    };
    let TrainOutcome { state, history, status } = outcome;
    state.save(&ckpt)?;
    write_history_csv(&out.join(HISTORY_CSV), &history)?;

    let spec = cfg.train.mixture();
    let evaluation = evaluate_model(
        &state.generator,
        &state.encoder,
        cfg.train.dataset,
        &spec,
        &cfg.eval,
        cfg.train.seed,
    )?;
    let metrics = TrainMetrics {
        status,
        iterations: state.iteration,
        initial: history.first(),
        last: history.last(),
        eval: &evaluation.report,
    };
    write_json(&out.join(METRICS_JSON), &metrics)?;

    let rows = interpolation_rows(
        &state.generator,
        &state.encoder,
        cfg.interpolation.pairs,
        &cfg.interpolation.lambdas,
        cfg.train.seed,
    )?;
    write_text(&out.join(INTERPOLATION_CSV), &interpolation_csv(&rows))?;

    if cfg.plots {
        let data = points(&evaluation.data);
        let generated = points(&evaluation.generated);
        write_text(
            &out.join("samples.svg"),
            &svg::scatter(&[(&data, "steelblue"), (&generated, "darkorange")]),
        )?;
        let frame = svg::Frame::around([data.as_slice()]);
        let lattice = Lattice {
            x_min: frame.lo[0],
            x_max: frame.hi[0],
            y_min: frame.lo[1],
            y_max: frame.hi[1],
            nx: 48,
            ny: 48,
        };
        let scores = lattice_scores(&state.generator, &state.encoder, &lattice)?;
        write_text(&out.join("heatmap.svg"), &svg::heatmap(lattice.nx, lattice.ny, &scores))?;
    }
    eprintln!(
        "{status:?} after {} iterations; metrics in {}",
        state.iteration,
        out.join(METRICS_JSON).display()
    );
    Ok(())
}

// ---------------------------------------------------------------- eval

#[derive(Args, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalArgs {
    #[command(flatten)]
    #[serde(skip, default = "default_common")]
    pub common: Common,
    /// Directory holding `generator.json` and `encoder.json`.
    #[arg(long, default_value = "runs/default/checkpoint")]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "ring")]
    pub dataset: Dataset,
    #[arg(long, default_value = "corrected")]
    pub spiral_variant: SpiralVariant,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub eval: EvalSpec,
}

fn default_common() -> Common {
    Common {
        config: None,
        out_dir: PathBuf::from("out"),
    }
}

impl EvalArgs {
    fn check(&self) -> Result<()> {
        self.eval.validate()
    }
}
resolved!(EvalArgs, seed);

fn cmd_eval(args: &EvalArgs, out: &Path) -> Result<()> {
    let (g, q) = load_model(&args.checkpoint)?;
    let spec = args.dataset.spec(args.spiral_variant);
    let evaluation = evaluate_model(&g, &q, args.dataset, &spec, &args.eval, args.seed)?;
    write_json(&out.join(METRICS_JSON), &evaluation.report)
}

// ---------------------------------------------------------------- datagen

#[derive(Args, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatagenArgs {
    #[command(flatten)]
    #[serde(skip, default = "default_common")]
    pub common: Common,
    #[arg(long, default_value = "ring")]
    pub dataset: Dataset,
    #[arg(long, default_value = "corrected")]
    pub spiral_variant: SpiralVariant,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write `samples.svg`.
    #[arg(long)]
    pub svg: bool,
}

impl DatagenArgs {
    fn check(&self) -> Result<()> {
        if self.n == 0 {
            bail!(config_error("n must be positive"));
        }
        Ok(())
    }
}
resolved!(DatagenArgs, seed);

fn cmd_datagen(args: &DatagenArgs, out: &Path) -> Result<()> {
    let spec = args.dataset.spec(args.spiral_variant);
    let (x, modes) = spec.sample_with(&mut Stream::new(args.seed, Purpose::Data), args.n);
    let mut csv = format!("{SAMPLES_HEADER}\n");
    for (r, m) in modes.iter().enumerate() {
        let _ = writeln!(csv, "{},{},{}", x.get(r, 0), x.get(r, 1), m);
    }
    write_text(&out.join(SAMPLES_CSV), &csv)?;
    if args.svg {
        write_text(&out.join("samples.svg"), &svg::scatter(&[(&points(&x), "steelblue")]))?;
    }
    Ok(())
}

// ---------------------------------------------------------------- oracle

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// Data space to the standard normal.
    Encode,
    /// Standard normal to data space.
    Decode,
}

#[derive(Args, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleArgs {
    #[command(flatten)]
    #[serde(skip, default = "default_common")]
    pub common: Common,
    #[arg(long, default_value = "ring")]
    pub dataset: Dataset,
    #[arg(long, default_value = "corrected")]
    pub spiral_variant: SpiralVariant,
    #[arg(long, value_enum, default_value = "encode")]
    pub direction: Direction,
    /// CSV with a header row and two numeric leading columns. Without it,
    /// `n` points are drawn from the mixture (encode) or the normal (decode).
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl OracleArgs {
    fn check(&self) -> Result<()> {
        if self.input.is_none() && self.n == 0 {
            bail!(config_error("n must be positive"));
        }
        Ok(())
    }
}
resolved!(OracleArgs, seed);

#[derive(Serialize)]
struct RoundTrip {
    direction: Direction,
    n: usize,
    max_error: f64,
    mean_error: f64,
}

fn read_points(path: &Path) -> Result<Vec<[f64; 2]>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let mut cols = line.split(',').map(|c| c.trim().parse::<f64>());
            match (cols.next(), cols.next()) {
                (Some(Ok(a)), Some(Ok(b))) => Ok([a, b]),
                _ => bail!("{} line {}: expected two numbers", path.display(), i + 1),
            }
        })
        .collect()
}

fn cmd_oracle(args: &OracleArgs, out: &Path) -> Result<()> {
    let density = AnalyticDensity2D::from_mixture(&args.dataset.spec(args.spiral_variant))?;
    let input = match &args.input {
        Some(path) => read_points(path)?,
        None => match args.direction {
            Direction::Encode => {
                let spec = args.dataset.spec(args.spiral_variant);
                points(&spec.sample_with(&mut Stream::new(args.seed, Purpose::Data), args.n).0)
            }
            Direction::Decode => points(&Stream::new(args.seed, Purpose::Latent).normal_matrix(args.n, 2)),
        },
    };
    type Map = fn(&AnalyticDensity2D, [f64; 2]) -> iwgan::Result<[f64; 2]>;
    let forward: Map = AnalyticDensity2D::rosenblatt_forward;
    let inverse: Map = AnalyticDensity2D::rosenblatt_inverse;
    let (forward, back) = match args.direction {
        Direction::Encode => (forward, inverse),
        Direction::Decode => (inverse, forward),
    };
    let (name, header) = match args.direction {
        Direction::Encode => ("encoded.csv", "z0,z1"),
        Direction::Decode => ("decoded.csv", "x0,x1"),
    };
    let mut csv = format!("{header}\n");
    let (mut max_error, mut total) = (0.0f64, 0.0);
    for p in &input {
        let y = forward(&density, *p)?;
        let _ = writeln!(csv, "{},{}", y[0], y[1]);
        let r = back(&density, y)?;
        let e = ((r[0] - p[0]).powi(2) + (r[1] - p[1]).powi(2)).sqrt();
        max_error = max_error.max(e);
        total += e;
    }
    write_text(&out.join(name), &csv)?;
    write_json(
        &out.join(ROUNDTRIP_JSON),
        &RoundTrip {
            direction: args.direction,
            n: input.len(),
            max_error,
            mean_error: if input.is_empty() { 0.0 } else { total / input.len() as f64 },
        },
    )
}

// ---------------------------------------------------------------- interpolate

#[derive(Args, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterpolateArgs {
    #[command(flatten)]
    #[serde(skip, default = "default_common")]
    pub common: Common,
    #[arg(long, default_value = "runs/default/checkpoint")]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub pairs: usize,
    /// Comma-separated weights in [0, 1].
    #[arg(long, value_delimiter = ',', default_values_t = default_lambdas())]
    pub lambdas: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl InterpolateArgs {
    fn check(&self) -> Result<()> {
        if self.pairs == 0 {
            bail!(config_error("pairs must be positive"));
        }
        validate_lambdas(&self.lambdas)
    }
}
resolved!(InterpolateArgs, seed);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InterpolationRow {
    pub pair: usize,
    pub lambda: f64,
    pub x: [f64; 2],
    pub score: f64,
}

/// `G((1 − λ) z₁ + λ z₂)` for `pairs` latent pairs drawn from the latent
/// stream of `seed`. Each point is decoded on its own.
pub fn interpolation_rows(
    generator: &Network,
    encoder: &Network,
    pairs: usize,
    lambdas: &[f64],
    seed: u64,
) -> Result<Vec<InterpolationRow>> {
    let d = generator.input_dim();
    let mut rng = Stream::new(seed, Purpose::Latent);
    let mut rows = Vec::with_capacity(pairs * lambdas.len());
    for pair in 0..pairs {
        let ends = rng.normal_matrix(2, d);
        let (z1, z2) = (ends.row(0), ends.row(1));
        for &lambda in lambdas {
            let z: Vec<f64> = z1.iter().zip(z2).map(|(a, b)| (1.0 - lambda) * a + lambda * b).collect();
            let x = generator.forward(&Matrix::row_vector(&z))?;
            let x = [x.get(0, 0), x.get(0, 1)];
            rows.push(InterpolationRow {
                pair,
                lambda,
                x,
                score: quality_score(generator, encoder, &x)?,
            });
        }
    }
    Ok(rows)
}

fn interpolation_csv(rows: &[InterpolationRow]) -> String {
    let mut csv = format!("{INTERPOLATION_HEADER}\n");
    for r in rows {
        let _ = writeln!(csv, "{},{},{},{},{}", r.pair, r.lambda, r.x[0], r.x[1], r.score);
    }
    csv
}

fn cmd_interpolate(args: &InterpolateArgs, out: &Path) -> Result<()> {
    let (g, q) = load_model(&args.checkpoint)?;
    let rows = interpolation_rows(&g, &q, args.pairs, &args.lambdas, args.seed)?;
    write_text(&out.join(INTERPOLATION_CSV), &interpolation_csv(&rows))
}

// ---------------------------------------------------------------- heatmap

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lattice {
    #[arg(long, default_value_t = -3.0, allow_negative_numbers = true)]
    pub x_min: f64,
    #[arg(long, default_value_t = 3.0, allow_negative_numbers = true)]
    pub x_max: f64,
    #[arg(long, default_value_t = -3.0, allow_negative_numbers = true)]
    pub y_min: f64,
    #[arg(long, default_value_t = 3.0, allow_negative_numbers = true)]
    pub y_max: f64,
    /// Points along x, endpoints included.
    #[arg(long, default_value_t = 61)]
    pub nx: usize,
    #[arg(long, default_value_t = 61)]
    pub ny: usize,
}

impl Lattice {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.x_max, self.y_min, self.y_max].iter().all(|v| v.is_finite());
        if !finite || !(self.x_max > self.x_min) || !(self.y_max > self.y_min) || self.nx < 2 || self.ny < 2 {
            bail!(config_error(format!(
                "degenerate lattice: need min < max on both axes and at least 2 points per axis, got {self:?}"
            )));
        }
        Ok(())
    }

    fn axis(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
        (0..n).map(move |i| if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
    }

    /// Row-major from the bottom-left corner: x varies fastest.
    pub fn points(&self) -> Vec<[f64; 2]> {
        Self::axis(self.y_min, self.y_max, self.ny)
            .flat_map(|y| Self::axis(self.x_min, self.x_max, self.nx).map(move |x| [x, y]))
            .collect()
    }
}

pub fn lattice_scores(generator: &Network, encoder: &Network, lattice: &Lattice) -> Result<Vec<f64>> {
    lattice
        .points()
        .iter()
        .map(|p| Ok(quality_score(generator, encoder, p)?))
        .collect()
}

#[derive(Args, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatmapArgs {
    #[command(flatten)]
    #[serde(skip, default = "default_common")]
    pub common: Common,
    #[arg(long, default_value = "runs/default/checkpoint")]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub lattice: Lattice,
    /// Also write `heatmap.svg`.
    #[arg(long)]
    pub svg: bool,
}

impl HeatmapArgs {
    fn check(&self) -> Result<()> {
        self.lattice.validate()
    }
}
resolved!(HeatmapArgs, |_: &mut HeatmapArgs, _| ());

fn cmd_heatmap(args: &HeatmapArgs, out: &Path) -> Result<()> {
    let (g, q) = load_model(&args.checkpoint)?;
    let scores = lattice_scores(&g, &q, &args.lattice)?;
    let mut csv = format!("{HEATMAP_HEADER}\n");
    for (p, s) in args.lattice.points().iter().zip(&scores) {
        let _ = writeln!(csv, "{},{},{}", p[0], p[1], s);
    }
    write_text(&out.join(HEATMAP_CSV), &csv)?;
    if args.svg {
        write_text(
            &out.join("heatmap.svg"),
            &svg::heatmap(args.lattice.nx, args.lattice.ny, &scores),
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------- latent-pairs

#[derive(Args, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentPairsArgs {
    #[command(flatten)]
    #[serde(skip, default = "default_common")]
    pub common: Common,
    #[arg(long, default_value = "runs/default/checkpoint")]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "ring")]
    pub dataset: Dataset,
    #[arg(long, default_value = "corrected")]
    pub spiral_variant: SpiralVariant,
    #[arg(long, default_value_t = 2048)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl LatentPairsArgs {
    fn check(&self) -> Result<()> {
        if self.n < 2 {
            bail!(config_error("n must be at least 2"));
        }
        Ok(())
    }
}
resolved!(LatentPairsArgs, seed);

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LatentSummary {
    pub n: usize,
    pub latent_dim: usize,
    pub pairs: Vec<[usize; 2]>,
    /// `MMD(Q(X), Z)` against a fresh prior sample of the same size.
    pub mmd: f64,
    pub mean: Vec<f64>,
    /// Unbiased per-coordinate sample variance.
    pub variance: Vec<f64>,
}

/// Encodes a fresh data sample and compares it with a prior sample, both
/// drawn from the streams of `seed`.
pub fn latent_sample(encoder: &Network, args: &LatentPairsArgs) -> Result<(Matrix, LatentSummary)> {
    let spec = args.dataset.spec(args.spiral_variant);
    let (x, _) = spec.sample_with(&mut Stream::new(args.seed, Purpose::Data), args.n);
    let q = encoder.forward(&x)?;
    let d = q.cols();
    let z = Stream::new(args.seed, Purpose::Latent).normal_matrix(args.n, d);
    let n = args.n as f64;
    let mean: Vec<f64> = (0..d).map(|j| q.column(j).as_slice().iter().sum::<f64>() / n).collect();
    let variance = (0..d)
        .map(|j| q.column(j).as_slice().iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>() / (n - 1.0))
        .collect();
    let pairs = (0..d).flat_map(|i| (i + 1..d).map(move |j| [i, j])).collect();
    let summary = LatentSummary {
        n: args.n,
        latent_dim: d,
        pairs,
        mmd: mmd_metric(&z, &q)?,
        mean,
        variance,
    };
    Ok((q, summary))
}

fn cmd_latent_pairs(args: &LatentPairsArgs, out: &Path) -> Result<()> {
    let (_, q) = load_model(&args.checkpoint)?;
    let (codes, summary) = latent_sample(&q, args)?;
    let mut csv = format!("{LATENT_PAIRS_HEADER}\n");
    for (k, [i, j]) in summary.pairs.iter().enumerate() {
        for r in 0..codes.rows() {
            let _ = writeln!(csv, "{k},{i},{j},{},{}", codes.get(r, *i), codes.get(r, *j));
        }
    }
    write_text(&out.join(LATENT_PAIRS_CSV), &csv)?;
    write_json(&out.join(LATENT_SUMMARY_JSON), &summary)
}

// ---------------------------------------------------------------- gradcheck

#[derive(Args, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckArgs {
    #[command(flatten)]
    #[serde(skip, default = "default_common")]
    pub common: Common,
    #[arg(long, default_value_t = 50)]
    pub cases: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl GradcheckArgs {
    fn check(&self) -> Result<()> {
        if self.cases == 0 {
            bail!(config_error("cases must be positive"));
        }
        Ok(())
    }
}
resolved!(GradcheckArgs, seed);

#[derive(Serialize)]
struct GradcheckOutput {
    #[serde(flatten)]
    report: GradcheckReport,
    first_order_tol: f64,
    second_order_tol: f64,
    passed: bool,
}

fn cmd_gradcheck(args: &GradcheckArgs, out: &Path) -> Result<()> {
    let report = run_gradcheck(args.cases, args.seed)?;
    let passed = report.passes(FIRST_ORDER_TOL, SECOND_ORDER_TOL);
    write_json(
        &out.join(GRADCHECK_JSON),
        &GradcheckOutput {
            report,
            first_order_tol: FIRST_ORDER_TOL,
            second_order_tol: SECOND_ORDER_TOL,
            passed,
        },
    )?;
    if !passed {
        bail!("gradient check failed; see {}", out.join(GRADCHECK_JSON).display());
    }
    Ok(())
}
