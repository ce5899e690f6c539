use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use iwgan::training::TrainerConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const SEED_ENV: &str = "IWGAN_SEED";
pub const RESOLVED_CONFIG: &str = "resolved-config.json";

/// Raised for malformed input files; the binary maps it to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// The interpolation study run after training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterpolationSpec {
    #[serde(default = "default_pairs")]
    pub pairs: usize,
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
}

fn default_pairs() -> usize {
    10
}

/// `{0, 0.05, …, 1}`.
pub fn default_lambdas() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

impl Default for InterpolationSpec {
    fn default() -> Self {
        Self {
            pairs: default_pairs(),
            lambdas: default_lambdas(),
        }
    }
}

/// Sample sizes for the post-training evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, clap::Args)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    /// Generated samples for mode coverage.
    #[serde(default = "default_coverage_samples")]
    #[arg(long, default_value_t = default_coverage_samples())]
    pub coverage_samples: usize,
    /// Capture radius around each mode centre.
    #[serde(default = "default_radius")]
    #[arg(long, default_value_t = default_radius())]
    pub radius: f64,
    /// Points per side for exact W1 and reconstruction error.
    #[serde(default = "default_w1_samples")]
    #[arg(long, default_value_t = default_w1_samples())]
    pub w1_samples: usize,
    /// Held-out size for `MMD(Q(X), Z)` and HDR calibration.
    #[serde(default = "default_mmd_samples")]
    #[arg(long, default_value_t = default_mmd_samples())]
    pub mmd_samples: usize,
    #[serde(default = "default_alpha")]
    #[arg(long, default_value_t = default_alpha())]
    pub hdr_alpha: f64,
}

fn default_coverage_samples() -> usize {
    10_000
}
fn default_radius() -> f64 {
    0.1
}
fn default_w1_samples() -> usize {
    1024
}
fn default_mmd_samples() -> usize {
    2048
}
fn default_alpha() -> f64 {
    0.05
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            coverage_samples: default_coverage_samples(),
            radius: default_radius(),
            w1_samples: default_w1_samples(),
            mmd_samples: default_mmd_samples(),
            hdr_alpha: default_alpha(),
        }
    }
}

impl EvalSpec {
    pub fn validate(&self) -> Result<()> {
        if self.coverage_samples == 0 || self.w1_samples == 0 || self.mmd_samples < 2 {
            bail!(ConfigError("evaluation sample sizes must be positive (mmd needs 2)".into()));
        }
        if self.w1_samples > iwgan::metrics::MAX_ASSIGNMENT_SIZE {
            bail!(ConfigError(format!(
                "w1_samples is capped at {}",
                iwgan::metrics::MAX_ASSIGNMENT_SIZE
            )));
        }
        if self.mmd_samples < iwgan::metrics::MIN_CALIBRATION {
            bail!(ConfigError(format!(
                "mmd_samples must be at least {} for HDR calibration",
                iwgan::metrics::MIN_CALIBRATION
            )));
        }
        if !(self.radius > 0.0) || !(self.hdr_alpha > 0.0 && self.hdr_alpha < 1.0) {
            bail!(ConfigError("radius must be positive and hdr_alpha in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Everything `iwgan train` reads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub train: TrainerConfig,
    /// Read from the file but never written back, so resolved configs of
    /// runs into different directories compare equal.
    #[serde(default = "default_output_dir", skip_serializing)]
    pub output_dir: PathBuf,
    /// Also write SVG plots next to the CSV files.
    #[serde(default)]
    pub plots: bool,
    #[serde(default)]
    pub interpolation: InterpolationSpec,
    #[serde(default)]
    pub eval: EvalSpec,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.train
            .validate()
            .map_err(|e| ConfigError(e.to_string()))?;
        self.eval.validate()?;
        if self.interpolation.pairs == 0 {
            bail!(ConfigError("interpolation.pairs must be >= 1".into()));
        }
        validate_lambdas(&self.interpolation.lambdas)?;
        Ok(())
    }
}

pub fn validate_lambdas(lambdas: &[f64]) -> Result<()> {
    if lambdas.is_empty() || lambdas.iter().any(|l| !(0.0..=1.0).contains(l)) {
        bail!(ConfigError("interpolation weights must be non-empty and lie in [0, 1]".into()));
    }
    Ok(())
}

/// Parses a JSON file, reporting failures as configuration errors.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    let value = serde_json::from_str(&text)
        .map_err(|e| ConfigError(format!("invalid config {}: {e}", path.display())))?;
    Ok(value)
}

/// `IWGAN_SEED`, if set.
pub fn seed_override() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| ConfigError(format!("{SEED_ENV} must be an unsigned integer, got {v:?}")).into()),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => bail!(ConfigError(format!("{SEED_ENV}: {e}"))),
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_configs_parse_and_validate() {
        for tag in ["ring", "grid"] {
            let path = Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../../configs/{tag}.json"));
            let cfg: ExperimentConfig = read_json(&path).unwrap();
            cfg.validate().unwrap();
            assert_eq!(cfg.eval, EvalSpec::default());
        }
    }

    #[test]
    fn lambdas_default_to_twenty_one_even_steps() {
        let l = default_lambdas();
        assert_eq!(l.len(), 21);
        assert_eq!((l[0], l[20]), (0.0, 1.0));
        assert!(validate_lambdas(&l).is_ok());
        assert!(validate_lambdas(&[]).is_err());
        assert!(validate_lambdas(&[0.5, 1.5]).is_err());
    }

    #[test]
    fn eval_spec_rejects_degenerate_sizes() {
        let ok = EvalSpec::default();
        assert!(ok.validate().is_ok());
        for bad in [
            EvalSpec { coverage_samples: 0, ..ok.clone() },
            EvalSpec { mmd_samples: 1, ..ok.clone() },
            EvalSpec { radius: 0.0, ..ok.clone() },
            EvalSpec { hdr_alpha: 1.0, ..ok.clone() },
            EvalSpec { w1_samples: iwgan::metrics::MAX_ASSIGNMENT_SIZE + 1, ..ok.clone() },
        ] {
            let err = bad.validate().unwrap_err();
            assert!(err.downcast_ref::<ConfigError>().is_some(), "{bad:?}");
        }
    }

    #[test]
    fn output_dir_is_not_written_back() {
        let cfg: ExperimentConfig =
            serde_json::from_str(r#"{"train": {"dataset": "ring"}, "output_dir": "somewhere"}"#).unwrap();
        assert_eq!(cfg.output_dir, PathBuf::from("somewhere"));
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(!text.contains("output_dir"));
    }
}
