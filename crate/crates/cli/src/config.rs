//! Experiment configuration file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use qfeedback::channels::{BscConfig, ChannelConfig};
use qfeedback::feedback::{FeedbackMode, DEFAULT_CLIP_FRACTION};
use qfeedback::training::TrainingConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable overriding `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "QFEEDBACK_OUTPUT_DIR";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub channel: ChannelConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub quantizer: QuantizerSection,
    #[serde(default)]
    pub bsc: BscConfig,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub regions: RegionsSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub bussgang: BussgangSection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Feedback quantization. Without `q_bits` the losses are fed back unquantized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizerSection {
    #[serde(default)]
    pub q_bits: Option<u32>,
    #[serde(default = "default_clip")]
    pub clip_fraction: f64,
}

impl Default for QuantizerSection {
    fn default() -> Self {
        Self {
            q_bits: None,
            clip_fraction: DEFAULT_CLIP_FRACTION,
        }
    }
}

fn default_clip() -> f64 {
    DEFAULT_CLIP_FRACTION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// SNR points in dB; `P = σ² + SNR`.
    #[serde(default)]
    pub snr_db: Option<Vec<f64>>,
    /// Signal power points in dBm.
    #[serde(default)]
    pub p_dbm: Option<Vec<f64>>,
    #[serde(default = "default_sweep_symbols")]
    pub num_symbols: u64,
    /// Feedback modes to train; defaults to the one set by `[quantizer]`/`[bsc]`.
    #[serde(default)]
    pub feedback: Option<Vec<FeedbackMode>>,
    /// Adds 16-QAM maximum-likelihood SER columns.
    #[serde(default)]
    pub qam16_baseline: bool,
    /// Histogram bins per axis of the sampled NLPN likelihood.
    #[serde(default = "default_ml_bins")]
    pub ml_bins: usize,
    #[serde(default = "default_ml_samples")]
    pub ml_samples_per_point: usize,
}

fn default_sweep_symbols() -> u64 {
    100_000
}
fn default_ml_bins() -> usize {
    200
}
fn default_ml_samples() -> usize {
    1_000_000
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionsSection {
    /// Grid half width in sqrt(mW); defaults to twice the RMS amplitude.
    #[serde(default)]
    pub half_width: Option<f64>,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
}

impl Default for RegionsSection {
    fn default() -> Self {
        Self {
            half_width: None,
            resolution: default_resolution(),
        }
    }
}

fn default_resolution() -> usize {
    201
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    #[serde(default = "default_verify_samples")]
    pub num_samples: usize,
    /// Sample count for the bit-flip checks; defaults to `num_samples`.
    #[serde(default)]
    pub prop2_num_samples: Option<usize>,
    #[serde(default = "default_prop1_bits")]
    pub prop1_q_bits: Vec<u32>,
    #[serde(default = "default_prop2_bits")]
    pub prop2_q_bits: Vec<u32>,
    #[serde(default = "default_flip_probs")]
    pub flip_probs: Vec<f64>,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            num_samples: default_verify_samples(),
            prop2_num_samples: None,
            prop1_q_bits: default_prop1_bits(),
            prop2_q_bits: default_prop2_bits(),
            flip_probs: default_flip_probs(),
        }
    }
}

fn default_verify_samples() -> usize {
    1_000_000
}
fn default_prop1_bits() -> Vec<u32> {
    vec![1, 3, 5]
}
fn default_prop2_bits() -> Vec<u32> {
    vec![1, 2]
}
fn default_flip_probs() -> Vec<f64> {
    vec![0.1, 0.2, 0.3]
}

/// Synthetic Gaussian losses for the Bussgang gain table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BussgangSection {
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default = "default_sigma_sq")]
    pub sigma_sq: Vec<f64>,
    #[serde(default = "default_bussgang_bits")]
    pub q_bits: Vec<u32>,
    #[serde(default = "default_verify_samples")]
    pub num_samples: usize,
}

impl Default for BussgangSection {
    fn default() -> Self {
        Self {
            mu: default_mu(),
            sigma_sq: default_sigma_sq(),
            q_bits: default_bussgang_bits(),
            num_samples: default_verify_samples(),
        }
    }
}

fn default_mu() -> f64 {
    0.5
}
fn default_sigma_sq() -> Vec<f64> {
    vec![1.0 / (8.0 * std::f64::consts::PI), 0.05, 0.2]
}
fn default_bussgang_bits() -> Vec<u32> {
    vec![1]
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub outer_iterations: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

/// Error raised when the config file itself cannot be read.
#[derive(Debug)]
pub struct MissingConfig(pub PathBuf);

impl std::fmt::Display for MissingConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config file not found: {}", self.0.display())
    }
}

impl std::error::Error for MissingConfig {}

impl ExperimentConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        if cfg.schema_version != SCHEMA_VERSION {
            bail!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version
            );
        }
        Ok(cfg)
    }

    /// Reads `path`, then applies flag overrides, then the environment
    /// override for `output_dir` unless a flag already set it.
    pub fn load(path: &Path, overrides: &Overrides) -> anyhow::Result<Self> {
        if !path.is_file() {
            return Err(MissingConfig(path.to_path_buf()).into());
        }
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))?;
        if let Some(seed) = overrides.seed {
            cfg.seed = seed;
        }
        if let Some(n) = overrides.outer_iterations {
            cfg.training.outer_iterations = n;
        }
        if let Some(dir) = &overrides.output_dir {
            cfg.output_dir = dir.clone();
        } else if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
            cfg.output_dir = PathBuf::from(dir);
        }
        cfg.resolve()?;
        Ok(cfg)
    }

    /// Folds the quantizer and BSC sections into the training config and
    /// validates everything.
    pub fn resolve(&mut self) -> anyhow::Result<()> {
        self.channel.validate()?;
        self.bsc.validate()?;
        self.training.clip_fraction = self.quantizer.clip_fraction;
        self.training.feedback = self.feedback_mode()?;
        self.training.validate()?;
        if let Some(sweep) = &self.sweep {
            match (&sweep.snr_db, &sweep.p_dbm) {
                (Some(v), None) | (None, Some(v)) if !v.is_empty() => {}
                _ => bail!("[sweep] needs exactly one nonempty list: snr_db or p_dbm"),
            }
            if sweep.num_symbols == 0 {
                bail!("[sweep] num_symbols must be >= 1");
            }
        }
        for &q in &self.verify.prop2_q_bits {
            if !matches!(q, 1 | 2) {
                bail!("[verify] prop2_q_bits = {q}: the bit-flip scaling check covers 1- and 2-bit natural mapping only");
            }
        }
        for &p in &self.verify.flip_probs {
            BscConfig::new(p)?;
        }
        Ok(())
    }

    pub fn feedback_mode(&self) -> anyhow::Result<FeedbackMode> {
        Ok(match (self.quantizer.q_bits, self.bsc.flip_prob) {
            (None, p) if p > 0.0 => bail!("[bsc] flip_prob needs [quantizer] q_bits"),
            (None, _) => FeedbackMode::Perfect,
            (Some(q_bits), p) if p > 0.0 => FeedbackMode::QuantizedNoisy { q_bits, flip_prob: p },
            (Some(q_bits), _) => FeedbackMode::Quantized { q_bits },
        })
    }

    /// SHA-256 of the effective configuration, excluding `output_dir` so
    /// that identical runs in different directories match byte for byte.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("output_dir");
        }
        let canonical = serde_json::to_vec(&value).expect("config serializes");
        hex::encode(Sha256::digest(canonical))
    }
}
