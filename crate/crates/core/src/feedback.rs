//! Loss feedback from receiver to transmitter over a binary link.
//!
//! The receiver turns each mini-batch of per-sample losses into values in
//! `[0, 1]` (clip the largest few, subtract the batch minimum, divide by the
//! clipped range), quantizes them with a fixed uniform `q`-bit quantizer and
//! sends the level indices as bit vectors, most significant bit first. The
//! transmitter only knows the quantizer and maps received bits back to levels.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channels::BscConfig;
use crate::error::{Error, Result};

/// Largest supported number of feedback bits.
pub const MAX_BITS: u32 = 30;

pub const DEFAULT_CLIP_FRACTION: f64 = 0.05;

/// Fixed uniform quantizer on `[0, upper]` with `2^bits` mid-cell levels.
///
/// Cell `m` covers `[mΔ, (m+1)Δ)` with `Δ = upper / 2^bits` and reconstructs
/// to `Δ/2 + mΔ`. The value `upper` itself falls in the top cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizerConfig {
    pub bits: u32,
    pub upper: f64,
}

/// A quantized value: cell index and reconstruction level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantized {
    pub index: u32,
    pub level: f64,
}

impl QuantizerConfig {
    /// Quantizer on `[0, 1]`, the range produced by [`preprocess`].
    pub fn new(bits: u32) -> Result<Self> {
        Self::with_upper(bits, 1.0)
    }

    pub fn with_upper(bits: u32, upper: f64) -> Result<Self> {
        if bits == 0 || bits > MAX_BITS {
            return Err(Error::InvalidConfig(format!(
                "quantizer needs 1..={MAX_BITS} bits, got {bits}"
            )));
        }
        if !(upper > 0.0 && upper.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "quantizer range upper bound must be positive, got {upper}"
            )));
        }
        Ok(Self { bits, upper })
    }

    pub fn level_count(&self) -> u32 {
        1 << self.bits
    }

    /// Cell width Δ.
    pub fn step(&self) -> f64 {
        self.upper / self.level_count() as f64
    }

    pub fn level(&self, index: u32) -> f64 {
        let d = self.step();
        d / 2.0 + d * index as f64
    }

    pub fn levels(&self) -> Vec<f64> {
        (0..self.level_count()).map(|m| self.level(m)).collect()
    }

    /// Decision thresholds `m·upper/2^q`, `m = 1..2^q − 1`.
    pub fn thresholds(&self) -> Vec<f64> {
        (1..self.level_count())
            .map(|m| m as f64 * self.upper / self.level_count() as f64)
            .collect()
    }

    /// Cell index of `l`; errors outside `[0, upper]`.
    pub fn index_of(&self, l: f64) -> Result<u32> {
        if !(0.0..=self.upper).contains(&l) {
            return Err(Error::OutOfRange {
                value: l,
                upper: self.upper,
            });
        }
        Ok(self.clamped_index(l))
    }

    fn clamped_index(&self, l: f64) -> u32 {
        let m = (l / self.step()).floor();
        if m <= 0.0 {
            0
        } else {
            (m as u64).min(self.level_count() as u64 - 1) as u32
        }
    }

    pub fn quantize(&self, l: f64) -> Result<Quantized> {
        let index = self.index_of(l)?;
        Ok(Quantized {
            index,
            level: self.level(index),
        })
    }

    /// `Q(l)` for any real `l`, saturating at the outer levels.
    pub fn quantize_saturating(&self, l: f64) -> f64 {
        self.level(self.clamped_index(l))
    }

    /// Natural binary mapping of a level index, most significant bit first.
    pub fn encode(&self, index: u32) -> Vec<bool> {
        (0..self.bits).rev().map(|b| (index >> b) & 1 == 1).collect()
    }

    pub fn decode(&self, bits: &[bool]) -> Result<u32> {
        if bits.len() != self.bits as usize {
            return Err(Error::DimensionMismatch {
                expected: self.bits as usize,
                actual: bits.len(),
            });
        }
        Ok(bits.iter().fold(0u32, |acc, &b| (acc << 1) | b as u32))
    }

    /// Reconstruction level addressed by a received bit vector.
    pub fn dequantize(&self, bits: &[bool]) -> Result<f64> {
        Ok(self.level(self.decode(bits)?))
    }

    /// Exact `max_{l ∈ [0, upper]} |g·l − Q(l)|`.
    pub fn max_error(&self, gain: f64) -> f64 {
        let d = self.step();
        (0..self.level_count())
            .map(|m| {
                let c = self.level(m);
                let lo = gain * (m as f64 * d) - c;
                let hi = gain * ((m + 1) as f64 * d) - c;
                lo.abs().max(hi.abs())
            })
            .fold(0.0, f64::max)
    }
}

/// Bits rendered as a `0`/`1` string, most significant first.
pub fn bits_to_string(bits: &[bool]) -> String {
    bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

/// Batch statistics of the pre-processing step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessStats {
    pub l_min: f64,
    pub l_max: f64,
    /// Number of losses that were lowered to `l_max`.
    pub clip_count: usize,
    /// `l_max == l_min`: every output is zero.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub values: Vec<f64>,
    pub stats: PreprocessStats,
}

/// Clip, shift and scale a mini-batch of losses into `[0, 1]`.
///
/// The `⌈clip_fraction·B⌉` largest losses are clipped (at most `B − 1`), so
/// `l_max` is the largest unclipped loss and `l_min` the batch minimum.
pub fn preprocess(raw: &[f64], clip_fraction: f64) -> Result<Preprocessed> {
    if raw.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(0.0..1.0).contains(&clip_fraction) {
        return Err(Error::InvalidConfig(format!(
            "clip fraction must lie in [0, 1), got {clip_fraction}"
        )));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("raw losses"));
    }
    let n = raw.len();
    let mut sorted = raw.to_vec();
    sorted.sort_by(f64::total_cmp);
    let clipped = clip_count(n, clip_fraction);
    let l_min = sorted[0];
    let l_max = sorted[n - 1 - clipped];
    let clip_count = raw.iter().filter(|&&l| l > l_max).count();
    let range = l_max - l_min;
    let degenerate = range <= 0.0;
    let values = if degenerate {
        vec![0.0; n]
    } else {
        raw.iter().map(|&l| (l.min(l_max) - l_min) / range).collect()
    };
    Ok(Preprocessed {
        values,
        stats: PreprocessStats {
            l_min,
            l_max,
            clip_count,
            degenerate,
        },
    })
}

fn clip_count(n: usize, clip_fraction: f64) -> usize {
    // The small offset keeps products like 0.05 * 20 from rounding up to 2.
    let c = (clip_fraction * n as f64 - 1e-9).ceil().max(0.0) as usize;
    c.min(n - 1)
}

/// Elementary reward-shaping transforms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossTransform {
    /// `min(β, l)`
    Clip(f64),
    /// `l − β`
    Baseline(f64),
    /// `β·l`
    Scale(f64),
}

impl LossTransform {
    pub fn apply(&self, l: f64) -> f64 {
        match *self {
            LossTransform::Clip(beta) => l.min(beta),
            LossTransform::Baseline(beta) => l - beta,
            LossTransform::Scale(beta) => beta * l,
        }
    }
}

/// Mean squared quantization error over `losses`.
pub fn distortion(losses: &[f64], cfg: &QuantizerConfig) -> Result<f64> {
    if losses.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut sum = 0.0;
    for &l in losses {
        let q = cfg.quantize(l)?.level;
        sum += (l - q) * (l - q);
    }
    Ok(sum / losses.len() as f64)
}

/// Plug-in Bussgang decomposition `Q(l) = g·l + w` of a loss sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BussgangEstimate {
    pub g: f64,
    pub w_mean: f64,
    pub w_var: f64,
    /// `|1 − 1/2^(q−1) − g|`, the closed-form maximum-error measure.
    pub w_bar: f64,
    /// Exact `max_l |g·l − Q(l)|` over the quantizer range.
    pub w_max: f64,
}

/// Estimates the Bussgang gain `g = (E{l Q(l)} − μ E{Q(l)}) / σ²` and the
/// residual statistics. Losses outside the quantizer range saturate.
pub fn bussgang_gain(losses: &[f64], cfg: &QuantizerConfig) -> Result<BussgangEstimate> {
    if losses.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = losses.len() as f64;
    let mean = losses.iter().sum::<f64>() / n;
    let var = losses.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / n;
    if var <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    let levels: Vec<f64> = losses.iter().map(|&l| cfg.quantize_saturating(l)).collect();
    let q_mean = levels.iter().sum::<f64>() / n;
    // Centered form of E{lQ} − μE{Q}.
    let cov = losses
        .iter()
        .zip(&levels)
        .map(|(l, q)| (l - mean) * (q - q_mean))
        .sum::<f64>()
        / n;
    let g = cov / var;
    let residuals: Vec<f64> = losses.iter().zip(&levels).map(|(l, q)| q - g * l).collect();
    let w_mean = residuals.iter().sum::<f64>() / n;
    let w_var = residuals.iter().map(|w| (w - w_mean) * (w - w_mean)).sum::<f64>() / n;
    let w_bar = (1.0 - 1.0 / 2f64.powi(cfg.bits as i32 - 1) - g).abs();
    Ok(BussgangEstimate {
        g,
        w_mean,
        w_var,
        w_bar,
        w_max: cfg.max_error(g),
    })
}

/// Closed-form 1-bit Bussgang gain for Gaussian losses `N(μ, σ²)`, known for
/// `μ = 1/2` and `μ ∈ {0, 1}`.
pub fn gaussian_one_bit_gain(mu: f64, sigma_sq: f64) -> Option<f64> {
    if !(sigma_sq > 0.0) {
        return None;
    }
    let base = 1.0 / (8.0 * std::f64::consts::PI * sigma_sq).sqrt();
    if mu == 0.5 {
        Some(base)
    } else if mu == 0.0 || mu == 1.0 {
        Some((-1.0 / (8.0 * sigma_sq)).exp() * base)
    } else {
        None
    }
}

/// What the feedback link carries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeedbackMode {
    /// Real-valued losses arrive unchanged.
    Perfect,
    /// Pre-processed, `q_bits`-bit quantized losses over a noiseless link.
    Quantized { q_bits: u32 },
    /// As `Quantized`, with every bit flipped with probability `flip_prob`.
    QuantizedNoisy { q_bits: u32, flip_prob: f64 },
}

impl FeedbackMode {
    pub fn q_bits(&self) -> Option<u32> {
        match *self {
            FeedbackMode::Perfect => None,
            FeedbackMode::Quantized { q_bits } | FeedbackMode::QuantizedNoisy { q_bits, .. } => {
                Some(q_bits)
            }
        }
    }

    pub fn flip_prob(&self) -> f64 {
        match *self {
            FeedbackMode::QuantizedNoisy { flip_prob, .. } => flip_prob,
            _ => 0.0,
        }
    }

    /// Short label used in CSV output.
    pub fn label(&self) -> &'static str {
        match self {
            FeedbackMode::Perfect => "perfect",
            FeedbackMode::Quantized { .. } => "quantized",
            FeedbackMode::QuantizedNoisy { .. } => "quantized_noisy",
        }
    }
}

/// Intermediate stages of a quantized feedback transmission.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedStages {
    pub stats: PreprocessStats,
    /// Pre-processed losses in `[0, 1]`.
    pub transformed: Vec<f64>,
    /// `Q(transformed)`.
    pub levels: Vec<f64>,
    pub bits: Vec<Vec<bool>>,
    pub received_bits: Vec<Vec<bool>>,
}

/// One mini-batch of losses through the feedback link.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBatch {
    pub raw: Vec<f64>,
    /// Absent for perfect feedback.
    pub quantized: Option<QuantizedStages>,
    /// Losses as seen by the transmitter.
    pub reconstructed: Vec<f64>,
}

/// Receiver-side pre-processing and quantization, the binary link, and
/// transmitter-side reconstruction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeedbackLink {
    mode: FeedbackMode,
    quantizer: Option<QuantizerConfig>,
    bsc: BscConfig,
    clip_fraction: f64,
}

impl FeedbackLink {
    pub fn new(mode: FeedbackMode, clip_fraction: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&clip_fraction) {
            return Err(Error::InvalidConfig(format!(
                "clip fraction must lie in [0, 1), got {clip_fraction}"
            )));
        }
        let quantizer = mode.q_bits().map(QuantizerConfig::new).transpose()?;
        let bsc = BscConfig::new(mode.flip_prob())?;
        Ok(Self {
            mode,
            quantizer,
            bsc,
            clip_fraction,
        })
    }

    pub fn mode(&self) -> FeedbackMode {
        self.mode
    }

    pub fn quantizer(&self) -> Option<&QuantizerConfig> {
        self.quantizer.as_ref()
    }

    pub fn clip_fraction(&self) -> f64 {
        self.clip_fraction
    }

    pub fn transmit<R: Rng + ?Sized>(&self, raw: &[f64], rng: &mut R) -> Result<LossBatch> {
        let Some(quantizer) = self.quantizer else {
            return Ok(LossBatch {
                raw: raw.to_vec(),
                quantized: None,
                reconstructed: raw.to_vec(),
            });
        };
        let pre = preprocess(raw, self.clip_fraction)?;
        let mut levels = Vec::with_capacity(raw.len());
        let mut bits = Vec::with_capacity(raw.len());
        let mut received_bits = Vec::with_capacity(raw.len());
        let mut reconstructed = Vec::with_capacity(raw.len());
        for &l in &pre.values {
            let q = quantizer.quantize(l)?;
            let sent = quantizer.encode(q.index);
            let got = self.bsc.transmit(&sent, rng);
            reconstructed.push(quantizer.dequantize(&got)?);
            levels.push(q.level);
            bits.push(sent);
            received_bits.push(got);
        }
        Ok(LossBatch {
            raw: raw.to_vec(),
            quantized: Some(QuantizedStages {
                stats: pre.stats,
                transformed: pre.values,
                levels,
                bits,
                received_bits,
            }),
            reconstructed,
        })
    }
}
