//! Symbol error rate measurement, 16-QAM maximum-likelihood baselines,
//! decision-region export and Monte Carlo checks of how feedback quantization
//! and bit flips act on the policy gradient.

use std::io::Write;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::channels::{BscConfig, ChannelConfig, ChannelModel, ComplexSymbol};
use crate::error::{Error, Result};
use crate::feedback::{bussgang_gain, preprocess, QuantizerConfig};
use crate::transceiver::{cross_entropy, Constellation, ExplorationPolicy, Receiver, Transmitter};

/// Maps a channel observation to a message index.
pub trait Detector {
    fn detect(&self, y: ComplexSymbol) -> Result<usize>;
}

impl Detector for Receiver {
    fn detect(&self, y: ComplexSymbol) -> Result<usize> {
        self.decide(y)
    }
}

/// Measured symbol error rate at one operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SerResult {
    pub snr_db: f64,
    pub p_dbm: f64,
    pub ser: f64,
    pub errors: u64,
    pub num_symbols: u64,
    /// Binomial standard error `sqrt(ser (1 − ser) / n)`.
    pub stderr: f64,
}

impl SerResult {
    fn new(channel: &ChannelConfig, errors: u64, num_symbols: u64) -> Self {
        let ser = errors as f64 / num_symbols as f64;
        Self {
            snr_db: channel.snr_db(),
            p_dbm: channel.p_dbm,
            ser,
            errors,
            num_symbols,
            stderr: (ser * (1.0 - ser) / num_symbols as f64).sqrt(),
        }
    }
}

/// Sends uniformly drawn messages through `constellation` and `channel` and
/// counts detection errors.
pub fn estimate_ser<D: Detector + ?Sized, R: Rng + ?Sized>(
    constellation: &Constellation,
    detector: &D,
    channel: &ChannelConfig,
    num_symbols: u64,
    rng: &mut R,
) -> Result<SerResult> {
    if num_symbols == 0 {
        return Err(Error::EmptyInput);
    }
    let model = channel.model()?;
    let m_count = constellation.len();
    let mut errors = 0u64;
    for _ in 0..num_symbols {
        let m = rng.random_range(0..m_count);
        let y = model.apply(constellation.points[m], rng);
        if detector.detect(y)? != m {
            errors += 1;
        }
    }
    Ok(SerResult::new(channel, errors, num_symbols))
}

/// SER of a learned transmitter/receiver pair. The constellation is
/// normalized over all messages to the channel's signal power and sent
/// without exploration noise.
pub fn estimate_learned_ser<R: Rng + ?Sized>(
    tx: &Transmitter,
    rx: &Receiver,
    channel: &ChannelConfig,
    num_symbols: u64,
    rng: &mut R,
) -> Result<SerResult> {
    let constellation = tx.constellation(channel.signal_power_mw())?;
    estimate_ser(&constellation, rx, channel, num_symbols, rng)
}

/// Square 16-QAM with mean power `power_mw`, messages numbered row by row.
pub fn qam16(power_mw: f64) -> Constellation {
    let s = (power_mw / 10.0).sqrt();
    let levels = [-3.0, -1.0, 1.0, 3.0];
    Constellation {
        points: levels
            .iter()
            .flat_map(|&im| levels.iter().map(move |&re| Complex64::new(re * s, im * s)))
            .collect(),
    }
}

/// Gaussian tail function.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Exact SER of square M-QAM with minimum-distance detection on the complex
/// AWGN channel at `Es/N0 = snr_linear`.
pub fn square_qam_ser(order: usize, snr_linear: f64) -> f64 {
    let side = (order as f64).sqrt();
    let p = 2.0 * (1.0 - 1.0 / side) * q_function((3.0 * snr_linear / (order as f64 - 1.0)).sqrt());
    1.0 - (1.0 - p) * (1.0 - p)
}

/// Histogram estimate of `p(y | s_m)` for every constellation point, built
/// from channel draws.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledLikelihood {
    bins: usize,
    samples_per_point: usize,
    fitted: Option<Histograms>,
}

#[derive(Debug, Clone, PartialEq)]
struct Histograms {
    re_range: (f64, f64),
    im_range: (f64, f64),
    /// `counts[m][row * bins + col]`
    counts: Vec<Vec<u32>>,
}

impl SampledLikelihood {
    pub fn new(bins: usize, samples_per_point: usize) -> Self {
        Self {
            bins,
            samples_per_point,
            fitted: None,
        }
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted.is_some()
    }

    /// Draws `samples_per_point` channel outputs for every point and bins
    /// them on a common grid spanning all draws.
    pub fn fit<R: Rng + ?Sized>(
        &mut self,
        constellation: &Constellation,
        channel: &ChannelModel,
        rng: &mut R,
    ) -> Result<()> {
        if self.bins < 2 || self.samples_per_point == 0 {
            return Err(Error::InvalidConfig(format!(
                "likelihood grid needs >= 2 bins and samples, got {} bins, {} samples",
                self.bins, self.samples_per_point
            )));
        }
        let draws: Vec<Vec<ComplexSymbol>> = constellation
            .points
            .iter()
            .map(|&s| (0..self.samples_per_point).map(|_| channel.apply(s, rng)).collect())
            .collect();
        let (mut re_lo, mut re_hi, mut im_lo, mut im_hi) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for y in draws.iter().flatten() {
            re_lo = re_lo.min(y.re);
            re_hi = re_hi.max(y.re);
            im_lo = im_lo.min(y.im);
            im_hi = im_hi.max(y.im);
        }
        let pad = 1e-9 * (1.0 + (re_hi - re_lo).max(im_hi - im_lo));
        let mut hist = Histograms {
            re_range: (re_lo - pad, re_hi + pad),
            im_range: (im_lo - pad, im_hi + pad),
            counts: vec![vec![0; self.bins * self.bins]; constellation.len()],
        };
        for (m, ys) in draws.iter().enumerate() {
            for &y in ys {
                let cell = hist.cell(self.bins, y).expect("draw inside its own grid");
                hist.counts[m][cell] += 1;
            }
        }
        self.fitted = Some(hist);
        Ok(())
    }

    /// Estimated likelihood (up to a common factor) of `y` under every point,
    /// or `None` when `y` lies where no point ever landed.
    fn counts_at(&self, y: ComplexSymbol) -> Result<Option<Vec<u32>>> {
        let hist = self.fitted.as_ref().ok_or(Error::UnfittedModel)?;
        let Some(cell) = hist.cell(self.bins, y) else {
            return Ok(None);
        };
        let counts: Vec<u32> = hist.counts.iter().map(|c| c[cell]).collect();
        Ok(counts.iter().any(|&c| c > 0).then_some(counts))
    }
}

impl Histograms {
    fn cell(&self, bins: usize, y: ComplexSymbol) -> Option<usize> {
        let idx = |v: f64, (lo, hi): (f64, f64)| {
            let t = (v - lo) / (hi - lo);
            (0.0..1.0).contains(&t).then(|| ((t * bins as f64) as usize).min(bins - 1))
        };
        Some(idx(y.im, self.im_range)? * bins + idx(y.re, self.re_range)?)
    }
}

/// Channel likelihood used by the ML detector.
#[derive(Debug, Clone, PartialEq)]
pub enum LikelihoodModel {
    /// Circular Gaussian noise; ML reduces to minimum Euclidean distance.
    ExactAwgn,
    /// Histogram estimate; observations outside the sampled support fall
    /// back to minimum distance.
    SampledNlpn(SampledLikelihood),
}

/// `argmax_m p(y | s_m)` over a fixed constellation.
#[derive(Debug, Clone, PartialEq)]
pub struct MlDetector {
    pub constellation: Constellation,
    pub model: LikelihoodModel,
}

impl MlDetector {
    pub fn awgn(constellation: Constellation) -> Self {
        Self {
            constellation,
            model: LikelihoodModel::ExactAwgn,
        }
    }

    /// Fits a sampled likelihood for `constellation` over `channel`.
    pub fn sampled<R: Rng + ?Sized>(
        constellation: Constellation,
        channel: &ChannelModel,
        bins: usize,
        samples_per_point: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut lik = SampledLikelihood::new(bins, samples_per_point);
        lik.fit(&constellation, channel, rng)?;
        Ok(Self {
            constellation,
            model: LikelihoodModel::SampledNlpn(lik),
        })
    }

    fn nearest(&self, y: ComplexSymbol) -> usize {
        let d: Vec<f64> = self.constellation.points.iter().map(|&s| -(y - s).norm_sqr()).collect();
        crate::transceiver::argmax(&d)
    }
}

impl Detector for MlDetector {
    fn detect(&self, y: ComplexSymbol) -> Result<usize> {
        match &self.model {
            LikelihoodModel::ExactAwgn => Ok(self.nearest(y)),
            LikelihoodModel::SampledNlpn(lik) => Ok(match lik.counts_at(y)? {
                Some(counts) => {
                    let c: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
                    crate::transceiver::argmax(&c)
                }
                None => self.nearest(y),
            }),
        }
    }
}

/// Rectangular grid of observation points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
    /// Points per axis.
    pub resolution: usize,
}

impl GridSpec {
    /// Square grid `[-half_width, half_width]²`.
    pub fn square(half_width: f64, resolution: usize) -> Self {
        Self {
            re_min: -half_width,
            re_max: half_width,
            im_min: -half_width,
            im_max: half_width,
            resolution,
        }
    }

    pub fn points(&self) -> Result<Vec<ComplexSymbol>> {
        if self.resolution < 2 {
            return Err(Error::InvalidConfig(format!(
                "grid resolution must be at least 2, got {}",
                self.resolution
            )));
        }
        if !(self.re_max > self.re_min && self.im_max > self.im_min) {
            return Err(Error::InvalidConfig("grid bounds are empty".into()));
        }
        let n = self.resolution;
        let at = |lo: f64, hi: f64, i: usize| lo + (hi - lo) * i as f64 / (n - 1) as f64;
        Ok((0..n)
            .flat_map(|i| {
                (0..n).map(move |j| Complex64::new(at(self.re_min, self.re_max, j), at(self.im_min, self.im_max, i)))
            })
            .collect())
    }
}

/// Detector decisions over a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionGrid {
    pub points: Vec<ComplexSymbol>,
    /// 0-based message indices.
    pub decisions: Vec<usize>,
}

impl DecisionGrid {
    /// Writes `re,im,message` rows with 1-based message numbers.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "re,im,message")?;
        for (y, m) in self.points.iter().zip(&self.decisions) {
            writeln!(out, "{},{},{}", y.re, y.im, m + 1)?;
        }
        Ok(())
    }
}

pub fn decision_regions<D: Detector + ?Sized>(detector: &D, grid: &GridSpec) -> Result<DecisionGrid> {
    let points = grid.points()?;
    let decisions = points.iter().map(|&y| detector.detect(y)).collect::<Result<_>>()?;
    Ok(DecisionGrid { points, decisions })
}

/// Mean squared score norm, with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FisherEstimate {
    pub trace: f64,
    pub stderr: f64,
    pub num_samples: u64,
}

/// Monte Carlo estimate of `tr J(τ) = E‖∇_τ log π_τ(x̃|m)‖²` over uniform
/// messages and exploration draws, for the constellation normalized at
/// `power_mw`.
pub fn fisher_trace<R: Rng + ?Sized>(
    tx: &Transmitter,
    power_mw: f64,
    policy: &ExplorationPolicy,
    num_samples: u64,
    rng: &mut R,
) -> Result<FisherEstimate> {
    if num_samples == 0 {
        return Err(Error::EmptyInput);
    }
    let jac = tx.constellation_jacobian(power_mw)?;
    let m_count = tx.messages();
    let mut stats = Moments::default();
    for _ in 0..num_samples {
        let m = rng.random_range(0..m_count);
        let x = jac.constellation.points[m];
        let xt = policy.perturb(&[x], rng)[0];
        let v = policy.score_wrt_symbol(xt, x)?;
        stats.push(jac.pulled_norm_sqr(m, v));
    }
    Ok(FisherEstimate {
        trace: stats.mean(),
        stderr: stats.stderr(),
        num_samples,
    })
}

#[derive(Debug, Default, Clone, Copy)]
struct Moments {
    n: u64,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.n += 1;
        self.sum += v;
        self.sum_sq += v * v;
    }

    fn mean(&self) -> f64 {
        self.sum / self.n as f64
    }

    fn stderr(&self) -> f64 {
        let n = self.n as f64;
        let var = (self.sum_sq / n - self.mean() * self.mean()).max(0.0);
        (var / n).sqrt()
    }
}

/// Frozen-system samples shared by every proposition check: for each draw
/// the message, the exploration offset and the raw and pre-processed loss.
#[derive(Debug, Clone)]
pub struct PropositionSamples {
    messages: Vec<usize>,
    /// Per-sample symbol-space score `2(x̃ − x)/σ_p²`.
    scores: Vec<ComplexSymbol>,
    /// `‖∇_τ log π‖²` per sample.
    score_norms: Vec<f64>,
    /// Pre-processed losses in `[0, 1]`.
    losses: Vec<f64>,
    jac: crate::transceiver::ConstellationJacobian,
}

/// Settings for drawing [`PropositionSamples`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropositionSetup {
    pub exploration_factor: f64,
    /// Clip fraction of the pre-processing applied over the whole sample.
    pub clip_fraction: f64,
    pub num_samples: usize,
}

impl PropositionSamples {
    /// Draws `setup.num_samples` transmissions through the perturbed
    /// transmitter, the channel and the receiver, and maps the losses to
    /// `[0, 1]` with one pre-processing pass over the full sample.
    pub fn draw<R: Rng + ?Sized>(
        tx: &Transmitter,
        rx: &Receiver,
        channel: &ChannelConfig,
        setup: &PropositionSetup,
        rng: &mut R,
    ) -> Result<Self> {
        if setup.num_samples < 2 {
            return Err(Error::InvalidConfig("need at least 2 samples".into()));
        }
        let power = channel.signal_power_mw();
        let policy = ExplorationPolicy::for_power(power, setup.exploration_factor)?;
        let model = channel.model()?;
        let jac = tx.constellation_jacobian(power)?;
        let m_count = tx.messages();
        let n = setup.num_samples;
        let mut messages = Vec::with_capacity(n);
        let mut scores = Vec::with_capacity(n);
        let mut score_norms = Vec::with_capacity(n);
        let mut raw = Vec::with_capacity(n);
        for _ in 0..n {
            let m = rng.random_range(0..m_count);
            let x = jac.constellation.points[m];
            let xt = policy.perturb(&[x], rng)[0];
            let y = model.apply(xt, rng);
            let q = rx.posterior(y)?;
            let v = policy.score_wrt_symbol(xt, x)?;
            messages.push(m);
            score_norms.push(jac.pulled_norm_sqr(m, v));
            scores.push(v);
            raw.push(cross_entropy(&q, m));
        }
        let pre = preprocess(&raw, setup.clip_fraction)?;
        if pre.stats.degenerate {
            return Err(Error::ZeroVariance);
        }
        Ok(Self {
            messages,
            scores,
            score_norms,
            losses: pre.values,
            jac,
        })
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    /// Sample mean of `‖∇ log π‖²`.
    pub fn fisher_trace(&self) -> f64 {
        self.score_norms.iter().sum::<f64>() / self.len() as f64
    }

    /// Mean of `c_k ∇_τ log π(x̃_k|m_k)` in parameter space.
    fn mean_gradient(&self, coeff: &[f64]) -> Vec<f64> {
        let mut per_message = vec![Complex64::new(0.0, 0.0); self.jac.rows.len()];
        for ((&m, &v), &c) in self.messages.iter().zip(&self.scores).zip(coeff) {
            per_message[m] += v * c;
        }
        let n = self.len() as f64;
        let mut out = vec![0.0; self.jac.parameter_count()];
        for (m, acc) in per_message.iter().enumerate() {
            for (o, g) in out.iter_mut().zip(self.jac.pull_back(m, *acc)) {
                *o += g / n;
            }
        }
        out
    }

    /// Per-sample `⟨∇_τ log π(x̃_k|m_k), v⟩`.
    fn projections(&self, v: &[f64]) -> Vec<f64> {
        let along: Vec<Complex64> = self
            .jac
            .rows
            .iter()
            .map(|[re, im]| Complex64::new(dot(re, v), dot(im, v)))
            .collect();
        self.messages
            .iter()
            .zip(&self.scores)
            .map(|(&m, u)| u.re * along[m].re + u.im * along[m].im)
            .collect()
    }

    /// The score has zero mean given the message, so the mean gradient is
    /// estimated with the coefficients centred on their sample mean; the
    /// variance refers to the uncentred `γ_k = c_k ∇ log π`.
    fn gradient_stats(&self, coeff: &[f64]) -> GradientStats {
        let n = self.len() as f64;
        let baseline = coeff.iter().sum::<f64>() / n;
        let centred: Vec<f64> = coeff.iter().map(|c| c - baseline).collect();
        let mean = self.mean_gradient(&centred);
        let norm_sq = dot(&mean, &mean);
        let moment = |c: &[f64]| -> (f64, Vec<f64>) {
            let per: Vec<f64> = c.iter().zip(&self.score_norms).map(|(c, t)| c * c * t).collect();
            (per.iter().sum::<f64>() / n, per)
        };
        let (centred_second, _) = moment(&centred);
        let (second, per_sample) = moment(coeff);
        GradientStats {
            mean_stderr: ((centred_second - norm_sq).max(0.0) / n).sqrt(),
            variance: (second - norm_sq).max(0.0),
            per_sample_sq_norm: per_sample,
            centred,
            mean,
        }
    }

    /// Least-squares scale of `a.mean` onto `b.mean` and its standard error.
    fn scale_fit(&self, a: &GradientStats, b: &GradientStats) -> (f64, f64) {
        let b_sq = dot(&b.mean, &b.mean);
        let fit = dot(&a.mean, &b.mean) / b_sq;
        let proj = self.projections(&b.mean);
        let per: Vec<f64> = a
            .centred
            .iter()
            .zip(&b.centred)
            .zip(&proj)
            .map(|((ca, cb), p)| (ca - fit * cb) * p / b_sq)
            .collect();
        (fit, stderr(&per))
    }

    /// Checks that quantizing the fed-back losses scales the expected policy
    /// gradient by the Bussgang gain and stays within the variance bound.
    pub fn check_quantization(&self, q_bits: u32) -> Result<QuantizationReport> {
        let quantizer = QuantizerConfig::new(q_bits)?;
        let est = bussgang_gain(&self.losses, &quantizer)?;
        let g = est.g;
        let levels: Vec<f64> = self.losses.iter().map(|&l| quantizer.quantize_saturating(l)).collect();
        let unq = self.gradient_stats(&self.losses);
        let quant = self.gradient_stats(&levels);
        let (ratio_fit, ratio_fit_se) = self.scale_fit(&quant, &unq);

        let resid_coeff: Vec<f64> = levels.iter().zip(&self.losses).map(|(q, l)| q - g * l).collect();
        let resid = self.gradient_stats(&resid_coeff);
        let resid_norm = norm(&resid.mean);
        let resid_se = resid.mean_stderr;

        let fisher = self.fisher_trace();
        let extra = g * est.w_bar + est.w_bar * est.w_bar;
        let bound = g * g * unq.variance + extra * fisher;
        // Per-sample contributions to (bound − variance) give its standard error.
        let slack: Vec<f64> = self
            .score_norms
            .iter()
            .zip(unq.per_sample_sq_norm.iter().zip(&quant.per_sample_sq_norm))
            .map(|(t, (u, q))| g * g * u + extra * t - q)
            .collect();
        let bound_se = stderr(&slack);

        let cos = cosine(&quant.mean, &unq.mean);
        let ratio = norm(&quant.mean) / norm(&unq.mean);
        Ok(QuantizationReport {
            q_bits,
            num_samples: self.len() as u64,
            g_hat: g,
            w_bar: est.w_bar,
            w_max: est.w_max,
            grad_unq_norm: norm(&unq.mean),
            grad_q_norm: norm(&quant.mean),
            cosine: cos,
            magnitude_ratio: ratio,
            scale_fit: ratio_fit,
            scale_fit_stderr: ratio_fit_se,
            scaling_residual_norm: resid_norm,
            scaling_residual_stderr: resid_se,
            var_unq: unq.variance,
            var_q: quant.variance,
            var_bound_q: bound,
            var_bound_stderr: bound_se,
            fisher_trace: fisher,
            grad_unq: unq.mean,
            grad_q: quant.mean,
        })
    }

    /// Sends the quantized losses through a binary symmetric channel and
    /// checks that the expected gradient shrinks by `1 − 2p`.
    pub fn check_bit_flips<R: Rng + ?Sized>(
        &self,
        q_bits: u32,
        flip_prob: f64,
        rng: &mut R,
    ) -> Result<BitFlipReport> {
        if !matches!(q_bits, 1 | 2) {
            return Err(Error::InvalidConfig(format!(
                "the bit-flip scaling check covers 1- and 2-bit natural mapping only, got q = {q_bits}"
            )));
        }
        let bsc = BscConfig::new(flip_prob)?;
        let quantizer = QuantizerConfig::new(q_bits)?;
        let mut levels = Vec::with_capacity(self.len());
        let mut received = Vec::with_capacity(self.len());
        for &l in &self.losses {
            let q = quantizer.quantize(l)?;
            levels.push(q.level);
            received.push(quantizer.dequantize(&bsc.transmit(&quantizer.encode(q.index), rng))?);
        }
        let quant = self.gradient_stats(&levels);
        let noisy = self.gradient_stats(&received);
        let factor = 1.0 - 2.0 * flip_prob;

        let resid_coeff: Vec<f64> = received.iter().zip(&levels).map(|(e, q)| e - factor * q).collect();
        let resid = self.gradient_stats(&resid_coeff);
        let q_norm_sq = dot(&quant.mean, &quant.mean);
        let (scale_fit, scale_fit_stderr) = self.scale_fit(&noisy, &quant);

        let fisher = self.fisher_trace();
        let (var_bound, bound_se) = if q_bits == 1 {
            let bound = quant.variance + 4.0 * flip_prob * (1.0 - flip_prob) * q_norm_sq + flip_prob * fisher;
            let slack: Vec<f64> = self
                .score_norms
                .iter()
                .zip(quant.per_sample_sq_norm.iter().zip(&noisy.per_sample_sq_norm))
                .map(|(t, (q, e))| q + flip_prob * t - e)
                .collect();
            (Some(bound), Some(stderr(&slack)))
        } else {
            (None, None)
        };
        Ok(BitFlipReport {
            q_bits,
            flip_prob,
            num_samples: self.len() as u64,
            expected_scale: factor,
            scale_fit,
            scale_fit_stderr,
            scaling_residual_norm: norm(&resid.mean),
            scaling_residual_stderr: resid.mean_stderr,
            grad_q_norm: q_norm_sq.sqrt(),
            grad_noisy_norm: norm(&noisy.mean),
            var_q: quant.variance,
            var_noisy: noisy.variance,
            var_bound_noisy: var_bound,
            var_bound_stderr: bound_se,
            fisher_trace: fisher,
            grad_q: quant.mean,
            grad_noisy: noisy.mean,
        })
    }
}

struct GradientStats {
    mean: Vec<f64>,
    /// Combined standard error of `mean`.
    mean_stderr: f64,
    centred: Vec<f64>,
    /// `E‖γ‖² − ‖Eγ‖²`
    variance: f64,
    per_sample_sq_norm: Vec<f64>,
}

/// Outcome of the quantization scaling check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizationReport {
    pub q_bits: u32,
    pub num_samples: u64,
    pub g_hat: f64,
    pub w_bar: f64,
    pub w_max: f64,
    pub grad_unq_norm: f64,
    pub grad_q_norm: f64,
    pub cosine: f64,
    pub magnitude_ratio: f64,
    /// Least-squares scale of `E{γ^q}` onto `E{γ}`.
    pub scale_fit: f64,
    pub scale_fit_stderr: f64,
    /// `‖E{γ^q} − ĝ E{γ}‖`
    pub scaling_residual_norm: f64,
    /// Combined standard error of that residual vector.
    pub scaling_residual_stderr: f64,
    pub var_unq: f64,
    pub var_q: f64,
    pub var_bound_q: f64,
    pub var_bound_stderr: f64,
    pub fisher_trace: f64,
    #[serde(skip)]
    pub grad_unq: Vec<f64>,
    #[serde(skip)]
    pub grad_q: Vec<f64>,
}

impl QuantizationReport {
    pub fn residual_within_3se(&self) -> bool {
        self.scaling_residual_norm <= 3.0 * self.scaling_residual_stderr
    }

    pub fn variance_bound_holds(&self) -> bool {
        self.var_q <= self.var_bound_q + 3.0 * self.var_bound_stderr
    }
}

/// Outcome of the bit-flip scaling check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BitFlipReport {
    pub q_bits: u32,
    pub flip_prob: f64,
    pub num_samples: u64,
    pub expected_scale: f64,
    /// Least-squares scale of `E{γ^e}` onto `E{γ^q}`.
    pub scale_fit: f64,
    pub scale_fit_stderr: f64,
    /// `‖E{γ^e} − (1 − 2p) E{γ^q}‖`
    pub scaling_residual_norm: f64,
    pub scaling_residual_stderr: f64,
    pub grad_q_norm: f64,
    pub grad_noisy_norm: f64,
    pub var_q: f64,
    pub var_noisy: f64,
    /// Only for 1-bit feedback.
    pub var_bound_noisy: Option<f64>,
    pub var_bound_stderr: Option<f64>,
    pub fisher_trace: f64,
    #[serde(skip)]
    pub grad_q: Vec<f64>,
    #[serde(skip)]
    pub grad_noisy: Vec<f64>,
}

impl BitFlipReport {
    pub fn residual_within_3se(&self) -> bool {
        self.scaling_residual_norm <= 3.0 * self.scaling_residual_stderr
    }

    /// `None` when no bound applies (2-bit feedback).
    pub fn variance_bound_holds(&self) -> Option<bool> {
        Some(self.var_noisy <= self.var_bound_noisy? + 3.0 * self.var_bound_stderr?)
    }
}

/// Draws a sample set and runs the quantization check.
pub fn verify_prop1<R: Rng + ?Sized>(
    tx: &Transmitter,
    rx: &Receiver,
    channel: &ChannelConfig,
    setup: &PropositionSetup,
    q_bits: u32,
    rng: &mut R,
) -> Result<QuantizationReport> {
    PropositionSamples::draw(tx, rx, channel, setup, rng)?.check_quantization(q_bits)
}

/// Draws a sample set and runs the bit-flip check.
pub fn verify_prop2<R: Rng + ?Sized>(
    tx: &Transmitter,
    rx: &Receiver,
    channel: &ChannelConfig,
    setup: &PropositionSetup,
    q_bits: u32,
    flip_prob: f64,
    rng: &mut R,
) -> Result<BitFlipReport> {
    if !matches!(q_bits, 1 | 2) {
        return Err(Error::InvalidConfig(format!(
            "the bit-flip scaling check covers 1- and 2-bit natural mapping only, got q = {q_bits}"
        )));
    }
    BscConfig::new(flip_prob)?;
    PropositionSamples::draw(tx, rx, channel, setup, rng)?.check_bit_flips(q_bits, flip_prob, rng)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a) * norm(b))
}

fn stderr(values: &[f64]) -> f64 {
    let mut m = Moments::default();
    values.iter().for_each(|&v| m.push(v));
    m.stderr()
}
