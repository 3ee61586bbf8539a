//! Alternating optimization: supervised receiver steps followed by
//! policy-gradient transmitter steps driven by fed-back losses.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channels::{ChannelConfig, ChannelModel};
use crate::error::{Error, Result};
use crate::evaluation::estimate_learned_ser;
use crate::feedback::{bussgang_gain, FeedbackLink, FeedbackMode, LossBatch, DEFAULT_CLIP_FRACTION};
use crate::neuralnet::{AdamConfig, ParameterGradient};
use crate::rng::{stream, SimRng, Stream};
use crate::transceiver::{cross_entropy, ExplorationPolicy, Receiver, Transmitter, DEFAULT_MESSAGES};

/// Hyperparameters of the alternating optimization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    /// Outer iterations.
    #[serde(rename = "N")]
    pub outer_iterations: usize,
    #[serde(rename = "N_R")]
    pub receiver_steps: usize,
    #[serde(rename = "N_T")]
    pub transmitter_steps: usize,
    #[serde(rename = "B_R")]
    pub receiver_batch: usize,
    #[serde(rename = "B_T")]
    pub transmitter_batch: usize,
    #[serde(rename = "alpha_R")]
    pub receiver_lr: f64,
    #[serde(rename = "alpha_T")]
    pub transmitter_lr: f64,
    /// `σ_p² = exploration_factor · P`.
    pub exploration_factor: f64,
    pub messages: usize,
    /// Outer iterations between SER estimates; 0 disables them.
    pub ser_every: usize,
    pub ser_symbols: u64,
    #[serde(skip)]
    pub feedback: FeedbackMode,
    #[serde(skip)]
    pub clip_fraction: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            outer_iterations: 4000,
            receiver_steps: 30,
            transmitter_steps: 20,
            receiver_batch: 64,
            transmitter_batch: 64,
            receiver_lr: 0.008,
            transmitter_lr: 0.001,
            exploration_factor: 1e-3,
            messages: DEFAULT_MESSAGES,
            ser_every: 50,
            ser_symbols: 10_000,
            feedback: FeedbackMode::Perfect,
            clip_fraction: DEFAULT_CLIP_FRACTION,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("N_R", self.receiver_steps),
            ("N_T", self.transmitter_steps),
            ("B_R", self.receiver_batch),
            ("B_T", self.transmitter_batch),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        if self.messages < 2 {
            return Err(Error::InvalidConfig(format!("need at least 2 messages, got {}", self.messages)));
        }
        for (name, v) in [("alpha_R", self.receiver_lr), ("alpha_T", self.transmitter_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.exploration_factor > 0.0 && self.exploration_factor.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "exploration_factor must be > 0, got {}",
                self.exploration_factor
            )));
        }
        if self.ser_every > 0 && self.ser_symbols == 0 {
            return Err(Error::InvalidConfig("ser_symbols must be >= 1".into()));
        }
        FeedbackLink::new(self.feedback, self.clip_fraction)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Receiver,
    Transmitter,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Receiver => "receiver",
            Phase::Transmitter => "transmitter",
        }
    }
}

/// One gradient step of either phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub outer_iter: usize,
    pub phase: Phase,
    /// Step index within the phase.
    pub step: usize,
    /// Mini-batch mean cross-entropy (receiver) or mean raw loss `l_k` of the
    /// perturbed batch (transmitter).
    pub empirical_loss: f64,
    pub grad_norm: f64,
    /// Bussgang gain of the batch's quantization; quantized feedback only.
    pub g_estimate: Option<f64>,
    /// Attached to the last step of every `ser_every`-th outer iteration.
    pub ser: Option<f64>,
}

pub const METRICS_HEADER: &str = "outer_iter,phase,step,empirical_loss,grad_norm,g_estimate,ser";

impl MetricsRecord {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.outer_iter,
            self.phase.as_str(),
            self.step,
            self.empirical_loss,
            self.grad_norm,
            opt(self.g_estimate),
            opt(self.ser)
        )
    }
}

pub fn write_metrics_csv<W: Write>(records: &[MetricsRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for r in records {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}

/// A transmitter gradient estimate together with what produced it.
#[derive(Debug, Clone)]
pub struct TransmitterGradient {
    pub grad: ParameterGradient,
    pub empirical_loss: f64,
    pub g_estimate: Option<f64>,
    pub losses: LossBatch,
}

/// Per-purpose random streams.
#[derive(Debug, Clone)]
struct Streams {
    messages: SimRng,
    exploration: SimRng,
    channel: SimRng,
    feedback: SimRng,
    evaluation: SimRng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        Self {
            messages: stream(seed, Stream::Messages),
            exploration: stream(seed, Stream::Exploration),
            channel: stream(seed, Stream::Channel),
            feedback: stream(seed, Stream::Feedback),
            evaluation: stream(seed, Stream::Evaluation),
        }
    }
}

/// Owns both networks and all training randomness.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainingConfig,
    channel_cfg: ChannelConfig,
    channel: ChannelModel,
    power_mw: f64,
    policy: ExplorationPolicy,
    link: FeedbackLink,
    rx_adam: AdamConfig,
    tx_adam: AdamConfig,
    tx: Transmitter,
    rx: Receiver,
    rngs: Streams,
    outer_done: usize,
}

impl Trainer {
    /// Glorot-initialized networks from the seed's init streams.
    pub fn new(cfg: TrainingConfig, channel: &ChannelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let tx = Transmitter::new(cfg.messages, &mut stream(seed, Stream::TransmitterInit))?;
        let rx = Receiver::new(cfg.messages, &mut stream(seed, Stream::ReceiverInit))?;
        Self::with_networks(cfg, channel, tx, rx, seed)
    }

    pub fn with_networks(
        cfg: TrainingConfig,
        channel: &ChannelConfig,
        tx: Transmitter,
        rx: Receiver,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        if tx.messages() != cfg.messages || rx.messages() != cfg.messages {
            return Err(Error::DimensionMismatch {
                expected: cfg.messages,
                actual: if tx.messages() != cfg.messages {
                    tx.messages()
                } else {
                    rx.messages()
                },
            });
        }
        let power_mw = channel.signal_power_mw();
        Ok(Self {
            cfg,
            channel_cfg: channel.clone(),
            channel: channel.model()?,
            power_mw,
            policy: ExplorationPolicy::for_power(power_mw, cfg.exploration_factor)?,
            link: FeedbackLink::new(cfg.feedback, cfg.clip_fraction)?,
            rx_adam: AdamConfig::new(cfg.receiver_lr),
            tx_adam: AdamConfig::new(cfg.transmitter_lr),
            tx,
            rx,
            rngs: Streams::new(seed),
            outer_done: 0,
        })
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.cfg
    }

    pub fn transmitter(&self) -> &Transmitter {
        &self.tx
    }

    pub fn receiver(&self) -> &Receiver {
        &self.rx
    }

    pub fn policy(&self) -> &ExplorationPolicy {
        &self.policy
    }

    pub fn into_parts(self) -> (Transmitter, Receiver) {
        (self.tx, self.rx)
    }

    fn draw_messages(&mut self, n: usize) -> Vec<usize> {
        let m = self.cfg.messages;
        (0..n).map(|_| self.rngs.messages.random_range(0..m)).collect()
    }

    /// Cross-entropy gradient of the receiver on a fresh, unperturbed batch.
    pub fn receiver_gradient(&mut self) -> Result<(ParameterGradient, f64)> {
        let messages = self.draw_messages(self.cfg.receiver_batch);
        let batch = self.tx.transmit(&messages, self.power_mw)?;
        let b = messages.len() as f64;
        let net = self.rx.network();
        let mut grad = ParameterGradient::zeros_like(net);
        let mut loss = 0.0;
        for (&m, &x) in messages.iter().zip(&batch.symbols) {
            let y = self.channel.apply(x, &mut self.rngs.channel);
            let tape = self.rx.forward(y)?;
            loss += cross_entropy(tape.output(), m);
            let mut logit_grad = tape.output().to_vec();
            logit_grad[m] -= 1.0;
            net.backward_logits_accumulate(&tape, &logit_grad, 1.0 / b, &mut grad)?;
        }
        Ok((grad, loss / b))
    }

    /// One Adam step on the receiver; the transmitter is untouched.
    pub fn receiver_step(&mut self) -> Result<(f64, f64)> {
        let (grad, loss) = self.receiver_gradient()?;
        self.rx.network_mut().adam_step(&grad, &self.rx_adam)?;
        Ok((loss, grad.norm()))
    }

    /// Policy-gradient estimate from one fresh batch, with the losses passed
    /// through the configured feedback link.
    pub fn transmitter_gradient(&mut self) -> Result<TransmitterGradient> {
        let link = self.link;
        let mut fb_rng = self.rngs.feedback.clone();
        let out = self.transmitter_gradient_with(|raw| link.transmit(raw, &mut fb_rng));
        self.rngs.feedback = fb_rng;
        out
    }

    /// Like [`transmitter_gradient`](Self::transmitter_gradient) with a
    /// caller-supplied feedback path from raw losses to the losses seen by
    /// the transmitter.
    pub fn transmitter_gradient_with<F>(&mut self, feedback: F) -> Result<TransmitterGradient>
    where
        F: FnOnce(&[f64]) -> Result<LossBatch>,
    {
        let messages = self.draw_messages(self.cfg.transmitter_batch);
        let batch = self.tx.transmit(&messages, self.power_mw)?;
        let perturbed = self.policy.perturb(&batch.symbols, &mut self.rngs.exploration);
        let mut raw = Vec::with_capacity(messages.len());
        for (&m, &xt) in messages.iter().zip(&perturbed) {
            let y = self.channel.apply(xt, &mut self.rngs.channel);
            raw.push(cross_entropy(&self.rx.posterior(y)?, m));
        }
        let losses = feedback(&raw)?;
        if losses.reconstructed.len() != raw.len() {
            return Err(Error::DimensionMismatch {
                expected: raw.len(),
                actual: losses.reconstructed.len(),
            });
        }
        let b = raw.len() as f64;
        let weights: Vec<f64> = losses.reconstructed.iter().map(|l| l / b).collect();
        let grad = self.tx.policy_gradient(&batch, &perturbed, &weights, &self.policy)?;
        let g_estimate = match (&losses.quantized, self.link.quantizer()) {
            (Some(stages), Some(q)) if !stages.stats.degenerate => {
                bussgang_gain(&stages.transformed, q).ok().map(|e| e.g)
            }
            _ => None,
        };
        Ok(TransmitterGradient {
            grad,
            empirical_loss: raw.iter().sum::<f64>() / b,
            g_estimate,
            losses,
        })
    }

    /// One Adam step on the transmitter; the receiver is untouched.
    pub fn transmitter_step(&mut self) -> Result<TransmitterGradient> {
        let est = self.transmitter_gradient()?;
        self.tx.network_mut().adam_step(&est.grad, &self.tx_adam)?;
        Ok(est)
    }

    /// Runs one outer iteration and appends its records.
    pub fn outer_iteration(&mut self, records: &mut Vec<MetricsRecord>) -> Result<()> {
        let it = self.outer_done;
        for step in 0..self.cfg.receiver_steps {
            let (loss, norm) = self.receiver_step()?;
            records.push(MetricsRecord {
                outer_iter: it,
                phase: Phase::Receiver,
                step,
                empirical_loss: loss,
                grad_norm: norm,
                g_estimate: None,
                ser: None,
            });
        }
        for step in 0..self.cfg.transmitter_steps {
            let est = self.transmitter_step()?;
            records.push(MetricsRecord {
                outer_iter: it,
                phase: Phase::Transmitter,
                step,
                empirical_loss: est.empirical_loss,
                grad_norm: est.grad.norm(),
                g_estimate: est.g_estimate,
                ser: None,
            });
        }
        self.outer_done += 1;
        if self.cfg.ser_every > 0 && self.outer_done % self.cfg.ser_every == 0 {
            let ser = estimate_learned_ser(
                &self.tx,
                &self.rx,
                &self.channel_cfg,
                self.cfg.ser_symbols,
                &mut self.rngs.evaluation,
            )?;
            if let Some(last) = records.last_mut() {
                last.ser = Some(ser.ser);
            }
        }
        Ok(())
    }

    /// Runs all `N` configured outer iterations.
    pub fn run(&mut self) -> Result<Vec<MetricsRecord>> {
        let per_iter = self.cfg.receiver_steps + self.cfg.transmitter_steps;
        let mut records = Vec::with_capacity(self.cfg.outer_iterations * per_iter);
        for _ in 0..self.cfg.outer_iterations {
            self.outer_iteration(&mut records)?;
        }
        Ok(records)
    }
}

/// Trained networks and the full metrics stream.
#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub transmitter: Transmitter,
    pub receiver: Receiver,
    pub metrics: Vec<MetricsRecord>,
}

pub fn train(cfg: TrainingConfig, channel: &ChannelConfig, seed: u64) -> Result<TrainingOutcome> {
    let mut trainer = Trainer::new(cfg, channel, seed)?;
    let metrics = trainer.run()?;
    let (transmitter, receiver) = trainer.into_parts();
    Ok(TrainingOutcome {
        transmitter,
        receiver,
        metrics,
    })
}

/// Mean transmitter-phase loss of every outer iteration.
pub fn transmitter_loss_trace(metrics: &[MetricsRecord]) -> Vec<f64> {
    let mut sums: Vec<(f64, usize)> = Vec::new();
    for r in metrics.iter().filter(|r| r.phase == Phase::Transmitter) {
        if sums.len() <= r.outer_iter {
            sums.resize(r.outer_iter + 1, (0.0, 0));
        }
        sums[r.outer_iter].0 += r.empirical_loss;
        sums[r.outer_iter].1 += 1;
    }
    sums.into_iter().filter(|s| s.1 > 0).map(|(s, n)| s / n as f64).collect()
}

/// Trailing moving average over `window` entries.
pub fn moving_average(trace: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(trace.len());
    let mut acc = 0.0;
    for (i, &v) in trace.iter().enumerate() {
        acc += v;
        if i >= w {
            acc -= trace[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}

/// First index at which the smoothed trace has covered `fraction` of its
/// total decrease from the first to the last smoothed value. `None` if the
/// trace does not decrease.
pub fn convergence_iteration(trace: &[f64], window: usize, fraction: f64) -> Option<usize> {
    let s = moving_average(trace, window);
    let (&first, &last) = (s.first()?, s.last()?);
    let total = first - last;
    if !(total > 0.0) {
        return None;
    }
    s.iter().position(|&v| first - v >= fraction * total)
}

/// Mean of the first and last `fraction` of a trace.
pub fn head_tail_means(trace: &[f64], fraction: f64) -> Option<(f64, f64)> {
    let k = ((trace.len() as f64 * fraction).round() as usize).max(1);
    if trace.len() < k {
        return None;
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Some((mean(&trace[..k]), mean(&trace[trace.len() - k..])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::cosine;
    use crate::feedback::QuantizerConfig;

    fn small(n: usize) -> TrainingConfig {
        TrainingConfig {
            outer_iterations: n,
            ser_every: 0,
            ..TrainingConfig::default()
        }
    }

    fn awgn15() -> ChannelConfig {
        ChannelConfig::awgn_at_snr(15.0)
    }

    #[test]
    fn defaults_validate_and_zero_counts_are_rejected() {
        TrainingConfig::default().validate().unwrap();
        for bad in [
            TrainingConfig { receiver_batch: 0, ..Default::default() },
            TrainingConfig { transmitter_steps: 0, ..Default::default() },
            TrainingConfig { receiver_lr: 0.0, ..Default::default() },
            TrainingConfig { exploration_factor: -1.0, ..Default::default() },
            TrainingConfig { clip_fraction: 1.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn zero_iterations_return_initial_networks() {
        let init = Trainer::new(small(0), &awgn15(), 3).unwrap();
        let out = train(small(0), &awgn15(), 3).unwrap();
        assert!(out.metrics.is_empty());
        assert_eq!(out.transmitter.network(), init.transmitter().network());
        assert_eq!(out.receiver.network(), init.receiver().network());
    }

    #[test]
    fn untrained_receiver_loss_is_near_log_m() {
        let mut t = Trainer::new(TrainingConfig { receiver_batch: 4096, ..small(1) }, &awgn15(), 5).unwrap();
        let (_, loss) = t.receiver_gradient().unwrap();
        assert!((loss - 16f64.ln()).abs() < 0.1, "{loss}");
    }

    #[test]
    fn noiseless_receiver_learns_quickly() {
        let ch = ChannelConfig::awgn(0.0, f64::NEG_INFINITY);
        let mut t = Trainer::new(small(1), &ch, 11).unwrap();
        let mut last = f64::INFINITY;
        for _ in 0..200 {
            last = t.receiver_step().unwrap().0;
            assert!(last.is_finite());
        }
        assert!(last < 0.1, "{last}");
    }

    #[test]
    fn phases_touch_only_their_own_network() {
        let cfg = TrainingConfig {
            feedback: FeedbackMode::Quantized { q_bits: 1 },
            ..small(1)
        };
        let mut t = Trainer::new(cfg, &awgn15(), 13).unwrap();
        let (tx0, rx0) = (t.transmitter().network().fingerprint(), t.receiver().network().fingerprint());
        t.receiver_step().unwrap();
        let rx1 = t.receiver().network().fingerprint();
        assert_eq!(t.transmitter().network().fingerprint(), tx0);
        assert_ne!(rx1, rx0);
        t.transmitter_step().unwrap();
        assert_eq!(t.receiver().network().fingerprint(), rx1);
        assert_ne!(t.transmitter().network().fingerprint(), tx0);
    }

    #[test]
    fn metrics_have_one_row_per_step() {
        let cfg = TrainingConfig {
            receiver_steps: 3,
            transmitter_steps: 2,
            ser_every: 2,
            ser_symbols: 100,
            ..small(4)
        };
        let out = train(cfg, &awgn15(), 1).unwrap();
        assert_eq!(out.metrics.len(), 4 * 5);
        assert!(out.metrics.iter().all(|r| r.empirical_loss >= 0.0));
        let sers: Vec<usize> = out.metrics.iter().filter(|r| r.ser.is_some()).map(|r| r.outer_iter).collect();
        assert_eq!(sers, vec![1, 3]);
        let mut csv = Vec::new();
        write_metrics_csv(&out.metrics, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().next().unwrap(), METRICS_HEADER);
        assert_eq!(text.lines().count(), 21);
    }

    #[test]
    fn same_seed_gives_identical_metrics() {
        let cfg = TrainingConfig {
            feedback: FeedbackMode::QuantizedNoisy { q_bits: 1, flip_prob: 0.1 },
            ser_every: 1,
            ser_symbols: 200,
            ..small(3)
        };
        let a = train(cfg, &awgn15(), 99).unwrap();
        let b = train(cfg, &awgn15(), 99).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.transmitter.network(), b.transmitter.network());
        let c = train(cfg, &awgn15(), 100).unwrap();
        assert_ne!(a.metrics, c.metrics);
    }

    /// Trainer after a short warm-up, so transmitter gradients carry signal.
    fn warmed(seed: u64, b_t: usize) -> Trainer {
        let mut t = Trainer::new(small(20), &awgn15(), seed).unwrap();
        t.run().unwrap();
        let (tx, rx) = t.into_parts();
        Trainer::with_networks(TrainingConfig { transmitter_batch: b_t, ..small(0) }, &awgn15(), tx, rx, seed + 1).unwrap()
    }

    #[test]
    fn fine_quantization_matches_perfect_feedback_direction() {
        let base = warmed(21, 64);
        let with_mode = |mode: FeedbackMode| {
            Trainer::with_networks(
                TrainingConfig { feedback: mode, transmitter_batch: 64, ..small(0) },
                &awgn15(),
                base.transmitter().clone(),
                base.receiver().clone(),
                22,
            )
            .unwrap()
        };
        let quantized = with_mode(FeedbackMode::Quantized { q_bits: 16 }).transmitter_gradient().unwrap();
        // Perfect delivery of the same pre-processed losses.
        let transformed = quantized.losses.quantized.as_ref().unwrap().transformed.clone();
        let perfect = with_mode(FeedbackMode::Perfect)
            .transmitter_gradient_with(|raw| {
                Ok(LossBatch {
                    raw: raw.to_vec(),
                    quantized: None,
                    reconstructed: transformed,
                })
            })
            .unwrap();
        assert_eq!(quantized.losses.raw, perfect.losses.raw);
        let cos = cosine(&quantized.grad.to_flat(), &perfect.grad.to_flat());
        assert!(cos > 0.999, "{cos}");
    }

    #[test]
    fn half_flip_probability_averages_to_no_gradient() {
        let b_t = 20_000;
        let base = warmed(31, b_t);
        let averaged = |mode: FeedbackMode| {
            let mut t = Trainer::with_networks(
                TrainingConfig { feedback: mode, transmitter_batch: b_t, ..small(0) },
                &awgn15(),
                base.transmitter().clone(),
                base.receiver().clone(),
                32,
            )
            .unwrap();
            let mut acc = ParameterGradient::zeros_like(t.transmitter().network());
            for _ in 0..200 {
                acc.add_scaled(&t.transmitter_gradient().unwrap().grad, 1.0 / 200.0);
            }
            acc.norm()
        };
        let clean = averaged(FeedbackMode::QuantizedNoisy { q_bits: 1, flip_prob: 0.0 });
        let coin = averaged(FeedbackMode::QuantizedNoisy { q_bits: 1, flip_prob: 0.5 });
        assert!(coin / clean < 0.1, "{coin} / {clean}");
    }

    #[test]
    fn constant_feedback_gradient_vanishes_for_large_batches() {
        let mut t = warmed(41, 64);
        let typical = (0..20).map(|_| t.transmitter_gradient().unwrap().grad.norm()).sum::<f64>() / 20.0;
        let constant_norm = |b_t: usize| {
            let mut t = Trainer::with_networks(
                TrainingConfig { transmitter_batch: b_t, ..small(0) },
                &awgn15(),
                t.transmitter().clone(),
                t.receiver().clone(),
                42,
            )
            .unwrap();
            t.transmitter_gradient_with(|raw| {
                Ok(LossBatch {
                    raw: raw.to_vec(),
                    quantized: None,
                    reconstructed: vec![1.0; raw.len()],
                })
            })
            .unwrap()
            .grad
            .norm()
        };
        let small_batch = constant_norm(100);
        let large_batch = constant_norm(10_000);
        assert!(large_batch < small_batch / 5.0, "{large_batch} vs {small_batch}");
        assert!(large_batch < 0.1 * typical, "{large_batch} vs {typical}");
    }

    #[test]
    fn batch_estimates_average_to_the_large_sample_gradient() {
        let base = warmed(51, 64);
        let mut small_batches = base.clone();
        let mut acc = ParameterGradient::zeros_like(base.transmitter().network());
        let rounds = 100_000 / 64;
        for _ in 0..rounds {
            acc.add_scaled(&small_batches.transmitter_gradient().unwrap().grad, 1.0 / rounds as f64);
        }
        let mut big = Trainer::with_networks(
            TrainingConfig { transmitter_batch: 10_000, ..small(0) },
            &awgn15(),
            base.transmitter().clone(),
            base.receiver().clone(),
            52,
        )
        .unwrap();
        let mut reference = ParameterGradient::zeros_like(base.transmitter().network());
        for _ in 0..100 {
            reference.add_scaled(&big.transmitter_gradient().unwrap().grad, 0.01);
        }
        let cos = cosine(&acc.to_flat(), &reference.to_flat());
        assert!(cos > 0.99, "{cos}");
    }

    #[test]
    fn quantized_feedback_reports_gain() {
        let mut t = Trainer::new(
            TrainingConfig {
                feedback: FeedbackMode::Quantized { q_bits: 2 },
                ..small(1)
            },
            &awgn15(),
            61,
        )
        .unwrap();
        let est = t.transmitter_step().unwrap();
        let stages = est.losses.quantized.unwrap();
        let q = QuantizerConfig::new(2).unwrap();
        assert_eq!(est.g_estimate, Some(bussgang_gain(&stages.transformed, &q).unwrap().g));
    }

    #[test]
    fn convergence_helpers() {
        let trace: Vec<f64> = (0..100).map(|i| (-(i as f64) / 10.0).exp()).collect();
        let it = convergence_iteration(&trace, 1, 0.9).unwrap();
        assert_eq!(it, 24);
        assert!(convergence_iteration(&[1.0, 1.0, 2.0], 1, 0.9).is_none());
        assert_eq!(moving_average(&[1.0, 3.0, 5.0], 2), vec![1.0, 2.0, 4.0]);
        let (head, tail) = head_tail_means(&trace, 0.1).unwrap();
        assert!(tail < head);
        let records = [
            MetricsRecord { outer_iter: 0, phase: Phase::Receiver, step: 0, empirical_loss: 9.0, grad_norm: 0.0, g_estimate: None, ser: None },
            MetricsRecord { outer_iter: 0, phase: Phase::Transmitter, step: 0, empirical_loss: 1.0, grad_norm: 0.0, g_estimate: None, ser: None },
            MetricsRecord { outer_iter: 0, phase: Phase::Transmitter, step: 1, empirical_loss: 3.0, grad_norm: 0.0, g_estimate: None, ser: None },
            MetricsRecord { outer_iter: 1, phase: Phase::Transmitter, step: 0, empirical_loss: 5.0, grad_norm: 0.0, g_estimate: None, ser: Some(0.5) },
        ];
        assert_eq!(transmitter_loss_trace(&records), vec![2.0, 5.0]);
    }
}
