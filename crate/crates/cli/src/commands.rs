use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use qfeedback::channels::{ChannelConfig, ChannelFamily};
use qfeedback::evaluation::{
    decision_regions, estimate_learned_ser, estimate_ser, qam16, BitFlipReport, GridSpec, MlDetector,
    PropositionSamples, PropositionSetup, QuantizationReport, SerResult,
};
use qfeedback::feedback::{bussgang_gain, gaussian_one_bit_gain, FeedbackMode, QuantizerConfig};
use qfeedback::neuralnet::DenseNetwork;
use qfeedback::rng::{substream, SimRng, Stream};
use qfeedback::training::{write_metrics_csv, MetricsRecord, Trainer, TrainingConfig};
use qfeedback::transceiver::{Receiver, Transmitter};
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::config::{ExperimentConfig, SweepSection};

pub const TX_CHECKPOINT: &str = "tx.json";
pub const RX_CHECKPOINT: &str = "rx.json";

/// Tolerances of the pass flags in the proposition report.
const COSINE_MIN: f64 = 0.99;
const RATIO_TOL: f64 = 0.05;
const SCALE_TOL: f64 = 0.05;

struct Output<'a> {
    cfg: &'a ExperimentConfig,
    hash: String,
}

impl<'a> Output<'a> {
    fn new(cfg: &'a ExperimentConfig) -> Result<Self> {
        fs::create_dir_all(&cfg.output_dir)
            .with_context(|| format!("creating output directory {}", cfg.output_dir.display()))?;
        Ok(Self { cfg, hash: cfg.hash() })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.cfg.output_dir.join(name)
    }

    /// Writes a CSV whose first line records the config hash and seed.
    fn csv<F>(&self, name: &str, body: F) -> Result<PathBuf>
    where
        F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    {
        let mut buf = Vec::new();
        writeln!(buf, "# config_hash={} seed={}", self.hash, self.cfg.seed)?;
        body(&mut buf)?;
        let path = self.path(name);
        fs::write(&path, buf).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

fn load_checkpoint(dir: &Path) -> Result<(Transmitter, Receiver)> {
    let read = |name: &str| -> Result<DenseNetwork> {
        let path = dir.join(name);
        if !path.is_file() {
            bail!("missing checkpoint {}", path.display());
        }
        DenseNetwork::load(&path).with_context(|| format!("loading checkpoint {}", path.display()))
    };
    let tx = Transmitter::from_network(read(TX_CHECKPOINT)?)?;
    let rx = Receiver::from_network(read(RX_CHECKPOINT)?)?;
    Ok((tx, rx))
}

fn train_pair(training: TrainingConfig, channel: &ChannelConfig, seed: u64) -> Result<(Trainer, Vec<MetricsRecord>)> {
    let mut trainer = Trainer::new(training, channel, seed)?;
    let metrics = trainer
        .run()
        .with_context(|| format!("training failed (seed {seed}, P = {} dBm)", channel.p_dbm))?;
    Ok((trainer, metrics))
}

pub fn train(cfg: &ExperimentConfig) -> Result<()> {
    let out = Output::new(cfg)?;
    let (trainer, metrics) = train_pair(cfg.training, &cfg.channel, cfg.seed)?;
    out.csv("metrics.csv", |w| write_metrics_csv(&metrics, w))?;
    let (tx, rx) = trainer.into_parts();
    tx.network().save(out.path(TX_CHECKPOINT))?;
    rx.network().save(out.path(RX_CHECKPOINT))?;
    let constellation = tx.constellation(cfg.channel.signal_power_mw())?;
    out.csv("constellation.csv", |w| constellation.write_csv(w))?;
    eprintln!(
        "trained {} outer iterations ({} steps); wrote {}",
        cfg.training.outer_iterations,
        metrics.len(),
        cfg.output_dir.display()
    );
    Ok(())
}

/// Channel at every sweep point.
fn sweep_channels(cfg: &ExperimentConfig, sweep: &SweepSection) -> Vec<ChannelConfig> {
    match (&sweep.snr_db, &sweep.p_dbm) {
        (Some(snr), _) => snr
            .iter()
            .map(|s| cfg.channel.with_p_dbm(cfg.channel.sigma_sq_dbm + s))
            .collect(),
        (None, Some(p)) => p.iter().map(|&p| cfg.channel.with_p_dbm(p)).collect(),
        (None, None) => Vec::new(),
    }
}

fn eval_stream(seed: u64, mode_index: usize, point: usize) -> SimRng {
    substream(seed, Stream::Evaluation, ((mode_index as u32) << 16) | point as u32)
}

/// 16-QAM with an ML detector at one sweep point.
fn qam16_baseline(cfg: &ExperimentConfig, sweep: &SweepSection, channel: &ChannelConfig, point: usize) -> Result<SerResult> {
    let constellation = qam16(channel.signal_power_mw());
    let mut rng = eval_stream(cfg.seed, 0xFFFF, point);
    let detector = match channel.family {
        ChannelFamily::Awgn => MlDetector::awgn(constellation.clone()),
        ChannelFamily::Nlpn => MlDetector::sampled(
            constellation.clone(),
            &channel.model()?,
            sweep.ml_bins,
            sweep.ml_samples_per_point,
            &mut rng,
        )?,
    };
    Ok(estimate_ser(&constellation, &detector, channel, sweep.num_symbols, &mut rng)?)
}

pub fn ser_sweep(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<()> {
    let Some(sweep) = &cfg.sweep else {
        bail!("ser-sweep needs a [sweep] section");
    };
    let out = Output::new(cfg)?;
    let channels = sweep_channels(cfg, sweep);
    let modes = sweep.feedback.clone().unwrap_or_else(|| vec![cfg.training.feedback]);
    let loaded = checkpoint.map(load_checkpoint).transpose()?;

    let mut rows: Vec<(SerResult, FeedbackMode)> = Vec::new();
    for (mi, &mode) in modes.iter().enumerate() {
        let training = TrainingConfig { feedback: mode, ..cfg.training };
        training.validate()?;
        // AWGN pairs are trained once at the configured power and
        // re-normalized per point; NLPN pairs are trained per point.
        let shared = match (&loaded, cfg.channel.family) {
            (Some(pair), _) => Some(pair.clone()),
            (None, ChannelFamily::Awgn) => Some(train_pair(training, &cfg.channel, cfg.seed)?.0.into_parts()),
            (None, ChannelFamily::Nlpn) => None,
        };
        for (pi, channel) in channels.iter().enumerate() {
            let (tx, rx) = match &shared {
                Some(pair) => pair.clone(),
                None => train_pair(training, channel, cfg.seed + pi as u64)?.0.into_parts(),
            };
            let mut rng = eval_stream(cfg.seed, mi, pi);
            let ser = estimate_learned_ser(&tx, &rx, channel, sweep.num_symbols, &mut rng)?;
            eprintln!("{} P = {} dBm: SER {}", mode.label(), channel.p_dbm, ser.ser);
            rows.push((ser, mode));
        }
    }
    let baselines = if sweep.qam16_baseline {
        channels
            .iter()
            .enumerate()
            .map(|(pi, ch)| qam16_baseline(cfg, sweep, ch, pi))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let n_points = channels.len();
    out.csv("ser.csv", |w| {
        write!(w, "snr_db,p_dbm,ser,stderr,num_symbols,feedback_mode,q_bits,flip_prob")?;
        if !baselines.is_empty() {
            write!(w, ",qam16_ml_ser,qam16_ml_stderr")?;
        }
        writeln!(w)?;
        for (i, (r, mode)) in rows.iter().enumerate() {
            write!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.snr_db,
                r.p_dbm,
                r.ser,
                r.stderr,
                r.num_symbols,
                mode.label(),
                mode.q_bits().map(|q| q.to_string()).unwrap_or_default(),
                mode.flip_prob()
            )?;
            if let Some(b) = baselines.get(i % n_points) {
                write!(w, ",{},{}", b.ser, b.stderr)?;
            }
            writeln!(w)?;
        }
        Ok(())
    })?;
    Ok(())
}

pub fn regions(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<()> {
    let out = Output::new(cfg)?;
    let (tx, rx) = load_checkpoint(checkpoint.unwrap_or(&cfg.output_dir))?;
    let power = cfg.channel.signal_power_mw();
    let half = cfg.regions.half_width.unwrap_or(2.0 * power.sqrt());
    let grid = decision_regions(&rx, &GridSpec::square(half, cfg.regions.resolution))?;
    out.csv("decision_regions.csv", |w| grid.write_csv(w))?;
    let constellation = tx.constellation(power)?;
    out.csv("constellation.csv", |w| constellation.write_csv(w))?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct Prop1Entry {
    #[serde(flatten)]
    report: QuantizationReport,
    cosine_ok: bool,
    ratio_ok: bool,
    residual_ok: bool,
    variance_bound_ok: bool,
}

#[derive(Debug, Serialize)]
struct Prop2Entry {
    #[serde(flatten)]
    report: BitFlipReport,
    scale_ok: bool,
    residual_ok: bool,
    variance_bound_ok: Option<bool>,
}

#[derive(Debug, Serialize)]
struct VerifyReport {
    config_hash: String,
    seed: u64,
    fisher_trace: f64,
    prop1: Vec<Prop1Entry>,
    prop2: Vec<Prop2Entry>,
}

pub fn verify(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<()> {
    let out = Output::new(cfg)?;
    let (tx, rx) = load_checkpoint(checkpoint.unwrap_or(&cfg.output_dir))?;
    let v = &cfg.verify;
    let setup = |n: usize| PropositionSetup {
        exploration_factor: cfg.training.exploration_factor,
        clip_fraction: cfg.quantizer.clip_fraction,
        num_samples: n,
    };
    let mut rng = substream(cfg.seed, Stream::Evaluation, 1);
    let samples = PropositionSamples::draw(&tx, &rx, &cfg.channel, &setup(v.num_samples), &mut rng)?;
    let prop1 = v
        .prop1_q_bits
        .iter()
        .map(|&q| {
            let r = samples.check_quantization(q)?;
            Ok(Prop1Entry {
                cosine_ok: r.cosine > COSINE_MIN,
                ratio_ok: (r.magnitude_ratio / r.g_hat - 1.0).abs() <= RATIO_TOL,
                residual_ok: r.residual_within_3se(),
                variance_bound_ok: r.variance_bound_holds(),
                report: r,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let prop2_samples = match v.prop2_num_samples {
        Some(n) if n != v.num_samples => {
            let mut rng = substream(cfg.seed, Stream::Evaluation, 2);
            Some(PropositionSamples::draw(&tx, &rx, &cfg.channel, &setup(n), &mut rng)?)
        }
        _ => None,
    };
    let flips = prop2_samples.as_ref().unwrap_or(&samples);
    let mut prop2 = Vec::new();
    let mut flip_rng = substream(cfg.seed, Stream::Feedback, 1);
    for &q in &v.prop2_q_bits {
        for &p in &v.flip_probs {
            let r = flips.check_bit_flips(q, p, &mut flip_rng)?;
            prop2.push(Prop2Entry {
                scale_ok: (r.scale_fit - r.expected_scale).abs() <= SCALE_TOL,
                residual_ok: r.residual_within_3se(),
                variance_bound_ok: r.variance_bound_holds(),
                report: r,
            });
        }
    }
    let report = VerifyReport {
        config_hash: out.hash.clone(),
        seed: cfg.seed,
        fisher_trace: samples.fisher_trace(),
        prop1,
        prop2,
    };
    out.json("propositions.json", &report)?;
    Ok(())
}

pub fn bussgang(cfg: &ExperimentConfig) -> Result<()> {
    let out = Output::new(cfg)?;
    let b = &cfg.bussgang;
    if b.num_samples < 2 {
        bail!("[bussgang] num_samples must be >= 2");
    }
    let mut rows = Vec::new();
    for (i, &var) in b.sigma_sq.iter().enumerate() {
        if !(var > 0.0) {
            bail!("[bussgang] sigma_sq must be > 0, got {var}");
        }
        let normal = Normal::new(b.mu, var.sqrt())?;
        let mut rng = substream(cfg.seed, Stream::Evaluation, i as u32);
        let losses: Vec<f64> = (0..b.num_samples).map(|_| normal.sample(&mut rng)).collect();
        for &q in &b.q_bits {
            let est = bussgang_gain(&losses, &QuantizerConfig::new(q)?)?;
            let closed = if q == 1 { gaussian_one_bit_gain(b.mu, var) } else { None };
            rows.push((var, q, est, closed));
        }
    }
    out.csv("bussgang.csv", |w| {
        writeln!(w, "mu,sigma_sq,q_bits,g_hat,g_closed_form,w_mean,w_var,w_bar,w_max")?;
        for (var, q, e, closed) in &rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                b.mu,
                var,
                q,
                e.g,
                closed.map(|c| c.to_string()).unwrap_or_default(),
                e.w_mean,
                e.w_var,
                e.w_bar,
                e.w_max
            )?;
        }
        Ok(())
    })?;
    Ok(())
}
