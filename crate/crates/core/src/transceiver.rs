//! Neural transmitter and receiver.
//!
//! The transmitter maps a one-hot message to two real outputs, read as a
//! complex symbol, and rescales each batch so its mean power is exactly `P`.
//! During transmitter learning it explores with circular Gaussian noise; the
//! score `∇_τ log π(x̃|m)` is backpropagated through the network *and* the
//! batch normalization, since the scale factor depends on every symbol of
//! the batch.
//!
//! Messages are 0-based indices internally; exported files number them from 1.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rand::Rng;

use crate::channels::{complex_gaussian, ComplexSymbol};
use crate::error::{Error, Result};
use crate::neuralnet::{Activation, DenseNetwork, ParameterGradient, Tape};

/// Constellation size used throughout.
pub const DEFAULT_MESSAGES: usize = 16;
/// Hidden widths of the transmitter and receiver.
pub const TX_HIDDEN: usize = 30;
pub const RX_HIDDEN: usize = 50;
/// Floor applied to the posterior inside the cross-entropy logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

pub fn one_hot(m: usize, messages: usize) -> Vec<f64> {
    let mut v = vec![0.0; messages];
    v[m] = 1.0;
    v
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > values[best] { i } else { best })
}

/// `−log q_m`, with `q_m` floored at [`LOG_FLOOR`].
pub fn cross_entropy(posterior: &[f64], m: usize) -> f64 {
    -posterior[m].max(LOG_FLOOR).ln()
}

/// Gaussian exploration `x̃ = x + w`, `w ~ CN(0, σ_p²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExplorationPolicy {
    sigma_p_sq: f64,
}

impl ExplorationPolicy {
    pub fn new(sigma_p_sq: f64) -> Result<Self> {
        if !(sigma_p_sq > 0.0 && sigma_p_sq.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "exploration variance must be positive, got {sigma_p_sq}"
            )));
        }
        Ok(Self { sigma_p_sq })
    }

    /// `σ_p² = factor · P`.
    pub fn for_power(power_mw: f64, factor: f64) -> Result<Self> {
        Self::new(factor * power_mw)
    }

    /// No exploration at all. Only perturbation is defined for it; score
    /// computations reject it.
    pub fn disabled() -> Self {
        Self { sigma_p_sq: 0.0 }
    }

    pub fn sigma_p_sq(&self) -> f64 {
        self.sigma_p_sq
    }

    pub fn perturb<R: Rng + ?Sized>(&self, symbols: &[ComplexSymbol], rng: &mut R) -> Vec<ComplexSymbol> {
        if self.sigma_p_sq == 0.0 {
            return symbols.to_vec();
        }
        symbols
            .iter()
            .map(|&x| x + complex_gaussian(self.sigma_p_sq, rng))
            .collect()
    }

    /// `log π(x̃|x) = −log(π σ_p²) − |x̃ − x|² / σ_p²`.
    pub fn log_density(&self, x_tilde: ComplexSymbol, x: ComplexSymbol) -> Result<f64> {
        self.check()?;
        Ok(-(PI * self.sigma_p_sq).ln() - (x_tilde - x).norm_sqr() / self.sigma_p_sq)
    }

    /// `∂ log π / ∂(Re x, Im x) = 2 (x̃ − x) / σ_p²`.
    pub fn score_wrt_symbol(&self, x_tilde: ComplexSymbol, x: ComplexSymbol) -> Result<ComplexSymbol> {
        self.check()?;
        Ok((x_tilde - x) * (2.0 / self.sigma_p_sq))
    }

    fn check(&self) -> Result<()> {
        if self.sigma_p_sq > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig("exploration variance is zero".into()))
        }
    }
}

/// Normalized symbols of one transmitted batch plus what is needed to
/// differentiate them.
#[derive(Debug, Clone)]
pub struct TxBatch {
    pub messages: Vec<usize>,
    /// Raw network outputs before normalization.
    pub raw: Vec<ComplexSymbol>,
    /// Common scale factor `sqrt(P·B / Σ|raw|²)`.
    pub scale: f64,
    /// Normalized channel inputs.
    pub symbols: Vec<ComplexSymbol>,
    raw_energy: f64,
    tapes: Vec<Tape>,
}

impl TxBatch {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn mean_power(&self) -> f64 {
        self.symbols.iter().map(|x| x.norm_sqr()).sum::<f64>() / self.len() as f64
    }
}

/// The image of every message under the transmitter, normalized so that
/// `(1/M) Σ |x_m|² = P`.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    pub points: Vec<ComplexSymbol>,
}

impl Constellation {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn mean_power(&self) -> f64 {
        self.points.iter().map(|x| x.norm_sqr()).sum::<f64>() / self.len() as f64
    }

    /// Same shape rescaled to mean power `power_mw`.
    pub fn scaled_to(&self, power_mw: f64) -> Constellation {
        let s = (power_mw / self.mean_power()).sqrt();
        Constellation {
            points: self.points.iter().map(|&x| x * s).collect(),
        }
    }

    /// Writes `message_index,re,im` rows (1-based message numbers).
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "message_index,re,im")?;
        for (m, x) in self.points.iter().enumerate() {
            writeln!(out, "{},{},{}", m + 1, x.re, x.im)?;
        }
        Ok(())
    }
}

/// Transmitter network `M → 30 → 30 → 2` (ReLU, ReLU, linear).
#[derive(Debug, Clone, PartialEq)]
pub struct Transmitter {
    net: DenseNetwork,
}

impl Transmitter {
    pub fn new<R: Rng + ?Sized>(messages: usize, rng: &mut R) -> Result<Self> {
        let net = DenseNetwork::glorot(
            &[messages, TX_HIDDEN, TX_HIDDEN, 2],
            &[Activation::Relu, Activation::Relu, Activation::Linear],
            rng,
        )?;
        Self::from_network(net)
    }

    pub fn from_network(net: DenseNetwork) -> Result<Self> {
        if net.output_dim() != 2 {
            return Err(Error::InvalidNetwork(format!(
                "transmitter must have 2 outputs, has {}",
                net.output_dim()
            )));
        }
        if net.layers().last().map(|l| l.activation) == Some(Activation::Softmax) {
            return Err(Error::InvalidNetwork("transmitter output cannot be softmax".into()));
        }
        Ok(Self { net })
    }

    pub fn messages(&self) -> usize {
        self.net.input_dim()
    }

    pub fn network(&self) -> &DenseNetwork {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut DenseNetwork {
        &mut self.net
    }

    pub fn into_network(self) -> DenseNetwork {
        self.net
    }

    /// Maps messages to symbols and scales the batch to mean power `power_mw`.
    pub fn transmit(&self, messages: &[usize], power_mw: f64) -> Result<TxBatch> {
        if messages.is_empty() {
            return Err(Error::EmptyInput);
        }
        if !(power_mw > 0.0 && power_mw.is_finite()) {
            return Err(Error::InvalidConfig(format!("signal power must be positive, got {power_mw}")));
        }
        let m_count = self.messages();
        let mut tapes = Vec::with_capacity(messages.len());
        let mut raw = Vec::with_capacity(messages.len());
        for &m in messages {
            if m >= m_count {
                return Err(Error::DimensionMismatch {
                    expected: m_count,
                    actual: m + 1,
                });
            }
            let tape = self.net.forward(&one_hot(m, m_count))?;
            raw.push(Complex64::new(tape.output()[0], tape.output()[1]));
            tapes.push(tape);
        }
        let raw_energy: f64 = raw.iter().map(|x| x.norm_sqr()).sum();
        if !(raw_energy > 0.0) || !raw_energy.is_finite() {
            return Err(Error::ZeroPowerBatch);
        }
        let scale = (power_mw * messages.len() as f64 / raw_energy).sqrt();
        let symbols = raw.iter().map(|&u| u * scale).collect();
        Ok(TxBatch {
            messages: messages.to_vec(),
            raw,
            scale,
            symbols,
            raw_energy,
            tapes,
        })
    }

    /// Constellation with uniform message weights.
    pub fn constellation(&self, power_mw: f64) -> Result<Constellation> {
        let all: Vec<usize> = (0..self.messages()).collect();
        Ok(Constellation {
            points: self.transmit(&all, power_mw)?.symbols,
        })
    }

    /// Backpropagates per-symbol gradients `symbol_grads[k] = ∂J/∂x_k` of some
    /// objective `J` through the normalization and the network.
    pub fn backward_symbols(
        &self,
        batch: &TxBatch,
        symbol_grads: &[ComplexSymbol],
    ) -> Result<ParameterGradient> {
        if symbol_grads.len() != batch.len() {
            return Err(Error::DimensionMismatch {
                expected: batch.len(),
                actual: symbol_grads.len(),
            });
        }
        // x_k = s·u_k with s = sqrt(P·B / S), S = Σ|u|², so
        // ∂J/∂u_j = s·(g_j − u_j·(Σ_k g_k·u_k) / S).
        let coupling: f64 = symbol_grads
            .iter()
            .zip(&batch.raw)
            .map(|(g, u)| g.re * u.re + g.im * u.im)
            .sum::<f64>()
            / batch.raw_energy;
        let mut grad = ParameterGradient::zeros_like(&self.net);
        for ((tape, &g), &u) in batch.tapes.iter().zip(symbol_grads).zip(&batch.raw) {
            let up = (g - u * coupling) * batch.scale;
            if up.re == 0.0 && up.im == 0.0 {
                continue;
            }
            self.net.backward_accumulate(tape, &[up.re, up.im], 1.0, &mut grad)?;
        }
        Ok(grad)
    }

    /// `∇_τ Σ_k weights_k · log π_τ(x̃_k | m_k)` for a transmitted batch.
    ///
    /// With `weights_k = l̂_k / B` this is the mini-batch policy gradient.
    pub fn policy_gradient(
        &self,
        batch: &TxBatch,
        perturbed: &[ComplexSymbol],
        weights: &[f64],
        policy: &ExplorationPolicy,
    ) -> Result<ParameterGradient> {
        if perturbed.len() != batch.len() || weights.len() != batch.len() {
            return Err(Error::DimensionMismatch {
                expected: batch.len(),
                actual: perturbed.len().min(weights.len()),
            });
        }
        let grads = perturbed
            .iter()
            .zip(&batch.symbols)
            .zip(weights)
            .map(|((&xt, &x), &w)| Ok(policy.score_wrt_symbol(xt, x)? * w))
            .collect::<Result<Vec<_>>>()?;
        self.backward_symbols(batch, &grads)
    }

    /// Score `∇_τ log π_τ(x̃ | m_k)` of sample `k` of a batch.
    pub fn log_policy_gradient(
        &self,
        batch: &TxBatch,
        k: usize,
        x_tilde: ComplexSymbol,
        policy: &ExplorationPolicy,
    ) -> Result<ParameterGradient> {
        if k >= batch.len() {
            return Err(Error::DimensionMismatch {
                expected: batch.len(),
                actual: k + 1,
            });
        }
        let mut grads = vec![Complex64::new(0.0, 0.0); batch.len()];
        grads[k] = policy.score_wrt_symbol(x_tilde, batch.symbols[k])?;
        self.backward_symbols(batch, &grads)
    }

    /// Jacobians of every normalized constellation point with respect to the
    /// transmitter parameters.
    pub fn constellation_jacobian(&self, power_mw: f64) -> Result<ConstellationJacobian> {
        let all: Vec<usize> = (0..self.messages()).collect();
        let batch = self.transmit(&all, power_mw)?;
        let zero = Complex64::new(0.0, 0.0);
        let mut rows = Vec::with_capacity(all.len());
        for m in 0..all.len() {
            let mut pair = [Vec::new(), Vec::new()];
            for (c, unit) in [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)].into_iter().enumerate() {
                let mut grads = vec![zero; all.len()];
                grads[m] = unit;
                pair[c] = self.backward_symbols(&batch, &grads)?.to_flat();
            }
            rows.push(pair);
        }
        let gram = rows
            .iter()
            .map(|[re, im]| {
                let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
                [[dot(re, re), dot(re, im)], [dot(im, re), dot(im, im)]]
            })
            .collect();
        Ok(ConstellationJacobian {
            constellation: Constellation {
                points: batch.symbols,
            },
            rows,
            gram,
        })
    }
}

/// `∂x_m/∂τ` for every message `m` of a frozen transmitter.
///
/// With the constellation fixed, the score of a perturbed symbol is linear in
/// the perturbation: `∇_τ log π(x̃|m) = J_mᵀ · 2(x̃ − x_m)/σ_p²`.
#[derive(Debug, Clone)]
pub struct ConstellationJacobian {
    pub constellation: Constellation,
    /// `rows[m] = [∂Re x_m/∂τ, ∂Im x_m/∂τ]`, flat parameter order.
    pub rows: Vec<[Vec<f64>; 2]>,
    /// `gram[m] = J_m J_mᵀ` (2×2).
    pub gram: Vec<[[f64; 2]; 2]>,
}

impl ConstellationJacobian {
    pub fn parameter_count(&self) -> usize {
        self.rows.first().map_or(0, |r| r[0].len())
    }

    /// `J_mᵀ v` for a symbol-space vector `v`.
    pub fn pull_back(&self, m: usize, v: ComplexSymbol) -> Vec<f64> {
        let [re, im] = &self.rows[m];
        re.iter().zip(im).map(|(a, b)| v.re * a + v.im * b).collect()
    }

    /// `‖J_mᵀ v‖²`.
    pub fn pulled_norm_sqr(&self, m: usize, v: ComplexSymbol) -> f64 {
        let g = &self.gram[m];
        v.re * v.re * g[0][0] + 2.0 * v.re * v.im * g[0][1] + v.im * v.im * g[1][1]
    }

    pub fn score(&self, m: usize, x_tilde: ComplexSymbol, policy: &ExplorationPolicy) -> Result<Vec<f64>> {
        let v = policy.score_wrt_symbol(x_tilde, self.constellation.points[m])?;
        Ok(self.pull_back(m, v))
    }

    /// Closed-form Fisher trace `E‖∇ log π‖² = (2/σ_p²)·(1/M) Σ_m tr(J_m J_mᵀ)`
    /// for uniformly drawn messages.
    pub fn fisher_trace(&self, policy: &ExplorationPolicy) -> Result<f64> {
        policy.check()?;
        let mean_trace = self.gram.iter().map(|g| g[0][0] + g[1][1]).sum::<f64>() / self.gram.len() as f64;
        Ok(2.0 / policy.sigma_p_sq() * mean_trace)
    }
}

/// Receiver network `2 → 50 → 50 → M` (ReLU, ReLU, softmax).
#[derive(Debug, Clone, PartialEq)]
pub struct Receiver {
    net: DenseNetwork,
}

impl Receiver {
    pub fn new<R: Rng + ?Sized>(messages: usize, rng: &mut R) -> Result<Self> {
        let net = DenseNetwork::glorot(
            &[2, RX_HIDDEN, RX_HIDDEN, messages],
            &[Activation::Relu, Activation::Relu, Activation::Softmax],
            rng,
        )?;
        Self::from_network(net)
    }

    pub fn from_network(net: DenseNetwork) -> Result<Self> {
        if net.input_dim() != 2 {
            return Err(Error::InvalidNetwork(format!(
                "receiver must take 2 inputs, takes {}",
                net.input_dim()
            )));
        }
        if net.layers().last().map(|l| l.activation) != Some(Activation::Softmax) {
            return Err(Error::InvalidNetwork("receiver must end in a softmax layer".into()));
        }
        Ok(Self { net })
    }

    pub fn messages(&self) -> usize {
        self.net.output_dim()
    }

    pub fn network(&self) -> &DenseNetwork {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut DenseNetwork {
        &mut self.net
    }

    pub fn into_network(self) -> DenseNetwork {
        self.net
    }

    /// Posterior probability vector for a channel observation.
    pub fn posterior(&self, y: ComplexSymbol) -> Result<Vec<f64>> {
        self.net.predict(&[y.re, y.im])
    }

    /// Estimated message `argmax_m q_m`.
    pub fn decide(&self, y: ComplexSymbol) -> Result<usize> {
        Ok(argmax(&self.posterior(y)?))
    }

    pub fn forward(&self, y: ComplexSymbol) -> Result<Tape> {
        self.net.forward(&[y.re, y.im])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::DenseLayer;
    use crate::rng::{stream, Stream};
    use rand::Rng;

    fn tx(seed: u64) -> Transmitter {
        Transmitter::new(DEFAULT_MESSAGES, &mut stream(seed, Stream::TransmitterInit)).unwrap()
    }

    fn constant_tx(c: f64) -> Transmitter {
        let mut last = DenseLayer::zeros(4, 2, Activation::Linear);
        last.biases = vec![c, 0.0];
        let net = DenseNetwork::from_layers(vec![DenseLayer::zeros(3, 4, Activation::Relu), last]).unwrap();
        Transmitter::from_network(net).unwrap()
    }

    #[test]
    fn normalization_forces_unit_power() {
        let t = constant_tx(-2.5);
        let batch = t.transmit(&[0, 1, 2, 1], 1.0).unwrap();
        for x in &batch.symbols {
            assert!((x.re + 1.0).abs() < 1e-15 && x.im == 0.0);
        }
        let t = constant_tx(3.0);
        for x in t.transmit(&[0, 2], 1.0).unwrap().symbols {
            assert!((x - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn zero_power_batch_is_an_error() {
        let t = constant_tx(0.0);
        assert!(matches!(t.transmit(&[0, 1], 1.0), Err(Error::ZeroPowerBatch)));
        assert!(matches!(t.transmit(&[], 1.0), Err(Error::EmptyInput)));
    }

    #[test]
    fn random_batch_meets_power_constraint() {
        let t = tx(1);
        let mut rng = stream(1, Stream::Messages);
        let messages: Vec<usize> = (0..64).map(|_| rng.random_range(0..16)).collect();
        let batch = t.transmit(&messages, 0.5).unwrap();
        assert!((batch.mean_power() - 0.5).abs() < 1e-9);
        let c = t.constellation(0.5).unwrap();
        assert!((c.mean_power() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn disabled_exploration_is_identity() {
        let mut rng = stream(2, Stream::Exploration);
        let xs = vec![Complex64::new(0.1, 0.2), Complex64::new(-0.3, 0.0)];
        assert_eq!(ExplorationPolicy::disabled().perturb(&xs, &mut rng), xs);
        assert!(ExplorationPolicy::new(0.0).is_err());
        assert!(ExplorationPolicy::disabled()
            .score_wrt_symbol(xs[0], xs[1])
            .is_err());
    }

    #[test]
    fn exploration_moments() {
        let policy = ExplorationPolicy::new(2e-4).unwrap();
        let mut rng = stream(3, Stream::Exploration);
        let n = 1_000_000;
        let w = policy.perturb(&vec![Complex64::new(0.0, 0.0); n], &mut rng);
        let power = w.iter().map(|v| v.norm_sqr()).sum::<f64>() / n as f64;
        assert!((power / 2e-4 - 1.0).abs() < 0.01);
        // Neighbouring draws are uncorrelated.
        let cross = w.windows(2).map(|p| p[0].re * p[1].re).sum::<f64>() / (n - 1) as f64;
        assert!((cross / 1e-4).abs() < 0.01);
    }

    #[test]
    fn unperturbed_symbol_has_zero_score() {
        let t = tx(4);
        let batch = t.transmit(&[3, 7, 7, 1], 0.3).unwrap();
        let policy = ExplorationPolicy::new(3e-4).unwrap();
        let g = t.log_policy_gradient(&batch, 2, batch.symbols[2], &policy).unwrap();
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn log_policy_gradient_matches_finite_differences() {
        // Perturb τ, renormalize the batch, re-evaluate log π at fixed x̃.
        let t = tx(5);
        let power = 0.4;
        let messages = [2, 9, 2, 14, 0];
        let policy = ExplorationPolicy::new(power * 1e-3).unwrap();
        let batch = t.transmit(&messages, power).unwrap();
        let mut rng = stream(5, Stream::Exploration);
        let perturbed = policy.perturb(&batch.symbols, &mut rng);
        let k = 1;
        let analytic = t.log_policy_gradient(&batch, k, perturbed[k], &policy).unwrap().to_flat();
        let base = t.network().parameters();
        let h = 1e-6;
        let log_pi = |params: &[f64]| {
            let mut net = t.network().clone();
            net.set_parameters(params).unwrap();
            let tt = Transmitter::from_network(net).unwrap();
            let b = tt.transmit(&messages, power).unwrap();
            policy.log_density(perturbed[k], b.symbols[k]).unwrap()
        };
        let mut checked = 0;
        for i in (0..base.len()).step_by(7) {
            let mut up = base.clone();
            up[i] += h;
            let mut dn = base.clone();
            dn[i] -= h;
            let fd = (log_pi(&up) - log_pi(&dn)) / (2.0 * h);
            let a = analytic[i];
            if fd.abs().max(a.abs()) < 1e-3 {
                assert!((fd - a).abs() < 1e-4, "param {i}: {fd} vs {a}");
                continue;
            }
            assert!((fd - a).abs() / fd.abs().max(a.abs()) < 1e-4, "param {i}: {fd} vs {a}");
            checked += 1;
        }
        assert!(checked > 20);
    }

    #[test]
    fn constellation_jacobian_matches_batch_backprop() {
        let t = tx(6);
        let policy = ExplorationPolicy::new(1e-3).unwrap();
        let jac = t.constellation_jacobian(1.0).unwrap();
        let all: Vec<usize> = (0..16).collect();
        let batch = t.transmit(&all, 1.0).unwrap();
        let x_tilde = batch.symbols[5] + Complex64::new(0.01, -0.02);
        let direct = t.log_policy_gradient(&batch, 5, x_tilde, &policy).unwrap().to_flat();
        let via = jac.score(5, x_tilde, &policy).unwrap();
        for (a, b) in direct.iter().zip(&via) {
            assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
        }
        let v = policy.score_wrt_symbol(x_tilde, batch.symbols[5]).unwrap();
        let norm_sq: f64 = via.iter().map(|x| x * x).sum();
        assert!((jac.pulled_norm_sqr(5, v) / norm_sq - 1.0).abs() < 1e-10);
    }

    #[test]
    fn zero_receiver_is_uniform_and_decides_first_message() {
        let net = DenseNetwork::zeros(&[2, 5, 16], &[Activation::Relu, Activation::Softmax]).unwrap();
        let rx = Receiver::from_network(net).unwrap();
        let q = rx.posterior(Complex64::new(0.3, -1.0)).unwrap();
        assert!(q.iter().all(|&v| (v - 1.0 / 16.0).abs() < 1e-15));
        assert_eq!(rx.decide(Complex64::new(0.3, -1.0)).unwrap(), 0);
        assert!((cross_entropy(&q, 3) - 16f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn receiver_posterior_is_a_distribution() {
        let rx = Receiver::new(16, &mut stream(7, Stream::ReceiverInit)).unwrap();
        let mut rng = stream(7, Stream::Channel);
        for _ in 0..100 {
            let y = Complex64::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let q = rx.posterior(y).unwrap();
            assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(q.iter().all(|&v| v > 0.0 && v <= 1.0));
        }
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn constellation_csv() {
        let c = Constellation {
            points: vec![Complex64::new(1.0, 0.0), Complex64::new(-0.5, 0.25)],
        };
        let mut out = Vec::new();
        c.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "message_index,re,im\n1,1,0\n2,-0.5,0.25\n");
    }
}
