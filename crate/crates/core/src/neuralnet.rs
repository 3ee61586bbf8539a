//! Dense feed-forward networks with hand-written backpropagation and Adam.
//!
//! Networks are small (tens of units per layer), so everything is plain
//! row-major `Vec<f64>` storage and per-sample loops. A forward pass returns a
//! [`Tape`] with the per-layer inputs and pre-activations; [`DenseNetwork::backward`]
//! consumes it to produce a [`ParameterGradient`] shaped like the network.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Element-wise (or, for softmax, vector-wise) output nonlinearity of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
    Softmax,
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

fn activate(activation: Activation, pre: &[f64]) -> Vec<f64> {
    match activation {
        Activation::Relu => pre.iter().map(|&z| z.max(0.0)).collect(),
        Activation::Linear => pre.to_vec(),
        Activation::Softmax => softmax(pre),
    }
}

/// A single affine layer `activation(W x + b)`.
///
/// `weights` is row-major with shape `(out_dim, in_dim)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl DenseLayer {
    /// All-zero layer.
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
            weights: vec![0.0; in_dim * out_dim],
            biases: vec![0.0; out_dim],
        }
    }

    /// Glorot-uniform weights in `±sqrt(6 / (in + out))`, zero biases.
    pub fn glorot<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite Glorot limit");
        let weights = (0..in_dim * out_dim).map(|_| dist.sample(rng)).collect();
        Self {
            in_dim,
            out_dim,
            activation,
            weights,
            biases: vec![0.0; out_dim],
        }
    }

    fn pre_activation(&self, input: &[f64]) -> Vec<f64> {
        self.biases
            .iter()
            .enumerate()
            .map(|(o, &b)| {
                let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
                row.iter().zip(input).fold(b, |acc, (&w, &x)| acc + w * x)
            })
            .collect()
    }

    fn parameter_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

/// Gradient (or moment buffer) of a single layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGradient {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// A vector in parameter space, laid out exactly like a [`DenseNetwork`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParameterGradient {
    pub layers: Vec<LayerGradient>,
}

impl ParameterGradient {
    /// Zero vector shaped like `net`.
    pub fn zeros_like(net: &DenseNetwork) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: vec![0.0; l.weights.len()],
                    biases: vec![0.0; l.biases.len()],
                })
                .collect(),
        }
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()))
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    pub fn len(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flattened copy, layer by layer, weights (row-major) before biases.
    pub fn to_flat(&self) -> Vec<f64> {
        self.values().copied().collect()
    }

    /// Builds a gradient shaped like `net` from a flat vector.
    pub fn from_flat(net: &DenseNetwork, flat: &[f64]) -> Result<Self> {
        let mut grad = Self::zeros_like(net);
        if flat.len() != grad.len() {
            return Err(Error::DimensionMismatch {
                expected: grad.len(),
                actual: flat.len(),
            });
        }
        for (dst, &src) in grad.values_mut().zip(flat) {
            *dst = src;
        }
        Ok(grad)
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.values_mut() {
            *v *= factor;
        }
    }

    /// `self += factor * other`.
    pub fn add_scaled(&mut self, other: &ParameterGradient, factor: f64) {
        assert_eq!(self.len(), other.len(), "gradient shapes differ");
        for (a, &b) in self.values_mut().zip(other.values()) {
            *a += factor * b;
        }
    }

    pub fn dot(&self, other: &ParameterGradient) -> f64 {
        self.values().zip(other.values()).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    fn shape_matches(&self, net: &DenseNetwork) -> bool {
        self.layers.len() == net.layers.len()
            && self.layers.iter().zip(&net.layers).all(|(g, l)| {
                g.weights.len() == l.weights.len() && g.biases.len() == l.biases.len()
            })
    }
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid Adam config {self:?}")))
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moment accumulators. Empty until the first step.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub first: ParameterGradient,
    pub second: ParameterGradient,
}

/// Cached intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    revision: u64,
    dims: Vec<(usize, usize)>,
    /// Input fed to each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn input(&self) -> &[f64] {
        &self.inputs[0]
    }
}

/// Multi-layer perceptron with its optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNetwork {
    layers: Vec<DenseLayer>,
    adam: AdamState,
    /// Bumped on every parameter mutation; tapes remember it.
    revision: u64,
}

impl DenseNetwork {
    /// Builds a network from explicit layers, checking that dimensions chain
    /// and softmax only appears last.
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        validate_layers(&layers)?;
        Ok(Self {
            layers,
            adam: AdamState::default(),
            revision: 0,
        })
    }

    /// Glorot-initialized network with layer widths `widths` and one
    /// activation per affine layer.
    pub fn glorot<R: Rng + ?Sized>(
        widths: &[usize],
        activations: &[Activation],
        rng: &mut R,
    ) -> Result<Self> {
        check_widths(widths, activations)?;
        let layers = widths
            .windows(2)
            .zip(activations)
            .map(|(w, &a)| DenseLayer::glorot(w[0], w[1], a, rng))
            .collect();
        Self::from_layers(layers)
    }

    /// Network with every weight and bias zero.
    pub fn zeros(widths: &[usize], activations: &[Activation]) -> Result<Self> {
        check_widths(widths, activations)?;
        let layers = widths
            .windows(2)
            .zip(activations)
            .map(|(w, &a)| DenseLayer::zeros(w[0], w[1], a))
            .collect();
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    /// Mutable access to one layer. Invalidates outstanding tapes.
    pub fn layer_mut(&mut self, index: usize) -> &mut DenseLayer {
        self.revision += 1;
        &mut self.layers[index]
    }

    pub fn adam_state(&self) -> &AdamState {
        &self.adam
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::parameter_count).sum()
    }

    /// Flattened parameters in [`ParameterGradient::to_flat`] order.
    pub fn parameters(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()).copied())
            .collect()
    }

    pub fn set_parameters(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.parameter_count() {
            return Err(Error::DimensionMismatch {
                expected: self.parameter_count(),
                actual: flat.len(),
            });
        }
        let mut it = flat.iter();
        for layer in &mut self.layers {
            for v in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
                *v = *it.next().expect("length checked");
            }
        }
        self.revision += 1;
        Ok(())
    }

    /// Hash of the exact parameter bits.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for layer in &self.layers {
            for v in layer.weights.iter().chain(&layer.biases) {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    /// Evaluates the network without recording a tape.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        for layer in &self.layers {
            x = activate(layer.activation, &layer.pre_activation(&x));
        }
        Ok(x)
    }

    /// Evaluates the network and records everything `backward` needs.
    pub fn forward(&self, input: &[f64]) -> Result<Tape> {
        self.check_input(input)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = input.to_vec();
        for layer in &self.layers {
            let z = layer.pre_activation(&x);
            let next = activate(layer.activation, &z);
            inputs.push(x);
            pre.push(z);
            x = next;
        }
        Ok(Tape {
            revision: self.revision,
            dims: self.dims(),
            inputs,
            pre,
            output: x,
        })
    }

    /// Gradient of a scalar objective given its gradient with respect to the
    /// network output.
    pub fn backward(&self, tape: &Tape, output_grad: &[f64]) -> Result<ParameterGradient> {
        let mut grad = ParameterGradient::zeros_like(self);
        self.backward_accumulate(tape, output_grad, 1.0, &mut grad)?;
        Ok(grad)
    }

    /// Like [`backward`](Self::backward) but with the gradient given with
    /// respect to the final pre-activation (logits for a softmax layer).
    pub fn backward_from_logits(
        &self,
        tape: &Tape,
        logit_grad: &[f64],
    ) -> Result<ParameterGradient> {
        let mut grad = ParameterGradient::zeros_like(self);
        self.backward_logits_accumulate(tape, logit_grad, 1.0, &mut grad)?;
        Ok(grad)
    }

    /// `grad += scale * d(objective)/d(params)` given `d(objective)/d(output)`.
    pub fn backward_accumulate(
        &self,
        tape: &Tape,
        output_grad: &[f64],
        scale: f64,
        grad: &mut ParameterGradient,
    ) -> Result<()> {
        self.check_tape(tape, grad)?;
        if output_grad.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                actual: output_grad.len(),
            });
        }
        let last = self.layers.len() - 1;
        let delta = activation_backward(
            self.layers[last].activation,
            &tape.pre[last],
            &tape.output,
            output_grad,
        );
        self.propagate(tape, delta, scale, grad);
        Ok(())
    }

    /// `grad += scale * d(objective)/d(params)` given `d(objective)/d(logits)`.
    pub fn backward_logits_accumulate(
        &self,
        tape: &Tape,
        logit_grad: &[f64],
        scale: f64,
        grad: &mut ParameterGradient,
    ) -> Result<()> {
        self.check_tape(tape, grad)?;
        if logit_grad.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                actual: logit_grad.len(),
            });
        }
        self.propagate(tape, logit_grad.to_vec(), scale, grad);
        Ok(())
    }

    /// Applies one Adam update `θ ← θ − α m̂ / (sqrt(v̂) + ε)`.
    pub fn adam_step(&mut self, grad: &ParameterGradient, cfg: &AdamConfig) -> Result<()> {
        cfg.validate()?;
        if !grad.shape_matches(self) {
            return Err(Error::DimensionMismatch {
                expected: self.parameter_count(),
                actual: grad.len(),
            });
        }
        if !grad.is_finite() {
            return Err(Error::NonFiniteGradient);
        }
        if self.adam.step == 0 || !self.adam.first.shape_matches(self) {
            self.adam = AdamState {
                step: 0,
                first: ParameterGradient::zeros_like(self),
                second: ParameterGradient::zeros_like(self),
            };
        }
        self.adam.step += 1;
        let t = self.adam.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let AdamState { first, second, .. } = &mut self.adam;
        for (((layer, g), m), v) in self
            .layers
            .iter_mut()
            .zip(&grad.layers)
            .zip(&mut first.layers)
            .zip(&mut second.layers)
        {
            let params = layer.weights.iter_mut().chain(layer.biases.iter_mut());
            let grads = g.weights.iter().chain(&g.biases);
            let ms = m.weights.iter_mut().chain(m.biases.iter_mut());
            let vs = v.weights.iter_mut().chain(v.biases.iter_mut());
            for (((p, &g), m), v) in params.zip(grads).zip(ms).zip(vs) {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        }
        self.revision += 1;
        if !self.parameters().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("network parameters after Adam step"));
        }
        Ok(())
    }

    /// Serializes to the checkpoint JSON document.
    pub fn to_json(&self) -> Result<String> {
        let doc = NetworkDoc {
            layers: self.layers.clone(),
            adam: (self.adam.step > 0).then(|| self.adam.clone()),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: NetworkDoc = serde_json::from_str(text)?;
        for layer in &doc.layers {
            if layer.weights.len() != layer.in_dim * layer.out_dim
                || layer.biases.len() != layer.out_dim
            {
                return Err(Error::InvalidNetwork(format!(
                    "layer {}x{} has {} weights and {} biases",
                    layer.out_dim,
                    layer.in_dim,
                    layer.weights.len(),
                    layer.biases.len()
                )));
            }
        }
        let mut net = Self::from_layers(doc.layers)?;
        if let Some(adam) = doc.adam {
            if !adam.first.shape_matches(&net) || !adam.second.shape_matches(&net) {
                return Err(Error::InvalidNetwork(
                    "Adam state does not match the parameter shape".into(),
                ));
            }
            net.adam = adam;
        }
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn dims(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| (l.in_dim, l.out_dim)).collect()
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: input.len(),
            });
        }
        Ok(())
    }

    fn check_tape(&self, tape: &Tape, grad: &ParameterGradient) -> Result<()> {
        if tape.revision != self.revision || tape.dims != self.dims() {
            return Err(Error::TapeMismatch);
        }
        if !grad.shape_matches(self) {
            return Err(Error::DimensionMismatch {
                expected: self.parameter_count(),
                actual: grad.len(),
            });
        }
        Ok(())
    }

    /// Backpropagates `delta` (gradient at the last pre-activation).
    fn propagate(
        &self,
        tape: &Tape,
        mut delta: Vec<f64>,
        scale: f64,
        grad: &mut ParameterGradient,
    ) {
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &tape.inputs[i];
            let g = &mut grad.layers[i];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let sd = scale * d;
                g.biases[o] += sd;
                let row = &mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (w, &x) in row.iter_mut().zip(input) {
                    *w += sd * x;
                }
            }
            if i == 0 {
                break;
            }
            let mut upstream = vec![0.0; layer.in_dim];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (u, &w) in upstream.iter_mut().zip(row) {
                    *u += d * w;
                }
            }
            let below = &self.layers[i - 1];
            delta = activation_backward(below.activation, &tape.pre[i - 1], input, &upstream);
        }
    }
}

/// Maps a gradient at a layer's output to its pre-activation.
fn activation_backward(activation: Activation, pre: &[f64], out: &[f64], grad: &[f64]) -> Vec<f64> {
    match activation {
        Activation::Relu => pre
            .iter()
            .zip(grad)
            .map(|(&z, &g)| if z > 0.0 { g } else { 0.0 })
            .collect(),
        Activation::Linear => grad.to_vec(),
        Activation::Softmax => {
            let dot: f64 = out.iter().zip(grad).map(|(q, g)| q * g).sum();
            out.iter().zip(grad).map(|(&q, &g)| q * (g - dot)).collect()
        }
    }
}

fn check_widths(widths: &[usize], activations: &[Activation]) -> Result<()> {
    if widths.len() < 2 || activations.len() != widths.len() - 1 {
        return Err(Error::InvalidNetwork(format!(
            "{} widths need {} activations, got {}",
            widths.len(),
            widths.len().saturating_sub(1),
            activations.len()
        )));
    }
    Ok(())
}

fn validate_layers(layers: &[DenseLayer]) -> Result<()> {
    if layers.is_empty() {
        return Err(Error::InvalidNetwork("network has no layers".into()));
    }
    for (i, layer) in layers.iter().enumerate() {
        if layer.in_dim == 0 || layer.out_dim == 0 {
            return Err(Error::InvalidNetwork(format!("layer {i} has a zero dimension")));
        }
        if layer.activation == Activation::Softmax && i + 1 != layers.len() {
            return Err(Error::InvalidNetwork(format!(
                "softmax only allowed on the final layer, found on layer {i}"
            )));
        }
    }
    for (i, pair) in layers.windows(2).enumerate() {
        if pair[0].out_dim != pair[1].in_dim {
            return Err(Error::InvalidNetwork(format!(
                "layer {i} outputs {} values but layer {} expects {}",
                pair[0].out_dim,
                i + 1,
                pair[1].in_dim
            )));
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDoc {
    layers: Vec<DenseLayer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    adam: Option<AdamState>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use proptest::prelude::*;

    fn small_net(seed: u64, widths: &[usize], last: Activation) -> DenseNetwork {
        let mut rng = stream(seed, Stream::TransmitterInit);
        let mut acts = vec![Activation::Relu; widths.len() - 2];
        acts.push(last);
        let mut net = DenseNetwork::glorot(widths, &acts, &mut rng).unwrap();
        // Nonzero biases so that the bias gradients are exercised too.
        let n = net.parameter_count();
        let mut p = net.parameters();
        for (i, v) in p.iter_mut().enumerate() {
            *v += 0.01 * ((i * 7919 % 13) as f64 - 6.0) / (n as f64).sqrt();
        }
        net.set_parameters(&p).unwrap();
        net
    }

    #[test]
    fn zero_network_gives_zero_output() {
        let net = DenseNetwork::zeros(&[3, 4, 2], &[Activation::Relu, Activation::Linear]).unwrap();
        assert_eq!(net.predict(&[1.0, -2.0, 5.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn equal_logits_give_uniform_softmax() {
        let net = DenseNetwork::zeros(&[2, 16], &[Activation::Softmax]).unwrap();
        let out = net.predict(&[0.3, -0.7]).unwrap();
        for q in out {
            assert!((q - 1.0 / 16.0).abs() < 1e-15);
        }
    }

    #[test]
    fn hand_evaluated_two_layer_relu() {
        // Layer 1: W = [[1, 2], [-1, 0.5], [0.5, -3]], b = [0.1, 0.2, -0.3], ReLU
        // Layer 2: W = [[1, -1, 2], [0.5, 0.5, 0.5]], b = [0, 1], linear
        // x = (1, 0): z1 = (1.1, -0.8, 0.2) -> h = (1.1, 0, 0.2)
        // z2 = (1.1 + 0.4, 0.55 + 0.1 + 1) = (1.5, 1.65)
        let l1 = DenseLayer {
            in_dim: 2,
            out_dim: 3,
            activation: Activation::Relu,
            weights: vec![1.0, 2.0, -1.0, 0.5, 0.5, -3.0],
            biases: vec![0.1, 0.2, -0.3],
        };
        let l2 = DenseLayer {
            in_dim: 3,
            out_dim: 2,
            activation: Activation::Linear,
            weights: vec![1.0, -1.0, 2.0, 0.5, 0.5, 0.5],
            biases: vec![0.0, 1.0],
        };
        let net = DenseNetwork::from_layers(vec![l1, l2]).unwrap();
        let tape = net.forward(&[1.0, 0.0]).unwrap();
        assert!((tape.output()[0] - 1.5).abs() < 1e-12);
        assert!((tape.output()[1] - 1.65).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_shapes() {
        let net = DenseNetwork::zeros(&[3, 2], &[Activation::Linear]).unwrap();
        assert!(matches!(
            net.forward(&[1.0]),
            Err(Error::DimensionMismatch { expected: 3, actual: 1 })
        ));
        assert!(DenseNetwork::zeros(&[3, 2, 2], &[Activation::Softmax, Activation::Linear]).is_err());
        let l1 = DenseLayer::zeros(3, 4, Activation::Relu);
        let l2 = DenseLayer::zeros(5, 2, Activation::Linear);
        assert!(DenseNetwork::from_layers(vec![l1, l2]).is_err());
    }

    #[test]
    fn stale_tape_is_rejected() {
        let mut net = small_net(1, &[2, 3, 2], Activation::Linear);
        let tape = net.forward(&[0.5, 0.5]).unwrap();
        let g = net.backward(&tape, &[1.0, 0.0]).unwrap();
        net.adam_step(&g, &AdamConfig::default()).unwrap();
        assert!(matches!(net.backward(&tape, &[1.0, 0.0]), Err(Error::TapeMismatch)));
        let other = small_net(2, &[2, 4, 2], Activation::Linear);
        assert!(matches!(other.backward(&tape, &[1.0, 0.0]), Err(Error::TapeMismatch)));
    }

    #[test]
    fn zero_output_grad_gives_zero_gradient() {
        let net = small_net(3, &[4, 5, 3], Activation::Softmax);
        let tape = net.forward(&[0.1, 0.2, -0.3, 0.4]).unwrap();
        let g = net.backward(&tape, &[0.0; 3]).unwrap();
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn softmax_cross_entropy_logit_gradient_is_q_minus_onehot() {
        let net = small_net(4, &[3, 6], Activation::Softmax);
        let tape = net.forward(&[0.3, -1.2, 0.8]).unwrap();
        let q = tape.output().to_vec();
        let m = 2;
        // d(-log q_m)/dq = -e_m / q_m through the softmax Jacobian.
        let mut out_grad = vec![0.0; 6];
        out_grad[m] = -1.0 / q[m];
        let via_softmax = net.backward(&tape, &out_grad).unwrap();
        let mut logit_grad = q.clone();
        logit_grad[m] -= 1.0;
        let via_logits = net.backward_from_logits(&tape, &logit_grad).unwrap();
        for (a, b) in via_softmax.to_flat().iter().zip(via_logits.to_flat()) {
            assert!((a - b).abs() < 1e-12);
        }
        // The logit gradient itself, checked by finite differences on the logits.
        let logits = tape.pre.last().unwrap().clone();
        for j in 0..6 {
            let h = 1e-6;
            let mut up = logits.clone();
            up[j] += h;
            let mut dn = logits.clone();
            dn[j] -= h;
            let fd = (-softmax(&up)[m].ln() + softmax(&dn)[m].ln()) / (2.0 * h);
            assert!((fd - logit_grad[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        let mut net = small_net(5, &[2, 3, 2], Activation::Linear);
        let before = net.parameters();
        let grad = ParameterGradient::from_flat(&net, &vec![0.37; before.len()]).unwrap();
        let cfg = AdamConfig::new(0.01);
        net.adam_step(&grad, &cfg).unwrap();
        // m̂ = g, v̂ = g², so the step is lr * g / (|g| + eps).
        let expected = 0.01 * 0.37 / (0.37 + 1e-8);
        for (a, b) in before.iter().zip(net.parameters()) {
            assert!(((a - b) - expected).abs() < 1e-15);
        }
        assert_eq!(net.adam_state().step, 1);
    }

    #[test]
    fn zero_gradient_first_step_is_a_no_op() {
        let mut net = small_net(6, &[2, 3, 2], Activation::Linear);
        let before = net.parameters();
        let grad = ParameterGradient::zeros_like(&net);
        net.adam_step(&grad, &AdamConfig::default()).unwrap();
        assert_eq!(before, net.parameters());
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut net = small_net(7, &[2, 2], Activation::Linear);
        let mut grad = ParameterGradient::zeros_like(&net);
        grad.layers[0].weights[1] = f64::NAN;
        assert!(matches!(
            net.adam_step(&grad, &AdamConfig::default()),
            Err(Error::NonFiniteGradient)
        ));
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut net = small_net(8, &[3, 4, 2], Activation::Linear);
            for k in 0..5 {
                let tape = net.forward(&[k as f64, 1.0, -0.5]).unwrap();
                let g = net.backward(&tape, &[1.0, -2.0]).unwrap();
                net.adam_step(&g, &AdamConfig::default()).unwrap();
            }
            net.parameters()
        };
        let a: Vec<u64> = run().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = run().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn json_round_trip_keeps_parameters_and_adam_state() {
        let mut net = small_net(9, &[3, 4, 5], Activation::Softmax);
        let tape = net.forward(&[1.0, 2.0, 3.0]).unwrap();
        let g = net.backward(&tape, &[1.0, 0.0, 0.0, 0.0, -1.0]).unwrap();
        net.adam_step(&g, &AdamConfig::default()).unwrap();
        let back = DenseNetwork::from_json(&net.to_json().unwrap()).unwrap();
        assert_eq!(back.layers(), net.layers());
        assert_eq!(back.adam_state(), net.adam_state());
        assert!(DenseNetwork::from_json(r#"{"layers":[{"in_dim":2,"out_dim":1,"activation":"linear","weights":[1.0],"biases":[0.0]}]}"#).is_err());
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(logits in proptest::collection::vec(-50.0f64..50.0, 1..32)) {
            let q = softmax(&logits);
            let sum: f64 = q.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(q.iter().all(|&v| v > 0.0 && v <= 1.0));
        }
    }
}
