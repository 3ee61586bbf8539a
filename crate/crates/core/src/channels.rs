//! Forward channels (AWGN and nonlinear phase noise) and the binary symmetric
//! feedback channel.
//!
//! Powers are carried in mW. The nonlinear phase-noise recursion takes the
//! nonlinearity coefficient in rad/W/km, so `|x|²` is converted to W inside
//! the phase term.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Channel input/output sample; `|x|²` in mW.
pub type ComplexSymbol = Complex64;

pub const MW_TO_W: f64 = 1e-3;

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// Draws circularly-symmetric complex Gaussian noise with total variance
/// `variance` (each real component gets `variance / 2`).
pub fn complex_gaussian<R: Rng + ?Sized>(variance: f64, rng: &mut R) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(s * re, s * im)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelFamily {
    Awgn,
    Nlpn,
}

fn default_sigma_sq() -> f64 {
    ChannelConfig::REFERENCE_SIGMA_SQ_DBM
}
fn default_gamma() -> f64 {
    1.27
}
fn default_length() -> f64 {
    5000.0
}
fn default_segments() -> usize {
    50
}

/// Channel parameters as they appear in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub family: ChannelFamily,
    /// Noise power σ² in dBm.
    #[serde(default = "default_sigma_sq")]
    pub sigma_sq_dbm: f64,
    /// Nonlinearity coefficient in rad/W/km (ignored for AWGN).
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Link length in km (ignored for AWGN).
    #[serde(rename = "L_km", default = "default_length")]
    pub length_km: f64,
    /// Number of recursion segments (ignored for AWGN).
    #[serde(rename = "K", default = "default_segments")]
    pub segments: usize,
    /// Signal power P in dBm.
    #[serde(rename = "P_dbm")]
    pub p_dbm: f64,
}

impl ChannelConfig {
    /// Reference noise power for both channels.
    pub const REFERENCE_SIGMA_SQ_DBM: f64 = -21.3;

    pub fn awgn(p_dbm: f64, sigma_sq_dbm: f64) -> Self {
        Self {
            family: ChannelFamily::Awgn,
            sigma_sq_dbm,
            gamma: default_gamma(),
            length_km: default_length(),
            segments: default_segments(),
            p_dbm,
        }
    }

    /// AWGN channel at the reference noise power operated at `snr_db`.
    pub fn awgn_at_snr(snr_db: f64) -> Self {
        Self::awgn(Self::REFERENCE_SIGMA_SQ_DBM + snr_db, Self::REFERENCE_SIGMA_SQ_DBM)
    }

    /// Nonlinear phase-noise channel with the reference link
    /// (5000 km, 1.27 rad/W/km, 50 segments, −21.3 dBm noise).
    pub fn nlpn(p_dbm: f64) -> Self {
        Self {
            family: ChannelFamily::Nlpn,
            ..Self::awgn(p_dbm, Self::REFERENCE_SIGMA_SQ_DBM)
        }
    }

    pub fn with_p_dbm(&self, p_dbm: f64) -> Self {
        Self {
            p_dbm,
            ..self.clone()
        }
    }

    pub fn snr_db(&self) -> f64 {
        self.p_dbm - self.sigma_sq_dbm
    }

    pub fn noise_power_mw(&self) -> f64 {
        dbm_to_mw(self.sigma_sq_dbm)
    }

    pub fn signal_power_mw(&self) -> f64 {
        dbm_to_mw(self.p_dbm)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.p_dbm.is_finite() || self.sigma_sq_dbm.is_nan() || self.sigma_sq_dbm == f64::INFINITY {
            return Err(Error::InvalidConfig(format!(
                "channel powers must be finite (P_dbm = {}, sigma_sq_dbm = {})",
                self.p_dbm, self.sigma_sq_dbm
            )));
        }
        if self.family == ChannelFamily::Nlpn {
            if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
                return Err(Error::InvalidConfig(format!("gamma must be >= 0, got {}", self.gamma)));
            }
            if !(self.length_km > 0.0 && self.length_km.is_finite()) {
                return Err(Error::InvalidConfig(format!("L_km must be > 0, got {}", self.length_km)));
            }
            if self.segments == 0 {
                return Err(Error::InvalidConfig("K must be >= 1".into()));
            }
        }
        Ok(())
    }

    /// Builds the sampling model.
    pub fn model(&self) -> Result<ChannelModel> {
        self.validate()?;
        Ok(match self.family {
            ChannelFamily::Awgn => ChannelModel::Awgn(Awgn::new(self.noise_power_mw())),
            ChannelFamily::Nlpn => ChannelModel::Nlpn(Nlpn {
                noise_power: self.noise_power_mw(),
                gamma: self.gamma,
                length_km: self.length_km,
                segments: self.segments,
            }),
        })
    }
}

/// `y = x + n`, `n ~ CN(0, σ²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Awgn {
    /// σ² in mW.
    pub noise_power: f64,
}

impl Awgn {
    pub fn new(noise_power: f64) -> Self {
        Self { noise_power }
    }

    pub fn apply<R: Rng + ?Sized>(&self, x: ComplexSymbol, rng: &mut R) -> ComplexSymbol {
        if self.noise_power == 0.0 {
            return x;
        }
        x + complex_gaussian(self.noise_power, rng)
    }
}

/// K-step recursion `x ← x·exp(j·L·γ·|x|²/K) + n`, `n ~ CN(0, σ²/K)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nlpn {
    /// σ² in mW, split evenly over the segments.
    pub noise_power: f64,
    /// rad/W/km.
    pub gamma: f64,
    pub length_km: f64,
    pub segments: usize,
}

impl Nlpn {
    pub fn apply<R: Rng + ?Sized>(&self, x: ComplexSymbol, rng: &mut R) -> ComplexSymbol {
        let k = self.segments as f64;
        let phase_per_w = self.length_km * self.gamma / k;
        let step_noise = self.noise_power / k;
        let mut x = x;
        for _ in 0..self.segments {
            let phase = phase_per_w * x.norm_sqr() * MW_TO_W;
            x *= Complex64::from_polar(1.0, phase);
            if step_noise > 0.0 {
                x += complex_gaussian(step_noise, rng);
            }
        }
        x
    }
}

/// A memoryless forward channel `p(y|x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChannelModel {
    Awgn(Awgn),
    Nlpn(Nlpn),
}

impl ChannelModel {
    pub fn apply<R: Rng + ?Sized>(&self, x: ComplexSymbol, rng: &mut R) -> ComplexSymbol {
        match self {
            ChannelModel::Awgn(c) => c.apply(x, rng),
            ChannelModel::Nlpn(c) => c.apply(x, rng),
        }
    }

    pub fn noise_power(&self) -> f64 {
        match self {
            ChannelModel::Awgn(c) => c.noise_power,
            ChannelModel::Nlpn(c) => c.noise_power,
        }
    }

    /// Copy of the channel with a different noise power (`0` gives a noiseless channel).
    pub fn with_noise_power(&self, noise_power: f64) -> Self {
        match *self {
            ChannelModel::Awgn(_) => ChannelModel::Awgn(Awgn::new(noise_power)),
            ChannelModel::Nlpn(c) => ChannelModel::Nlpn(Nlpn { noise_power, ..c }),
        }
    }
}

/// Binary symmetric channel parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BscConfig {
    pub flip_prob: f64,
}

impl BscConfig {
    pub fn new(flip_prob: f64) -> Result<Self> {
        let cfg = Self { flip_prob };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if (0.0..=0.5).contains(&self.flip_prob) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "flip probability must lie in [0, 0.5], got {}",
                self.flip_prob
            )))
        }
    }

    /// Flips each bit independently with probability `flip_prob`.
    pub fn transmit<R: Rng + ?Sized>(&self, bits: &[bool], rng: &mut R) -> Vec<bool> {
        bits.iter()
            .map(|&b| b ^ (self.flip_prob > 0.0 && rng.random_bool(self.flip_prob)))
            .collect()
    }
}

impl Default for BscConfig {
    fn default() -> Self {
        Self { flip_prob: 0.0 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn reference_noise_power_in_mw() {
        let cfg = ChannelConfig::nlpn(-3.0);
        assert!((cfg.noise_power_mw() - 7.413_102_413e-3).abs() < 1e-11);
        assert_eq!(cfg.snr_db(), -3.0 - -21.3);
        let awgn = ChannelConfig::awgn_at_snr(15.0);
        assert!((awgn.p_dbm - -6.3).abs() < 1e-12);
    }

    #[test]
    fn noiseless_awgn_is_identity() {
        let mut rng = stream(1, Stream::Channel);
        let x = Complex64::new(0.3, -0.2);
        assert_eq!(Awgn::new(0.0).apply(x, &mut rng), x);
    }

    #[test]
    fn awgn_noise_power_matches() {
        let mut rng = stream(2, Stream::Channel);
        let ch = Awgn::new(dbm_to_mw(-21.3));
        let n = 1_000_000;
        let x = Complex64::new(0.1, 0.2);
        let mean_sq: f64 = (0..n).map(|_| (ch.apply(x, &mut rng) - x).norm_sqr()).sum::<f64>() / n as f64;
        assert!((mean_sq / ch.noise_power - 1.0).abs() < 0.01);
    }

    #[test]
    fn noiseless_single_segment_rotates_by_l_gamma_power() {
        let mut rng = stream(3, Stream::Channel);
        let ch = Nlpn {
            noise_power: 0.0,
            gamma: 1.27,
            length_km: 5000.0,
            segments: 1,
        };
        let x = Complex64::from_polar(0.7, 0.4);
        let y = ch.apply(x, &mut rng);
        assert!((y.norm() - 0.7).abs() < 1e-12);
        let expected = 0.4 + 5000.0 * 1.27 * 0.49 * 1e-3;
        let diff = (y * Complex64::from_polar(1.0, -expected)).arg();
        assert!(diff.abs() < 1e-12);
    }

    #[test]
    fn noiseless_two_segment_recursion_by_hand() {
        // x = 1 (1 mW): each segment rotates by 5000 * 1.27 * 1e-3 / 2 = 3.175 rad,
        // |x| stays 1, so the output is exp(j * 6.35).
        let mut rng = stream(4, Stream::Channel);
        let ch = Nlpn {
            noise_power: 0.0,
            gamma: 1.27,
            length_km: 5000.0,
            segments: 2,
        };
        let y = ch.apply(Complex64::new(1.0, 0.0), &mut rng);
        assert!((y.re - 6.35f64.cos()).abs() < 1e-12);
        assert!((y.im - 6.35f64.sin()).abs() < 1e-12);
    }

    #[test]
    fn bsc_identity_at_zero() {
        let mut rng = stream(5, Stream::Feedback);
        let bits: Vec<bool> = (0..100).map(|i| i % 3 == 0).collect();
        assert_eq!(BscConfig::new(0.0).unwrap().transmit(&bits, &mut rng), bits);
        assert!(BscConfig::new(0.6).is_err());
        assert!(BscConfig::new(-0.1).is_err());
    }

    #[test]
    fn bsc_flip_rates() {
        for (p, tol) in [(0.5, 0.002), (0.1, 0.001)] {
            let mut rng = stream(6, Stream::Feedback);
            let bits = vec![false; 1_000_000];
            let out = BscConfig::new(p).unwrap().transmit(&bits, &mut rng);
            let rate = out.iter().filter(|&&b| b).count() as f64 / bits.len() as f64;
            assert!((rate - p).abs() < tol, "p = {p}: rate {rate}");
        }
    }

    #[test]
    fn invalid_nlpn_config() {
        let mut cfg = ChannelConfig::nlpn(0.0);
        cfg.segments = 0;
        assert!(cfg.model().is_err());
        cfg.segments = 10;
        cfg.gamma = -1.0;
        assert!(cfg.model().is_err());
    }
}
