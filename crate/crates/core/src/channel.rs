//! Sum-of-sinusoids Rayleigh fading, AWGN, per-slot block fading and equalization.
//!
//! A realization draws, for each of `M` paths, Gaussian attenuations `A_m`, `B_m`
//! and uniform angles `alpha_m`, `phi_m`, `psi_m`. Sample `n` is
//!
//! ```text
//! theta_m(n) = (2 pi f_D n T_s + psi_m) cos(alpha_m) + phi_m
//! h_n        = (1 / sqrt(M)) * sum_m [ A_m cos(theta_m(n)) + j B_m sin(theta_m(n)) ]
//! ```
//!
//! The per-path phase `psi_m` inside the Doppler term keeps the process wide-sense
//! stationary; the real part has autocorrelation `0.5 * J0(2 pi f_D tau T_s)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::codec::SymbolVector;
use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::stats::{bessel_j0, chi2_uniform};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SosConfig {
    pub paths: usize,
    pub doppler_hz: f64,
    pub sample_period: f64,
}

impl Default for SosConfig {
    /// 16 paths, normalized Doppler `f_D * T_s = 0.01`.
    fn default() -> Self {
        Self {
            paths: 16,
            doppler_hz: 10.0,
            sample_period: 1e-3,
        }
    }
}

impl SosConfig {
    pub fn normalized_doppler(&self) -> f64 {
        self.doppler_hz * self.sample_period
    }

    pub fn validate(&self) -> Result<()> {
        if self.paths == 0
            || self.doppler_hz.is_nan()
            || self.doppler_hz < 0.0
            || self.sample_period.is_nan()
            || self.sample_period <= 0.0
        {
            return Err(Error::Config(format!("invalid SOS configuration {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathParams {
    pub a: f64,
    pub b: f64,
    pub alpha: f64,
    pub phi: f64,
    pub psi: f64,
}

/// One fixed channel realization; cheap to evaluate at any sample index.
#[derive(Clone, Debug)]
pub struct SosChannel {
    config: SosConfig,
    paths: Vec<PathParams>,
}

impl SosChannel {
    pub fn new(config: SosConfig, realization_seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(realization_seed, &[0x505]);
        let angle = |rng: &mut crate::rng::SimRng| rng.random::<f64>() * 2.0 * PI - PI;
        let paths = (0..config.paths)
            .map(|_| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                PathParams {
                    a,
                    b,
                    alpha: angle(&mut rng),
                    phi: angle(&mut rng),
                    psi: angle(&mut rng),
                }
            })
            .collect();
        Ok(Self { config, paths })
    }

    pub fn config(&self) -> &SosConfig {
        &self.config
    }

    pub fn paths(&self) -> &[PathParams] {
        &self.paths
    }

    pub fn sample(&self, n: i64) -> Complex64 {
        let w = 2.0 * PI * self.config.doppler_hz * n as f64 * self.config.sample_period;
        let (mut re, mut im) = (0.0, 0.0);
        for p in &self.paths {
            let theta = (w + p.psi) * p.alpha.cos() + p.phi;
            let (s, c) = theta.sin_cos();
            re += p.a * c;
            im += p.b * s;
        }
        Complex64::new(re, im) / (self.paths.len() as f64).sqrt()
    }

    pub fn generate(&self, n_start: i64, count: usize) -> CsiSequence {
        CsiSequence {
            samples: (0..count).map(|i| self.sample(n_start + i as i64)).collect(),
            start_index: n_start,
            sample_period: self.config.sample_period,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsiSequence {
    pub samples: Vec<Complex64>,
    pub start_index: i64,
    pub sample_period: f64,
}

impl CsiSequence {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn amplitudes(&self) -> Vec<f64> {
        self.samples.iter().map(|h| h.norm()).collect()
    }
}

pub fn sos_generate(config: SosConfig, realization_seed: u64, n_start: i64, count: usize) -> Result<CsiSequence> {
    if count == 0 {
        return Err(Error::Empty("CSI request"));
    }
    Ok(SosChannel::new(config, realization_seed)?.generate(n_start, count))
}

/// Noise standard deviation for `SNR = P / sigma^2`.
pub fn noise_sigma_from_snr(snr_db: f64, power: f64) -> Result<f64> {
    if power.is_nan() || power <= 0.0 {
        return Err(Error::Config(format!("signal power must be positive, got {power}")));
    }
    Ok((power / 10f64.powf(snr_db / 10.0)).sqrt())
}

/// `count` i.i.d. `CN(0, sigma^2)` draws (variance `sigma^2 / 2` per real component).
pub fn complex_noise<R: Rng + ?Sized>(count: usize, sigma: f64, rng: &mut R) -> Vec<Complex64> {
    let s = sigma / 2f64.sqrt();
    (0..count)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re * s, im * s)
        })
        .collect()
}

/// `y = h_j x + n` with one coefficient per feature slot and the given noise realization.
pub fn apply_channel_with_noise(x: &SymbolVector, slot_csi: &[Complex64], noise: &[Complex64]) -> Result<SymbolVector> {
    if slot_csi.len() != x.num_slots() {
        return Err(Error::Length {
            what: "slot CSI",
            expected: x.num_slots(),
            actual: slot_csi.len(),
        });
    }
    if noise.len() != x.len() {
        return Err(Error::Length {
            what: "noise vector",
            expected: x.len(),
            actual: noise.len(),
        });
    }
    let slot = x.slot_len();
    let symbols = x
        .symbols()
        .iter()
        .zip(noise)
        .enumerate()
        .map(|(i, (s, n))| slot_csi[i / slot] * s + n)
        .collect();
    SymbolVector::new(symbols, slot)
}

/// Block-fading channel with freshly drawn `CN(0, sigma^2)` noise.
pub fn apply_channel<R: Rng + ?Sized>(
    x: &SymbolVector,
    slot_csi: &[Complex64],
    sigma: f64,
    rng: &mut R,
) -> Result<SymbolVector> {
    let noise = complex_noise(x.len(), sigma, rng);
    apply_channel_with_noise(x, slot_csi, &noise)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Equalizer {
    #[default]
    Mmse,
    ZeroForcing,
}

const ZF_FLOOR: f64 = 1e-6;

impl Equalizer {
    /// Per-slot complex weight `e` such that `x_hat = e * y`.
    pub fn weight(self, h: Complex64, sigma: f64) -> Complex64 {
        match self {
            Equalizer::Mmse => h.conj() / (h.norm_sqr() + sigma * sigma),
            Equalizer::ZeroForcing => {
                let mag = h.norm();
                let h = if mag < ZF_FLOOR {
                    if mag == 0.0 {
                        Complex64::new(ZF_FLOOR, 0.0)
                    } else {
                        h * (ZF_FLOOR / mag)
                    }
                } else {
                    h
                };
                h.inv()
            }
        }
    }
}

pub fn equalize(y: &SymbolVector, slot_csi: &[Complex64], sigma: f64, eq: Equalizer) -> Result<SymbolVector> {
    if slot_csi.len() != y.num_slots() {
        return Err(Error::Length {
            what: "slot CSI",
            expected: y.num_slots(),
            actual: slot_csi.len(),
        });
    }
    let weights: Vec<Complex64> = slot_csi.iter().map(|&h| eq.weight(h, sigma)).collect();
    let slot = y.slot_len();
    let symbols = y
        .symbols()
        .iter()
        .enumerate()
        .map(|(i, s)| weights[i / slot] * s)
        .collect();
    SymbolVector::new(symbols, slot)
}

/// How many samples feed each statistic of [`channel_stats`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsPlan {
    /// Independent realizations for the moment and phase statistics.
    pub realizations: usize,
    /// Consecutive samples drawn from each of those realizations.
    pub samples_per_realization: usize,
    /// Realizations averaged for the autocorrelation curve.
    pub autocorr_realizations: usize,
    /// Samples per autocorrelation realization.
    pub autocorr_len: usize,
    /// Largest lag reported; `None` picks a quarter of the coherence span `1/(f_D T_s)`.
    pub max_lag: Option<usize>,
    pub phase_bins: usize,
}

impl Default for StatsPlan {
    fn default() -> Self {
        Self {
            realizations: 100_000,
            samples_per_realization: 1,
            autocorr_realizations: 500,
            autocorr_len: 1_000,
            max_lag: None,
            phase_bins: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutocorrPoint {
    pub lag: usize,
    pub empirical: f64,
    pub theory: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub samples: usize,
    pub mean_power: f64,
    pub envelope_mean: f64,
    pub autocorr_curve: Vec<AutocorrPoint>,
    pub phase_hist: Vec<u64>,
    pub phase_chi2: f64,
    pub phase_p_value: f64,
}

impl ChannelStats {
    pub fn max_autocorr_deviation(&self) -> f64 {
        self.autocorr_curve
            .iter()
            .map(|p| (p.empirical - p.theory).abs())
            .fold(0.0, f64::max)
    }
}

/// Ensemble statistics of the generator. A single realization is not ergodic in
/// power (its time-average power is a chi-square draw), so moments are taken
/// across many independent realizations.
pub fn channel_stats(config: SosConfig, plan: &StatsPlan, seed: u64) -> Result<ChannelStats> {
    config.validate()?;
    if plan.realizations == 0 || plan.samples_per_realization == 0 || plan.phase_bins == 0 {
        return Err(Error::Config("statistics plan needs non-zero sample counts".into()));
    }
    let mut power = 0.0;
    let mut envelope = 0.0;
    let mut hist = vec![0u64; plan.phase_bins];
    for r in 0..plan.realizations {
        let ch = SosChannel::new(config, crate::rng::derive_seed(seed, &[1, r as u64]))?;
        for n in 0..plan.samples_per_realization {
            let h = ch.sample(n as i64);
            power += h.norm_sqr();
            envelope += h.norm();
            let u = (h.arg() + PI) / (2.0 * PI);
            let bin = ((u * plan.phase_bins as f64) as usize).min(plan.phase_bins - 1);
            hist[bin] += 1;
        }
    }
    let total = plan.realizations * plan.samples_per_realization;
    let (phase_chi2, phase_p_value) = chi2_uniform(&hist);

    let fd = config.normalized_doppler();
    let max_lag = plan.max_lag.unwrap_or_else(|| {
        if fd > 0.0 {
            ((1.0 / fd) / 4.0).floor() as usize
        } else {
            0
        }
    });
    let mut curve = Vec::new();
    if plan.autocorr_realizations > 0 && plan.autocorr_len > max_lag {
        let mut acc = vec![0.0; max_lag + 1];
        for r in 0..plan.autocorr_realizations {
            let ch = SosChannel::new(config, crate::rng::derive_seed(seed, &[2, r as u64]))?;
            let re: Vec<f64> = (0..plan.autocorr_len).map(|n| ch.sample(n as i64).re).collect();
            for (lag, a) in acc.iter_mut().enumerate() {
                let m = plan.autocorr_len - lag;
                *a += (0..m).map(|n| re[n] * re[n + lag]).sum::<f64>() / m as f64;
            }
        }
        curve = acc
            .into_iter()
            .enumerate()
            .map(|(lag, a)| AutocorrPoint {
                lag,
                empirical: a / plan.autocorr_realizations as f64,
                theory: 0.5 * bessel_j0(2.0 * PI * fd * lag as f64),
            })
            .collect();
    }
    Ok(ChannelStats {
        samples: total,
        mean_power: power / total as f64,
        envelope_mean: envelope / total as f64,
        autocorr_curve: curve,
        phase_hist: hist,
        phase_chi2,
        phase_p_value,
    })
}
