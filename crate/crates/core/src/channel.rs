//! Turbulent free-space optical channel.
//!
//! Intensity scintillation is log-normal with unit mean. Its log-amplitude
//! follows a stationary AR(1) process sampled once per fading block, and the
//! variance tracks the (possibly still settling) refractive-index structure
//! constant through the plane-wave Rytov variance. Receiver noise is additive
//! and independent of the optical signal, so dark '0' slots look the same at
//! every turbulence level.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modem::SampleStream;
use crate::rng::substream_seed;

/// Weakest turbulence the chamber produced, m^(-2/3).
pub const CN2_LOW: f64 = 4.8e-16;
/// Strongest turbulence the chamber produced, m^(-2/3).
pub const CN2_HIGH: f64 = 5.0e-14;
pub const N_LEVELS: usize = 6;
pub const DEFAULT_WAVELENGTH: f64 = 1.55e-6;
pub const DEFAULT_PATH_LENGTH: f64 = 172.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurbulenceLevel {
    pub level: u8,
    pub cn2: f64,
}

impl TurbulenceLevel {
    pub fn preset(level: u8) -> Result<Self> {
        Ok(Self {
            level,
            cn2: level_to_cn2(level)?,
        })
    }
}

/// Plane-wave Rytov variance 1.23 Cn2 k^(7/6) L^(11/6).
pub fn rytov_variance(cn2: f64, wavelength: f64, path_length: f64) -> f64 {
    let k = 2.0 * PI / wavelength;
    1.23 * cn2 * k.powf(7.0 / 6.0) * path_length.powf(11.0 / 6.0)
}

/// Geometric spacing of the six levels across the chamber's Cn2 range.
pub fn level_to_cn2(level: u8) -> Result<f64> {
    if level as usize >= N_LEVELS {
        return Err(Error::param(format!("turbulence level {level} outside 0..=5")));
    }
    let frac = level as f64 / (N_LEVELS - 1) as f64;
    Ok(CN2_LOW * (CN2_HIGH / CN2_LOW).powf(frac))
}

/// Exponential settling of Cn2 after the turbulence sources change.
pub fn transient_cn2(t: f64, cn2_init: f64, cn2_target: f64, tau_s: f64) -> f64 {
    cn2_target + (cn2_init - cn2_target) * (-t / tau_s).exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transient {
    pub cn2_init: f64,
    pub cn2_target: f64,
    /// Settling time constant, seconds.
    pub tau_s: f64,
}

impl Transient {
    pub fn cn2_at(&self, t: f64) -> f64 {
        transient_cn2(t, self.cn2_init, self.cn2_target, self.tau_s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub wavelength: f64,
    pub path_length: f64,
    /// Steady-state scintillation index.
    pub scint_index: f64,
    /// Fading correlation time, seconds.
    pub corr_time: f64,
    /// Samples sharing one fading gain.
    pub fading_block: usize,
    pub awgn_sigma: f64,
    pub background_offset: f64,
    pub tx_gain: f64,
    /// When present, the scintillation index at time t is
    /// `scint_index * cn2(t) / cn2_target`.
    pub transient: Option<Transient>,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            wavelength: DEFAULT_WAVELENGTH,
            path_length: DEFAULT_PATH_LENGTH,
            scint_index: 0.0,
            corr_time: 1e-3,
            fading_block: 4000,
            awgn_sigma: 0.0,
            background_offset: 0.0,
            tx_gain: 1.0,
            transient: None,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scint_index >= 0.0) {
            return Err(Error::param("scint_index must be non-negative"));
        }
        if !(self.corr_time > 0.0) {
            return Err(Error::param("corr_time must be positive"));
        }
        if self.fading_block == 0 {
            return Err(Error::param("fading_block must be at least 1"));
        }
        if !(self.awgn_sigma >= 0.0) {
            return Err(Error::param("awgn_sigma must be non-negative"));
        }
        if !(self.wavelength > 0.0) || !(self.path_length >= 0.0) {
            return Err(Error::param("wavelength must be positive, path_length non-negative"));
        }
        if let Some(tr) = &self.transient {
            if !(tr.tau_s > 0.0) {
                return Err(Error::param("transient tau_s must be positive"));
            }
            if !(tr.cn2_target > 0.0) || !(tr.cn2_init >= 0.0) {
                return Err(Error::param("transient Cn2 values must be positive"));
            }
        }
        Ok(())
    }

    /// Scintillation index in effect at absolute time `t` seconds.
    pub fn scint_index_at(&self, t: f64) -> f64 {
        match &self.transient {
            Some(tr) => self.scint_index * tr.cn2_at(t) / tr.cn2_target,
            None => self.scint_index,
        }
    }
}

/// Log-normal fading gains, one per block. The log-gain is
/// `-v/2 + sqrt(v) U` with `v = ln(1 + scint)` and `U` a unit-variance AR(1)
/// process started in its stationary distribution.
#[derive(Clone, Debug)]
pub struct FadingProcess {
    rng: ChaCha8Rng,
    rho: f64,
    innovation: f64,
    unit: f64,
}

impl FadingProcess {
    pub fn new(corr_time: f64, block_duration: f64, seed: u64) -> Self {
        let rho = (-block_duration / corr_time).exp();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unit: f64 = StandardNormal.sample(&mut rng);
        Self {
            rng,
            rho,
            innovation: (1.0 - rho * rho).sqrt(),
            unit,
        }
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Log-gain for the current block, then advances the AR(1) state.
    pub fn next_log_gain(&mut self, scint_index: f64) -> f64 {
        let var = scint_index.ln_1p();
        let z = -0.5 * var + var.sqrt() * self.unit;
        let eps: f64 = StandardNormal.sample(&mut self.rng);
        self.unit = self.rho * self.unit + self.innovation * eps;
        z
    }

    pub fn next_gain(&mut self, scint_index: f64) -> f64 {
        if scint_index == 0.0 {
            // Keep the AR(1) draws aligned with the non-degenerate case.
            self.next_log_gain(0.0);
            return 1.0;
        }
        self.next_log_gain(scint_index).exp()
    }
}

/// `n` fading gains, each held for `block` samples.
pub fn scintillation_series(
    n: usize,
    scint_index: f64,
    corr_time: f64,
    dt: f64,
    block: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if n == 0 || block == 0 {
        return Err(Error::param("n and block must be at least 1"));
    }
    if !(scint_index >= 0.0) || !(corr_time > 0.0) {
        return Err(Error::param("scint_index must be >= 0 and corr_time > 0"));
    }
    let mut fading = FadingProcess::new(corr_time, block as f64 * dt, seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let g = fading.next_gain(scint_index);
        let take = block.min(n - out.len());
        out.extend(std::iter::repeat_n(g, take));
    }
    Ok(out)
}

/// Stateful channel for processing a long stream in consecutive chunks.
/// Chunking does not change the output.
#[derive(Clone, Debug)]
pub struct ChannelSim {
    cfg: ChannelConfig,
    dt: f64,
    t0: f64,
    k: u64,
    fading: FadingProcess,
    noise_rng: ChaCha8Rng,
    gain: f64,
    left_in_block: usize,
}

impl ChannelSim {
    pub fn new(cfg: &ChannelConfig, sample_rate: f64, t0: f64, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if !(sample_rate > 0.0) {
            return Err(Error::param("sample_rate must be positive"));
        }
        let dt = 1.0 / sample_rate;
        Ok(Self {
            cfg: cfg.clone(),
            dt,
            t0,
            k: 0,
            fading: FadingProcess::new(
                cfg.corr_time,
                cfg.fading_block as f64 * dt,
                substream_seed(seed, &[0xFADE]),
            ),
            noise_rng: ChaCha8Rng::seed_from_u64(substream_seed(seed, &[0x0A5E])),
            gain: 1.0,
            left_in_block: 0,
        })
    }

    /// Time of the next sample to be processed.
    pub fn time(&self) -> f64 {
        self.t0 + self.k as f64 * self.dt
    }

    pub fn process_in_place(&mut self, buf: &mut [f32]) {
        let tx_gain = self.cfg.tx_gain;
        let offset = self.cfg.background_offset;
        let sigma = self.cfg.awgn_sigma;
        for x in buf.iter_mut() {
            if self.left_in_block == 0 {
                let scint = self.cfg.scint_index_at(self.time());
                self.gain = self.fading.next_gain(scint);
                self.left_in_block = self.cfg.fading_block;
            }
            let mut y = tx_gain * self.gain * *x as f64 + offset;
            if sigma > 0.0 {
                let n: f64 = StandardNormal.sample(&mut self.noise_rng);
                y += sigma * n;
            }
            *x = y as f32;
            self.left_in_block -= 1;
            self.k += 1;
        }
    }
}

/// Sends `tx` through the channel starting at absolute time `t0`.
pub fn apply_channel(tx: &SampleStream, cfg: &ChannelConfig, t0: f64, seed: u64) -> Result<SampleStream> {
    let mut sim = ChannelSim::new(cfg, tx.sample_rate, t0, seed)?;
    let mut samples = tx.samples.clone();
    sim.process_in_place(&mut samples);
    SampleStream::new(samples, tx.sample_rate, tx.samples_per_bit)
}
