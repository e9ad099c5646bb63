//! Link presets: the per-level turbulence table plus the noise, gain and
//! timing parameters shared by every level.
//!
//! Presets load from TOML:
//!
//! ```toml
//! name = "custom"
//! corr_time = 1e-9          # fading correlation time, s
//! fading_block = 1          # samples per held gain
//! awgn_sigma = 0.005
//! background_offset = 0.0
//! tx_gain = 1.0
//! stabilization_s = 0.0     # default delay before the first capture
//! level_cn2 = [4.8e-16, 1.2e-15, 3.1e-15, 7.7e-15, 2.0e-14, 5.0e-14]  # optional
//! scint_index = [0.001, 0.002, 0.004, 0.01, 0.02, 0.04]              # optional
//!
//! [transient]               # optional; level 0 never ramps
//! init_fraction = 0.25
//! tau_s = 1.0
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::{
    level_to_cn2, rytov_variance, ChannelConfig, Transient, DEFAULT_PATH_LENGTH, DEFAULT_WAVELENGTH, N_LEVELS,
};
use crate::error::{Error, Result};

/// Turbulence ramp after the sources are switched on: each level starts at
/// `init_fraction` of its target Cn2 and relaxes with time constant `tau_s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransientPreset {
    pub init_fraction: f64,
    pub tau_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkPreset {
    pub name: String,
    pub wavelength: f64,
    pub path_length: f64,
    /// Cn2 per level; geometric between the chamber limits when absent.
    pub level_cn2: Option<Vec<f64>>,
    /// Scintillation index per level; the Rytov variance of `level_cn2` when
    /// absent.
    pub scint_index: Option<Vec<f64>>,
    pub corr_time: f64,
    pub fading_block: usize,
    pub awgn_sigma: f64,
    pub background_offset: f64,
    pub tx_gain: f64,
    pub stabilization_s: f64,
    pub transient: Option<TransientPreset>,
}

impl Default for LinkPreset {
    fn default() -> Self {
        Self::immediate()
    }
}

pub const PRESET_NAMES: [&str; 2] = ["immediate", "stabilized"];

impl LinkPreset {
    /// Captures start as soon as the turbulence sources are switched on.
    pub fn immediate() -> Self {
        Self {
            name: "immediate".into(),
            wavelength: DEFAULT_WAVELENGTH,
            path_length: DEFAULT_PATH_LENGTH,
            level_cn2: None,
            scint_index: None,
            // Fading decorrelates well within one 25 ns sample.
            corr_time: 1e-9,
            fading_block: 1,
            awgn_sigma: 0.005,
            background_offset: 0.0,
            tx_gain: 1.0,
            stabilization_s: 0.0,
            transient: Some(TransientPreset {
                init_fraction: 0.25,
                tau_s: 1.0,
            }),
        }
    }

    /// Ten minutes of settling before the first capture, at reduced
    /// transmit power.
    pub fn stabilized() -> Self {
        Self {
            name: "stabilized".into(),
            tx_gain: 0.5,
            stabilization_s: 600.0,
            ..Self::immediate()
        }
    }

    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "immediate" => Ok(Self::immediate()),
            "stabilized" => Ok(Self::stabilized()),
            other => Err(Error::param(format!(
                "unknown preset '{other}' (expected one of {PRESET_NAMES:?} or a .toml path)"
            ))),
        }
    }

    /// A built-in name, or a path to a TOML file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if name_or_path.ends_with(".toml") {
            Self::load(Path::new(name_or_path))
        } else {
            Self::builtin(name_or_path)
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let p: Self = toml::from_str(text).map_err(|e| Error::parse("preset", e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        for (key, table) in [("level_cn2", &self.level_cn2), ("scint_index", &self.scint_index)] {
            if let Some(t) = table {
                if t.len() != N_LEVELS {
                    return Err(Error::param(format!("{key} needs {N_LEVELS} entries, got {}", t.len())));
                }
                if t.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                    return Err(Error::param(format!("{key} entries must be finite and >= 0")));
                }
            }
        }
        if let Some(t) = &self.level_cn2 {
            if t.contains(&0.0) && self.transient.is_some() {
                return Err(Error::param("a transient needs positive Cn2 at every level"));
            }
        }
        if !(self.stabilization_s >= 0.0) {
            return Err(Error::param("stabilization_s must be >= 0"));
        }
        if !(self.tx_gain >= 0.0) || !self.tx_gain.is_finite() {
            return Err(Error::param("tx_gain must be finite and >= 0"));
        }
        if let Some(tr) = &self.transient {
            if !(tr.init_fraction >= 0.0) || !(tr.tau_s > 0.0) {
                return Err(Error::param("transient needs init_fraction >= 0 and tau_s > 0"));
            }
        }
        for level in 0..N_LEVELS as u8 {
            self.channel_for_level(level)?.validate()?;
        }
        Ok(())
    }

    pub fn cn2(&self, level: u8) -> Result<f64> {
        match &self.level_cn2 {
            Some(t) => t
                .get(level as usize)
                .copied()
                .ok_or_else(|| Error::param(format!("level {level} outside 0..{N_LEVELS}"))),
            None => level_to_cn2(level),
        }
    }

    /// Steady-state scintillation index of a level.
    pub fn scint_index(&self, level: u8) -> Result<f64> {
        let cn2 = self.cn2(level)?;
        Ok(match &self.scint_index {
            Some(t) => t[level as usize],
            None => rytov_variance(cn2, self.wavelength, self.path_length),
        })
    }

    pub fn channel_for_level(&self, level: u8) -> Result<ChannelConfig> {
        let cn2 = self.cn2(level)?;
        let transient = match &self.transient {
            Some(tr) if level > 0 => Some(Transient {
                cn2_init: tr.init_fraction * cn2,
                cn2_target: cn2,
                tau_s: tr.tau_s,
            }),
            _ => None,
        };
        Ok(ChannelConfig {
            wavelength: self.wavelength,
            path_length: self.path_length,
            scint_index: self.scint_index(level)?,
            corr_time: self.corr_time,
            fading_block: self.fading_block,
            awgn_sigma: self.awgn_sigma,
            background_offset: self.background_offset,
            tx_gain: self.tx_gain,
            transient,
        })
    }
}
