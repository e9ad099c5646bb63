//! Link-quality and classification metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modem::{bit_statistics, on_window_len, BitSequence, SampleStream};

/// Q-factor of a capture. `Saturated` marks noiseless rails where the
/// denominator vanishes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum QFactor {
    Finite(f64),
    Saturated,
}

impl QFactor {
    pub fn value(self) -> Option<f64> {
        match self {
            QFactor::Finite(q) => Some(q),
            QFactor::Saturated => None,
        }
    }
}

// Saturated Q serializes as JSON null.
impl Serialize for QFactor {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.value().serialize(s)
    }
}

impl<'de> Deserialize<'de> for QFactor {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(match Option::<f64>::deserialize(d)? {
            Some(q) => QFactor::Finite(q),
            None => QFactor::Saturated,
        })
    }
}

/// Flat per-capture link report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkMetrics {
    pub q: QFactor,
    pub ber: f64,
    pub bits: usize,
    pub scint_index_est: f64,
    pub level: u8,
    pub capture_id: u32,
}

pub fn ber_compute(rx_bits: &BitSequence, ref_bits: &BitSequence) -> Result<(f64, usize)> {
    if rx_bits.len() != ref_bits.len() {
        return Err(Error::LengthMismatch {
            left: rx_bits.len(),
            right: ref_bits.len(),
        });
    }
    if rx_bits.is_empty() {
        return Err(Error::param("cannot compute BER of empty sequences"));
    }
    let errors = rx_bits
        .bits()
        .iter()
        .zip(ref_bits.bits())
        .filter(|(a, b)| a != b)
        .count();
    Ok((errors as f64 / rx_bits.len() as f64, rx_bits.len()))
}

/// Mean and population variance.
fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// Splits per-bit on-window means by the ground-truth bit.
fn rails(rx: &SampleStream, ref_bits: &BitSequence, offset: usize, duty: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let stats = bit_statistics(rx, offset, duty, ref_bits.len())?;
    let mut zeros = Vec::with_capacity(stats.len() / 2 + 1);
    let mut ones = Vec::with_capacity(stats.len() / 2 + 1);
    for (s, &b) in stats.into_iter().zip(ref_bits.bits()) {
        if b == 1 {
            ones.push(s)
        } else {
            zeros.push(s)
        }
    }
    Ok((zeros, ones))
}

/// Q = (mu1 - mu0) / (sigma1 + sigma0) over on-window bit means, with
/// population standard deviations.
pub fn qfactor_estimate(rx: &SampleStream, ref_bits: &BitSequence, offset: usize, duty: f64) -> Result<QFactor> {
    let (zeros, ones) = rails(rx, ref_bits, offset, duty)?;
    for (bit, rail) in [(0u8, &zeros), (1u8, &ones)] {
        if rail.len() < 2 {
            return Err(Error::InsufficientBits {
                bit,
                needed: 2,
                found: rail.len(),
            });
        }
    }
    let (m0, v0) = moments(&zeros);
    let (m1, v1) = moments(&ones);
    let denom = v0.sqrt() + v1.sqrt();
    if denom == 0.0 {
        return Ok(QFactor::Saturated);
    }
    Ok(QFactor::Finite((m1 - m0) / denom))
}

/// Empirical scintillation index Var(m)/Mean(m)^2 over the on-window means of
/// '1' bits. When `awgn_sigma` is given, the additive-noise share
/// `sigma^2 / on_len` is removed from the variance first. Never negative.
pub fn scint_index_estimate(
    rx: &SampleStream,
    ref_bits: &BitSequence,
    offset: usize,
    duty: f64,
    awgn_sigma: Option<f64>,
) -> Result<f64> {
    let (_, ones) = rails(rx, ref_bits, offset, duty)?;
    if ones.len() < 100 {
        return Err(Error::InsufficientBits {
            bit: 1,
            needed: 100,
            found: ones.len(),
        });
    }
    let (mean, mut var) = moments(&ones);
    if let Some(sigma) = awgn_sigma {
        var -= sigma * sigma / on_window_len(rx.samples_per_bit, duty) as f64;
    }
    if mean == 0.0 {
        return Ok(0.0);
    }
    Ok((var / (mean * mean)).max(0.0))
}

fn check_labels(pred: &[u8], truth: &[u8], n_classes: usize) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::param("no labels to compare"));
    }
    if let Some(&bad) = pred.iter().chain(truth).find(|&&l| l as usize >= n_classes) {
        return Err(Error::LabelOutOfRange {
            label: bad as usize,
            n_classes,
        });
    }
    Ok(())
}

/// Counts indexed `[truth][predicted]`.
pub fn confusion_matrix(pred: &[u8], truth: &[u8], n_classes: usize) -> Result<Vec<Vec<u64>>> {
    check_labels(pred, truth, n_classes)?;
    let mut m = vec![vec![0u64; n_classes]; n_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        m[t as usize][p as usize] += 1;
    }
    Ok(m)
}

pub fn accuracy(pred: &[u8], truth: &[u8], n_classes: usize) -> Result<f64> {
    let m = confusion_matrix(pred, truth, n_classes)?;
    let diag: u64 = (0..n_classes).map(|i| m[i][i]).sum();
    Ok(diag as f64 / pred.len() as f64)
}
