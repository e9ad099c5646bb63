//! PRBS framing, RZ-OOK modulation and demodulation, frame synchronization.
//!
//! Bits are stored as `u8` values restricted to `{0, 1}`. Waveforms are `f32`
//! sample vectors in normalized detector volts; transmitter and receiver share
//! one sample clock, so no timing recovery is attempted.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Attached sync marker placed in front of every payload.
pub const SYNC_WORD: u32 = 0x1ACF_FC1D;
pub const SYNC_BITS: usize = 32;
pub const DEFAULT_PAYLOAD_BITS: usize = 2040;
pub const DEFAULT_REPETITIONS: usize = 2;
pub const DEFAULT_BIT_RATE: f64 = 5.0e6;
pub const DEFAULT_SAMPLES_PER_BIT: usize = 8;
pub const DEFAULT_DUTY: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitSequence {
    bits: Vec<u8>,
    header_len: usize,
    payload_len: usize,
}

impl BitSequence {
    /// Wraps an unframed bit vector. Every element must be 0 or 1.
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if let Some(pos) = bits.iter().position(|&b| b > 1) {
            return Err(Error::param(format!(
                "bit {pos} has value {}, expected 0 or 1",
                bits[pos]
            )));
        }
        let payload_len = bits.len();
        Ok(Self {
            bits,
            header_len: 0,
            payload_len,
        })
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn into_bits(self) -> Vec<u8> {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn header_len(&self) -> usize {
        self.header_len
    }

    pub fn payload_len(&self) -> usize {
        self.payload_len
    }

    /// Length of one `header ++ payload` frame. A sequence built from `r`
    /// repetitions has `r * frame_len()` bits.
    pub fn frame_len(&self) -> usize {
        self.header_len + self.payload_len
    }

    pub fn ones(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }
}

/// Fibonacci LFSR description. Taps are 1-based stage numbers; the highest
/// tap must equal `degree`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LfsrSpec {
    pub degree: u32,
    pub taps: Vec<u32>,
    pub seed: u32,
}

impl LfsrSpec {
    /// x^11 + x^9 + 1, all-ones seed. Period 2047.
    pub fn prbs11() -> Self {
        Self {
            degree: 11,
            taps: vec![11, 9],
            seed: 0x7FF,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(3..=31).contains(&self.degree) {
            return Err(Error::InvalidSpec(format!(
                "degree {} outside [3, 31]",
                self.degree
            )));
        }
        if self.taps.is_empty() || self.taps.iter().any(|&t| t == 0 || t > self.degree) {
            return Err(Error::InvalidSpec(format!(
                "taps {:?} must lie in [1, {}]",
                self.taps, self.degree
            )));
        }
        if !self.taps.contains(&self.degree) {
            return Err(Error::InvalidSpec(format!(
                "taps {:?} must include the degree {}",
                self.taps, self.degree
            )));
        }
        if self.seed & self.mask() == 0 {
            return Err(Error::InvalidSpec("seed must be nonzero".into()));
        }
        if self.seed & !self.mask() != 0 {
            return Err(Error::InvalidSpec(format!(
                "seed {:#x} wider than {} bits",
                self.seed, self.degree
            )));
        }
        Ok(())
    }

    fn mask(&self) -> u32 {
        (1u32 << self.degree) - 1
    }
}

/// Running LFSR. Stage `i` lives in bit `i - 1` of the state word; the output
/// is the last stage and feedback enters stage 1.
#[derive(Clone, Debug)]
pub struct Lfsr {
    state: u32,
    mask: u32,
    tap_mask: u32,
    out_shift: u32,
}

impl Lfsr {
    pub fn new(spec: &LfsrSpec) -> Result<Self> {
        spec.validate()?;
        let tap_mask = spec.taps.iter().fold(0u32, |m, &t| m | 1 << (t - 1));
        Ok(Self {
            state: spec.seed,
            mask: spec.mask(),
            tap_mask,
            out_shift: spec.degree - 1,
        })
    }

    pub fn state(&self) -> u32 {
        self.state
    }
}

impl Iterator for Lfsr {
    type Item = u8;

    fn next(&mut self) -> Option<u8> {
        let out = (self.state >> self.out_shift) & 1;
        let feedback = (self.state & self.tap_mask).count_ones() & 1;
        self.state = ((self.state << 1) | feedback) & self.mask;
        Some(out as u8)
    }
}

/// Generates `length` PRBS bits. Sequences longer than one period repeat
/// cyclically.
pub fn prbs_generate(spec: &LfsrSpec, length: usize) -> Result<BitSequence> {
    if length == 0 {
        return Err(Error::param("PRBS length must be at least 1"));
    }
    let bits = Lfsr::new(spec)?.take(length).collect();
    Ok(BitSequence {
        bits,
        header_len: 0,
        payload_len: length,
    })
}

/// The 32 sync bits, most significant first.
pub fn sync_bits(sync_word: u32) -> Vec<u8> {
    (0..SYNC_BITS)
        .rev()
        .map(|i| ((sync_word >> i) & 1) as u8)
        .collect()
}

/// `repetitions` copies of `sync_word ++ payload`.
pub fn frame_build(payload: &BitSequence, sync_word: u32, repetitions: usize) -> Result<BitSequence> {
    if repetitions == 0 {
        return Err(Error::param("repetitions must be at least 1"));
    }
    if payload.is_empty() {
        return Err(Error::param("payload is empty"));
    }
    let sync = sync_bits(sync_word);
    let mut bits = Vec::with_capacity(repetitions * (SYNC_BITS + payload.len()));
    for _ in 0..repetitions {
        bits.extend_from_slice(&sync);
        bits.extend_from_slice(payload.bits());
    }
    Ok(BitSequence {
        bits,
        header_len: SYNC_BITS,
        payload_len: payload.len(),
    })
}

/// The default transmitted frame: PRBS-11 payload of 2040 bits behind the
/// sync word, sent twice.
pub fn default_frame() -> BitSequence {
    let payload = prbs_generate(&LfsrSpec::prbs11(), DEFAULT_PAYLOAD_BITS).expect("valid preset");
    frame_build(&payload, SYNC_WORD, DEFAULT_REPETITIONS).expect("valid preset")
}

/// Line-coding parameters for RZ-OOK.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OokFormat {
    pub samples_per_bit: usize,
    /// Fraction of the bit slot a '1' pulse occupies.
    pub duty: f64,
    pub high_level: f32,
    pub bit_rate: f64,
}

impl Default for OokFormat {
    fn default() -> Self {
        Self {
            samples_per_bit: DEFAULT_SAMPLES_PER_BIT,
            duty: DEFAULT_DUTY,
            high_level: 1.0,
            bit_rate: DEFAULT_BIT_RATE,
        }
    }
}

impl OokFormat {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_bit < 2 {
            return Err(Error::param("samples_per_bit must be at least 2"));
        }
        if !(self.duty > 0.0 && self.duty <= 1.0) {
            return Err(Error::param(format!("duty {} outside (0, 1]", self.duty)));
        }
        if !(self.bit_rate > 0.0) {
            return Err(Error::param("bit_rate must be positive"));
        }
        Ok(())
    }

    pub fn on_len(&self) -> usize {
        on_window_len(self.samples_per_bit, self.duty)
    }

    pub fn sample_rate(&self) -> f64 {
        self.bit_rate * self.samples_per_bit as f64
    }
}

/// Number of leading samples in a bit slot that carry the pulse. Never zero.
pub fn on_window_len(samples_per_bit: usize, duty: f64) -> usize {
    ((duty * samples_per_bit as f64).round() as usize).clamp(1, samples_per_bit)
}

/// Uniformly sampled real waveform.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleStream {
    pub samples: Vec<f32>,
    pub sample_rate: f64,
    pub samples_per_bit: usize,
}

impl SampleStream {
    pub fn new(samples: Vec<f32>, sample_rate: f64, samples_per_bit: usize) -> Result<Self> {
        if samples_per_bit < 2 {
            return Err(Error::param("samples_per_bit must be at least 2"));
        }
        if !(sample_rate > 0.0) {
            return Err(Error::param("sample_rate must be positive"));
        }
        Ok(Self {
            samples,
            sample_rate,
            samples_per_bit,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn bit_rate(&self) -> f64 {
        self.sample_rate / self.samples_per_bit as f64
    }

    /// Whole bit slots available after `offset`.
    pub fn bits_after(&self, offset: usize) -> usize {
        self.samples.len().saturating_sub(offset) / self.samples_per_bit
    }
}

fn push_bit(out: &mut Vec<f32>, bit: u8, samples_per_bit: usize, on_len: usize, high: f32) {
    let level = if bit == 1 { high } else { 0.0 };
    out.extend(std::iter::repeat_n(level, on_len));
    out.extend(std::iter::repeat_n(0.0, samples_per_bit - on_len));
}

pub fn ook_modulate(bits: &BitSequence, fmt: &OokFormat) -> Result<SampleStream> {
    fmt.validate()?;
    let on_len = fmt.on_len();
    let mut samples = Vec::with_capacity(bits.len() * fmt.samples_per_bit);
    for &b in bits.bits() {
        push_bit(&mut samples, b, fmt.samples_per_bit, on_len, fmt.high_level);
    }
    SampleStream::new(samples, fmt.sample_rate(), fmt.samples_per_bit)
}

/// Endless transmitter output: the modulated frame repeated back to back,
/// starting at an arbitrary sample phase.
#[derive(Clone, Debug)]
pub struct RepeatingWaveform {
    period: Vec<f32>,
    pos: usize,
}

impl RepeatingWaveform {
    pub fn new(frame: &BitSequence, fmt: &OokFormat, start_phase: usize) -> Result<Self> {
        let period = ook_modulate(frame, fmt)?.samples;
        let pos = start_phase % period.len();
        Ok(Self { period, pos })
    }

    pub fn period_len(&self) -> usize {
        self.period.len()
    }

    pub fn fill(&mut self, out: &mut [f32]) {
        let mut written = 0;
        while written < out.len() {
            let take = (self.period.len() - self.pos).min(out.len() - written);
            out[written..written + take].copy_from_slice(&self.period[self.pos..self.pos + take]);
            written += take;
            self.pos = (self.pos + take) % self.period.len();
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyncOptions {
    pub duty: f64,
    /// Minimum normalized correlation accepted as a match.
    pub threshold: f64,
    /// Largest offset examined; `None` scans the whole stream.
    pub search_limit: Option<usize>,
}

impl Default for SyncOptions {
    fn default() -> Self {
        Self {
            duty: DEFAULT_DUTY,
            threshold: 0.5,
            search_limit: None,
        }
    }
}

/// Locates the first sync word by normalized cross-correlation against its
/// modulated template. Among offsets whose score is within 1e-9 of the peak,
/// the earliest wins.
pub fn sync_locate(rx: &SampleStream, sync_word: u32, opts: &SyncOptions) -> Result<usize> {
    let sps = rx.samples_per_bit;
    let on_len = on_window_len(sps, opts.duty);
    let sync = sync_bits(sync_word);
    let tlen = SYNC_BITS * sps;
    if rx.len() < tlen {
        return Err(Error::TooShort {
            needed: tlen,
            available: rx.len(),
        });
    }
    let last = match opts.search_limit {
        Some(limit) => limit.min(rx.len() - tlen),
        None => rx.len() - tlen,
    };

    // The template is 1 on pulse samples and 0 elsewhere; after removing its
    // mean m the numerator is S_on - m * S, so only prefix sums are needed.
    let n_on = sync.iter().filter(|&&b| b == 1).count() * on_len;
    let m = n_on as f64 / tlen as f64;
    let t_norm = (n_on as f64 * (1.0 - m).powi(2) + (tlen - n_on) as f64 * m * m).sqrt();
    let pulse_starts: Vec<usize> = sync
        .iter()
        .enumerate()
        .filter(|(_, &b)| b == 1)
        .map(|(i, _)| i * sps)
        .collect();

    let span = last + tlen;
    let mut p1 = Vec::with_capacity(span + 1);
    let mut p2 = Vec::with_capacity(span + 1);
    p1.push(0.0f64);
    p2.push(0.0f64);
    for &x in &rx.samples[..span] {
        let x = x as f64;
        p1.push(p1.last().unwrap() + x);
        p2.push(p2.last().unwrap() + x * x);
    }

    let scores = (0..=last).map(|tau| {
        let s = p1[tau + tlen] - p1[tau];
        let s2 = p2[tau + tlen] - p2[tau];
        let var = s2 - s * s / tlen as f64;
        if !(var > 1e-12 * s2.max(f64::MIN_POSITIVE)) {
            return 0.0;
        }
        let s_on: f64 = pulse_starts
            .iter()
            .map(|&st| p1[tau + st + on_len] - p1[tau + st])
            .sum();
        (s_on - m * s) / (t_norm * var.sqrt())
    });
    let scores: Vec<f64> = scores.collect();
    let peak = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(peak >= opts.threshold) {
        return Err(Error::SyncNotFound {
            peak: if peak.is_finite() { peak } else { 0.0 },
            threshold: opts.threshold,
        });
    }
    Ok(scores
        .iter()
        .position(|&s| s >= peak - 1e-9)
        .expect("peak is attained"))
}

/// Per-bit statistic: the mean of the on-window samples of each bit slot,
/// for `n_bits` slots starting at `offset`.
pub fn bit_statistics(rx: &SampleStream, offset: usize, duty: f64, n_bits: usize) -> Result<Vec<f64>> {
    let sps = rx.samples_per_bit;
    let needed = offset + n_bits * sps;
    if n_bits == 0 || rx.len() < needed {
        return Err(Error::TooShort {
            needed: needed.max(offset + sps),
            available: rx.len(),
        });
    }
    let on_len = on_window_len(sps, duty);
    Ok(rx.samples[offset..needed]
        .chunks_exact(sps)
        .map(|slot| slot[..on_len].iter().map(|&x| x as f64).sum::<f64>() / on_len as f64)
        .collect())
}

/// Midpoint between the estimated '0' and '1' rail means, found by two-means
/// clustering of the bit statistics. `zero_ref` is the dark level used when
/// every statistic is identical (no contrast to cluster on).
pub fn decision_threshold(stats: &[f64], zero_ref: f64) -> f64 {
    let (lo, hi) = stats
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    if !(hi - lo > 1e-9 * hi.abs().max(lo.abs())) {
        return 0.5 * (zero_ref + hi);
    }
    let mut t = 0.5 * (lo + hi);
    for _ in 0..100 {
        let (mut s0, mut n0, mut s1, mut n1) = (0.0, 0usize, 0.0, 0usize);
        for &s in stats {
            if s > t {
                s1 += s;
                n1 += 1;
            } else {
                s0 += s;
                n0 += 1;
            }
        }
        if n0 == 0 || n1 == 0 {
            break;
        }
        let next = 0.5 * (s0 / n0 as f64 + s1 / n1 as f64);
        if next == t {
            break;
        }
        t = next;
    }
    t
}

/// Mean of the off-window (dark half) samples; the '0' reference for RZ.
fn off_window_mean(rx: &SampleStream, offset: usize, duty: f64, n_bits: usize) -> f64 {
    let sps = rx.samples_per_bit;
    let on_len = on_window_len(sps, duty);
    if on_len == sps {
        return 0.0;
    }
    let end = offset + n_bits * sps;
    let sum: f64 = rx.samples[offset..end]
        .chunks_exact(sps)
        .flat_map(|slot| slot[on_len..].iter())
        .map(|&x| x as f64)
        .sum();
    sum / (n_bits * (sps - on_len)) as f64
}

/// Hard-decision demodulation of every whole bit slot after `offset`.
pub fn demodulate(rx: &SampleStream, offset: usize, duty: f64) -> Result<BitSequence> {
    let n_bits = rx.bits_after(offset);
    let stats = bit_statistics(rx, offset, duty, n_bits)?;
    let zero_ref = off_window_mean(rx, offset, duty, n_bits);
    let threshold = decision_threshold(&stats, zero_ref);
    let bits = stats.iter().map(|&s| u8::from(s > threshold)).collect();
    BitSequence::new(bits)
}
