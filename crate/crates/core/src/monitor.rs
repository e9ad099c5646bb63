//! Streaming turbulence monitor: locates the first frame header, then
//! classifies consecutive non-overlapping windows as samples arrive.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::normalize_instance;
use crate::error::{Error, Result};
use crate::gbt::GbtModel;
use crate::modem::{default_frame, sync_locate, SampleStream, SyncOptions, DEFAULT_DUTY, SYNC_BITS, SYNC_WORD};

/// One classified window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonitorLine {
    /// Window start, seconds from the first sample of the stream.
    pub t: f64,
    pub level: u8,
    pub probs: Vec<f64>,
    /// Normalization plus prediction time.
    pub latency_us: f64,
}

pub struct Monitor<'a> {
    model: &'a GbtModel,
    sample_rate: f64,
    samples_per_bit: usize,
    window: usize,
    buf: Vec<f32>,
    /// Stream index of `buf[0]`.
    base: u64,
    /// Stream index of the next window, once the header is found.
    next: Option<u64>,
}

impl<'a> Monitor<'a> {
    /// `window_bits` defaults to the model's feature length. A window that
    /// does not match the model is rejected here, before any output.
    pub fn new(model: &'a GbtModel, sample_rate: f64, samples_per_bit: usize, window_bits: Option<usize>) -> Result<Self> {
        if samples_per_bit < 2 || !(sample_rate > 0.0) {
            return Err(Error::param("invalid sample rate or samples per bit"));
        }
        let window = match window_bits {
            Some(b) => b * samples_per_bit,
            None => model.n_features,
        };
        if window != model.n_features {
            return Err(Error::DimensionMismatch {
                expected: model.n_features,
                found: window,
            });
        }
        if window == 0 {
            return Err(Error::param("window must hold at least one sample"));
        }
        Ok(Self {
            model,
            sample_rate,
            samples_per_bit,
            window,
            buf: Vec::new(),
            base: 0,
            next: None,
        })
    }

    pub fn window_samples(&self) -> usize {
        self.window
    }

    fn sync_span(&self) -> usize {
        (default_frame().len() + SYNC_BITS) * self.samples_per_bit
    }

    /// Appends samples and returns the windows they complete.
    pub fn push(&mut self, samples: &[f32]) -> Result<Vec<MonitorLine>> {
        self.buf.extend_from_slice(samples);
        if self.next.is_none() {
            if self.buf.len() < self.sync_span() {
                return Ok(Vec::new());
            }
            let stream = SampleStream::new(self.buf.clone(), self.sample_rate, self.samples_per_bit)?;
            let opts = SyncOptions {
                duty: DEFAULT_DUTY,
                search_limit: Some(default_frame().len() * self.samples_per_bit),
                ..SyncOptions::default()
            };
            self.next = Some(self.base + sync_locate(&stream, SYNC_WORD, &opts)? as u64);
        }
        let mut out = Vec::new();
        let mut start = (self.next.unwrap() - self.base) as usize;
        while start + self.window <= self.buf.len() {
            let t0 = Instant::now();
            let x = normalize_instance(&self.buf[start..start + self.window]);
            let probs = self.model.predict_proba(&x)?;
            let level = crate::gbt::argmax(&probs) as u8;
            out.push(MonitorLine {
                t: (self.base + start as u64) as f64 / self.sample_rate,
                level,
                probs,
                latency_us: t0.elapsed().as_secs_f64() * 1e6,
            });
            start += self.window;
        }
        self.buf.drain(..start);
        self.base += start as u64;
        self.next = Some(self.base);
        Ok(out)
    }

    /// Ends the stream. Fails when it never held enough samples to find a
    /// header.
    pub fn finish(self) -> Result<()> {
        if self.next.is_none() {
            return Err(Error::TooShort {
                needed: self.sync_span(),
                available: self.buf.len(),
            });
        }
        Ok(())
    }
}
