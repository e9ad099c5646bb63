//! Capture files.
//!
//! Binary layout (all little-endian):
//!
//! | bytes | field |
//! |-------|-------|
//! | 4 | magic `FSOC` |
//! | 4 | version `u32` (= 1) |
//! | 8 | sample rate `f64`, samples/s |
//! | 2 | samples per bit `u16` |
//! | 1 | turbulence level `u8` |
//! | 8 | sample count `u64` |
//! | 4 × count | samples `f32` |
//!
//! Each file has a JSON sidecar `<file>.json` holding a [`CaptureManifest`].

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modem::SampleStream;

pub const CAPTURE_MAGIC: &[u8; 4] = b"FSOC";
pub const CAPTURE_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 2 + 1 + 8;

/// A received capture tagged with its ground-truth level.
#[derive(Clone, Debug, PartialEq)]
pub struct Capture {
    pub stream: SampleStream,
    pub level: u8,
    pub capture_id: u32,
    /// Sample offset of the first frame header.
    pub offset: usize,
}

/// Everything needed to regenerate a capture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptureManifest {
    pub level: u8,
    pub capture_index: u32,
    /// Seconds since the turbulence sources were switched on.
    pub start_time_s: f64,
    pub duration_s: f64,
    pub sample_rate: f64,
    pub samples_per_bit: usize,
    pub sample_count: u64,
    /// Sample offset of the first frame header, when known.
    pub frame_offset: Option<usize>,
    pub seed: u64,
    /// Cn2 and scintillation index at the first sample.
    pub cn2_at_start: f64,
    pub scint_index_at_start: f64,
    pub channel: crate::channel::ChannelConfig,
    /// Full generation spec (experiment parameters, preset, seed).
    pub spec: serde_json::Value,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

/// Streams samples into a capture file; the header count is fixed up front.
pub struct CaptureWriter {
    out: BufWriter<File>,
    path: PathBuf,
    remaining: u64,
}

impl CaptureWriter {
    pub fn create(path: &Path, sample_rate: f64, samples_per_bit: usize, level: u8, count: u64) -> Result<Self> {
        let sps = u16::try_from(samples_per_bit).map_err(|_| Error::param("samples_per_bit exceeds u16"))?;
        let file = File::create(path).map_err(|e| Error::file(path, e))?;
        let mut out = BufWriter::with_capacity(1 << 20, file);
        let mut header = Vec::with_capacity(HEADER_LEN);
        header.extend_from_slice(CAPTURE_MAGIC);
        header.extend_from_slice(&CAPTURE_VERSION.to_le_bytes());
        header.extend_from_slice(&sample_rate.to_le_bytes());
        header.extend_from_slice(&sps.to_le_bytes());
        header.push(level);
        header.extend_from_slice(&count.to_le_bytes());
        out.write_all(&header).map_err(|e| Error::file(path, e))?;
        Ok(Self {
            out,
            path: path.to_owned(),
            remaining: count,
        })
    }

    pub fn write(&mut self, samples: &[f32]) -> Result<()> {
        if samples.len() as u64 > self.remaining {
            return Err(Error::param("more samples than declared in the header"));
        }
        let mut bytes = Vec::with_capacity(samples.len() * 4);
        for x in samples {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        self.out.write_all(&bytes).map_err(|e| Error::file(&self.path, e))?;
        self.remaining -= samples.len() as u64;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        if self.remaining != 0 {
            return Err(Error::param(format!("{} declared samples never written", self.remaining)));
        }
        self.out.flush().map_err(|e| Error::file(&self.path, e))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CaptureHeader {
    pub sample_rate: f64,
    pub samples_per_bit: usize,
    pub level: u8,
    pub count: u64,
}

/// Incremental capture reader for files or standard input.
pub struct CaptureReader<R> {
    inner: R,
    pub header: CaptureHeader,
    remaining: u64,
    consumed: u64,
}

impl<R: Read> CaptureReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut h = [0u8; HEADER_LEN];
        read_exact_at(&mut inner, &mut h, 0)?;
        if &h[0..4] != CAPTURE_MAGIC {
            return Err(Error::parse("byte 0", "bad magic, expected FSOC"));
        }
        let version = u32::from_le_bytes(h[4..8].try_into().unwrap());
        if version != CAPTURE_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                expected: CAPTURE_VERSION,
            });
        }
        let header = CaptureHeader {
            sample_rate: f64::from_le_bytes(h[8..16].try_into().unwrap()),
            samples_per_bit: u16::from_le_bytes(h[16..18].try_into().unwrap()) as usize,
            level: h[18],
            count: u64::from_le_bytes(h[19..27].try_into().unwrap()),
        };
        if header.samples_per_bit < 2 || !(header.sample_rate > 0.0) {
            return Err(Error::parse("byte 8", "invalid sample rate or samples per bit"));
        }
        Ok(Self {
            inner,
            header,
            remaining: header.count,
            consumed: 0,
        })
    }

    pub fn remaining(&self) -> u64 {
        self.remaining
    }

    /// Reads up to `max` samples; an empty result means end of capture.
    pub fn read_chunk(&mut self, max: usize) -> Result<Vec<f32>> {
        let n = (max as u64).min(self.remaining) as usize;
        let mut bytes = vec![0u8; n * 4];
        let pos = HEADER_LEN as u64 + self.consumed * 4;
        read_exact_at(&mut self.inner, &mut bytes, pos)?;
        self.remaining -= n as u64;
        self.consumed += n as u64;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }
}

fn read_exact_at<R: Read>(r: &mut R, buf: &mut [u8], pos: u64) -> Result<()> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => {
                return Err(Error::parse(
                    format!("byte {}", pos + filled as u64),
                    "unexpected end of capture data",
                ))
            }
            Ok(k) => filled += k,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

pub fn write_capture(path: &Path, stream: &SampleStream, level: u8) -> Result<()> {
    let mut w = CaptureWriter::create(path, stream.sample_rate, stream.samples_per_bit, level, stream.len() as u64)?;
    for chunk in stream.samples.chunks(1 << 20) {
        w.write(chunk)?;
    }
    w.finish()
}

/// Reads a whole capture file. Returns the stream and its level.
pub fn read_capture(path: &Path) -> Result<(SampleStream, u8)> {
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    let mut reader = CaptureReader::new(BufReader::with_capacity(1 << 20, file))?;
    let count = usize::try_from(reader.header.count).map_err(|_| Error::param("capture too large"))?;
    let samples = reader.read_chunk(count)?;
    let stream = SampleStream::new(samples, reader.header.sample_rate, reader.header.samples_per_bit)?;
    Ok((stream, reader.header.level))
}

pub fn write_manifest(path: &Path, manifest: &CaptureManifest) -> Result<()> {
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(manifest)?;
    std::fs::write(&side, text).map_err(|e| Error::file(&side, e))
}

pub fn read_manifest(path: &Path) -> Result<CaptureManifest> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::file(&side, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capture_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.fsoc");
        let stream = SampleStream::new(vec![0.25, -1.5, 3.0, 0.0, 1e-7], 40e6, 8).unwrap();
        write_capture(&path, &stream, 4).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"FSOC");
        assert_eq!(bytes.len(), HEADER_LEN + 5 * 4);
        let (back, level) = read_capture(&path).unwrap();
        assert_eq!(level, 4);
        assert_eq!(back, stream);
    }

    #[test]
    fn truncated_capture_fails() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.fsoc");
        let stream = SampleStream::new(vec![1.0; 100], 40e6, 8).unwrap();
        write_capture(&path, &stream, 0).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        let err = read_capture(&path).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err}");

        std::fs::write(&path, b"NOPE").unwrap();
        assert!(read_capture(&path).is_err());
    }

    #[test]
    fn writer_enforces_count() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.fsoc");
        let mut w = CaptureWriter::create(&path, 40e6, 8, 1, 4).unwrap();
        w.write(&[1.0, 2.0]).unwrap();
        assert!(w.write(&[1.0, 2.0, 3.0]).is_err());
        assert!(w.finish().is_err());
    }
}
