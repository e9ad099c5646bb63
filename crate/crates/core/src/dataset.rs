//! Labeled instances cut from captures, plus their on-disk formats.
//!
//! An instance is a run of `bits_per_instance` whole bit slots of raw
//! received samples, min-max normalized to `[0, 1]`. Instances are ordered
//! level-major, then capture, then window position.
//!
//! Binary dataset layout (little-endian):
//!
//! | bytes | field |
//! |-------|-------|
//! | 4 | magic `FSOD` |
//! | 4 | version `u32` (= 1) |
//! | 4 | class count `u32` |
//! | 8 | instance count `u64` |
//! | 8 | feature count `u64` |
//! | 13 × instances | label `u8`, capture id `u32`, start bit `u64` |
//! | 4 × instances × features | features `f32`, row-major |
//!
//! The manifest lives next to the data file as `<file>.json`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::capture::{sidecar_path, Capture};
use crate::channel::N_LEVELS;
use crate::error::{Error, Result};
use crate::rng::shuffled_indices;

pub const DATASET_MAGIC: &[u8; 4] = b"FSOD";
pub const DATASET_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 8 + 8;
const META_LEN: usize = 1 + 4 + 8;

#[derive(Clone, Debug, PartialEq)]
pub struct DataInstance {
    pub features: Vec<f32>,
    pub label: u8,
    pub capture_id: u32,
    pub start_bit: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Min-max over each instance on its own.
    #[default]
    PerInstance,
    /// Min-max over all samples a capture contributes.
    PerFile,
}

impl std::str::FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-instance" => Ok(Normalization::PerInstance),
            "per-file" => Ok(Normalization::PerFile),
            other => Err(Error::param(format!(
                "unknown normalization '{other}' (per-instance|per-file)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub bits_per_instance: usize,
    pub instances_per_level: usize,
    pub normalization: Normalization,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            bits_per_instance: 1000,
            instances_per_level: 750,
            normalization: Normalization::PerInstance,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub bits_per_instance: usize,
    pub samples_per_bit: usize,
    pub instances_per_level: usize,
    pub levels: Vec<u8>,
    pub normalization: Normalization,
    /// Generation parameters of the source captures.
    #[serde(default)]
    pub source: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub instances: Vec<DataInstance>,
    pub n_classes: usize,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.instances.first().map_or(0, |i| i.features.len())
    }

    pub fn labels(&self) -> Vec<u8> {
        self.instances.iter().map(|i| i.label).collect()
    }

    pub fn rows(&self) -> Vec<&[f32]> {
        self.instances.iter().map(|i| i.features.as_slice()).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for inst in &self.instances {
            counts[inst.label as usize] += 1;
        }
        counts
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            instances: idx.iter().map(|&i| self.instances[i].clone()).collect(),
            n_classes: self.n_classes,
            manifest: self.manifest.clone(),
        }
    }
}

/// Consecutive non-overlapping windows of `bits_per_instance` bit slots,
/// starting at `offset`. The trailing partial window is dropped.
pub fn segment(samples: &[f32], offset: usize, bits_per_instance: usize, samples_per_bit: usize) -> Result<Vec<&[f32]>> {
    if bits_per_instance == 0 {
        return Err(Error::param("bits_per_instance must be at least 1"));
    }
    let window = bits_per_instance * samples_per_bit;
    let usable = samples.len().saturating_sub(offset);
    if usable < window {
        return Err(Error::TooShort {
            needed: offset + window,
            available: samples.len(),
        });
    }
    Ok(samples[offset..].chunks_exact(window).collect())
}

fn min_max(xs: &[f32]) -> (f32, f32) {
    xs.iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

fn rescale(raw: &[f32], lo: f32, hi: f32) -> Vec<f32> {
    if !(hi > lo) {
        return vec![0.0; raw.len()];
    }
    let (lo, span) = (lo as f64, hi as f64 - lo as f64);
    raw.iter()
        .map(|&x| (((x as f64 - lo) / span) as f32).clamp(0.0, 1.0))
        .collect()
}

/// `(x - min) / (max - min)`; constant vectors map to zeros.
pub fn normalize_instance(raw: &[f32]) -> Vec<f32> {
    let (lo, hi) = min_max(raw);
    rescale(raw, lo, hi)
}

/// Builds exactly `instances_per_level` instances for every level present
/// in `captures`, drawing windows from that level's captures in order.
pub fn build_dataset(captures: &[Capture], cfg: &DatasetConfig) -> Result<Dataset> {
    if cfg.instances_per_level == 0 {
        return Err(Error::param("instances_per_level must be at least 1"));
    }
    if captures.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let sps = captures[0].stream.samples_per_bit;
    if captures.iter().any(|c| c.stream.samples_per_bit != sps) {
        return Err(Error::param("captures disagree on samples_per_bit"));
    }
    let mut levels: Vec<u8> = captures.iter().map(|c| c.level).collect();
    levels.sort_unstable();
    levels.dedup();
    if let Some(&bad) = levels.iter().find(|&&l| l as usize >= N_LEVELS) {
        return Err(Error::LabelOutOfRange {
            label: bad as usize,
            n_classes: N_LEVELS,
        });
    }

    let window = cfg.bits_per_instance * sps;
    let mut instances = Vec::with_capacity(levels.len() * cfg.instances_per_level);
    for &level in &levels {
        let mut taken = 0;
        let mut available = 0;
        for cap in captures.iter().filter(|c| c.level == level) {
            let windows = match segment(&cap.stream.samples, cap.offset, cfg.bits_per_instance, sps) {
                Ok(w) => w,
                Err(Error::TooShort { .. }) => Vec::new(),
                Err(e) => return Err(e),
            };
            available += windows.len();
            let take = windows.len().min(cfg.instances_per_level - taken);
            if take == 0 {
                continue;
            }
            let file_range = match cfg.normalization {
                Normalization::PerInstance => None,
                Normalization::PerFile => Some(min_max(&cap.stream.samples[cap.offset..cap.offset + take * window])),
            };
            for (w, raw) in windows[..take].iter().enumerate() {
                let features = match file_range {
                    None => normalize_instance(raw),
                    Some((lo, hi)) => rescale(raw, lo, hi),
                };
                instances.push(DataInstance {
                    features,
                    label: level,
                    capture_id: cap.capture_id,
                    start_bit: (w * cfg.bits_per_instance) as u64,
                });
            }
            taken += take;
        }
        if taken < cfg.instances_per_level {
            return Err(Error::InsufficientCapture {
                level,
                needed: cfg.instances_per_level,
                available,
            });
        }
    }
    Ok(Dataset {
        instances,
        n_classes: N_LEVELS,
        manifest: DatasetManifest {
            bits_per_instance: cfg.bits_per_instance,
            samples_per_bit: sps,
            instances_per_level: cfg.instances_per_level,
            levels,
            normalization: cfg.normalization,
            source: serde_json::Value::Null,
        },
    })
}

/// Seeded shuffle (see [`crate::rng`]) then partition: the first
/// `ceil(N * (1 - test_fraction))` shuffled instances train, the rest test.
pub fn split(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::param(format!("test fraction {test_fraction} outside (0, 1)")));
    }
    let (train_idx, test_idx) = split_indices(ds.len(), test_fraction, seed);
    Ok((ds.subset(&train_idx), ds.subset(&test_idx)))
}

pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let order = shuffled_indices(n, seed);
    // Round away float noise such as 4500 * 0.8 = 3600.0000000000005.
    let exact = n as f64 * (1.0 - test_fraction);
    let n_train = ((exact * 1e9).round() / 1e9).ceil() as usize;
    let n_train = n_train.min(n);
    (order[..n_train].to_vec(), order[n_train..].to_vec())
}

pub fn save_dataset_binary(path: &Path, ds: &Dataset) -> Result<()> {
    let n_features = ds.n_features();
    if ds.instances.iter().any(|i| i.features.len() != n_features) {
        return Err(Error::param("instances have differing feature lengths"));
    }
    let file = File::create(path).map_err(|e| Error::file(path, e))?;
    let mut out = BufWriter::with_capacity(1 << 20, file);
    let mut buf = Vec::with_capacity(HEADER_LEN + ds.len() * META_LEN);
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    buf.extend_from_slice(&(ds.n_classes as u32).to_le_bytes());
    buf.extend_from_slice(&(ds.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(n_features as u64).to_le_bytes());
    for inst in &ds.instances {
        buf.push(inst.label);
        buf.extend_from_slice(&inst.capture_id.to_le_bytes());
        buf.extend_from_slice(&inst.start_bit.to_le_bytes());
    }
    out.write_all(&buf).map_err(|e| Error::file(path, e))?;
    let mut row = Vec::with_capacity(n_features * 4);
    for inst in &ds.instances {
        row.clear();
        for x in &inst.features {
            row.extend_from_slice(&x.to_le_bytes());
        }
        out.write_all(&row).map_err(|e| Error::file(path, e))?;
    }
    out.flush().map_err(|e| Error::file(path, e))?;
    write_dataset_manifest(path, &ds.manifest)
}

fn write_dataset_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let side = sidecar_path(path);
    std::fs::write(&side, serde_json::to_string_pretty(manifest)?).map_err(|e| Error::file(&side, e))
}

fn read_dataset_manifest(path: &Path) -> Result<DatasetManifest> {
    let side = sidecar_path(path);
    match std::fs::read_to_string(&side) {
        Ok(text) => Ok(serde_json::from_str(&text)?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(DatasetManifest::default()),
        Err(e) => Err(Error::file(&side, e)),
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::parse(
                format!("byte {}", self.pos),
                format!("file truncated: need {n} more bytes, {} left", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load_dataset_binary(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(4)? != DATASET_MAGIC {
        return Err(Error::parse("byte 0", "bad magic, expected FSOD"));
    }
    let version = c.u32()?;
    if version != DATASET_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: DATASET_VERSION,
        });
    }
    let n_classes = c.u32()? as usize;
    let n = usize::try_from(c.u64()?).map_err(|_| Error::parse("byte 12", "instance count too large"))?;
    let f = usize::try_from(c.u64()?).map_err(|_| Error::parse("byte 20", "feature count too large"))?;
    let expected = n
        .checked_mul(META_LEN + f.saturating_mul(4))
        .and_then(|b| b.checked_add(HEADER_LEN));
    if expected != Some(bytes.len()) {
        return Err(Error::parse(
            format!("byte {}", bytes.len()),
            format!("file length {} does not match header ({n} x {f})", bytes.len()),
        ));
    }
    let mut meta = Vec::with_capacity(n);
    for _ in 0..n {
        let label = c.take(1)?[0];
        if label as usize >= n_classes {
            return Err(Error::parse(
                format!("byte {}", c.pos - 1),
                format!("label {label} out of range"),
            ));
        }
        meta.push((label, c.u32()?, c.u64()?));
    }
    let mut instances = Vec::with_capacity(n);
    for (label, capture_id, start_bit) in meta {
        let features = c
            .take(f * 4)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        instances.push(DataInstance {
            features,
            label,
            capture_id,
            start_bit,
        });
    }
    Ok(Dataset {
        instances,
        n_classes,
        manifest: read_dataset_manifest(path)?,
    })
}

/// CSV with header `label,f0,f1,...`; one instance per row. Capture ids and
/// start bits are not stored.
pub fn save_dataset_csv(path: &Path, ds: &Dataset) -> Result<()> {
    let to_err = |e: csv::Error| Error::parse(path.display().to_string(), e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    let mut header = vec!["label".to_string()];
    header.extend((0..ds.n_features()).map(|i| format!("f{i}")));
    w.write_record(&header).map_err(to_err)?;
    let mut record = Vec::with_capacity(ds.n_features() + 1);
    for inst in &ds.instances {
        record.clear();
        record.push(inst.label.to_string());
        record.extend(inst.features.iter().map(|x| x.to_string()));
        w.write_record(&record).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::file(path, e))?;
    write_dataset_manifest(path, &ds.manifest)
}

pub fn load_dataset_csv(path: &Path) -> Result<Dataset> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    let header = r.headers().map_err(|e| Error::parse("line 1", e.to_string()))?.clone();
    if header.get(0) != Some("label") {
        return Err(Error::parse("line 1", "first column must be 'label'"));
    }
    let n_features = header.len() - 1;
    let mut instances = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::parse(format!("line {line}"), e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let at = |col: usize| format!("line {line}, column {}", col + 1);
        let label: u8 = rec[0]
            .trim()
            .parse()
            .map_err(|e| Error::parse(at(0), format!("bad label: {e}")))?;
        if label as usize >= N_LEVELS {
            return Err(Error::parse(at(0), format!("label {label} out of range")));
        }
        let features = rec
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, v)| v.trim().parse::<f32>().map_err(|e| Error::parse(at(i), format!("bad feature: {e}"))))
            .collect::<Result<Vec<f32>>>()?;
        debug_assert_eq!(features.len(), n_features);
        instances.push(DataInstance {
            features,
            label,
            capture_id: 0,
            start_bit: 0,
        });
    }
    Ok(Dataset {
        instances,
        n_classes: N_LEVELS,
        manifest: read_dataset_manifest(path)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Csv,
    Binary,
}

impl DatasetFormat {
    /// `.csv` selects CSV; anything else is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => DatasetFormat::Csv,
            _ => DatasetFormat::Binary,
        }
    }
}

pub fn save_dataset(path: &Path, ds: &Dataset, format: DatasetFormat) -> Result<()> {
    match format {
        DatasetFormat::Csv => save_dataset_csv(path, ds),
        DatasetFormat::Binary => save_dataset_binary(path, ds),
    }
}

pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Dataset> {
    match format {
        DatasetFormat::Csv => load_dataset_csv(path),
        DatasetFormat::Binary => load_dataset_binary(path),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modem::SampleStream;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn capture(level: u8, id: u32, len: usize, offset: usize, seed: u64) -> Capture {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..len).map(|_| rng.random::<f32>() * 2.0 - 0.5).collect();
        Capture {
            stream: SampleStream::new(samples, 40e6, 8).unwrap(),
            level,
            capture_id: id,
            offset,
        }
    }

    fn small_dataset(per_level: usize, bits: usize) -> Dataset {
        let caps: Vec<Capture> = (0..6u8)
            .map(|l| capture(l, l as u32, per_level * bits * 8 + 5, 5, l as u64))
            .collect();
        build_dataset(
            &caps,
            &DatasetConfig {
                bits_per_instance: bits,
                instances_per_level: per_level,
                normalization: Normalization::PerInstance,
            },
        )
        .unwrap()
    }

    #[test]
    fn segment_counts() {
        let x = vec![0.0f32; 40_000];
        assert_eq!(segment(&x, 0, 1000, 8).unwrap().len(), 5);
        let one = vec![0.0f32; 8000];
        let w = segment(&one, 0, 1000, 8).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].len(), 8000);
        assert!(segment(&one, 1, 1000, 8).is_err());
        assert!(segment(&one, 0, 0, 8).is_err());
        // A 2.5 s capture at 40 MSps holds 12 500 windows of 1000 bits.
        let windows = 100_000_000usize / (1000 * 8);
        assert_eq!(windows, 12_500);
    }

    #[test]
    fn segmentation_conserves_samples() {
        let x: Vec<f32> = (0..12_345).map(|i| i as f32).collect();
        let offset = 17;
        let windows = segment(&x, offset, 100, 8).unwrap();
        let mut joined: Vec<f32> = windows.iter().flat_map(|w| w.iter().copied()).collect();
        let residue_start = offset + joined.len();
        assert!(x.len() - residue_start < 800);
        joined.extend_from_slice(&x[residue_start..]);
        assert_eq!(joined, x[offset..].to_vec());
    }

    #[test]
    fn normalization_cases() {
        assert_eq!(normalize_instance(&[0.2, 0.6, 1.0]), vec![0.0, 0.5, 1.0]);
        assert_eq!(normalize_instance(&[3.0; 4]), vec![0.0; 4]);
        let unit = [0.0, 0.25, 1.0, 0.5];
        assert_eq!(normalize_instance(&unit), unit.to_vec());
    }

    #[test]
    fn builds_balanced_dataset() {
        let ds = small_dataset(3, 10);
        assert_eq!(ds.len(), 18);
        assert_eq!(ds.class_counts(), vec![3; 6]);
        assert_eq!(ds.n_features(), 80);
        let labels: Vec<u8> = ds.labels();
        assert_eq!(labels, vec![0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3, 4, 4, 4, 5, 5, 5]);
        assert!(ds.instances.iter().all(|i| i.features.iter().all(|&x| (0.0..=1.0).contains(&x))));

        let one = small_dataset(1, 10);
        assert_eq!(one.labels(), vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn feature_length_tracks_bits() {
        for bits in [200, 600, 1000, 1800, 3000] {
            let caps = vec![capture(0, 0, bits * 8 * 2, 0, 1)];
            let ds = build_dataset(
                &caps,
                &DatasetConfig {
                    bits_per_instance: bits,
                    instances_per_level: 2,
                    normalization: Normalization::PerInstance,
                },
            )
            .unwrap();
            assert_eq!(ds.n_features(), bits * 8);
        }
    }

    #[test]
    fn windows_span_captures_in_order() {
        let caps = vec![capture(2, 7, 8 * 10 * 2, 0, 1), capture(2, 8, 8 * 10 * 3, 0, 2)];
        let ds = build_dataset(
            &caps,
            &DatasetConfig {
                bits_per_instance: 10,
                instances_per_level: 4,
                normalization: Normalization::PerInstance,
            },
        )
        .unwrap();
        let ids: Vec<(u32, u64)> = ds.instances.iter().map(|i| (i.capture_id, i.start_bit)).collect();
        assert_eq!(ids, vec![(7, 0), (7, 10), (8, 0), (8, 10)]);
    }

    #[test]
    fn insufficient_capture_names_level() {
        let caps = vec![capture(0, 0, 8000, 0, 1), capture(3, 1, 100, 0, 2)];
        let err = build_dataset(
            &caps,
            &DatasetConfig {
                bits_per_instance: 10,
                instances_per_level: 5,
                normalization: Normalization::PerInstance,
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::InsufficientCapture { level: 3, .. }), "{err}");
    }

    #[test]
    fn per_file_normalization_shares_range() {
        let caps = vec![capture(1, 0, 8 * 10 * 4, 0, 3)];
        let ds = build_dataset(
            &caps,
            &DatasetConfig {
                bits_per_instance: 10,
                instances_per_level: 4,
                normalization: Normalization::PerFile,
            },
        )
        .unwrap();
        let all: Vec<f32> = ds.instances.iter().flat_map(|i| i.features.iter().copied()).collect();
        let (lo, hi) = min_max(&all);
        assert_eq!((lo, hi), (0.0, 1.0));
        // Individual windows generally do not reach both ends.
        assert!(ds.instances.iter().any(|i| min_max(&i.features) != (0.0, 1.0)));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let (train, test) = split_indices(4500, 0.2, 11);
        assert_eq!((train.len(), test.len()), (3600, 900));
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..4500).collect::<Vec<_>>());
        assert_eq!(split_indices(4500, 0.2, 11), (train, test));
        let ds = small_dataset(2, 5);
        assert!(split(&ds, 0.0, 1).is_err());
        assert!(split(&ds, 1.0, 1).is_err());
        let (tr, te) = split(&ds, 0.25, 4).unwrap();
        assert_eq!(tr.len() + te.len(), ds.len());
        assert_eq!(tr.len(), 9);
    }

    /// Independent model of the documented shuffle: SplitMix64 from its
    /// published constants, bounded draws via 128-bit rejection threshold.
    fn oracle_split(n: usize, f: f64, seed: u64) -> Vec<usize> {
        let mut state = seed as u128;
        let mut next = || {
            state = (state + 0x9E37_79B9_7F4A_7C15) % (1u128 << 64);
            let mut z = state;
            z = ((z ^ (z >> 30)) * 0xBF58_476D_1CE4_E5B9) % (1u128 << 64);
            z = ((z ^ (z >> 27)) * 0x94D0_49BB_1331_11EB) % (1u128 << 64);
            (z ^ (z >> 31)) as u64
        };
        let mut p: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let bound = (i + 1) as u128;
            let reject_below = (1u128 << 64) % bound;
            let j = loop {
                let x = next() as u128;
                if x >= reject_below {
                    break (x % bound) as usize;
                }
            };
            p.swap(i, j);
        }
        let n_test = n - (n as f64 * (1.0 - f)).ceil() as usize;
        p[n - n_test..].to_vec()
    }

    #[test]
    fn split_matches_reference_shuffle() {
        for seed in [0u64, 1, 42, 0xDEAD_BEEF] {
            let (_, test) = split_indices(10, 0.2, seed);
            assert_eq!(test, oracle_split(10, 0.2, seed), "seed {seed}");
        }
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.fsod");
        let mut ds = small_dataset(3, 20);
        ds.manifest.source = serde_json::json!({"seed": 5});
        save_dataset(&path, &ds, DatasetFormat::Binary).unwrap();
        let back = load_dataset(&path, DatasetFormat::Binary).unwrap();
        assert_eq!(back, ds);

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(load_dataset_binary(&path), Err(Error::Parse { .. })));
        std::fs::write(&path, &bytes[..10]).unwrap();
        assert!(matches!(load_dataset_binary(&path), Err(Error::Parse { .. })));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let ds = small_dataset(2, 4);
        save_dataset(&path, &ds, DatasetFormat::from_path(&path)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("label,f0,f1,f2,"));
        let back = load_dataset_csv(&path).unwrap();
        assert_eq!(back.len(), ds.len());
        for (a, b) in back.instances.iter().zip(&ds.instances) {
            assert_eq!(a.label, b.label);
            for (x, y) in a.features.iter().zip(&b.features) {
                assert!((x - y).abs() as f64 <= 1e-9);
            }
        }

        std::fs::write(&path, "label,f0\n0,0.5\n1,abc\n").unwrap();
        let err = load_dataset_csv(&path).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn normalize_idempotent(x in prop::collection::vec(-1e3f32..1e3, 1..200)) {
                let once = normalize_instance(&x);
                prop_assert!(once.iter().all(|&v| (0.0..=1.0).contains(&v)));
                prop_assert_eq!(normalize_instance(&once), once);
            }

            #[test]
            fn split_disjoint_and_deterministic(n in 2usize..400, f in 0.05f64..0.95, seed in any::<u64>()) {
                let (tr, te) = split_indices(n, f, seed);
                let exact = n as f64 * (1.0 - f);
                prop_assert!(tr.len() as f64 >= exact - 1e-6 && (tr.len() as f64) < exact + 1.0);
                let mut all: Vec<usize> = tr.iter().chain(&te).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
                prop_assert_eq!(split_indices(n, f, seed), (tr, te));
            }
        }
    }
}
