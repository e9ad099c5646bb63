//! Experiment runners: capture simulation with wall-clock bookkeeping,
//! per-file classification, link-quality tables and parameter sweeps.
//!
//! Capture `c` of every level starts at
//! `stabilization_s + c * (capture_seconds + inter_capture_gap_s)` seconds
//! after the turbulence sources are switched on. Each capture begins at a
//! seeded random phase of the repeating frame, and the first header is found
//! with [`sync_locate`].

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capture::{read_manifest, write_manifest, Capture, CaptureManifest, CaptureReader, CaptureWriter};
use crate::channel::{ChannelSim, N_LEVELS};
use crate::dataset::{build_dataset, split, Dataset, DatasetConfig, Normalization};
use crate::error::{Error, Result};
use crate::gbt::{train, GbtModel, GbtParams};
use crate::metrics::{accuracy, ber_compute, confusion_matrix, scint_index_estimate, QFactor};
use crate::modem::{
    default_frame, demodulate, sync_locate, BitSequence, OokFormat, RepeatingWaveform, SampleStream, SyncOptions,
    SYNC_BITS, SYNC_WORD,
};
use crate::preset::LinkPreset;
use crate::rng::{substream_seed, SplitMix64};

/// Substream tags; capture streams use `[TAG_CAPTURE, level, capture]`.
const TAG_CAPTURE: u64 = 1;
const TAG_PHASE: u64 = 2;
const TAG_SPLIT: u64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub levels: Vec<u8>,
    pub captures_per_level: u32,
    pub capture_seconds: f64,
    pub inter_capture_gap_s: f64,
    /// Overrides the preset's settling delay when set.
    pub stabilization_s: Option<f64>,
    pub bits_per_instance: usize,
    /// Instances per file, split evenly across levels.
    pub instances_total: usize,
    pub test_fraction: f64,
    pub normalization: Normalization,
    pub seed: u64,
    pub preset: LinkPreset,
    pub gbt: GbtParams,
    /// Bits demodulated per level for the link-quality table.
    pub table2_bits: u64,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            levels: (0..N_LEVELS as u8).collect(),
            captures_per_level: 3,
            capture_seconds: 2.5,
            inter_capture_gap_s: 10.0,
            stabilization_s: None,
            bits_per_instance: 1000,
            instances_total: 4500,
            test_fraction: 0.2,
            normalization: Normalization::PerInstance,
            seed: 0,
            preset: LinkPreset::immediate(),
            gbt: GbtParams::default(),
            table2_bits: 12_000_000,
        }
    }
}

impl ExperimentSpec {
    pub fn with_preset(preset: LinkPreset) -> Self {
        Self {
            preset,
            ..Self::default()
        }
    }

    pub fn format(&self) -> OokFormat {
        OokFormat::default()
    }

    pub fn stabilization(&self) -> f64 {
        self.stabilization_s.unwrap_or(self.preset.stabilization_s)
    }

    pub fn capture_start(&self, capture_index: u32) -> f64 {
        self.stabilization() + capture_index as f64 * (self.capture_seconds + self.inter_capture_gap_s)
    }

    /// Whole bit slots in one capture.
    pub fn capture_bits(&self) -> u64 {
        (self.capture_seconds * self.format().bit_rate).round() as u64
    }

    pub fn instances_per_level(&self) -> usize {
        self.instances_total / self.levels.len().max(1)
    }

    /// Samples searched for the first header: one frame period plus the
    /// template.
    pub fn sync_span(&self) -> usize {
        (default_frame().len() + SYNC_BITS) * self.format().samples_per_bit
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::param("at least one level is required"));
        }
        let mut sorted = self.levels.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.levels.len() {
            return Err(Error::param("levels must be distinct"));
        }
        if let Some(&bad) = self.levels.iter().find(|&&l| l as usize >= N_LEVELS) {
            return Err(Error::LabelOutOfRange {
                label: bad as usize,
                n_classes: N_LEVELS,
            });
        }
        if self.captures_per_level == 0 {
            return Err(Error::param("captures_per_level must be at least 1"));
        }
        if !(self.capture_seconds > 0.0) || !(self.inter_capture_gap_s >= 0.0) {
            return Err(Error::param("capture_seconds must be > 0 and inter_capture_gap_s >= 0"));
        }
        if let Some(s) = self.stabilization_s {
            if !(s >= 0.0) {
                return Err(Error::param("stabilization_s must be >= 0"));
            }
        }
        if self.bits_per_instance == 0 {
            return Err(Error::param("bits_per_instance must be at least 1"));
        }
        if !self.instances_total.is_multiple_of(self.levels.len()) || self.instances_total == 0 {
            return Err(Error::param(format!(
                "instances_total {} is not a positive multiple of the {} levels",
                self.instances_total,
                self.levels.len()
            )));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::param("test_fraction must lie in (0, 1)"));
        }
        self.preset.validate()?;
        self.gbt.validate()?;
        let frame_bits = (default_frame().len() + SYNC_BITS) as u64;
        let needed = (self.instances_per_level() * self.bits_per_instance) as u64 + frame_bits;
        if needed > self.capture_bits() {
            return Err(Error::InsufficientCapture {
                level: self.levels[0],
                needed: needed as usize,
                available: self.capture_bits() as usize,
            });
        }
        Ok(())
    }

    /// Samples simulated per capture when building a per-file dataset.
    pub fn dataset_samples(&self) -> usize {
        self.sync_span() + self.instances_per_level() * self.bits_per_instance * self.format().samples_per_bit
    }
}

/// Deterministic description of one capture.
#[derive(Clone, Debug, PartialEq)]
pub struct CapturePlan {
    pub level: u8,
    pub capture_index: u32,
    pub start_time_s: f64,
    pub seed: u64,
    pub phase: usize,
    pub channel: crate::channel::ChannelConfig,
}

pub fn capture_plan(spec: &ExperimentSpec, level: u8, capture_index: u32) -> Result<CapturePlan> {
    let frame = default_frame();
    let period = frame.len() * spec.format().samples_per_bit;
    let mut rng = SplitMix64::new(substream_seed(spec.seed, &[TAG_PHASE, level as u64, capture_index as u64]));
    Ok(CapturePlan {
        level,
        capture_index,
        start_time_s: spec.capture_start(capture_index),
        seed: substream_seed(spec.seed, &[TAG_CAPTURE, level as u64, capture_index as u64]),
        phase: rng.below(period as u64) as usize,
        channel: spec.preset.channel_for_level(level)?,
    })
}

/// Streams a capture's received samples in chunks; output does not depend on
/// the chunk sizes.
pub struct CaptureSource {
    wave: RepeatingWaveform,
    sim: ChannelSim,
}

impl CaptureSource {
    pub fn new(spec: &ExperimentSpec, plan: &CapturePlan) -> Result<Self> {
        let fmt = spec.format();
        Ok(Self {
            wave: RepeatingWaveform::new(&default_frame(), &fmt, plan.phase)?,
            sim: ChannelSim::new(&plan.channel, fmt.sample_rate(), plan.start_time_s, plan.seed)?,
        })
    }

    pub fn fill(&mut self, out: &mut [f32]) {
        self.wave.fill(out);
        self.sim.process_in_place(out);
    }
}

fn locate_header(spec: &ExperimentSpec, stream: &SampleStream) -> Result<usize> {
    let fmt = spec.format();
    let opts = SyncOptions {
        duty: fmt.duty,
        search_limit: Some(default_frame().len() * fmt.samples_per_bit),
        ..SyncOptions::default()
    };
    sync_locate(stream, SYNC_WORD, &opts)
}

/// Simulates the first `n_samples` of a capture and locates its first header.
pub fn simulate_capture(spec: &ExperimentSpec, level: u8, capture_index: u32, n_samples: usize) -> Result<Capture> {
    let plan = capture_plan(spec, level, capture_index)?;
    let fmt = spec.format();
    let mut samples = vec![0.0f32; n_samples];
    let mut src = CaptureSource::new(spec, &plan)?;
    for chunk in samples.chunks_mut(1 << 20) {
        src.fill(chunk);
    }
    let stream = SampleStream::new(samples, fmt.sample_rate(), fmt.samples_per_bit)?;
    let offset = locate_header(spec, &stream)?;
    Ok(Capture {
        stream,
        level,
        capture_id: capture_index,
        offset,
    })
}

pub fn capture_manifest(spec: &ExperimentSpec, plan: &CapturePlan, sample_count: u64, frame_offset: Option<usize>) -> CaptureManifest {
    let fmt = spec.format();
    let cn2_start = match &plan.channel.transient {
        Some(tr) => tr.cn2_at(plan.start_time_s),
        None => spec.preset.cn2(plan.level).unwrap_or(0.0),
    };
    CaptureManifest {
        level: plan.level,
        capture_index: plan.capture_index,
        start_time_s: plan.start_time_s,
        duration_s: sample_count as f64 / fmt.sample_rate(),
        sample_rate: fmt.sample_rate(),
        samples_per_bit: fmt.samples_per_bit,
        sample_count,
        frame_offset,
        seed: plan.seed,
        cn2_at_start: cn2_start,
        scint_index_at_start: plan.channel.scint_index_at(plan.start_time_s),
        channel: plan.channel.clone(),
        spec: serde_json::to_value(spec).unwrap_or(serde_json::Value::Null),
    }
}

/// Dataset of one file: capture `capture_index` of every level.
pub fn file_dataset(spec: &ExperimentSpec, capture_index: u32) -> Result<Dataset> {
    spec.validate()?;
    let cfg = DatasetConfig {
        bits_per_instance: spec.bits_per_instance,
        instances_per_level: spec.instances_per_level(),
        normalization: spec.normalization,
    };
    let n = spec.dataset_samples();
    let parts: Vec<Dataset> = spec
        .levels
        .par_iter()
        .map(|&level| {
            let cap = simulate_capture(spec, level, capture_index, n)?;
            build_dataset(std::slice::from_ref(&cap), &cfg)
        })
        .collect::<Result<_>>()?;
    let mut levels: Vec<u8> = spec.levels.clone();
    levels.sort_unstable();
    let mut by_level: Vec<(u8, Dataset)> = spec.levels.iter().copied().zip(parts).collect();
    by_level.sort_by_key(|(l, _)| *l);
    let mut instances = Vec::with_capacity(spec.instances_total);
    let mut manifest = by_level[0].1.manifest.clone();
    for (_, d) in by_level {
        instances.extend(d.instances);
    }
    manifest.levels = levels;
    manifest.source = serde_json::json!({
        "capture_index": capture_index,
        "start_time_s": spec.capture_start(capture_index),
        "spec": spec,
    });
    Ok(Dataset {
        instances,
        n_classes: N_LEVELS,
        manifest,
    })
}

/// Streams capture `capture_index` of `level` into an FSOC file with its
/// JSON sidecar.
pub fn generate_capture(
    spec: &ExperimentSpec,
    level: u8,
    capture_index: u32,
    n_samples: u64,
    path: &Path,
) -> Result<CaptureManifest> {
    let plan = capture_plan(spec, level, capture_index)?;
    let fmt = spec.format();
    let mut src = CaptureSource::new(spec, &plan)?;
    let mut w = CaptureWriter::create(path, fmt.sample_rate(), fmt.samples_per_bit, level, n_samples)?;
    let chunk = (1usize << 20).max(spec.sync_span());
    let mut buf = vec![0.0f32; chunk];
    let mut left = n_samples;
    let mut offset = None;
    while left > 0 {
        let k = left.min(chunk as u64) as usize;
        src.fill(&mut buf[..k]);
        if left == n_samples && k >= spec.sync_span() {
            let head = SampleStream::new(buf[..k].to_vec(), fmt.sample_rate(), fmt.samples_per_bit)?;
            offset = locate_header(spec, &head).ok();
        }
        w.write(&buf[..k])?;
        left -= k as u64;
    }
    w.finish()?;
    let manifest = capture_manifest(spec, &plan, n_samples, offset);
    write_manifest(path, &manifest)?;
    Ok(manifest)
}

/// Reads up to `n_samples` from the start of a generated capture and locates
/// its first header. Level and capture index come from the sidecar.
pub fn load_capture_prefix(spec: &ExperimentSpec, path: &Path, n_samples: usize) -> Result<Capture> {
    let manifest = read_manifest(path)?;
    let file = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
    let mut reader = CaptureReader::new(std::io::BufReader::with_capacity(1 << 20, file))?;
    if reader.header.level != manifest.level {
        return Err(Error::param(format!(
            "{}: header level {} disagrees with manifest level {}",
            path.display(),
            reader.header.level,
            manifest.level
        )));
    }
    let samples = reader.read_chunk(n_samples)?;
    let stream = SampleStream::new(samples, reader.header.sample_rate, reader.header.samples_per_bit)?;
    let offset = locate_header(spec, &stream)?;
    Ok(Capture {
        stream,
        level: manifest.level,
        capture_id: manifest.capture_index,
        offset,
    })
}

/// Per-file dataset built from capture files instead of fresh simulation.
pub fn captures_dataset(spec: &ExperimentSpec, paths: &[PathBuf]) -> Result<Dataset> {
    if paths.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = spec.dataset_samples();
    let caps: Vec<Capture> = paths
        .par_iter()
        .map(|p| load_capture_prefix(spec, p, n))
        .collect::<Result<_>>()?;
    let cfg = DatasetConfig {
        bits_per_instance: spec.bits_per_instance,
        instances_per_level: spec.instances_per_level(),
        normalization: spec.normalization,
    };
    let mut ds = build_dataset(&caps, &cfg)?;
    ds.manifest.source = serde_json::json!({
        "captures": paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "spec": spec,
    });
    Ok(ds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub n_test: usize,
    /// Counts indexed `[truth][predicted]`.
    pub confusion: Vec<Vec<u64>>,
}

pub fn evaluate(model: &GbtModel, ds: &Dataset) -> Result<EvalReport> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let pred = model.predict_many(&ds.rows())?;
    let truth = ds.labels();
    let n = model.n_classes.max(ds.n_classes);
    Ok(EvalReport {
        accuracy: accuracy(&pred, &truth, n)?,
        n_test: truth.len(),
        confusion: confusion_matrix(&pred, &truth, n)?,
    })
}

/// Outcome of training and testing on one file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileResult {
    pub setting: String,
    pub stabilization_s: f64,
    /// 1-based file number.
    pub file: u32,
    pub bits_per_instance: usize,
    pub instances_total: usize,
    pub accuracy: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub final_train_loss: f64,
    pub confusion: Vec<Vec<u64>>,
}

/// Builds, splits, trains and tests on file `capture_index`. The model is
/// returned alongside the report.
pub fn run_file(spec: &ExperimentSpec, capture_index: u32) -> Result<(FileResult, GbtModel)> {
    let ds = file_dataset(spec, capture_index)?;
    if spec.levels.len() == 1 {
        log::warn!("single-level dataset: accuracy is trivially 1");
    }
    let split_seed = substream_seed(spec.seed, &[TAG_SPLIT, capture_index as u64]);
    let (train_ds, test_ds) = split(&ds, spec.test_fraction, split_seed)?;
    drop(ds);
    log::info!(
        "{} file {}: training on {} x {}",
        spec.preset.name,
        capture_index + 1,
        train_ds.len(),
        train_ds.n_features()
    );
    let model = train(&train_ds, &spec.gbt)?;
    let eval = evaluate(&model, &test_ds)?;
    Ok((
        FileResult {
            setting: spec.preset.name.clone(),
            stabilization_s: spec.stabilization(),
            file: capture_index + 1,
            bits_per_instance: spec.bits_per_instance,
            instances_total: spec.instances_total,
            accuracy: eval.accuracy,
            n_train: train_ds.len(),
            n_test: eval.n_test,
            final_train_loss: *model.train_loss.last().unwrap_or(&f64::NAN),
            confusion: eval.confusion,
        },
        model,
    ))
}

/// Per-file accuracies for each setting, files in order.
pub fn table3(specs: &[ExperimentSpec]) -> Result<Vec<FileResult>> {
    let mut rows = Vec::new();
    for spec in specs {
        spec.validate()?;
        for c in 0..spec.captures_per_level {
            rows.push(run_file(spec, c)?.0);
        }
    }
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    Bits,
    Instances,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bits" => Ok(SweepAxis::Bits),
            "instances" => Ok(SweepAxis::Instances),
            other => Err(Error::param(format!("unknown sweep axis '{other}' (bits|instances)"))),
        }
    }
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepAxis::Bits => "bits",
            SweepAxis::Instances => "instances",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub setting: String,
    pub axis: SweepAxis,
    pub value: usize,
    pub file: u32,
    pub accuracy: f64,
}

/// Spec for one grid point. The bits axis keeps `instances_total`; the
/// instances axis keeps `bits_per_instance`.
pub fn sweep_point(spec: &ExperimentSpec, axis: SweepAxis, value: usize) -> ExperimentSpec {
    let mut s = spec.clone();
    match axis {
        SweepAxis::Bits => s.bits_per_instance = value,
        SweepAxis::Instances => s.instances_total = value,
    }
    s
}

pub fn sweep(spec: &ExperimentSpec, axis: SweepAxis, grid: &[usize], files: &[u32]) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::param("sweep grid is empty"));
    }
    for &f in files {
        if f == 0 || f > spec.captures_per_level {
            return Err(Error::param(format!("file {f} outside 1..={}", spec.captures_per_level)));
        }
    }
    for &v in grid {
        sweep_point(spec, axis, v).validate()?;
    }
    let mut rows = Vec::new();
    for &v in grid {
        let point = sweep_point(spec, axis, v);
        for &f in files {
            let (r, _) = run_file(&point, f - 1)?;
            rows.push(SweepRow {
                setting: spec.preset.name.clone(),
                axis,
                value: v,
                file: f,
                accuracy: r.accuracy,
            });
        }
    }
    Ok(rows)
}

/// Link quality of one level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkRow {
    pub setting: String,
    pub stabilization_s: f64,
    pub level: u8,
    pub bits: usize,
    pub errors: usize,
    pub ber: f64,
    pub q: QFactor,
    pub scint_index_est: f64,
    pub scint_index_target: f64,
}

/// Demodulates up to `table2_bits` bits per level, drawn from consecutive
/// captures as needed.
pub fn table2(specs: &[ExperimentSpec]) -> Result<Vec<LinkRow>> {
    let mut rows = Vec::new();
    for spec in specs {
        spec.validate()?;
        let mut levels = spec.levels.clone();
        levels.sort_unstable();
        for &level in &levels {
            rows.push(link_row(spec, level)?);
        }
    }
    Ok(rows)
}

fn link_row(spec: &ExperimentSpec, level: u8) -> Result<LinkRow> {
    let fmt = spec.format();
    let frame = default_frame();
    let per_capture = spec.capture_bits().saturating_sub(frame.len() as u64 + SYNC_BITS as u64);
    let budget = per_capture * spec.captures_per_level as u64;
    let target = spec.table2_bits.min(budget);
    let mut remaining = target;
    let (mut bits, mut errors) = (0usize, 0usize);
    let (mut s0, mut s1) = (Vec::<f64>::new(), Vec::<f64>::new());
    let mut scint_num = Vec::new();
    let mut c = 0;
    while remaining > 0 {
        let take = remaining.min(per_capture) as usize;
        let cap = simulate_capture(spec, level, c, spec.sync_span() + take * fmt.samples_per_bit)?;
        let rx = &cap.stream;
        let rx_bits = demodulate(rx, cap.offset, fmt.duty)?;
        let rx_bits = BitSequence::new(rx_bits.bits()[..take].to_vec())?;
        let reference = BitSequence::new(frame.bits().iter().copied().cycle().take(take).collect())?;
        let (_, n) = ber_compute(&rx_bits, &reference)?;
        errors += rx_bits.bits().iter().zip(reference.bits()).filter(|(a, b)| a != b).count();
        bits += n;
        let stats = crate::modem::bit_statistics(rx, cap.offset, fmt.duty, take)?;
        for (s, &b) in stats.into_iter().zip(reference.bits()) {
            if b == 1 {
                s1.push(s)
            } else {
                s0.push(s)
            }
        }
        if c == 0 {
            // The scintillation estimate comes from the first capture; Q is
            // pooled over every capture below.
            scint_num.push(scint_index_estimate(
                rx,
                &reference,
                cap.offset,
                fmt.duty,
                Some(spec.preset.awgn_sigma),
            )?);
        }
        remaining -= take as u64;
        c += 1;
    }
    let q = pooled_q(&s0, &s1);
    Ok(LinkRow {
        setting: spec.preset.name.clone(),
        stabilization_s: spec.stabilization(),
        level,
        bits,
        errors,
        ber: errors as f64 / bits as f64,
        q,
        scint_index_est: scint_num[0],
        scint_index_target: spec.preset.scint_index(level)?,
    })
}

fn pooled_q(zeros: &[f64], ones: &[f64]) -> QFactor {
    let moments = |xs: &[f64]| {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        (m, (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
    };
    let (m0, sd0) = moments(zeros);
    let (m1, sd1) = moments(ones);
    if sd0 + sd1 == 0.0 {
        QFactor::Saturated
    } else {
        QFactor::Finite((m1 - m0) / (sd0 + sd1))
    }
}

fn csv_string<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::param(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::param(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Serialize)]
struct FlatFileRow<'a> {
    setting: &'a str,
    stabilization_s: f64,
    file: u32,
    bits_per_instance: usize,
    instances_total: usize,
    accuracy: f64,
    n_train: usize,
    n_test: usize,
}

pub fn file_results_csv(rows: &[FileResult]) -> Result<String> {
    csv_string(rows.iter().map(|r| FlatFileRow {
        setting: &r.setting,
        stabilization_s: r.stabilization_s,
        file: r.file,
        bits_per_instance: r.bits_per_instance,
        instances_total: r.instances_total,
        accuracy: r.accuracy,
        n_train: r.n_train,
        n_test: r.n_test,
    }))
}

#[derive(Serialize)]
struct FlatLinkRow<'a> {
    setting: &'a str,
    stabilization_s: f64,
    level: u8,
    bits: usize,
    errors: usize,
    ber: f64,
    q: Option<f64>,
    scint_index_est: f64,
    scint_index_target: f64,
}

pub fn link_rows_csv(rows: &[LinkRow]) -> Result<String> {
    csv_string(rows.iter().map(|r| FlatLinkRow {
        setting: &r.setting,
        stabilization_s: r.stabilization_s,
        level: r.level,
        bits: r.bits,
        errors: r.errors,
        ber: r.ber,
        q: r.q.value(),
        scint_index_est: r.scint_index_est,
        scint_index_target: r.scint_index_target,
    }))
}

pub fn sweep_rows_csv(rows: &[SweepRow]) -> Result<String> {
    csv_string(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> ExperimentSpec {
        ExperimentSpec {
            levels: vec![0, 5],
            captures_per_level: 2,
            capture_seconds: 0.02,
            bits_per_instance: 100,
            instances_total: 200,
            gbt: GbtParams {
                n_rounds: 5,
                ..GbtParams::default()
            },
            table2_bits: 50_000,
            seed: 9,
            ..ExperimentSpec::default()
        }
    }

    #[test]
    fn capture_times_follow_the_schedule() {
        let mut s = ExperimentSpec::default();
        assert_eq!(s.capture_start(0), 0.0);
        assert_eq!(s.capture_start(2), 25.0);
        s.preset = LinkPreset::stabilized();
        assert_eq!(s.capture_start(1), 612.5);
        s.stabilization_s = Some(0.0);
        assert_eq!(s.capture_start(1), 12.5);
        assert_eq!(s.capture_bits(), 12_500_000);
        s.validate().unwrap();
    }

    #[test]
    fn validation_catches_capacity_and_shape() {
        let mut s = small_spec();
        s.instances_total = 201;
        assert!(s.validate().is_err());
        let mut s = small_spec();
        s.bits_per_instance = 1000;
        assert!(matches!(s.validate(), Err(Error::InsufficientCapture { .. })));
        let mut s = small_spec();
        s.levels = vec![0, 0];
        assert!(s.validate().is_err());
    }

    #[test]
    fn header_is_found_at_the_true_offset() {
        let spec = small_spec();
        for level in [0u8, 5] {
            for c in 0..2 {
                let plan = capture_plan(&spec, level, c).unwrap();
                let cap = simulate_capture(&spec, level, c, spec.dataset_samples()).unwrap();
                let frame_samples = default_frame().len() * 8;
                // The frame repeats its header every half period and either
                // copy is a valid boundary.
                let half = frame_samples / 2;
                let expected = (frame_samples - plan.phase) % half;
                assert_eq!(cap.offset % half, expected, "level {level} capture {c}");
                assert!(cap.offset < frame_samples);
            }
        }
    }

    #[test]
    fn chunked_source_matches_one_shot() {
        let spec = small_spec();
        let plan = capture_plan(&spec, 5, 1).unwrap();
        let mut a = vec![0.0f32; 10_000];
        CaptureSource::new(&spec, &plan).unwrap().fill(&mut a);
        let mut b = vec![0.0f32; 10_000];
        let mut src = CaptureSource::new(&spec, &plan).unwrap();
        for chunk in b.chunks_mut(777) {
            src.fill(chunk);
        }
        assert_eq!(a, b);
    }

    #[test]
    fn file_dataset_is_level_major_and_deterministic() {
        let spec = small_spec();
        let a = file_dataset(&spec, 0).unwrap();
        assert_eq!(a.len(), 200);
        assert_eq!(a.n_features(), 800);
        assert!(a.instances[..100].iter().all(|i| i.label == 0));
        assert!(a.instances[100..].iter().all(|i| i.label == 5));
        let b = file_dataset(&spec, 0).unwrap();
        assert_eq!(a, b);
        let other = file_dataset(&spec, 1).unwrap();
        assert_ne!(a.instances[0].features, other.instances[0].features);
    }

    #[test]
    fn single_point_sweep_equals_table_cell() {
        let spec = small_spec();
        let table = table3(std::slice::from_ref(&spec)).unwrap();
        assert_eq!(table.len(), 2);
        let rows = sweep(&spec, SweepAxis::Bits, &[100], &[2]).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].accuracy, table[1].accuracy);
        let csv = file_results_csv(&table).unwrap();
        assert!(csv.starts_with("setting,stabilization_s,file,"));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn noiseless_link_has_no_errors() {
        let mut spec = small_spec();
        spec.preset.awgn_sigma = 0.0;
        spec.preset.scint_index = Some(vec![0.0; 6]);
        let rows = table2(&[spec]).unwrap();
        for r in &rows {
            assert_eq!(r.errors, 0);
            assert_eq!(r.bits, 50_000);
            assert_eq!(r.q, QFactor::Saturated);
        }
    }

    #[test]
    fn q_falls_with_turbulence() {
        let mut spec = small_spec();
        spec.levels = (0..6).collect();
        spec.instances_total = 600;
        spec.table2_bits = 60_000;
        let rows = table2(&[spec]).unwrap();
        let q: Vec<f64> = rows.iter().map(|r| r.q.value().unwrap()).collect();
        assert!(q[0] > q[5] * 3.0, "{q:?}");
        let violations = q.windows(2).filter(|w| w[1] > w[0]).count();
        assert!(violations <= 1, "{q:?}");
    }
}
