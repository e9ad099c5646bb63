//! `fsoturb`: simulate captures, build datasets, train and evaluate
//! turbulence classifiers, and reproduce the link and accuracy tables.

use std::fs;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fsoturb::capture::{read_manifest, CaptureReader};
use fsoturb::dataset::{load_dataset, save_dataset, DatasetFormat, Normalization};
use fsoturb::experiment::{
    captures_dataset, evaluate, file_dataset, file_results_csv, generate_capture, link_rows_csv, run_file, sweep,
    sweep_rows_csv, table2, table3, ExperimentSpec, SweepAxis,
};
use fsoturb::gbt::{load_model, save_model, train};
use fsoturb::monitor::Monitor;
use fsoturb::preset::LinkPreset;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "fsoturb", version, about = "FSO turbulence simulation and classification")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Global {
    /// Master seed; every random stream derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Link preset: `immediate`, `stabilized`, or a path to a preset TOML.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Directory for reports, captures, datasets and models.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Instance normalization: `per-instance` or `per-file`.
    #[arg(long, global = true)]
    norm: Option<Normalization>,
    /// Experiment TOML. Values in it take precedence over flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write FSOC capture files (plus JSON manifests) for every level and file.
    Generate {
        /// Comma-separated levels; defaults to all six.
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<u8>>,
        /// Captures (files) per level.
        #[arg(long)]
        captures: Option<u32>,
        /// Seconds per capture.
        #[arg(long)]
        seconds: Option<f64>,
    },
    /// Build the dataset of one file, from capture files or fresh simulation.
    Dataset {
        #[arg(long, default_value_t = 1)]
        file: u32,
        /// Directory written by `generate`; its manifests supply the spec.
        #[arg(long)]
        captures_dir: Option<PathBuf>,
        #[arg(long)]
        bits: Option<usize>,
        #[arg(long)]
        instances: Option<usize>,
        /// Output path; `.csv` selects CSV, anything else the binary format.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train a model. With `--data`, on the whole dataset file; otherwise
    /// build file `--file`, split it, train and test.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        file: u32,
        #[arg(long)]
        bits: Option<usize>,
        #[arg(long)]
        instances: Option<usize>,
        /// Boosting rounds.
        #[arg(long)]
        rounds: Option<usize>,
        /// Model output path; defaults to `<out-dir>/model.json`.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Accuracy and confusion matrix of a model on a dataset file.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Per-level Q factor, BER and scintillation index.
    Table2 {
        /// Bits demodulated per level.
        #[arg(long)]
        bits: Option<u64>,
    },
    /// Per-file classification accuracy.
    Table3 {
        #[arg(long)]
        bits: Option<usize>,
        #[arg(long)]
        instances: Option<usize>,
        #[arg(long)]
        rounds: Option<usize>,
    },
    /// Accuracy across a grid of bits per instance or instance counts.
    Sweep {
        #[arg(long)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3])]
        files: Vec<u32>,
        #[arg(long)]
        rounds: Option<usize>,
    },
    /// Classify consecutive windows of a capture file or of standard input
    /// (`-`), one JSON line per window.
    Monitor {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "-")]
        input: String,
        /// Window length in bits; defaults to the model's feature length.
        #[arg(long)]
        window_bits: Option<usize>,
    },
}

/// Flag and config layering for one experiment spec.
struct SpecBuilder {
    seed: Option<u64>,
    norm: Option<Normalization>,
    config: Option<toml::Table>,
}

impl SpecBuilder {
    fn new(g: &Global) -> Result<Self> {
        let config = match &g.config {
            None => None,
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                let table: toml::Table = toml::from_str(&text)
                    .map_err(|e| fsoturb::Error::Parse { position: path.display().to_string(), message: e.to_string() })?;
                Some(table)
            }
        };
        Ok(Self {
            seed: g.seed,
            norm: g.norm,
            config,
        })
    }

    /// A preset named by the config; a `[preset]` table only patches.
    fn config_preset_name(&self) -> Option<&str> {
        self.config.as_ref().and_then(|c| c.get("preset")).and_then(|v| v.as_str())
    }

    /// Flags first, then the command's own overrides, then the config file.
    fn build(&self, base: ExperimentSpec, tweak: impl FnOnce(&mut ExperimentSpec)) -> Result<ExperimentSpec> {
        let mut spec = base;
        if let Some(seed) = self.seed {
            spec.seed = seed;
        }
        if let Some(norm) = self.norm {
            spec.normalization = norm;
        }
        tweak(&mut spec);
        if let Some(cfg) = &self.config {
            let mut cfg = cfg.clone();
            if let Some(toml::Value::String(name)) = cfg.get("preset") {
                spec.preset = LinkPreset::resolve(name)?;
                cfg.remove("preset");
            }
            let mut merged = toml::Table::try_from(&spec).map_err(|e| anyhow!("serializing spec: {e}"))?;
            merge(&mut merged, cfg);
            spec = merged
                .try_into()
                .map_err(|e: toml::de::Error| fsoturb::Error::Parse { position: "config".into(), message: e.to_string() })?;
        }
        spec.preset.validate()?;
        spec.validate()?;
        Ok(spec)
    }

    /// Specs for the requested preset, or for both built-in presets when
    /// `both` is set and neither the flag nor the config names one.
    fn specs(&self, preset: Option<&str>, both: bool, tweak: impl Fn(&mut ExperimentSpec)) -> Result<Vec<ExperimentSpec>> {
        let presets = match preset {
            Some(p) => vec![LinkPreset::resolve(p)?],
            None if both && self.config_preset_name().is_none() => vec![LinkPreset::immediate(), LinkPreset::stabilized()],
            None => vec![LinkPreset::immediate()],
        };
        presets
            .into_iter()
            .map(|p| self.build(ExperimentSpec::with_preset(p), &tweak))
            .collect()
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn to_json<T: Serialize + ?Sized>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn capture_path(dir: &Path, level: u8, file: u32) -> PathBuf {
    dir.join(format!("level{level}_file{file}.fsoc"))
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let sb = SpecBuilder::new(g)?;
    let out = &g.out_dir;
    let preset = g.preset.as_deref();

    match cli.cmd {
        Cmd::Generate {
            levels,
            captures,
            seconds,
        } => {
            let spec = sb.specs(preset, false, |s| {
                if let Some(l) = &levels {
                    s.levels = l.clone();
                }
                if let Some(c) = captures {
                    s.captures_per_level = c;
                }
                if let Some(t) = seconds {
                    s.capture_seconds = t;
                }
            })?
            .remove(0);
            let dir = out.join("captures");
            ensure_dir(&dir)?;
            let n = (spec.capture_seconds * spec.format().sample_rate()).round() as u64;
            let mut written = Vec::new();
            for &level in &spec.levels {
                for c in 0..spec.captures_per_level {
                    let path = capture_path(&dir, level, c + 1);
                    log::info!("level {level} file {}: {} samples -> {}", c + 1, n, path.display());
                    let m = generate_capture(&spec, level, c, n, &path)?;
                    written.push(serde_json::json!({
                        "path": path.display().to_string(),
                        "level": level,
                        "file": c + 1,
                        "start_time_s": m.start_time_s,
                        "sample_count": m.sample_count,
                        "frame_offset": m.frame_offset,
                    }));
                }
            }
            print!("{}", to_json(&written)?);
        }

        Cmd::Dataset {
            file,
            captures_dir,
            bits,
            instances,
            output,
        } => {
            let tweak = |s: &mut ExperimentSpec| {
                if let Some(b) = bits {
                    s.bits_per_instance = b;
                }
                if let Some(i) = instances {
                    s.instances_total = i;
                }
            };
            let ds = match &captures_dir {
                Some(dir) => {
                    let base = manifest_spec(dir, file)?;
                    let base = match preset {
                        Some(p) => ExperimentSpec { preset: LinkPreset::resolve(p)?, ..base },
                        None => base,
                    };
                    let spec = sb.build(base, tweak)?;
                    let paths: Vec<PathBuf> = spec.levels.iter().map(|&l| capture_path(dir, l, file)).collect();
                    captures_dataset(&spec, &paths)?
                }
                None => {
                    let spec = sb.specs(preset, false, tweak)?.remove(0);
                    check_file(&spec, file)?;
                    file_dataset(&spec, file - 1)?
                }
            };
            let path = output.unwrap_or_else(|| out.join(format!("dataset_file{file}.fsod")));
            if let Some(dir) = path.parent() {
                ensure_dir(dir)?;
            }
            save_dataset(&path, &ds, DatasetFormat::from_path(&path))?;
            print!(
                "{}",
                to_json(&serde_json::json!({
                    "path": path.display().to_string(),
                    "instances": ds.len(),
                    "features": ds.n_features(),
                    "class_counts": ds.class_counts(),
                }))?
            );
        }

        Cmd::Train {
            data,
            file,
            bits,
            instances,
            rounds,
            model,
        } => {
            let spec = sb
                .specs(preset, false, |s| {
                    if let Some(b) = bits {
                        s.bits_per_instance = b;
                    }
                    if let Some(i) = instances {
                        s.instances_total = i;
                    }
                    if let Some(r) = rounds {
                        s.gbt.n_rounds = r;
                    }
                })?
                .remove(0);
            let model_path = model.unwrap_or_else(|| out.join("model.json"));
            if let Some(dir) = model_path.parent() {
                ensure_dir(dir)?;
            }
            match data {
                Some(path) => {
                    let ds = load_dataset(&path, DatasetFormat::from_path(&path))?;
                    let m = train(&ds, &spec.gbt)?;
                    save_model(&model_path, &m)?;
                    print!(
                        "{}",
                        to_json(&serde_json::json!({
                            "model": model_path.display().to_string(),
                            "n_train": ds.len(),
                            "n_features": m.n_features,
                            "final_train_loss": m.train_loss.last(),
                        }))?
                    );
                }
                None => {
                    check_file(&spec, file)?;
                    let (r, m) = run_file(&spec, file - 1)?;
                    save_model(&model_path, &m)?;
                    let report = to_json(&r)?;
                    write_file(&out.join(format!("train_file{file}.json")), &report)?;
                    print!("{report}");
                }
            }
        }

        Cmd::Eval { model, data } => {
            let m = load_model(&model)?;
            let ds = load_dataset(&data, DatasetFormat::from_path(&data))?;
            let report = to_json(&evaluate(&m, &ds)?)?;
            write_file(&out.join("eval.json"), &report)?;
            print!("{report}");
        }

        Cmd::Table2 { bits } => {
            let specs = sb.specs(preset, true, |s| {
                if let Some(b) = bits {
                    s.table2_bits = b;
                }
            })?;
            let rows = table2(&specs)?;
            let csv = link_rows_csv(&rows)?;
            write_file(&out.join("table2.csv"), &csv)?;
            write_file(&out.join("table2.json"), &to_json(&rows)?)?;
            print!("{csv}");
        }

        Cmd::Table3 {
            bits,
            instances,
            rounds,
        } => {
            let specs = sb.specs(preset, true, |s| {
                if let Some(b) = bits {
                    s.bits_per_instance = b;
                }
                if let Some(i) = instances {
                    s.instances_total = i;
                }
                if let Some(r) = rounds {
                    s.gbt.n_rounds = r;
                }
            })?;
            let rows = table3(&specs)?;
            let csv = file_results_csv(&rows)?;
            write_file(&out.join("table3.csv"), &csv)?;
            write_file(&out.join("table3.json"), &to_json(&rows)?)?;
            print!("{csv}");
        }

        Cmd::Sweep {
            axis,
            grid,
            files,
            rounds,
        } => {
            let specs = sb.specs(preset, false, |s| {
                if let Some(r) = rounds {
                    s.gbt.n_rounds = r;
                }
            })?;
            let rows = sweep(&specs[0], axis, &grid, &files)?;
            let csv = sweep_rows_csv(&rows)?;
            write_file(&out.join(format!("sweep_{axis}.csv")), &csv)?;
            write_file(&out.join(format!("sweep_{axis}.json")), &to_json(&rows)?)?;
            print!("{csv}");
        }

        Cmd::Monitor {
            model,
            input,
            window_bits,
        } => {
            let m = load_model(&model)?;
            if input == "-" {
                monitor(&m, io::stdin().lock(), window_bits)?;
            } else {
                let f = fs::File::open(&input).with_context(|| format!("opening {input}"))?;
                monitor(&m, io::BufReader::with_capacity(1 << 20, f), window_bits)?;
            }
        }
    }
    Ok(())
}

fn check_file(spec: &ExperimentSpec, file: u32) -> Result<()> {
    if file == 0 || file > spec.captures_per_level {
        bail!(fsoturb::Error::InvalidParam(format!(
            "file {file} outside 1..={}",
            spec.captures_per_level
        )));
    }
    Ok(())
}

/// The experiment spec recorded by `generate`, taken from the first
/// manifest of `file` found in `dir`.
fn manifest_spec(dir: &Path, file: u32) -> Result<ExperimentSpec> {
    for level in 0..fsoturb::channel::N_LEVELS as u8 {
        let path = capture_path(dir, level, file);
        if path.exists() {
            let m = read_manifest(&path)?;
            return Ok(serde_json::from_value(m.spec)?);
        }
    }
    bail!(fsoturb::Error::InvalidParam(format!(
        "no captures for file {file} in {}",
        dir.display()
    )))
}

fn monitor(model: &fsoturb::gbt::GbtModel, input: impl Read, window_bits: Option<usize>) -> Result<()> {
    let mut reader = CaptureReader::new(input)?;
    let h = reader.header;
    let mut mon = Monitor::new(model, h.sample_rate, h.samples_per_bit, window_bits)?;
    let stdout = io::stdout();
    let mut w = BufWriter::new(stdout.lock());
    loop {
        let chunk = reader.read_chunk(1 << 16)?;
        if chunk.is_empty() {
            break;
        }
        for line in mon.push(&chunk)? {
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    mon.finish()?;
    Ok(())
}

/// 1 for invalid input, 2 for I/O failures.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<fsoturb::Error>() {
            return if e.is_validation() { 1 } else { 2 };
        }
        if let Some(e) = cause.downcast_ref::<io::Error>() {
            // A closed pipe on stdout ends the output quietly.
            return if e.kind() == io::ErrorKind::BrokenPipe { 0 } else { 2 };
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            if code != 0 {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(code)
        }
    }
}
