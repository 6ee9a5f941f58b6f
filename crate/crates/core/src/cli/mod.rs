//! The `msp` command line: quantize, train, infer, estimate and report, plus
//! `init` and `gen-data` helpers for producing inputs.

mod config;
mod report;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

pub use config::{ArchSpec, DatasetSpec, DeviceChoice, PathsSection, RunConfig, SchemePreset, TrainingSection};
pub use report::{collect_runs, render_report, RunMetrics};

use crate::assign::{quantize_model, summarize, LayerSummary, QuantizedModel, RowTag, SchemeRatio};
use crate::data::{gen_glyph_images, write_idx_dataset, Split};
use crate::error::{Error, Result};
use crate::fpga::{
    end_to_end_speedup, estimate, perf_table, speedup_over_fixed, write_perf_table_csv, CostModel, DeviceProfile,
    FirstLast, OpProfile,
};
use crate::model_io::{load_model, save_network, save_quantized, StoredModel};
use crate::quant::AlphaMode;
use crate::shift::{compare_engines, infer_with_dump, Engine};
use crate::train::{calibrate_activations, run_experiment, ENGINE_TOLERANCE};

#[derive(Debug, Parser)]
#[command(name = "msp", version, about = "Mixed-scheme, multi-precision quantization toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a randomly initialized float model.
    Init {
        out: PathBuf,
        /// `mlp:W1,...,C` or `cnn:C1,C2`.
        #[arg(long, default_value = "mlp:16,16,2")]
        arch: String,
        /// Input shape, e.g. `2` or `1x28x28`.
        #[arg(long, default_value = "2")]
        input: String,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Write procedural 28x28 glyph images as an IDX dataset directory.
    GenData {
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        train: usize,
        #[arg(long, default_value_t = 2000)]
        test: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Quantize a float model's weights row by row.
    Quantize {
        model_in: PathBuf,
        model_out: PathBuf,
        #[arg(long, value_enum, default_value = "msp")]
        scheme: SchemePreset,
        #[arg(long, default_value_t = 4)]
        bits: u32,
        /// `spot:fixed:eight` percentages summing to 100.
        #[arg(long)]
        ratio: Option<String>,
        #[arg(long)]
        m1: Option<u32>,
        #[arg(long)]
        m2: Option<u32>,
        #[arg(long, default_value = "max-abs", value_parser = ["max-abs", "least-squares"])]
        alpha: String,
        /// Dataset used to calibrate activation quantizers (`moons:N`, `idx:DIR`, ...).
        #[arg(long)]
        calibrate: Option<String>,
        #[arg(long, default_value_t = 32)]
        calibrate_count: usize,
        #[arg(long, default_value_t = 4)]
        act_bits: u32,
        /// Seed for synthetic datasets that do not name one.
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Float-train, then ADMM-quantize, as described by a run config.
    Train { config: PathBuf },
    /// Run a quantized model on a dataset.
    Infer {
        model: PathBuf,
        #[arg(long, default_value = "shift", value_parser = ["shift", "float_ref"])]
        engine: String,
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        limit: Option<usize>,
        /// Directory for per-layer output tensors.
        #[arg(long)]
        dump: Option<PathBuf>,
        /// Write the full result (predictions, checksums) as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Model FPGA utilization, throughput and latency.
    Estimate {
        /// Model whose layers form the op profile (default profile: resnet18).
        model: Option<PathBuf>,
        /// `xc7z020`, `xc7z045` or a device JSON file.
        #[arg(long, default_value = "xc7z045")]
        device: String,
        #[arg(long)]
        ratio: Option<String>,
        /// `resnet18` or `mobilenet_v2`; overrides the model's own layers.
        #[arg(long)]
        profile: Option<String>,
        /// Run the first and last layers at full precision on the DSPs.
        #[arg(long)]
        unquantized_first_last: bool,
        /// Cost model JSON (default: the shipped calibration).
        #[arg(long)]
        cost: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the modeled performance table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Summarize training runs and the modeled hardware tables.
    Report {
        runs: PathBuf,
        /// Output directory (default: the runs directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

fn parse_dims(s: &str) -> Result<Vec<usize>> {
    s.split('x')
        .map(|d| d.trim().parse().ok().filter(|v| *v > 0))
        .collect::<Option<Vec<usize>>>()
        .ok_or_else(|| Error::Config(format!("bad input shape {s:?}")))
}

fn parse_alpha(s: &str) -> AlphaMode {
    if s == "least-squares" {
        AlphaMode::LeastSquares
    } else {
        AlphaMode::MaxAbs
    }
}

fn load_quantized(path: &Path) -> Result<QuantizedModel> {
    match load_model(path)? {
        StoredModel::Quantized(m) => Ok(m),
        StoredModel::Float(_) => Err(Error::Unfinalized(format!(
            "{} is a float model; run `msp quantize --calibrate` first",
            path.display()
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizeSummary {
    pub scheme: SchemePreset,
    pub ratio: String,
    pub lut_scheme: String,
    pub bits: u32,
    pub alpha: AlphaMode,
    pub activation_bits: Option<u32>,
    pub layers: Vec<LayerSummary>,
}

/// Row counts per group for every quantized layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCounts {
    pub index: usize,
    pub spot: usize,
    pub fixed: usize,
    pub eight: usize,
}

pub fn layer_counts(model: &QuantizedModel) -> Vec<LayerCounts> {
    model
        .layers
        .iter()
        .map(|l| LayerCounts {
            index: l.index,
            spot: l.map.count(RowTag::Spot),
            fixed: l.map.count(RowTag::Fixed),
            eight: l.map.count(RowTag::Eight),
        })
        .collect()
}

/// Parses arguments from `args` and runs the command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Config(e.to_string()))?;
    execute(cli.command)
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Init {
            out,
            arch,
            input,
            classes,
            seed,
        } => {
            let net = arch.parse::<ArchSpec>()?.build(&parse_dims(&input)?, classes, seed)?;
            save_network(&out, &net)?;
            println!("wrote float model {} ({} layers)", out.display(), net.layers().len());
            Ok(())
        }
        Command::GenData { out, train, test, seed } => {
            for (split, n, s) in [(Split::Train, train, seed), (Split::Test, test, seed.wrapping_add(1))] {
                let (pixels, labels) = gen_glyph_images(n, s);
                write_idx_dataset(&out, split, 28, 28, &pixels, &labels)?;
            }
            println!("wrote {train} train and {test} test images to {}", out.display());
            Ok(())
        }
        Command::Quantize {
            model_in,
            model_out,
            scheme,
            bits,
            ratio,
            m1,
            m2,
            alpha,
            calibrate,
            calibrate_count,
            act_bits,
            seed,
        } => {
            let ratio: SchemeRatio = match ratio {
                Some(r) => r.parse()?,
                None => scheme.default_ratio(),
            };
            scheme.check_ratio(&ratio)?;
            let alpha = parse_alpha(&alpha);
            let cfg = scheme.scheme_config(bits, config::spot_split(m1, m2)?, alpha)?;
            let net = load_model(&model_in)?.net().clone();
            let mut model = quantize_model(&net, &ratio, &cfg)?;
            let mut activation_bits = None;
            if let Some(spec) = calibrate {
                let data = spec.parse::<DatasetSpec>()?.load_eval(seed)?;
                let q = calibrate_activations(&model.net, &data, calibrate_count, act_bits)?;
                for l in &mut model.layers {
                    l.activation = q[l.index];
                }
                activation_bits = Some(act_bits);
            }
            save_quantized(&model_out, &model)?;
            let summary = QuantizeSummary {
                scheme,
                ratio: ratio.to_string(),
                lut_scheme: cfg.lut.to_string(),
                bits,
                alpha,
                activation_bits,
                layers: summarize(&net, &model)?,
            };
            write_json(&model_out.join("summary.json"), &summary)?;
            for c in layer_counts(&model) {
                println!("layer {}: spot {} fixed {} eight {}", c.index, c.spot, c.fixed, c.eight);
            }
            println!("wrote {}", model_out.display());
            Ok(())
        }
        Command::Train { config } => train_command(&config),
        Command::Infer {
            model,
            engine,
            dataset,
            limit,
            dump,
            out,
            seed,
        } => {
            let engine: Engine = engine.parse()?;
            let model = load_quantized(&model)?;
            let mut data = dataset.parse::<DatasetSpec>()?.load_eval(seed)?;
            if let Some(n) = limit {
                data = data.take(n)?;
            }
            let result = infer_with_dump(&model, &data, engine, dump.as_deref())?;
            let cmp = compare_engines(&model, &data, ENGINE_TOLERANCE)?;
            let correct = (result.accuracy * result.samples as f64).round() as usize;
            println!(
                "accuracy: {:.4} ({correct}/{}) engine={engine}",
                result.accuracy, result.samples
            );
            println!("engines agree: {}", cmp.agree);
            println!("max relative difference: {:.3e}", cmp.max_relative_diff);
            if let Some(path) = out {
                write_json(&path, &result)?;
            }
            Ok(())
        }
        Command::Estimate {
            model,
            device,
            ratio,
            profile,
            unquantized_first_last,
            cost,
            out,
            csv,
        } => {
            let device = if device.ends_with(".json") {
                let path = PathBuf::from(&device);
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                let d: DeviceProfile =
                    serde_json::from_str(&text).map_err(|e| Error::Config(format!("device file: {e}")))?;
                d.validate()?;
                d
            } else {
                device.parse()?
            };
            let cost = match cost {
                Some(path) => {
                    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                    let c: CostModel =
                        serde_json::from_str(&text).map_err(|e| Error::Config(format!("cost model: {e}")))?;
                    c.validate()?;
                    c
                }
                None => CostModel::shipped(),
            };
            let stored = model.as_deref().map(load_model).transpose()?;
            let ops = match (&profile, &stored) {
                (Some(p), _) => p.parse()?,
                (None, Some(m)) => OpProfile::from_network("model", m.net())?,
                (None, None) => OpProfile::resnet18(),
            };
            let ratio: SchemeRatio = match (ratio, &stored) {
                (Some(r), _) => r.parse()?,
                (None, Some(StoredModel::Quantized(m))) => m
                    .layers
                    .first()
                    .map(|l| l.map.ratio)
                    .unwrap_or(device.msp_ratio),
                _ => device.msp_ratio,
            };
            let first_last = if unquantized_first_last {
                FirstLast::Unquantized
            } else {
                FirstLast::Quantized
            };
            let report = estimate(&ops, &device, &ratio, &cost, first_last)?;
            match out {
                Some(path) => write_json(&path, &report)?,
                None => println!("{}", serde_json::to_string_pretty(&report)?),
            }
            if let Some(path) = csv {
                let mut buf = Vec::new();
                write_perf_table_csv(&perf_table(&cost)?, &mut buf)?;
                write_bytes(&path, &buf)?;
            }
            Ok(())
        }
        Command::Report { runs, out } => {
            let found = collect_runs(&runs)?;
            if found.is_empty() {
                eprintln!("warning: no runs found under {}; tables are empty", runs.display());
                return Ok(());
            }
            let out = out.unwrap_or_else(|| runs.clone());
            let rendered = render_report(&found, &CostModel::shipped())?;
            write_bytes(&out.join("report.md"), rendered.markdown.as_bytes())?;
            write_bytes(&out.join("runs.csv"), &rendered.runs_csv)?;
            write_bytes(&out.join("perf_table.csv"), &rendered.perf_csv)?;
            print!("{}", rendered.markdown);
            Ok(())
        }
    }
}

fn train_command(config_path: &Path) -> Result<()> {
    let text = fs::read_to_string(config_path).map_err(|e| Error::io(config_path, e))?;
    let cfg = RunConfig::from_json(&text)?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let run = cfg.resolve(base)?;
    let (train_set, test_set) = run.dataset.load_split(cfg.seed, cfg.paths.test_fraction)?;
    let net = run
        .arch
        .build(train_set.sample_dims(), train_set.num_classes(), cfg.seed)?;
    let exp = run_experiment(&net, &train_set, &test_set, &run.float_cfg, &run.admm_cfg)?;

    let out = if cfg.paths.out.is_relative() {
        base.join(&cfg.paths.out)
    } else {
        cfg.paths.out.clone()
    };
    save_network(out.join("float_model"), &exp.float.net)?;
    save_quantized(out.join("model"), &exp.quant.model)?;
    exp.float.log.save_csv(out.join("float_log.csv"))?;
    exp.quant.log.save_csv(out.join("train_log.csv"))?;
    write_json(&out.join("config.json"), &cfg)?;

    let ops = OpProfile::from_network("model", &exp.quant.model.net)?;
    let device = &run.device;
    let cost = CostModel::shipped();
    let est = estimate(&ops, device, &run.ratio, &cost, FirstLast::Quantized)?;
    let metrics = RunMetrics {
        scheme: cfg.scheme,
        ratio: run.ratio.to_string(),
        lut_scheme: run.scheme.lut.to_string(),
        bits: cfg.bits,
        seed: cfg.seed,
        arch: cfg.training.arch.clone(),
        dataset: cfg.paths.dataset.clone(),
        train_samples: train_set.len(),
        test_samples: test_set.len(),
        accuracy: exp.metrics.clone(),
        layers: layer_counts(&exp.quant.model),
        estimate: report::RunEstimate {
            device: device.name.clone(),
            gops: est.gops,
            latency_ms: est.latency_ms,
            speedup_over_fixed: speedup_over_fixed(&ops, device, &run.ratio, &cost)?,
            end_to_end_speedup: end_to_end_speedup(&ops, device, &run.ratio, &cost)?,
        },
    };
    write_json(&out.join("metrics.json"), &metrics)?;
    println!(
        "float test accuracy {:.4}; quantized (shift engine) {:.4}; feasibility gap {:.3e}; engines agree: {}",
        metrics.accuracy.float_test_acc,
        metrics.accuracy.quant_test_acc,
        metrics.accuracy.feasibility_gap,
        metrics.accuracy.engines_agree
    );
    println!("wrote {}", out.display());
    Ok(())
}
