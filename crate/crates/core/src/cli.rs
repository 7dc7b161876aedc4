//! File-based pipeline behind the `cornerscope` binary.
//!
//! Every stage reads artifacts from `--out-dir` (or explicit paths), writes
//! its own artifacts there, and embeds the resolved configuration and tool
//! version: a `meta` key in JSON, a leading `{"meta": ...}` line in JSONL and
//! `#` comment lines in CSV. Artifacts never contain paths or timestamps, so
//! reruns with the same configuration are byte-identical.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::io;
use crate::monitor::{build_monitor, validate_monitor, BoxedMonitor, CornerRegion};
use crate::neuralnet::{LabeledDataset, Network, TrainConfig};
use crate::prioritize::{prioritize_monitor, CornerLine, CornerReport};
use crate::repair::{build_modify_dataset, repair, sample_corner};
use crate::synth::two_moons;
use crate::testgen::{run_attempts, TestGenConfig, TestGenReport};

pub const HISTOGRAM_BINS: usize = 10;

/// Hyper-parameters shared by all stages. Command-line flags override values
/// loaded with `--config`, which override these defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub samples: usize,
    pub holdout_samples: usize,
    pub noise: f64,
    pub layers: Vec<usize>,
    pub train: TrainConfig,
    /// Monitored layer, 1-based.
    pub layer: usize,
    pub k: usize,
    pub phi: usize,
    pub delta_fraction: f64,
    pub delta_h: usize,
    /// Per-box cap on extracted corners.
    pub cap: usize,
    pub rho: usize,
    pub repair: TrainConfig,
    pub testgen: TestGenConfig,
    pub runs: usize,
    pub eval_samples: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            samples: 400,
            holdout_samples: 200,
            noise: 0.1,
            layers: vec![2, 4, 16, 2],
            train: TrainConfig {
                epochs: 300,
                ..TrainConfig::default()
            },
            layer: 1,
            k: 2,
            phi: 3,
            delta_fraction: 0.05,
            delta_h: 1,
            cap: 1000,
            rho: 10,
            repair: TrainConfig::default(),
            testgen: TestGenConfig {
                init_noise: 0.05,
                ..TestGenConfig::default()
            },
            runs: 20,
            eval_samples: 10,
        }
    }
}

/// Offsets that give every randomised stage its own stream.
#[derive(Clone, Copy, Debug)]
pub enum Stage {
    Data = 0,
    Holdout = 1,
    Init = 2,
    Train = 3,
    Cluster = 4,
    RepairSamples = 5,
    RepairTrain = 6,
    EvalSamples = 7,
    Testgen = 1000,
}

pub fn stage_seed(seed: u64, stage: Stage) -> u64 {
    seed.wrapping_add(stage as u64)
}

#[derive(Parser, Debug)]
#[command(
    name = "cornerscope",
    version,
    about = "Boxed feature monitors, unsupported-corner prioritization, repair and test generation"
)]
pub struct Cli {
    /// Base seed for every randomised stage.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON file with pipeline hyper-parameters.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for artifacts; also the default location of stage inputs.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write the two-moons benchmark (dataset.csv, holdout.csv).
    Synth(SynthArgs),
    /// Train a network on a CSV dataset.
    Train(TrainArgs),
    /// Build a k-box monitor on one layer.
    BuildMonitor(MonitorArgs),
    /// Validate a monitor against the training features.
    Check(CheckArgs),
    /// Extract and rank unsupported corners.
    Prioritize(PrioritizeArgs),
    /// Retrain the layers after the monitored one against corner samples.
    Repair(RepairArgs),
    /// Generate inputs whose features move into unsupported corners.
    Testgen(TestgenArgs),
    /// Max-softmax statistics over corner samples and monitor acceptance.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub holdout_samples: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Layer widths including input and output, e.g. `2,4,16,2`.
    #[arg(long, value_delimiter = ',')]
    pub layers: Option<Vec<usize>>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Start from this network instead of a seeded random one.
    #[arg(long)]
    pub init: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FeatureSource {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub network: Option<PathBuf>,
    /// Precomputed feature CSV; replaces `--data`/`--network`.
    #[arg(long)]
    pub features: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MonitorArgs {
    #[command(flatten)]
    pub source: FeatureSource,
    #[arg(long)]
    pub layer: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub phi: Option<usize>,
    #[arg(long)]
    pub delta_fraction: Option<f64>,
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    #[command(flatten)]
    pub source: FeatureSource,
    #[arg(long)]
    pub monitor: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PrioritizeArgs {
    #[command(flatten)]
    pub source: FeatureSource,
    #[arg(long)]
    pub monitor: Option<PathBuf>,
    /// Hamming distance threshold; proposals are at distance > this value.
    #[arg(long)]
    pub delta_h: Option<usize>,
    #[arg(long)]
    pub cap: Option<usize>,
}

#[derive(Args, Debug)]
pub struct RepairArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub network: Option<PathBuf>,
    #[arg(long)]
    pub monitor: Option<PathBuf>,
    #[arg(long)]
    pub corners: Option<PathBuf>,
    #[arg(long)]
    pub rho: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TestgenArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub network: Option<PathBuf>,
    #[arg(long)]
    pub monitor: Option<PathBuf>,
    #[arg(long)]
    pub corners: Option<PathBuf>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Also write every optimisation step to testgen_trace.csv.
    #[arg(long)]
    pub emit_trace: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub network: Option<PathBuf>,
    /// Second network to compare against, typically the repaired one.
    #[arg(long)]
    pub compare: Option<PathBuf>,
    #[arg(long)]
    pub monitor: Option<PathBuf>,
    #[arg(long)]
    pub corners: Option<PathBuf>,
    /// Held-out dataset for accuracy and monitor acceptance rates.
    #[arg(long)]
    pub holdout: Option<PathBuf>,
    #[arg(long)]
    pub samples: Option<usize>,
}

struct Ctx {
    out_dir: PathBuf,
    config: PipelineConfig,
    command: &'static str,
}

impl Ctx {
    fn input(&self, given: &Option<PathBuf>, default: &str) -> PathBuf {
        given.clone().unwrap_or_else(|| self.out_dir.join(default))
    }

    fn output(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn meta(&self) -> Value {
        json!({
            "tool": "cornerscope",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "config": self.config,
        })
    }

    fn meta_comments(&self) -> Vec<String> {
        vec![format!("meta {}", self.meta())]
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let mut v = serde_json::to_value(value)?;
        match &mut v {
            Value::Object(map) => {
                map.insert("meta".into(), self.meta());
            }
            other => {
                v = json!({ "meta": self.meta(), "value": other.take() });
            }
        }
        let path = self.output(name);
        io::write_json(&path, &v)?;
        Ok(path)
    }

    fn write_jsonl<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<PathBuf> {
        let path = self.output(name);
        let mut w = io::create(&path)?;
        serde_json::to_writer(&mut w, &json!({ "meta": self.meta() }))?;
        writeln!(w)?;
        for r in rows {
            serde_json::to_writer(&mut w, r)?;
            writeln!(w)?;
        }
        w.flush()?;
        Ok(path)
    }
}

pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn read_network(path: &Path) -> Result<Network> {
    io::read_json(path)
}

pub fn read_monitor(path: &Path) -> Result<BoxedMonitor> {
    let mon: BoxedMonitor = io::read_json(path)?;
    mon.check()?;
    Ok(mon)
}

/// Reads a corner JSONL file, skipping the metadata line.
pub fn read_corners(path: &Path) -> Result<Vec<CornerReport>> {
    let reader = BufReader::new(io::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(&line).map_err(|e| Error::parse("corners", i + 1, e))?;
        if v.get("meta").is_some() {
            continue;
        }
        let c: CornerLine = serde_json::from_value(v).map_err(|e| Error::parse("corners", i + 1, e))?;
        out.push(c.into());
    }
    Ok(out)
}

/// Corners that survived the cross-box filter, checked against `mon`.
pub fn kept_regions(corners: &[CornerReport], mon: &BoxedMonitor) -> Result<Vec<CornerRegion>> {
    corners
        .iter()
        .filter(|c| c.discarded_by.is_none())
        .map(|c| {
            let region = mon.corner_region(c.box_index, &c.bits)?;
            if region.lower != c.region.lower || region.upper != c.region.upper {
                return Err(Error::Config(format!(
                    "corner {} of box {} does not belong to the monitor",
                    c.bits, c.box_index
                )));
            }
            Ok(region)
        })
        .collect()
}

fn read_dataset(path: &Path, input_dim: usize) -> Result<LabeledDataset> {
    io::read_dataset(io::open(path)?, input_dim)
}

fn features_of(ctx: &Ctx, src: &FeatureSource, layer: usize) -> Result<Vec<Vec<f64>>> {
    if let Some(path) = &src.features {
        return io::read_features(io::open(path)?);
    }
    let net = read_network(&ctx.input(&src.network, "network.json"))?;
    let data = read_dataset(&ctx.input(&src.data, "dataset.csv"), net.input_dim())?;
    data.inputs.iter().map(|x| net.feature_at(layer, x)).collect()
}

/// Max-softmax histogram over `HISTOGRAM_BINS` equal bins of `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxStats {
    pub histogram: Vec<usize>,
    pub mean: Option<f64>,
    pub fraction_above_0_9: Option<f64>,
}

impl SoftmaxStats {
    pub fn from_values(values: &[f64]) -> Self {
        let mut histogram = vec![0; HISTOGRAM_BINS];
        for v in values {
            let bin = ((v * HISTOGRAM_BINS as f64).floor() as usize).min(HISTOGRAM_BINS - 1);
            histogram[bin] += 1;
        }
        let n = values.len() as f64;
        let (mean, fraction_above_0_9) = if values.is_empty() {
            (None, None)
        } else {
            (
                Some(values.iter().sum::<f64>() / n),
                Some(values.iter().filter(|v| **v > 0.9).count() as f64 / n),
            )
        };
        Self {
            histogram,
            mean,
            fraction_above_0_9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkEval {
    pub corner_samples: SoftmaxStats,
    pub holdout_accuracy: Option<f64>,
    pub holdout_acceptance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub corners: usize,
    pub samples_per_corner: usize,
    pub before: NetworkEval,
    pub after: Option<NetworkEval>,
}

/// Held-out corner samples in corner order, `per_corner` each.
pub fn corner_samples(corners: &[CornerRegion], per_corner: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    corners
        .iter()
        .flat_map(|c| sample_corner(c, per_corner, &mut rng))
        .collect()
}

pub fn evaluate_network(
    net: &Network,
    mon: &BoxedMonitor,
    samples: &[Vec<f64>],
    holdout: Option<&LabeledDataset>,
) -> Result<NetworkEval> {
    let max_soft = samples
        .iter()
        .map(|p| Ok(net.forward_from(mon.layer, p)?.into_iter().fold(0.0, f64::max)))
        .collect::<Result<Vec<f64>>>()?;
    let (holdout_accuracy, holdout_acceptance) = match holdout {
        Some(h) if !h.is_empty() => {
            let mut accepted = 0usize;
            for x in &h.inputs {
                if mon.contains(&net.feature_at(mon.layer, x)?)?.accepted() {
                    accepted += 1;
                }
            }
            (Some(net.accuracy(h)?), Some(accepted as f64 / h.len() as f64))
        }
        _ => (None, None),
    };
    Ok(NetworkEval {
        corner_samples: SoftmaxStats::from_values(&max_soft),
        holdout_accuracy,
        holdout_acceptance,
    })
}

/// One line of testgen.jsonl; the per-step trace goes to the optional CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttemptLine {
    #[serde(rename = "box")]
    pub box_index: usize,
    pub bits: String,
    pub run: usize,
    pub x_original: Vec<f64>,
    pub x_perturbed: Vec<f64>,
    pub chosen_step: usize,
    pub final_loss: f64,
    pub start_distance: f64,
    pub feature_corner_distance: f64,
    pub input_distance: f64,
    pub class_true: usize,
    pub class_before: usize,
    pub class_after: usize,
    pub misclassified: bool,
    pub in_corner: bool,
    pub monitor_accepts: bool,
}

impl AttemptLine {
    fn new(run: usize, r: &TestGenReport) -> Self {
        Self {
            box_index: r.box_index,
            bits: r.corner.to_string(),
            run,
            x_original: r.x_original.clone(),
            x_perturbed: r.x_perturbed.clone(),
            chosen_step: r.chosen_step,
            final_loss: r.loss_trace.last().copied().unwrap_or(f64::NAN),
            start_distance: r.start_distance,
            feature_corner_distance: r.feature_corner_distance,
            input_distance: r.input_distance,
            class_true: r.class_true,
            class_before: r.class_before,
            class_after: r.class_after,
            misclassified: r.misclassified,
            in_corner: r.in_corner,
            monitor_accepts: r.monitor_accepts,
        }
    }
}

/// Whether an attempt counts as reaching its corner: inside it, or at
/// least 75% closer to its center than the unperturbed input.
pub fn attempt_reached(r: &TestGenReport) -> bool {
    r.in_corner || r.feature_corner_distance < 0.25 * r.start_distance
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CornerSummary {
    #[serde(rename = "box")]
    pub box_index: usize,
    pub bits: String,
    pub runs: usize,
    pub in_corner: usize,
    pub reached: usize,
    pub misclassified: usize,
    pub best_distance_ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestgenSummary {
    pub corners: Vec<CornerSummary>,
    pub corners_reached: usize,
    pub accepted_when_in_corner: bool,
}

/// Parses arguments and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 3,
            };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<i32> {
    let mut config = match &cli.config {
        Some(p) => load_config(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    let command = match &cli.command {
        Command::Synth(_) => "synth",
        Command::Train(_) => "train",
        Command::BuildMonitor(_) => "build-monitor",
        Command::Check(_) => "check",
        Command::Prioritize(_) => "prioritize",
        Command::Repair(_) => "repair",
        Command::Testgen(_) => "testgen",
        Command::Eval(_) => "eval",
    };
    let mut ctx = Ctx {
        out_dir: cli.out_dir.clone(),
        config,
        command,
    };
    std::fs::create_dir_all(&ctx.out_dir)?;
    match &cli.command {
        Command::Synth(a) => cmd_synth(&mut ctx, a),
        Command::Train(a) => cmd_train(&mut ctx, a),
        Command::BuildMonitor(a) => cmd_build_monitor(&mut ctx, a),
        Command::Check(a) => cmd_check(&ctx, a),
        Command::Prioritize(a) => cmd_prioritize(&mut ctx, a),
        Command::Repair(a) => cmd_repair(&mut ctx, a),
        Command::Testgen(a) => cmd_testgen(&mut ctx, a),
        Command::Eval(a) => cmd_eval(&mut ctx, a),
    }
}

fn set<T>(slot: &mut T, value: &Option<T>)
where
    T: Clone,
{
    if let Some(v) = value {
        *slot = v.clone();
    }
}

fn cmd_synth(ctx: &mut Ctx, a: &SynthArgs) -> Result<i32> {
    let c = &mut ctx.config;
    set(&mut c.samples, &a.samples);
    set(&mut c.holdout_samples, &a.holdout_samples);
    set(&mut c.noise, &a.noise);
    let c = &ctx.config;
    let data = two_moons(c.samples, c.noise, stage_seed(c.seed, Stage::Data))?;
    let holdout = two_moons(c.holdout_samples.max(1), c.noise, stage_seed(c.seed, Stage::Holdout))?;
    let comments = ctx.meta_comments();
    for (name, d) in [("dataset.csv", &data), ("holdout.csv", &holdout)] {
        let mut w = io::create(&ctx.output(name))?;
        io::write_dataset(&mut w, d, &comments)?;
        w.flush()?;
    }
    println!("wrote {} training and {} held-out samples", data.len(), holdout.len());
    Ok(0)
}

#[derive(Serialize)]
struct TrainMetrics {
    accuracy: f64,
    final_loss: Option<f64>,
    losses: Vec<f64>,
}

fn cmd_train(ctx: &mut Ctx, a: &TrainArgs) -> Result<i32> {
    let c = &mut ctx.config;
    set(&mut c.layers, &a.layers);
    set(&mut c.train.epochs, &a.epochs);
    set(&mut c.train.learning_rate, &a.lr);
    set(&mut c.train.batch_size, &a.batch_size);
    c.train.seed = stage_seed(c.seed, Stage::Train);
    let init = match &a.init {
        Some(p) => read_network(p)?,
        None => Network::random(&ctx.config.layers, stage_seed(ctx.config.seed, Stage::Init))?,
    };
    let data = read_dataset(&ctx.input(&a.data, "dataset.csv"), init.input_dim())?;
    let (net, report) = init.train_with_report(&data, &ctx.config.train)?;
    let accuracy = net.accuracy(&data)?;
    ctx.write_json("network.json", &net)?;
    ctx.write_json(
        "train_metrics.json",
        &TrainMetrics {
            accuracy,
            final_loss: report.losses.last().copied(),
            losses: report.losses,
        },
    )?;
    println!("training accuracy {accuracy:.4}");
    Ok(0)
}

fn cmd_build_monitor(ctx: &mut Ctx, a: &MonitorArgs) -> Result<i32> {
    let c = &mut ctx.config;
    set(&mut c.layer, &a.layer);
    set(&mut c.k, &a.k);
    set(&mut c.phi, &a.phi);
    set(&mut c.delta_fraction, &a.delta_fraction);
    let c = &ctx.config;
    let features = features_of(ctx, &a.source, c.layer)?;
    let mon = build_monitor(
        &features,
        c.k,
        c.layer,
        c.delta_fraction,
        c.phi,
        stage_seed(c.seed, Stage::Cluster),
    )?;
    ctx.write_json("monitor.json", &mon)?;
    let mut w = io::create(&ctx.output("features.csv"))?;
    io::write_features(&mut w, &features, &ctx.meta_comments())?;
    w.flush()?;
    println!(
        "built {} boxes over {} features on layer {}",
        mon.k(),
        features.len(),
        mon.layer
    );
    Ok(0)
}

fn cmd_check(ctx: &Ctx, a: &CheckArgs) -> Result<i32> {
    let mon = read_monitor(&ctx.input(&a.monitor, "monitor.json"))?;
    let features = features_of(ctx, &a.source, mon.layer)?;
    let report = validate_monitor(&mon, &features);
    ctx.write_json("validation.json", &report)?;
    if report.passed() {
        println!("monitor valid");
        Ok(0)
    } else {
        println!("monitor invalid; see validation.json");
        Ok(1)
    }
}

fn cmd_prioritize(ctx: &mut Ctx, a: &PrioritizeArgs) -> Result<i32> {
    let c = &mut ctx.config;
    set(&mut c.delta_h, &a.delta_h);
    set(&mut c.cap, &a.cap);
    let mon = read_monitor(&ctx.input(&a.monitor, "monitor.json"))?;
    // the monitor file is authoritative for its own construction parameters
    ctx.config.layer = mon.layer;
    ctx.config.phi = mon.phi;
    ctx.config.delta_fraction = mon.delta_fraction;
    let features = features_of(ctx, &a.source, mon.layer)?;
    let results = prioritize_monitor(&mon, &features, ctx.config.delta_h, ctx.config.cap)?;
    let lines: Vec<CornerLine> = results
        .iter()
        .flat_map(|r| r.extracted.iter().map(CornerLine::from))
        .collect();
    ctx.write_jsonl("corners.jsonl", &lines)?;
    let stats: Vec<_> = results.iter().map(|r| &r.stats).collect();
    ctx.write_json("prioritize_stats.json", &json!({ "boxes": stats }))?;
    for r in &results {
        let kept = r.extracted.iter().filter(|c| c.discarded_by.is_none()).count();
        println!(
            "box {}: {} corners in result set, {} extracted, {} kept after cross-box filter",
            r.box_index,
            r.stats.result_count,
            r.extracted.len(),
            kept
        );
    }
    Ok(0)
}

#[derive(Serialize)]
struct RepairMetrics {
    corners: usize,
    entries: usize,
    accuracy_before: f64,
    accuracy_after: f64,
    losses: Vec<f64>,
}

fn cmd_repair(ctx: &mut Ctx, a: &RepairArgs) -> Result<i32> {
    let c = &mut ctx.config;
    set(&mut c.rho, &a.rho);
    set(&mut c.repair.epochs, &a.epochs);
    set(&mut c.repair.learning_rate, &a.lr);
    c.repair.seed = stage_seed(c.seed, Stage::RepairTrain);
    let net = read_network(&ctx.input(&a.network, "network.json"))?;
    let mon = read_monitor(&ctx.input(&a.monitor, "monitor.json"))?;
    ctx.config.layer = mon.layer;
    ctx.config.repair.frozen_prefix = mon.layer;
    let data = read_dataset(&ctx.input(&a.data, "dataset.csv"), net.input_dim())?;
    let corners = kept_regions(&read_corners(&ctx.input(&a.corners, "corners.jsonl"))?, &mon)?;
    let c = &ctx.config;
    let modify = build_modify_dataset(
        &data,
        &net,
        mon.layer,
        &corners,
        c.rho,
        stage_seed(c.seed, Stage::RepairSamples),
    )?;
    let (fixed, report) = repair(&net, &modify, mon.layer, &c.repair)?;
    let metrics = RepairMetrics {
        corners: corners.len(),
        entries: modify.len(),
        accuracy_before: net.accuracy(&data)?,
        accuracy_after: fixed.accuracy(&data)?,
        losses: report.losses,
    };
    ctx.write_json("repaired.json", &fixed)?;
    ctx.write_json("repair_metrics.json", &metrics)?;
    let mut w = io::create(&ctx.output("modify.csv"))?;
    for line in ctx.meta_comments() {
        writeln!(w, "# {line}")?;
    }
    modify.write_csv(&mut w)?;
    println!(
        "repaired against {} corners; training accuracy {:.4} -> {:.4}",
        metrics.corners, metrics.accuracy_before, metrics.accuracy_after
    );
    Ok(0)
}

fn cmd_testgen(ctx: &mut Ctx, a: &TestgenArgs) -> Result<i32> {
    let c = &mut ctx.config;
    set(&mut c.runs, &a.runs);
    set(&mut c.testgen.steps, &a.steps);
    set(&mut c.testgen.learning_rate, &a.lr);
    set(&mut c.testgen.lambda, &a.lambda);
    c.testgen.seed = stage_seed(c.seed, Stage::Testgen);
    let net = read_network(&ctx.input(&a.network, "network.json"))?;
    let mon = read_monitor(&ctx.input(&a.monitor, "monitor.json"))?;
    ctx.config.layer = mon.layer;
    let data = read_dataset(&ctx.input(&a.data, "dataset.csv"), net.input_dim())?;
    let corners = kept_regions(&read_corners(&ctx.input(&a.corners, "corners.jsonl"))?, &mon)?;
    if corners.is_empty() {
        log::warn!("no corners to target");
    }

    let mut lines = Vec::new();
    let mut summaries = Vec::new();
    let mut trace_rows = Vec::new();
    let mut accepted_when_in_corner = true;
    for corner in &corners {
        let reports = run_attempts(&net, &mon, corner, &data, ctx.config.runs, &ctx.config.testgen)?;
        for (run, r) in reports.iter().enumerate() {
            lines.push(AttemptLine::new(run, r));
            accepted_when_in_corner &= !r.in_corner || r.monitor_accepts;
            if a.emit_trace {
                for s in &r.trace {
                    trace_rows.push(vec![
                        corner.box_index.to_string(),
                        corner.bits.to_string(),
                        run.to_string(),
                        s.step.to_string(),
                        s.loss.to_string(),
                        s.feature_corner_distance.to_string(),
                        s.predicted.to_string(),
                        s.in_corner.to_string(),
                    ]);
                }
            }
        }
        summaries.push(CornerSummary {
            box_index: corner.box_index,
            bits: corner.bits.to_string(),
            runs: reports.len(),
            in_corner: reports.iter().filter(|r| r.in_corner).count(),
            reached: reports.iter().filter(|r| attempt_reached(r)).count(),
            misclassified: reports.iter().filter(|r| r.misclassified).count(),
            best_distance_ratio: reports
                .iter()
                .filter(|r| r.start_distance > 0.0)
                .map(|r| r.feature_corner_distance / r.start_distance)
                .min_by(f64::total_cmp),
        });
    }
    let summary = TestgenSummary {
        corners_reached: summaries.iter().filter(|s| s.reached > 0).count(),
        corners: summaries,
        accepted_when_in_corner,
    };
    ctx.write_jsonl("testgen.jsonl", &lines)?;
    ctx.write_json("testgen_summary.json", &summary)?;
    if a.emit_trace {
        let mut w = io::create(&ctx.output("testgen_trace.csv"))?;
        for line in ctx.meta_comments() {
            writeln!(w, "# {line}")?;
        }
        let mut csv_w = csv::Writer::from_writer(w);
        let io_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        csv_w
            .write_record([
                "box",
                "bits",
                "run",
                "step",
                "loss",
                "feature_corner_distance",
                "predicted",
                "in_corner",
            ])
            .map_err(io_err)?;
        for row in &trace_rows {
            csv_w.write_record(row).map_err(io_err)?;
        }
        csv_w.flush()?;
    }
    println!(
        "{} of {} corners reached by at least one of {} runs",
        summary.corners_reached,
        summary.corners.len(),
        ctx.config.runs
    );
    Ok(0)
}

fn cmd_eval(ctx: &mut Ctx, a: &EvalArgs) -> Result<i32> {
    set(&mut ctx.config.eval_samples, &a.samples);
    let net = read_network(&ctx.input(&a.network, "network.json"))?;
    let other = a.compare.as_deref().map(read_network).transpose()?;
    let mon = read_monitor(&ctx.input(&a.monitor, "monitor.json"))?;
    ctx.config.layer = mon.layer;
    let corners = kept_regions(&read_corners(&ctx.input(&a.corners, "corners.jsonl"))?, &mon)?;
    if corners.is_empty() {
        log::warn!("empty corner list; histograms will be empty");
    }
    let holdout = a
        .holdout
        .as_deref()
        .map(|p| read_dataset(p, net.input_dim()))
        .transpose()?;
    let samples = corner_samples(
        &corners,
        ctx.config.eval_samples,
        stage_seed(ctx.config.seed, Stage::EvalSamples),
    );
    let report = EvalReport {
        corners: corners.len(),
        samples_per_corner: ctx.config.eval_samples,
        before: evaluate_network(&net, &mon, &samples, holdout.as_ref())?,
        after: other
            .as_ref()
            .map(|n| evaluate_network(n, &mon, &samples, holdout.as_ref()))
            .transpose()?,
    };
    ctx.write_json("eval.json", &report)?;

    let mut header = vec!["bin_lower".to_string(), "bin_upper".into(), "before".into()];
    if report.after.is_some() {
        header.push("after".into());
    }
    let rows: Vec<Vec<f64>> = (0..HISTOGRAM_BINS)
        .map(|b| {
            let mut row = vec![
                b as f64 / HISTOGRAM_BINS as f64,
                (b + 1) as f64 / HISTOGRAM_BINS as f64,
                report.before.corner_samples.histogram[b] as f64,
            ];
            if let Some(after) = &report.after {
                row.push(after.corner_samples.histogram[b] as f64);
            }
            row
        })
        .collect();
    let mut w = io::create(&ctx.output("eval_histogram.csv"))?;
    io::write_matrix(&mut w, &header, &rows, &ctx.meta_comments())?;
    w.flush()?;

    let fmt = |m: Option<f64>| m.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    println!("corner samples: {}", samples.len());
    println!("mean max-softmax before: {}", fmt(report.before.corner_samples.mean));
    if let Some(after) = &report.after {
        println!("mean max-softmax after:  {}", fmt(after.corner_samples.mean));
    }
    Ok(0)
}
