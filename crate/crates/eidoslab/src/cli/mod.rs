//! Command-line interface: data synthesis, training, forecasting,
//! evaluation, noise benchmarking, probing and steering. Every command is
//! reproducible from its persisted resolved config and seed; outputs are
//! new files under the run directory, never mutations of inputs.

pub mod config;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use thiserror::Error;

use crate::datagen::{self, DatagenError, GeneratorSpec};
use crate::eval::{
    self, noise_bench, tasks_from_records, EvalError, NoiseKind, ReportMeta,
};
use crate::model::{Model, ModelError};
use crate::plot::LinePlot;
use crate::represent::{
    build_probe_dataset, extract_direction, fitted_slope, probe_sweep, steer_forecast,
    ProbeConfig, ProbeKind, RepresentError, SteerPositions,
};
use crate::threads;
use crate::trainer::{self, Checkpoint, TrainError};

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("run directory is locked: {0}")]
    Lock(String),
    #[error("config hash mismatch: checkpoint {checkpoint} vs provided {provided}")]
    HashMismatch { checkpoint: String, provided: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Data(#[from] DatagenError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Represent(#[from] RepresentError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl CliError {
    fn category(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Lock(_) => "lock",
            CliError::HashMismatch { .. } => "config_hash_mismatch",
            CliError::Io(_) => "io",
            CliError::Data(_) => "data",
            CliError::Train(_) => "train",
            CliError::Eval(_) => "eval",
            CliError::Represent(_) => "represent",
            CliError::Model(_) => "model",
        }
    }
}

#[derive(Parser)]
#[command(
    name = "eidoslab",
    about = "Latent-space predictive learning for time series forecasting",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// JSON run configuration; defaults apply where absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory for all outputs.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset file (JSONL).
    Synth(SynthArgs),
    /// Train a model and write checkpoint + metric log.
    Train(TrainArgs),
    /// Autoregressive quantile forecast for one series.
    Forecast(ForecastArgs),
    /// Evaluate against the seasonal-naive baseline.
    Eval(EvalArgs),
    /// Noise-robustness sweep (relative CRPS per level).
    Noise(NoiseArgs),
    /// Layer-wise linear-discriminant-ratio probing.
    Probe(ProbeArgs),
    /// Latent steering with energy-proportional injection.
    Steer(SteerArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// sine | trend | sine_trend | noise | cauker
    #[arg(long)]
    kind: String,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 512)]
    length: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output JSONL file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 1.0)]
    freq_min: f64,
    #[arg(long, default_value_t = 5.0)]
    freq_max: f64,
    #[arg(long, default_value_t = 1.0)]
    amp: f64,
    #[arg(long, default_value_t = -2.0)]
    slope_min: f64,
    #[arg(long, default_value_t = 2.0)]
    slope_max: f64,
    /// Noise-kind standard deviation.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Continue from an existing checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Override trainer.total_steps.
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args)]
struct ForecastArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// JSONL dataset holding the context series.
    #[arg(long)]
    data: PathBuf,
    /// Which series of the file to forecast.
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long)]
    horizon: usize,
    /// Quantile block length per pass; defaults to the model horizon.
    #[arg(long)]
    block: Option<usize>,
    /// Post-hoc non-decreasing sort of each step's quantiles.
    #[arg(long, default_value_t = false)]
    sort_quantiles: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Held-out horizon; defaults to the model horizon.
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    block: Option<usize>,
    #[arg(long, default_value_t = false)]
    sort_quantiles: bool,
}

#[derive(Args)]
struct NoiseArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// gaussian | impulse
    #[arg(long)]
    kind: String,
    /// Comma-separated levels; defaults to the protocol grid.
    #[arg(long)]
    levels: Option<String>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    block: Option<usize>,
    /// Noise-injection seed.
    #[arg(long, default_value_t = eval::NOISE_SEED)]
    noise_seed: u64,
}

#[derive(Args)]
struct ProbeArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// trend | periodicity
    #[arg(long)]
    kind: String,
    #[arg(long, default_value_t = 1000)]
    count: usize,
    #[arg(long, default_value_t = 512)]
    length: usize,
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    #[arg(long, default_value_t = 7)]
    probe_seed: u64,
    /// Also probe a random-init model of the same config as a control.
    #[arg(long, default_value_t = false)]
    random_baseline: bool,
}

#[derive(Args)]
struct SteerArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// trend | periodicity
    #[arg(long)]
    kind: String,
    /// Comma-separated injection ratios; the baseline is always included.
    #[arg(long, default_value = "0.2,0.5")]
    alphas: String,
    /// Target layer; defaults to the final layer.
    #[arg(long)]
    layer: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    block: Option<usize>,
    #[arg(long, default_value_t = 512)]
    context_length: usize,
    /// all | last
    #[arg(long, default_value = "all")]
    positions: String,
    #[arg(long, default_value_t = 1000)]
    count: usize,
    #[arg(long, default_value_t = 512)]
    length: usize,
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    #[arg(long, default_value_t = 7)]
    probe_seed: u64,
}

/// Exclusive lock on a run directory, released on drop.
struct RunLock {
    path: PathBuf,
}

impl RunLock {
    fn acquire(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("LOCK");
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Lock(
                format!("{} exists; another command owns this run directory", path.display()),
            )),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn load_run_config(common: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Load a checkpoint; when an explicit config is also supplied, their
/// resolved hashes must agree.
fn load_checkpoint_checked(
    checkpoint: &Path,
    common: &CommonArgs,
) -> Result<(Checkpoint, Model), CliError> {
    let ckpt = Checkpoint::load(checkpoint)?;
    if let Some(path) = &common.config {
        let provided = RunConfig::load(path)?.train_config()?;
        let provided_hash = trainer::config_hash(&provided);
        let ckpt_hash = ckpt.config_hash();
        if provided_hash != ckpt_hash {
            return Err(CliError::HashMismatch {
                checkpoint: ckpt_hash,
                provided: provided_hash,
            });
        }
    }
    let model = Model {
        cfg: ckpt.config.model.clone(),
        params: ckpt.params.clone(),
    };
    Ok((ckpt, model))
}

fn write_meta(dir: &Path, value: serde_json::Value) -> Result<(), CliError> {
    std::fs::write(
        dir.join("run_meta.json"),
        serde_json::to_string_pretty(&value).expect("meta serializes"),
    )?;
    Ok(())
}

fn parse_levels(raw: &str) -> Result<Vec<f64>, CliError> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| CliError::Config(format!("bad level '{s}': {e}")))
        })
        .collect()
}

pub fn run() -> i32 {
    let cli = Cli::parse();
    threads::init_thread_pool();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let line = json!({"error": e.category(), "message": e.to_string()});
            eprintln!("{line}");
            1
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Forecast(args) => cmd_forecast(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Noise(args) => cmd_noise(args),
        Command::Probe(args) => cmd_probe(args),
        Command::Steer(args) => cmd_steer(args),
    }
}

fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    let spec = match args.kind.as_str() {
        "sine" => GeneratorSpec::Sine {
            count: args.count,
            length: args.length,
            freq_min: args.freq_min,
            freq_max: args.freq_max,
            amp: args.amp,
            noise_sigma: args.noise_sigma,
        },
        "trend" => GeneratorSpec::Trend {
            count: args.count,
            length: args.length,
            slope_min: args.slope_min,
            slope_max: args.slope_max,
            noise_sigma: args.noise_sigma,
        },
        "sine_trend" | "sine+trend" => GeneratorSpec::SineTrend {
            count: args.count,
            length: args.length,
            freq_min: args.freq_min,
            freq_max: args.freq_max,
            amp: args.amp,
            slope_min: args.slope_min,
            slope_max: args.slope_max,
            noise_sigma: args.noise_sigma,
        },
        "noise" => GeneratorSpec::Noise {
            count: args.count,
            length: args.length,
            sigma: args.sigma,
        },
        "cauker" => GeneratorSpec::Cauker {
            count: args.count,
            length: args.length,
        },
        other => {
            return Err(CliError::Config(format!("unknown generator kind '{other}'")))
        }
    };
    let records = datagen::config::synth_records(&spec, args.seed, 0)?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let n = datagen::write_jsonl(&args.out, &records)?;
    let points: usize = records.iter().map(|r| r.target.len()).sum();
    println!(
        "{}",
        json!({"written": n, "points": points, "path": args.out, "seed": args.seed})
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let mut run_cfg = load_run_config(&args.common)?;
    if let Some(steps) = args.steps {
        run_cfg.trainer.total_steps = steps;
    }
    let train_cfg = run_cfg.train_config()?;
    let _lock = RunLock::acquire(&args.common.out)?;
    std::fs::write(
        args.common.out.join("resolved_config.json"),
        run_cfg.to_pretty_json(),
    )?;
    let corpus = datagen::build_corpus(&run_cfg.data.sources, run_cfg.data_seed())?;
    let resume = match &args.resume {
        Some(path) => Some(Checkpoint::load(path)?),
        None => None,
    };
    let metrics = args.common.out.join("metrics.csv");
    let out = trainer::train(&train_cfg, &corpus, resume, None, Some(&metrics))?;
    let ckpt_path = args.common.out.join("checkpoint.eidos");
    out.checkpoint.save(&ckpt_path)?;
    let hash = out.checkpoint.config_hash();
    write_meta(
        &args.common.out,
        json!({
            "command": "train",
            "config_hash": hash,
            "seed": train_cfg.seed,
            "steps": out.checkpoint.step,
            "corpus_records": corpus.total_records(),
        }),
    )?;
    let last = out.log.last();
    println!(
        "{}",
        json!({
            "checkpoint": ckpt_path,
            "steps": out.checkpoint.step,
            "config_hash": hash,
            "final_loss": last.map(|l| l.total),
            "final_pred": last.map(|l| l.pred),
        })
    );
    Ok(())
}

fn cmd_forecast(args: ForecastArgs) -> Result<(), CliError> {
    let (ckpt, model) = load_checkpoint_checked(&args.checkpoint, &args.common)?;
    let _lock = RunLock::acquire(&args.common.out)?;
    let records = datagen::io::load_records(&args.data)?;
    let record = records.get(args.index).ok_or_else(|| {
        CliError::Config(format!(
            "series index {} out of range ({} records)",
            args.index,
            records.len()
        ))
    })?;
    let block = args.block.unwrap_or(model.cfg.horizon);
    let mut fc = eval::forecast(&model, &record.target, args.horizon, block)?;
    let crossing = fc.crossing_rate();
    if args.sort_quantiles {
        fc.sort_rows();
    }
    let csv = args.common.out.join("forecast.csv");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&csv)?);
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain(fc.levels.iter().map(|q| format!("q{q}")))
        .collect();
    writeln!(f, "{}", header.join(","))?;
    for t in 0..fc.horizon {
        let row: Vec<String> = std::iter::once(t.to_string())
            .chain(fc.row(t).iter().map(|v| v.to_string()))
            .collect();
        writeln!(f, "{}", row.join(","))?;
    }
    f.flush()?;
    write_meta(
        &args.common.out,
        json!({
            "command": "forecast",
            "checkpoint": args.checkpoint,
            "config_hash": ckpt.config_hash(),
            "data": args.data,
            "index": args.index,
            "series_id": record.id,
            "horizon": args.horizon,
            "block": block,
            "sort_quantiles": args.sort_quantiles,
            "crossing_rate": crossing,
        }),
    )?;
    println!(
        "{}",
        json!({"forecast": csv, "horizon": fc.horizon, "levels": fc.levels.len(), "crossing_rate": crossing})
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let (ckpt, model) = load_checkpoint_checked(&args.checkpoint, &args.common)?;
    let _lock = RunLock::acquire(&args.common.out)?;
    let records = datagen::io::load_records(&args.data)?;
    let horizon = args.horizon.unwrap_or(model.cfg.horizon);
    let block = args.block.unwrap_or(model.cfg.horizon);
    let tasks = tasks_from_records(&records, horizon);
    let meta = ReportMeta {
        model_hash: ckpt.config_hash(),
        seed: ckpt.config.seed,
        noise: None,
    };
    let report = eval::evaluate(&model, &tasks, block, args.sort_quantiles, meta)?;
    report.write_csv(&args.common.out.join("report.csv"))?;
    report.write_json_summary(&args.common.out.join("summary.json"))?;
    write_meta(
        &args.common.out,
        json!({
            "command": "eval",
            "checkpoint": args.checkpoint,
            "config_hash": ckpt.config_hash(),
            "data": args.data,
            "horizon": horizon,
            "block": block,
            "tasks": tasks.len(),
        }),
    )?;
    println!(
        "{}",
        json!({
            "tasks": report.aggregates.n_tasks,
            "mase_ratio_geomean": report.aggregates.mase_ratio_geomean,
            "crps_ratio_geomean": report.aggregates.crps_ratio_geomean,
            "excluded_mase": report.aggregates.excluded_mase,
            "excluded_crps": report.aggregates.excluded_crps,
        })
    );
    Ok(())
}

fn cmd_noise(args: NoiseArgs) -> Result<(), CliError> {
    let (ckpt, model) = load_checkpoint_checked(&args.checkpoint, &args.common)?;
    let _lock = RunLock::acquire(&args.common.out)?;
    let records = datagen::io::load_records(&args.data)?;
    let horizon = args.horizon.unwrap_or(model.cfg.horizon);
    let block = args.block.unwrap_or(model.cfg.horizon);
    let tasks = tasks_from_records(&records, horizon);
    let kind = NoiseKind::parse(&args.kind)?;
    let levels = match &args.levels {
        Some(raw) => parse_levels(raw)?,
        None => kind.default_levels(),
    };
    let report = noise_bench(&model, &tasks, kind, &levels, args.noise_seed, block)?;
    report.write_csv(&args.common.out.join("noise_bench.csv"))?;
    write_meta(
        &args.common.out,
        json!({
            "command": "noise",
            "checkpoint": args.checkpoint,
            "config_hash": ckpt.config_hash(),
            "data": args.data,
            "kind": kind.name(),
            "levels": levels,
            "noise_seed": args.noise_seed,
            "horizon": horizon,
            "block": block,
        }),
    )?;
    let rels: Vec<f64> = report.rows.iter().map(|r| r.relative_crps).collect();
    println!(
        "{}",
        json!({"kind": kind.name(), "levels": levels, "relative_crps": rels})
    );
    Ok(())
}

fn cmd_probe(args: ProbeArgs) -> Result<(), CliError> {
    let (ckpt, model) = load_checkpoint_checked(&args.checkpoint, &args.common)?;
    let _lock = RunLock::acquire(&args.common.out)?;
    let kind = ProbeKind::parse(&args.kind)?;
    let probe_cfg = ProbeConfig {
        count: args.count,
        length: args.length,
        noise_sigma: args.sigma,
        seed: args.probe_seed,
    };
    let dataset = build_probe_dataset(kind, &probe_cfg);
    let trained = probe_sweep(&model, &dataset)?;
    let random_curve = if args.random_baseline {
        let control = Model::init(ckpt.config.model.clone(), ckpt.config.seed)
            .map_err(CliError::Model)?;
        Some(probe_sweep(&control, &dataset)?)
    } else {
        None
    };
    let csv = args.common.out.join("probe_ldr.csv");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&csv)?);
    match &random_curve {
        Some(rand) => {
            writeln!(f, "layer,ldr,ldr_random_init")?;
            for (layer, (a, b)) in trained.iter().zip(rand).enumerate() {
                writeln!(f, "{layer},{a},{b}")?;
            }
        }
        None => {
            writeln!(f, "layer,ldr")?;
            for (layer, a) in trained.iter().enumerate() {
                writeln!(f, "{layer},{a}")?;
            }
        }
    }
    f.flush()?;
    let mut plot = LinePlot::new(
        format!("{} separability by layer", kind.name()),
        "layer",
        "LDR",
    );
    plot.add_series(
        "trained",
        trained.iter().enumerate().map(|(i, v)| (i as f64, *v)).collect(),
    );
    if let Some(rand) = &random_curve {
        plot.add_series(
            "random init",
            rand.iter().enumerate().map(|(i, v)| (i as f64, *v)).collect(),
        );
    }
    plot.save(&args.common.out.join("probe_ldr.svg"))?;
    write_meta(
        &args.common.out,
        json!({
            "command": "probe",
            "checkpoint": args.checkpoint,
            "config_hash": ckpt.config_hash(),
            "kind": kind.name(),
            "count": args.count,
            "length": args.length,
            "sigma": args.sigma,
            "probe_seed": args.probe_seed,
        }),
    )?;
    println!(
        "{}",
        json!({"kind": kind.name(), "layers": trained.len(), "final_ldr": trained.last(), "csv": csv})
    );
    Ok(())
}

fn cmd_steer(args: SteerArgs) -> Result<(), CliError> {
    let (ckpt, model) = load_checkpoint_checked(&args.checkpoint, &args.common)?;
    let _lock = RunLock::acquire(&args.common.out)?;
    let kind = ProbeKind::parse(&args.kind)?;
    let layer = args.layer.unwrap_or(model.cfg.backbone.n_layers);
    let horizon = args.horizon.unwrap_or(model.cfg.horizon);
    let block = args.block.unwrap_or(model.cfg.horizon);
    let positions = match args.positions.as_str() {
        "all" => SteerPositions::All,
        "last" => SteerPositions::LastOnly,
        other => {
            return Err(CliError::Config(format!(
                "positions must be 'all' or 'last', got '{other}'"
            )))
        }
    };
    let probe_cfg = ProbeConfig {
        count: args.count,
        length: args.length,
        noise_sigma: args.sigma,
        seed: args.probe_seed,
    };
    let dir = extract_direction(&model, kind, layer, &probe_cfg)?;
    let alphas = parse_levels(&args.alphas)?;

    // Neutral context: flat series with mild noise, seeded by the run seed.
    let run_cfg = load_run_config(&args.common)?;
    let context = neutral_context(args.context_length, run_cfg.seed);

    let mut medians: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut baseline_median: Option<Vec<f64>> = None;
    for &alpha in &alphas {
        let (base, steered) =
            steer_forecast(&model, &context, horizon, &dir, alpha, block, positions)?;
        if baseline_median.is_none() {
            baseline_median = Some(base.median());
        }
        medians.push((alpha, steered.median()));
    }
    let baseline = baseline_median.expect("at least one alpha");

    let csv = args.common.out.join("steer_trace.csv");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&csv)?);
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain(std::iter::once("baseline".to_string()))
        .chain(medians.iter().map(|(a, _)| format!("alpha_{a}")))
        .collect();
    writeln!(f, "{}", header.join(","))?;
    for t in 0..horizon {
        let mut row = vec![t.to_string(), baseline[t].to_string()];
        for (_, m) in &medians {
            row.push(m[t].to_string());
        }
        writeln!(f, "{}", row.join(","))?;
    }
    f.flush()?;

    let mut plot = LinePlot::new(
        format!("{} steering at layer {layer}", kind.name()),
        "step",
        "median forecast",
    );
    plot.add_series(
        "baseline",
        baseline.iter().enumerate().map(|(i, v)| (i as f64, *v)).collect(),
    );
    for (alpha, m) in &medians {
        plot.add_series(
            format!("alpha {alpha}"),
            m.iter().enumerate().map(|(i, v)| (i as f64, *v)).collect(),
        );
    }
    plot.save(&args.common.out.join("steer_trace.svg"))?;

    let slopes: Vec<serde_json::Value> = medians
        .iter()
        .map(|(a, m)| json!({"alpha": a, "fitted_slope": fitted_slope(m)}))
        .collect();
    let summary = json!({
        "kind": kind.name(),
        "layer": layer,
        "e_model": dir.e_model,
        "baseline_slope": fitted_slope(&baseline),
        "steered": slopes,
    });
    std::fs::write(
        args.common.out.join("steer_summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    write_meta(
        &args.common.out,
        json!({
            "command": "steer",
            "checkpoint": args.checkpoint,
            "config_hash": ckpt.config_hash(),
            "kind": kind.name(),
            "alphas": alphas,
            "layer": layer,
            "horizon": horizon,
            "block": block,
            "positions": args.positions,
            "context_length": args.context_length,
            "seed": run_cfg.seed,
        }),
    )?;
    println!("{summary}");
    Ok(())
}

/// Flat series with mild noise, the neutral steering input.
pub fn neutral_context(length: usize, seed: u64) -> Vec<f64> {
    use rand::SeedableRng;
    use rand_distr::Distribution;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let dist = rand_distr::Normal::new(0.0, 0.1).expect("valid sigma");
    (0..length).map(|_| dist.sample(&mut rng)).collect()
}
