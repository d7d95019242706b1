//! Command implementations behind the `hakan` binary.

use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use hakan::checkpoint;
use hakan::config::RunConfig;
use hakan::data::{load_csv, PreparedData, RawDataset};
use hakan::model::{model_param_count, param_breakdown, HaKanModel, ModelConfig};
use hakan::train::{
    aggregate_report, evaluate, grad_check, grad_check_batch, tiny_config, train, MetricRecord,
    METRICS_HEADER,
};
use hakan::{BasisKind, LayerMode};

#[derive(Parser, Debug)]
#[command(name = "hakan", version, about = "Hahn-polynomial KAN forecaster")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train on a dataset for every configured horizon and seed.
    Train(RunArgs),
    /// Evaluate a checkpoint on the test split.
    Eval(EvalArgs),
    /// Train one cell per value of an ablation axis and tabulate the results.
    Sweep(SweepArgs),
    /// Print the parameter count and its breakdown.
    Params(RunArgs),
    /// Compare tape gradients with finite differences on a tiny model.
    Gradcheck(GradArgs),
}

/// Flags shared by the commands that resolve a run configuration.
#[derive(Args, Debug, Clone, Default)]
pub struct RunArgs {
    /// `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Forecast horizon(s), comma separated.
    #[arg(long, value_delimiter = ',')]
    pub horizon: Vec<usize>,
    #[arg(long)]
    pub lookback: Option<usize>,
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Seeds, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Record that the run used sequential reductions (always the case here).
    #[arg(long)]
    pub deterministic: bool,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dataset CSV, overriding `data.path`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("override {kv:?} is not KEY=VALUE"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if !self.horizon.is_empty() {
            cfg.horizons = self.horizon.clone();
            cfg.model.horizon = self.horizon[0];
        }
        if let Some(l) = self.lookback {
            cfg.model.lookback = l;
        }
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if !self.seeds.is_empty() {
            cfg.seeds = self.seeds.clone();
        }
        if self.deterministic {
            cfg.deterministic = true;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if let Some(d) = &self.data {
            cfg.data.path = d.clone();
        }
        if cfg.horizons.is_empty() {
            cfg.horizons = vec![cfg.model.horizon];
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// One of: basis, blocks, bottleneck, patch_len, lookback, components, mlp.
    #[arg(long)]
    pub axis: String,
    /// Comma-separated axis values.
    #[arg(long)]
    pub values: String,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Args, Debug)]
pub struct GradArgs {
    /// kan, linear or both.
    #[arg(long, default_value = "both")]
    pub mode: String,
    /// Pass threshold; defaults to 1e-4 for kan and 1e-6 for linear.
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long, default_value = "hahn")]
    pub basis: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, hide = true)]
    pub corrupt_backward: bool,
}

/// Raised when a gradient check exceeds its tolerance.
#[derive(Debug)]
pub struct GradcheckFailed {
    pub worst: f64,
    pub tolerance: f64,
}

impl fmt::Display for GradcheckFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "gradient check failed: worst relative error {:.3e} >= tolerance {:.1e}",
            self.worst, self.tolerance
        )
    }
}

impl std::error::Error for GradcheckFailed {}

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// Process exit code for an error: 2 config, 3 data, 4 numeric, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<GradcheckFailed>().is_some() {
        return EXIT_NUMERIC;
    }
    match err.downcast_ref::<hakan::Error>() {
        Some(hakan::Error::Load(_)) | Some(hakan::Error::Io(_)) => EXIT_DATA,
        Some(hakan::Error::NonFinite(_)) => EXIT_NUMERIC,
        Some(hakan::Error::Config(_))
        | Some(hakan::Error::Checkpoint(_))
        | Some(hakan::Error::BasisParameter(_))
        | Some(hakan::Error::Dimension(_)) => EXIT_CONFIG,
        _ => 1,
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Train(args) => cmd_train(&args.resolve()?, out).map(|_| ()),
        Command::Eval(args) => {
            let cfg = args.run.resolve()?;
            let horizon = args.run.horizon.first().copied();
            cmd_eval(&args.checkpoint, &cfg, horizon, out).map(|_| ())
        }
        Command::Sweep(args) => {
            let axis: SweepAxis = args.axis.parse()?;
            let values: Vec<String> = args
                .values
                .split(',')
                .map(|v| v.trim().to_string())
                .filter(|v| !v.is_empty())
                .collect();
            cmd_sweep(axis, &values, &args.run.resolve()?, out).map(|_| ())
        }
        Command::Params(args) => cmd_params(&args.resolve()?, out).map(|_| ()),
        Command::Gradcheck(args) => cmd_gradcheck(&args, out).map(|_| ()),
    }
}

fn dataset_name(cfg: &RunConfig, raw: &RawDataset) -> String {
    if cfg.data.name.is_empty() {
        raw.name.clone()
    } else {
        cfg.data.name.clone()
    }
}

fn load_dataset(cfg: &RunConfig) -> Result<RawDataset> {
    Ok(load_csv(&cfg.data.path)?)
}

fn append_metrics(path: &Path, rec: &MetricRecord) -> Result<()> {
    let fresh = !path.exists();
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "{METRICS_HEADER}")?;
    }
    writeln!(f, "{}", rec.csv_row())?;
    Ok(())
}

/// Paths written for one trained (horizon, seed) cell.
#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub record: MetricRecord,
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
}

/// Trains every (horizon, seed) pair of `cfg` on `raw`, writing checkpoints,
/// manifests and metric rows under `dir`.
fn train_cells(
    cfg: &RunConfig,
    raw: &RawDataset,
    dir: &Path,
    out: &mut dyn Write,
) -> Result<Vec<RunArtifacts>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = dataset_name(cfg, raw);
    let m = raw.channels();
    if cfg.model.channels != 0 && cfg.model.channels != m {
        return Err(hakan::Error::Config(format!(
            "config expects {} channels, {} has {m}",
            cfg.model.channels,
            cfg.data.path.display()
        ))
        .into());
    }
    let mut results = Vec::new();
    for &horizon in &cfg.horizons {
        let mut model_cfg = cfg.model.clone();
        model_cfg.horizon = horizon;
        model_cfg.channels = m;
        let mut data = PreparedData::new(
            raw,
            cfg.data.split_spec(),
            model_cfg.lookback,
            horizon,
            cfg.data.standardize,
        )?;
        data.name = name.clone();
        for &seed in &cfg.seeds {
            let started = Instant::now();
            let mut model = HaKanModel::new(&model_cfg, seed)?;
            let mut spec = cfg.train.clone();
            spec.seed = seed;
            let outcome = train(&mut model, &data, &spec)?;
            let stem = format!("{name}_L{}_T{horizon}_seed{seed}", model_cfg.lookback);
            let ckpt = dir.join(format!("{stem}.ckpt"));
            checkpoint::save(&model, &ckpt)?;

            let mut resolved = cfg.clone();
            resolved.model = model_cfg.clone();
            resolved.train.seed = seed;
            resolved.seeds = vec![seed];
            resolved.horizons = vec![horizon];
            resolved.out_dir = dir.to_path_buf();
            let b = data.splits.boundaries;
            let r = &outcome.record;
            let manifest = format!(
                "{}manifest.rows = {}\nmanifest.split_boundaries = {},{},{}\nmanifest.params = {}\n\
                 manifest.checkpoint = {}\nmanifest.best_epoch = {}\nmanifest.epochs = {}\n\
                 manifest.mse = {}\nmanifest.mae = {}\nmanifest.wall_seconds = {:.3}\n",
                resolved.to_text(),
                raw.rows(),
                b[0],
                b[1],
                b[2],
                model.param_count(),
                ckpt.display(),
                outcome.best_epoch,
                r.epochs,
                r.mse,
                r.mae,
                started.elapsed().as_secs_f64(),
            );
            let manifest_path = dir.join(format!("{stem}.manifest"));
            fs::write(&manifest_path, manifest)?;
            append_metrics(&dir.join("metrics.csv"), r)?;
            writeln!(out, "{}", r.csv_row())?;
            results.push(RunArtifacts {
                record: r.clone(),
                checkpoint: ckpt,
                manifest: manifest_path,
            });
        }
    }
    Ok(results)
}

fn write_summary(dir: &Path, records: &[MetricRecord], out: &mut dyn Write) -> Result<()> {
    let report = aggregate_report(records);
    let mut text = String::from("dataset,horizon,runs,mse_mean,mse_std,mae_mean,mae_std\n");
    for s in &report.seeds {
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            s.dataset, s.horizon, s.runs, s.mse_mean, s.mse_std, s.mae_mean, s.mae_std
        ));
        writeln!(
            out,
            "{} T={}: MSE {:.4} ± {:.4}  MAE {:.4} ± {:.4}  ({} seeds)",
            s.dataset, s.horizon, s.mse_mean, s.mse_std, s.mae_mean, s.mae_std, s.runs
        )?;
    }
    fs::write(dir.join("summary.csv"), text)?;
    Ok(())
}

/// Trains per the resolved config; one metrics row per (horizon, seed) plus
/// a mean ± std summary when several seeds run.
pub fn cmd_train(cfg: &RunConfig, out: &mut dyn Write) -> Result<Vec<RunArtifacts>> {
    let raw = load_dataset(cfg)?;
    writeln!(out, "{METRICS_HEADER}")?;
    let runs = train_cells(cfg, &raw, &cfg.out_dir, out)?;
    if cfg.seeds.len() > 1 {
        let records: Vec<MetricRecord> = runs.iter().map(|r| r.record.clone()).collect();
        write_summary(&cfg.out_dir, &records, out)?;
    }
    Ok(runs)
}

/// Test-split metrics of a saved model on the dataset named by `cfg`.
pub fn cmd_eval(
    ckpt: &Path,
    cfg: &RunConfig,
    horizon: Option<usize>,
    out: &mut dyn Write,
) -> Result<MetricRecord> {
    let model = checkpoint::load(ckpt)?;
    let mc = model.config();
    if let Some(h) = horizon {
        if h != mc.horizon {
            return Err(hakan::Error::Config(format!(
                "checkpoint forecasts {} steps, requested horizon {h}",
                mc.horizon
            ))
            .into());
        }
    }
    let raw = load_dataset(cfg)?;
    if mc.channels != 0 && mc.channels != raw.channels() {
        return Err(hakan::Error::Config(format!(
            "checkpoint was trained on {} channels, dataset has {}",
            mc.channels,
            raw.channels()
        ))
        .into());
    }
    let mut data = PreparedData::new(
        &raw,
        cfg.data.split_spec(),
        mc.lookback,
        mc.horizon,
        cfg.data.standardize,
    )?;
    data.name = dataset_name(cfg, &raw);
    let started = Instant::now();
    let (mse, mae) = evaluate(&model, &data, &data.splits.test)?;
    let rec = MetricRecord {
        dataset: data.name.clone(),
        horizon: mc.horizon,
        seed: cfg.train.seed,
        mse,
        mae,
        epochs: 0,
        seconds: started.elapsed().as_secs_f64(),
    };
    fs::create_dir_all(&cfg.out_dir)?;
    append_metrics(&cfg.out_dir.join("metrics.csv"), &rec)?;
    writeln!(out, "{METRICS_HEADER}\n{}", rec.csv_row())?;
    Ok(rec)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    Basis,
    Blocks,
    Bottleneck,
    PatchLen,
    Lookback,
    Components,
    Mlp,
}

impl SweepAxis {
    pub const NAMES: &'static str = "basis, blocks, bottleneck, patch_len, lookback, components, mlp";

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Basis => "basis",
            SweepAxis::Blocks => "blocks",
            SweepAxis::Bottleneck => "bottleneck",
            SweepAxis::PatchLen => "patch_len",
            SweepAxis::Lookback => "lookback",
            SweepAxis::Components => "components",
            SweepAxis::Mlp => "mlp",
        }
    }

    /// Applies one axis value to a model configuration.
    pub fn apply(self, model: &mut ModelConfig, value: &str) -> Result<()> {
        let int = |v: &str| -> Result<usize> {
            v.parse()
                .map_err(|_| hakan::Error::Config(format!("invalid value {v:?} for axis")).into())
        };
        match self {
            SweepAxis::Basis => model.basis = value.parse::<BasisKind>()?,
            SweepAxis::Blocks => model.blocks = int(value)?,
            SweepAxis::Bottleneck => model.bottleneck = int(value)?,
            SweepAxis::PatchLen => {
                model.patch_len = int(value)?;
                model.stride = (model.patch_len / 2).max(1);
            }
            SweepAxis::Lookback => model.lookback = int(value)?,
            SweepAxis::Components => {
                (model.intra, model.inter) = match value {
                    "both" => (true, true),
                    "intra-only" => (true, false),
                    "inter-only" => (false, true),
                    other => {
                        return Err(hakan::Error::Config(format!(
                            "components value {other:?} (expected both, intra-only, inter-only)"
                        ))
                        .into())
                    }
                }
            }
            SweepAxis::Mlp => model.mode = value.parse::<LayerMode>()?,
        }
        Ok(())
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = hakan::Error;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "basis" => SweepAxis::Basis,
            "blocks" => SweepAxis::Blocks,
            "bottleneck" => SweepAxis::Bottleneck,
            "patch_len" => SweepAxis::PatchLen,
            "lookback" => SweepAxis::Lookback,
            "components" => SweepAxis::Components,
            "mlp" => SweepAxis::Mlp,
            other => {
                return Err(hakan::Error::Config(format!(
                    "unknown sweep axis `{other}` (axes: {})",
                    SweepAxis::NAMES
                )))
            }
        })
    }
}

/// One row of an ablation table: averages over horizons and seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub mse: f64,
    pub mae: f64,
    /// Parameter count averaged over the configured horizons.
    pub params: f64,
    pub records: Vec<MetricRecord>,
}

pub fn cmd_sweep(
    axis: SweepAxis,
    values: &[String],
    base: &RunConfig,
    out: &mut dyn Write,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        bail!(hakan::Error::Config("sweep needs at least one value".into()));
    }
    let mut cells = Vec::new();
    for v in values {
        let mut cfg = base.clone();
        axis.apply(&mut cfg.model, v)?;
        cfg.validate()?;
        cells.push(cfg);
    }
    let raw = load_dataset(base)?;
    let root = base.out_dir.join(format!("sweep-{}", axis.name()));
    let mut rows = Vec::new();
    for (v, cfg) in values.iter().zip(&cells) {
        let dir = root.join(v);
        writeln!(out, "# {} = {v}", axis.name())?;
        let runs = train_cells(cfg, &raw, &dir, out)?;
        let records: Vec<MetricRecord> = runs.into_iter().map(|r| r.record).collect();
        let report = aggregate_report(&records);
        let params = cfg
            .horizons
            .iter()
            .map(|&h| {
                let mut m = cfg.model.clone();
                m.horizon = h;
                model_param_count(&m).map(|c| c as f64)
            })
            .collect::<hakan::Result<Vec<_>>>()?;
        rows.push(SweepRow {
            value: v.clone(),
            mse: report.overall.0,
            mae: report.overall.1,
            params: params.iter().sum::<f64>() / params.len() as f64,
            records,
        });
    }
    let mut csv = String::from("value,mse,mae,params\n");
    writeln!(out, "{:<14} {:>10} {:>10} {:>12}", axis.name(), "MSE", "MAE", "Params (K)")?;
    for r in &rows {
        csv.push_str(&format!("{},{},{},{}\n", r.value, r.mse, r.mae, r.params));
        writeln!(
            out,
            "{:<14} {:>10.4} {:>10.4} {:>12.1}",
            r.value,
            r.mse,
            r.mae,
            r.params / 1000.0
        )?;
    }
    fs::write(base.out_dir.join(format!("sweep-{}.csv", axis.name())), csv)?;
    Ok(rows)
}

/// Parameter totals for each configured horizon and the breakdown at the first.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamsReport {
    /// `(component, count)`; blocks are merged into `block.{i}` lines.
    pub breakdown: Vec<(String, usize)>,
    pub per_horizon: Vec<(usize, usize)>,
    pub mean: f64,
}

pub fn cmd_params(cfg: &RunConfig, out: &mut dyn Write) -> Result<ParamsReport> {
    let mut per_horizon = Vec::new();
    for &h in &cfg.horizons {
        let mut m = cfg.model.clone();
        m.horizon = h;
        per_horizon.push((h, model_param_count(&m)?));
    }
    let mut first = cfg.model.clone();
    first.horizon = cfg.horizons[0];
    let mut breakdown: Vec<(String, usize)> = Vec::new();
    let mut detail: Vec<String> = Vec::new();
    for (name, count) in param_breakdown(&first)? {
        if let Some(rest) = name.strip_prefix("block.") {
            let (idx, part) = rest.split_once('.').unwrap_or((rest, ""));
            let key = format!("block.{idx}");
            let part = part.trim_end_matches(".gamma").to_string();
            match breakdown.last_mut() {
                Some((k, c)) if *k == key => {
                    *c += count;
                    detail.last_mut().unwrap().push_str(&format!(", {part} {count}"));
                }
                _ => {
                    breakdown.push((key, count));
                    detail.push(format!("{part} {count}"));
                }
            }
        } else {
            breakdown.push((name, count));
            detail.push(String::new());
        }
    }
    writeln!(out, "{:<12} {:>12}", "component", "params")?;
    for ((name, count), d) in breakdown.iter().zip(&detail) {
        if d.is_empty() {
            writeln!(out, "{name:<12} {count:>12}")?;
        } else {
            writeln!(out, "{name:<12} {count:>12}  ({d})")?;
        }
    }
    for (h, total) in &per_horizon {
        writeln!(out, "total T={h:<5} {total:>12}")?;
    }
    let mean = per_horizon.iter().map(|p| p.1 as f64).sum::<f64>() / per_horizon.len() as f64;
    if per_horizon.len() > 1 {
        writeln!(out, "mean over horizons {mean:>12.1}")?;
    }
    Ok(ParamsReport {
        breakdown,
        per_horizon,
        mean,
    })
}

/// Result of one mode of the gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckOutcome {
    pub mode: LayerMode,
    pub tolerance: f64,
    pub worst: f64,
    pub groups: Vec<(String, f64)>,
}

impl GradcheckOutcome {
    pub fn passed(&self) -> bool {
        self.worst < self.tolerance
    }
}

pub fn cmd_gradcheck(args: &GradArgs, out: &mut dyn Write) -> Result<Vec<GradcheckOutcome>> {
    let modes = match args.mode.as_str() {
        "both" => vec![LayerMode::Kan, LayerMode::Linear],
        m => vec![m.parse::<LayerMode>()?],
    };
    let basis: BasisKind = args.basis.parse()?;
    let mut outcomes = Vec::new();
    for mode in modes {
        let cfg = ModelConfig {
            mode,
            basis,
            ..tiny_config()
        };
        let tolerance = args.tolerance.unwrap_or(match mode {
            LayerMode::Kan => 1e-4,
            LayerMode::Linear => 1e-6,
        });
        let model = HaKanModel::new(&cfg, args.seed)?;
        let (inputs, target) = grad_check_batch(&cfg, 3, args.seed.wrapping_add(1));
        let report = grad_check(&model, &inputs, &target, args.corrupt_backward.then_some(1.5))?;
        let outcome = GradcheckOutcome {
            mode,
            tolerance,
            worst: report.worst(),
            groups: report.groups.clone(),
        };
        writeln!(out, "mode {mode} ({} params, basis {basis})", model.param_count())?;
        for (g, e) in &outcome.groups {
            writeln!(out, "  {g:<22} {e:.3e}")?;
        }
        writeln!(
            out,
            "  worst {:.3e} tolerance {:.1e}: {}",
            outcome.worst,
            tolerance,
            if outcome.passed() { "PASS" } else { "FAIL" }
        )?;
        outcomes.push(outcome);
    }
    if let Some(bad) = outcomes.iter().find(|o| !o.passed()) {
        return Err(GradcheckFailed {
            worst: bad.worst,
            tolerance: bad.tolerance,
        }
        .into());
    }
    Ok(outcomes)
}
