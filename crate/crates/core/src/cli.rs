//! Command-line driver: generate, train, evaluate, report, gradcheck.
//!
//! Logs go to stderr; stdout carries `key=value` summaries (plus the
//! comparison table for `evaluate`/`report`). Exit status: 0 success,
//! 2 usage, 3 configuration, 4 data/IO, 5 numeric failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::{ResolvedPaths, RunConfig};
use crate::dataset::{generate_synthetic, read_dataset, write_dataset, Dataset};
use crate::error::Error;
use crate::evaluation::{
    render_comparison, render_comparison_csv, render_daily_csv, render_groups_csv,
    render_lorenz_csv, render_lorenz_svg, render_summary, rolling_report, EvalReport,
};
use crate::labeling::{label_samples, LabelConfig};
use crate::model::{LtvModel, ModelKind, ModelSpec};
use crate::nn::checkpoint::{load_checkpoint, save_checkpoint};
use crate::nn::ModelParams;
use crate::pipeline::{
    evaluate_model, gradient_check_suite, read_predictions, train_model, write_predictions,
};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_DATA: i32 = 4;
pub const EXIT_NUMERIC: i32 = 5;

const GRADCHECK_CONFIGS: usize = 10;
const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(
    name = "caltv",
    version,
    about = "Price-category LTV models: data, training, rolling evaluation"
)]
pub struct Cli {
    /// Run configuration (TOML). Without it every setting takes its default.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Restrict the command to one model: caltv, ziln or mse.
    #[arg(long, global = true, value_name = "NAME")]
    pub model: Option<ModelKind>,
    /// Replaces the configured seed.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Base directory for relative paths (default: the config file's directory).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Validate configuration and inputs, write nothing.
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Draw a synthetic dataset and write it with labels.
    Generate,
    /// Train on the initial day span and save checkpoints.
    Train,
    /// Fine-tune day by day, score the following day, write reports.
    Evaluate,
    /// Rebuild the cross-model comparison from saved predictions.
    Report,
    /// Finite-difference gradient check on random tiny configurations.
    Gradcheck,
}

/// A failed command with the exit status it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: Error,
}

impl Failure {
    fn config(error: Error) -> Self {
        Failure {
            code: EXIT_CONFIG,
            error,
        }
    }
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        let code = match &error {
            Error::InvalidConfig { .. } => EXIT_CONFIG,
            Error::NonFinite(_) | Error::UndefinedMetric(_) => EXIT_NUMERIC,
            _ => EXIT_DATA,
        };
        Failure { code, error }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

struct Context {
    config: RunConfig,
    paths: ResolvedPaths,
    kinds: Vec<ModelKind>,
    dry_run: bool,
}

fn load_context(cli: &Cli) -> CliResult<Context> {
    let (mut config, base) = match &cli.config {
        Some(path) => {
            let config = RunConfig::load(path).map_err(Failure::config)?;
            let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (config, dir)
        }
        None => (RunConfig::default(), PathBuf::from(".")),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
        config.generator.seed = 0;
        config.train.seed = 0;
        config.validate().map_err(Failure::config)?;
    }
    let base = cli.out.clone().unwrap_or(base);
    Ok(Context {
        paths: ResolvedPaths::new(&config.paths, &base),
        config,
        kinds: cli
            .model
            .map_or_else(|| ModelKind::ALL.to_vec(), |k| vec![k]),
        dry_run: cli.dry_run,
    })
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let ctx = load_context(cli)?;
    match cli.command {
        Command::Generate => cmd_generate(&ctx),
        Command::Train => cmd_train(&ctx),
        Command::Evaluate => cmd_evaluate(&ctx),
        Command::Report => cmd_report(&ctx),
        Command::Gradcheck => cmd_gradcheck(&ctx),
    }
}

fn emit(text: &str) {
    print!("{text}");
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e).into())
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e).into())
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    sorted[((sorted.len() - 1) as f64 * q).round() as usize]
}

fn cmd_generate(ctx: &Context) -> CliResult<()> {
    let gen = ctx.config.generator_config();
    let labels = ctx.config.label_config()?;
    if ctx.dry_run {
        emit(&format!(
            "dry_run=true\ndataset={}\nn_samples={}\nseed={}\n",
            ctx.paths.dataset.display(),
            gen.n_samples,
            gen.seed
        ));
        return Ok(());
    }
    let mut ds = generate_synthetic(&gen)?;
    label_samples(&mut ds.samples, &labels);
    if let Some(parent) = ctx.paths.dataset.parent() {
        ensure_dir(parent)?;
    }
    write_dataset(&ds, &ctx.paths.dataset)?;
    log::info!(
        "wrote {} samples to {}",
        ds.samples.len(),
        ctx.paths.dataset.display()
    );

    let n = ds.samples.len();
    let payers = ds
        .samples
        .iter()
        .filter(|s| !s.transactions.is_empty())
        .count();
    let mut spend: Vec<f64> = ds
        .samples
        .iter()
        .filter_map(|s| s.ltv_label())
        .filter(|&v| v > 0.0)
        .collect();
    spend.sort_by(f64::total_cmp);
    let total: f64 = spend.iter().sum();
    let rate = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    let mut s = String::new();
    writeln!(s, "dataset={}", ctx.paths.dataset.display()).unwrap();
    writeln!(s, "n_samples={n}").unwrap();
    writeln!(s, "payers={payers}").unwrap();
    writeln!(s, "payer_rate={}", rate(payers)).unwrap();
    writeln!(s, "window_payers={}", spend.len()).unwrap();
    writeln!(s, "window_payer_rate={}", rate(spend.len())).unwrap();
    writeln!(s, "total_ltv={total}").unwrap();
    for (name, q) in [("p50", 0.5), ("p90", 0.9), ("p99", 0.99)] {
        writeln!(s, "payer_ltv_{name}={}", quantile(&spend, q)).unwrap();
    }
    writeln!(s, "payer_ltv_max={}", spend.last().copied().unwrap_or(0.0)).unwrap();
    emit(&s);
    Ok(())
}

/// Reads the dataset and labels it with the configured window; the price
/// catalog always comes from the dataset file.
fn load_labeled(ctx: &Context) -> CliResult<Dataset> {
    let mut ds = read_dataset(&ctx.paths.dataset)?;
    let labels = LabelConfig::new(ctx.config.label.window_hours, ds.catalog.clone())
        .map_err(Failure::config)?;
    label_samples(&mut ds.samples, &labels);
    Ok(ds)
}

fn cmd_train(ctx: &Context) -> CliResult<()> {
    let ds = load_labeled(ctx)?;
    if ctx.dry_run {
        emit(&format!(
            "dry_run=true\ndataset={}\nn_samples={}\nmodels={}\n",
            ctx.paths.dataset.display(),
            ds.samples.len(),
            names(&ctx.kinds)
        ));
        return Ok(());
    }
    ensure_dir(&ctx.paths.checkpoints)?;
    let mut s = String::new();
    for &kind in &ctx.kinds {
        let train = ctx.config.train_config(kind);
        let trained = train_model(kind, &ds, &ctx.config.model, &train, &ctx.config.protocol)?;
        let spec = serde_json::to_string(trained.model.spec()).expect("spec serializes");
        let ckpt = ctx.paths.checkpoint(kind);
        save_checkpoint(&ckpt, &spec, &trained.params)?;

        let mut log = String::new();
        writeln!(log, "model={kind}").unwrap();
        writeln!(log, "seed={}", train.seed).unwrap();
        writeln!(log, "epochs={}", train.epochs).unwrap();
        writeln!(log, "batch_size={}", train.batch_size).unwrap();
        writeln!(log, "learning_rate={}", train.learning_rate).unwrap();
        writeln!(log, "initial_loss={}", trained.log.initial_loss).unwrap();
        for (e, l) in trained.log.epoch_losses.iter().enumerate() {
            writeln!(log, "epoch.{e}.loss={l}").unwrap();
        }
        writeln!(log, "final_loss={}", trained.log.final_loss).unwrap();
        write_file(&ctx.paths.train_log(kind), &log)?;

        writeln!(s, "{kind}.checkpoint={}", ckpt.display()).unwrap();
        writeln!(s, "{kind}.parameters={}", trained.params.len()).unwrap();
        writeln!(s, "{kind}.initial_loss={}", trained.log.initial_loss).unwrap();
        writeln!(s, "{kind}.final_loss={}", trained.log.final_loss).unwrap();
    }
    emit(&s);
    Ok(())
}

fn names(kinds: &[ModelKind]) -> String {
    kinds.iter().map(|k| k.name()).collect::<Vec<_>>().join(",")
}

fn load_model(ctx: &Context, kind: ModelKind, ds: &Dataset) -> CliResult<(LtvModel, ModelParams)> {
    let path = ctx.paths.checkpoint(kind);
    let (spec_json, params) = load_checkpoint(&path)?;
    let spec: ModelSpec = serde_json::from_str(&spec_json).map_err(|e| Error::Parse {
        path: path.clone(),
        line: 2,
        field: "config".into(),
        reason: e.to_string(),
    })?;
    if spec.kind != kind {
        return Err(Error::InvalidArgument(format!(
            "{} holds a {} model",
            path.display(),
            spec.kind
        ))
        .into());
    }
    if spec.catalog != ds.catalog || spec.trunk.dense_dim != ds.feature_dim {
        return Err(Error::InvalidArgument(format!(
            "{} was trained on a dataset with a different schema",
            path.display()
        ))
        .into());
    }
    let model = LtvModel::new(spec)?;
    if !model.network().zero_params().same_layout(&params) {
        return Err(Error::InvalidArgument(format!(
            "{}: tensors do not match the recorded architecture",
            path.display()
        ))
        .into());
    }
    Ok((model, params))
}

fn cmd_evaluate(ctx: &Context) -> CliResult<()> {
    let ds = load_labeled(ctx)?;
    let models: Vec<(ModelKind, LtvModel, ModelParams)> = ctx
        .kinds
        .iter()
        .map(|&k| load_model(ctx, k, &ds).map(|(m, p)| (k, m, p)))
        .collect::<CliResult<_>>()?;
    if ctx.dry_run {
        emit(&format!("dry_run=true\nmodels={}\n", names(&ctx.kinds)));
        return Ok(());
    }
    let mut s = String::new();
    for (kind, model, params) in &models {
        let ev = evaluate_model(
            model,
            params,
            &ds,
            &ctx.config.train_config(*kind),
            &ctx.config.finetune,
            &ctx.config.protocol,
            &ctx.config.eval,
        )?;
        let dir = ctx.paths.model_reports(*kind);
        ensure_dir(&dir)?;
        let r = &ev.report;
        write_file(
            &dir.join("metrics.txt"),
            &render_summary(kind.name(), r, &ctx.config.eval),
        )?;
        write_file(&dir.join("lorenz.csv"), &render_lorenz_csv(&r.pooled))?;
        write_file(&dir.join("deciles.csv"), &render_groups_csv(&r.pooled))?;
        write_file(&dir.join("daily.csv"), &render_daily_csv(r))?;
        if let Some(points) = &r.pooled.lorenz {
            let mut curves = vec![(kind.name().to_string(), points.clone())];
            if let Some(truth) = &r.pooled.truth_lorenz {
                curves.push(("actual ranking".into(), truth.clone()));
            }
            write_file(&dir.join("lorenz.svg"), &render_lorenz_svg(&curves))?;
        }
        write_predictions(&dir.join("predictions.jsonl"), *kind, &ev.outcome.days)?;
        writeln!(s, "{kind}.reports={}", dir.display()).unwrap();
        writeln!(s, "{kind}.evaluated_days={}", r.days.len()).unwrap();
        writeln!(s, "{kind}.pooled_aulc={}", opt(r.pooled.aulc)).unwrap();
        writeln!(s, "{kind}.mean_daily_aulc={}", opt(r.mean_daily_aulc)).unwrap();
        writeln!(s, "{kind}.gbias_var={}", r.pooled.gbias_var).unwrap();
        writeln!(s, "{kind}.gbias_var_top={}", r.pooled.gbias_var_top).unwrap();
    }
    emit(&s);
    // refresh the comparison with whatever models have predictions now
    cmd_report(&Context {
        config: ctx.config.clone(),
        paths: ctx.paths.clone(),
        kinds: ModelKind::ALL.to_vec(),
        dry_run: false,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".into(), |x| x.to_string())
}

/// Comparison over every requested model that has saved predictions.
fn cmd_report(ctx: &Context) -> CliResult<()> {
    let mut rows: Vec<(String, EvalReport)> = Vec::new();
    for &kind in &ctx.kinds {
        let path = ctx.paths.model_reports(kind).join("predictions.jsonl");
        if !path.exists() {
            log::info!("no predictions for {kind} at {}", path.display());
            continue;
        }
        let (_, days) = read_predictions(&path)?;
        rows.push((
            kind.name().to_string(),
            rolling_report(&days, &ctx.config.eval)?.pooled,
        ));
    }
    if rows.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no predictions under {}; run `evaluate` first",
            ctx.paths.reports.display()
        ))
        .into());
    }
    let table = render_comparison(&rows, ctx.config.eval.top_fraction);
    if !ctx.dry_run {
        write_file(&ctx.paths.reports.join("comparison.txt"), &table)?;
        write_file(
            &ctx.paths.reports.join("comparison.csv"),
            &render_comparison_csv(&rows),
        )?;
        let curves: Vec<(String, Vec<_>)> = rows
            .iter()
            .filter_map(|(name, r)| r.lorenz.clone().map(|l| (name.clone(), l)))
            .collect();
        if !curves.is_empty() {
            write_file(
                &ctx.paths.reports.join("lorenz.svg"),
                &render_lorenz_svg(&curves),
            )?;
        }
    }
    emit(&table);
    Ok(())
}

fn cmd_gradcheck(ctx: &Context) -> CliResult<()> {
    let mut s = String::new();
    let mut worst_overall: f64 = 0.0;
    for &kind in &ctx.kinds {
        let reports = gradient_check_suite(kind, GRADCHECK_CONFIGS, ctx.config.seed)?;
        let worst = reports
            .iter()
            .map(|r| r.max_relative_error)
            .fold(0.0, f64::max);
        let checked: usize = reports.iter().map(|r| r.checked).sum();
        worst_overall = worst_overall.max(worst);
        writeln!(s, "{kind}.configs={}", reports.len()).unwrap();
        writeln!(s, "{kind}.coordinates={checked}").unwrap();
        writeln!(s, "{kind}.max_relative_error={worst}").unwrap();
        writeln!(s, "{kind}.pass={}", worst < GRADCHECK_TOLERANCE).unwrap();
    }
    emit(&s);
    if worst_overall < GRADCHECK_TOLERANCE {
        Ok(())
    } else {
        Err(Error::NonFinite(format!(
            "gradient check: relative error {worst_overall} exceeds {GRADCHECK_TOLERANCE}"
        ))
        .into())
    }
}

/// Parses arguments, runs the command, and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .target(env_logger::Target::Stderr)
        .try_init();
    match run(&cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.error);
            f.code
        }
    }
}
