//! `utilgate` subcommands.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use utilgate_core::{
    argmax_classes, evaluate_one, fit_auto, fit_decay, fit_interpolant, gen_blobs_logits, gen_scene, perturb, BlobsSpec,
    LabelBatch, LogitsBatch, MaskConfig, MetricKind, PerturbationMode, PerturbationSpec, PlanMask, SceneSpec, SweepPlan, Tensor, TierPolicy, UtilityCurve, IGNORE_LABEL,
};

use crate::policy::{format_policy, parse_policy, parse_tier_list};
use crate::records::{format_curve, format_metric_report, format_summary, format_table, parse_curve, parse_table};
use crate::sweep::{run_sweep_parallel, worker_count};
use crate::{utct, Error};

#[derive(Debug, Parser)]
#[command(name = "utilgate", version, about = "Calibrated utility degradation for prediction logits")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Add calibrated noise to a logits tensor.
    Perturb(PerturbArgs),
    /// Sweep sigma values and record the metric of every trial.
    Calibrate(CalibrateArgs),
    /// Fit a utility curve to a calibration table.
    Fit(FitArgs),
    /// Invert a fitted curve for a target metric.
    Solve(SolveArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Tier policies.
    #[command(subcommand)]
    Tier(TierCommand),
    /// Synthetic benchmark data.
    #[command(subcommand)]
    Synth(SynthCommand),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Global,
    Region,
    TargetedNoise,
    TargetedFlip,
}

impl From<ModeArg> for PerturbationMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Global => PerturbationMode::Global,
            ModeArg::Region => PerturbationMode::Region,
            ModeArg::TargetedNoise => PerturbationMode::TargetedNoise,
            ModeArg::TargetedFlip => PerturbationMode::TargetedFlip,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Acc,
    Miou,
    Dice,
}

impl From<MetricArg> for MetricKind {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Acc => MetricKind::Accuracy,
            MetricArg::Miou => MetricKind::Miou,
            MetricArg::Dice => MetricKind::Dice,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Exp,
    Isotonic,
    Auto,
}

/// Importance-map masking shared by `perturb` and `calibrate`.
#[derive(Debug, Args)]
pub struct MaskArgs {
    /// float32 [H, W] importance map; implies `--mode region`.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Pixels with normalized importance strictly above this are noised.
    #[arg(long, default_value_t = 0.5, requires = "mask")]
    tau: f64,
    /// Noise the pixels at or below the threshold instead.
    #[arg(long, requires = "mask")]
    invert_mask: bool,
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    #[arg(long)]
    logits: PathBuf,
    #[arg(long)]
    sigma: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    delta: f64,
    #[command(flatten)]
    mask: MaskArgs,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Ground-truth labels, required by the targeted modes.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    logits: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, value_enum)]
    metric: MetricArg,
    /// Comma-separated sigma values; 0 is added when missing.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 20)]
    trials: u32,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, default_value_t = 1.0)]
    delta: f64,
    #[command(flatten)]
    mask: MaskArgs,
    #[arg(long)]
    out: PathBuf,
    /// Also write the `sigma,mean,stddev` summary here.
    #[arg(long)]
    summary_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    table: PathBuf,
    #[arg(long, value_enum, default_value_t = FamilyArg::Auto)]
    family: FamilyArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    fit: PathBuf,
    #[arg(long)]
    target: f64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted labels, or float32 logits reduced by argmax.
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, value_enum)]
    metric: MetricArg,
    /// Class count; defaults to the logits' class count or the largest label + 1.
    #[arg(long)]
    classes: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum TierCommand {
    /// Write a policy file from a fitted curve and a tier list.
    Init(TierInitArgs),
    /// Print the sigma a tier resolves to.
    Resolve(TierResolveArgs),
    /// Perturb logits for one request at a tier's level.
    Apply(TierApplyArgs),
}

#[derive(Debug, Args)]
pub struct TierInitArgs {
    #[arg(long)]
    fit: PathBuf,
    #[arg(long, value_enum)]
    metric: MetricArg,
    /// `name=target` pairs from the lowest tier to the highest.
    #[arg(long)]
    tiers: String,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TierResolveArgs {
    #[arg(long)]
    policy: PathBuf,
    #[arg(long)]
    tier: String,
}

#[derive(Debug, Args)]
pub struct TierApplyArgs {
    #[arg(long)]
    policy: PathBuf,
    #[arg(long)]
    tier: String,
    #[arg(long)]
    logits: PathBuf,
    #[arg(long)]
    request_id: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum SynthCommand {
    /// Gaussian clusters scored by a nearest-centroid classifier.
    Blobs(BlobsArgs),
    /// Segmentation scene of rectangles and discs with an importance map.
    Scene(SceneArgs),
}

#[derive(Debug, Args)]
pub struct BlobsArgs {
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 100)]
    samples_per_class: usize,
    #[arg(long, default_value_t = 3.0)]
    separation: f64,
    #[arg(long, default_value_t = 10)]
    dim: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    logits_out: PathBuf,
    #[arg(long)]
    labels_out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SceneArgs {
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 4)]
    shapes: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    logits_out: PathBuf,
    #[arg(long)]
    labels_out: PathBuf,
    #[arg(long)]
    importance_out: Option<PathBuf>,
}

fn load(path: &Path) -> Result<Tensor, Error> {
    utct::load(path).map_err(|source| Error::Format {
        path: path.to_owned(),
        source,
    })
}

fn save(tensor: &Tensor, path: &Path) -> Result<(), Error> {
    utct::save(tensor, path).map(drop).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

fn in_file<T>(path: &Path, result: Result<T, Error>) -> Result<T, Error> {
    result.map_err(|e| Error::InFile {
        path: path.to_owned(),
        source: Box::new(e),
    })
}

fn read_text(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

fn load_logits(path: &Path) -> Result<LogitsBatch, Error> {
    in_file(path, LogitsBatch::from_tensor(load(path)?).map_err(Error::from))
}

fn load_labels(path: &Path) -> Result<LabelBatch, Error> {
    in_file(path, LabelBatch::from_tensor(load(path)?).map_err(Error::from))
}

fn load_curve(path: &Path) -> Result<UtilityCurve, Error> {
    in_file(path, parse_curve(&read_text(path)?))
}

fn load_policy(path: &Path) -> Result<TierPolicy, Error> {
    in_file(path, parse_policy(&read_text(path)?))
}

/// The explicit mode, else region when a mask is given, else global.
fn resolve_mode(mode: Option<ModeArg>, mask: &MaskArgs) -> Result<PerturbationMode, Error> {
    let mode = mode.map(PerturbationMode::from).unwrap_or(if mask.mask.is_some() {
        PerturbationMode::Region
    } else {
        PerturbationMode::Global
    });
    match (mode, mask.mask.is_some()) {
        (PerturbationMode::Region, false) => Err(Error::Usage("--mode region requires --mask".into())),
        (m, true) if m != PerturbationMode::Region => {
            Err(Error::Usage(format!("--mask only applies to --mode region, not --mode {m}")))
        }
        _ => Ok(mode),
    }
}

fn load_plan_mask(mask: &MaskArgs) -> Result<Option<PlanMask>, Error> {
    let Some(path) = &mask.mask else {
        return Ok(None);
    };
    let config = MaskConfig::new(mask.tau, mask.invert_mask).map_err(|e| Error::Usage(format!("--tau: {e}")))?;
    let map = utct::load_importance(path).map_err(|source| Error::Format {
        path: path.clone(),
        source,
    })?;
    Ok(Some(PlanMask::Thresholded { map, config }))
}

fn cmd_perturb(args: PerturbArgs, out: &mut dyn Write) -> Result<(), Error> {
    let mode = resolve_mode(args.mode, &args.mask)?;
    if mode.is_targeted() && args.labels.is_none() {
        return Err(Error::Usage(format!("--mode {mode} requires --labels")));
    }
    let spec = PerturbationSpec::new(mode, args.sigma, args.seed).with_delta(args.delta);
    spec.validate().map_err(|e| Error::Usage(e.to_string()))?;

    let logits = load_logits(&args.logits)?;
    let labels = args.labels.as_deref().map(load_labels).transpose()?;
    let mask = load_plan_mask(&args.mask)?.map(|m| m.resolve());
    let perturbed = perturb(&logits, &spec, mask.as_ref(), labels.as_ref())?;
    let touched = logits
        .values()
        .iter()
        .zip(perturbed.values())
        .filter(|(a, b)| a.to_bits() != b.to_bits())
        .count();
    save(&perturbed.to_tensor(), &args.out)?;
    writeln!(out, "mode={mode} sigma_eff={} touched={touched}", spec.effective_sigma()).ok();
    Ok(())
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<(), Error> {
    let mode = resolve_mode(args.mode, &args.mask)?;
    let grid = args.grid.unwrap_or_else(utilgate_core::default_sigma_grid);
    let mut plan = SweepPlan::new(grid, args.trials, args.seed, mode, args.metric.into())
        .map_err(|e| Error::Usage(e.to_string()))?
        .with_delta(args.delta);
    if let Some(mask) = load_plan_mask(&args.mask)? {
        plan = plan.with_mask(mask);
    }
    let workers = worker_count()?;
    let logits = load_logits(&args.logits)?;
    let labels = load_labels(&args.labels)?;
    let table = run_sweep_parallel(&logits, &labels, &plan, workers)?;
    write_text(&args.out, &format_table(&table))?;
    if let Some(path) = &args.summary_out {
        write_text(path, &format_summary(&table))?;
    }
    Ok(())
}

fn cmd_fit(args: FitArgs, out: &mut dyn Write) -> Result<(), Error> {
    let table = in_file(&args.table, parse_table(&read_text(&args.table)?))?;
    let curve = match args.family {
        FamilyArg::Exp => UtilityCurve::Exp(fit_decay(&table)?),
        FamilyArg::Isotonic => UtilityCurve::Isotonic(fit_interpolant(&table)?),
        FamilyArg::Auto => fit_auto(&table)?,
    };
    write_text(&args.out, &format_curve(&curve))?;
    let rmse = curve.rmse();
    match &curve {
        UtilityCurve::Exp(f) => writeln!(out, "family=exp a={} b={} c={} rmse={rmse}", f.a(), f.b(), f.c()),
        UtilityCurve::Isotonic(f) => writeln!(out, "family=isotonic points={} rmse={rmse}", f.sigmas().len()),
    }
    .ok();
    Ok(())
}

fn cmd_solve(args: SolveArgs, out: &mut dyn Write) -> Result<(), Error> {
    let curve = load_curve(&args.fit)?;
    let solution = curve.solve_sigma(args.target).map_err(|e| Error::Usage(format!("--target: {e}")))?;
    writeln!(out, "sigma={} clamp={}", solution.sigma, solution.clamp.as_str()).ok();
    Ok(())
}

fn cmd_eval(args: EvalArgs, out: &mut dyn Write) -> Result<(), Error> {
    let pred_tensor = load(&args.pred)?;
    let (pred, logits_classes) = match pred_tensor.dtype() {
        utilgate_core::DType::F32 => {
            let logits = in_file(&args.pred, LogitsBatch::from_tensor(pred_tensor).map_err(Error::from))?;
            (argmax_classes(&logits), Some(logits.classes()))
        }
        _ => (in_file(&args.pred, LabelBatch::from_tensor(pred_tensor).map_err(Error::from))?, None),
    };
    let truth = load_labels(&args.truth)?;
    let classes = match (args.classes, logits_classes) {
        (Some(k), _) | (None, Some(k)) => k,
        (None, None) => pred
            .values()
            .iter()
            .chain(truth.values())
            .filter(|&&l| l != IGNORE_LABEL && l >= 0)
            .max()
            .map_or(1, |&m| m as usize + 1),
    };
    if classes == 0 {
        return Err(Error::Usage("--classes must be positive".into()));
    }
    let report = evaluate_one(args.metric.into(), &pred, &truth, classes)?;
    write!(out, "{}", format_metric_report(&report)).ok();
    Ok(())
}

fn cmd_tier(command: TierCommand, out: &mut dyn Write) -> Result<(), Error> {
    match command {
        TierCommand::Init(args) => {
            let curve = load_curve(&args.fit)?;
            let tiers = parse_tier_list(&args.tiers)?;
            let policy = TierPolicy::new(tiers, args.metric.into(), curve, args.seed)
                .map_err(|e| Error::Usage(format!("--tiers: {e}")))?;
            write_text(&args.out, &format_policy(&policy))
        }
        TierCommand::Resolve(args) => {
            let policy = load_policy(&args.policy)?;
            let r = policy.resolve_tier(&args.tier)?;
            writeln!(
                out,
                "tier={} sigma={} achieved={} clamp={}",
                args.tier,
                r.spec.sigma,
                r.achieved,
                r.clamp.as_str()
            )
            .ok();
            Ok(())
        }
        TierCommand::Apply(args) => {
            let policy = load_policy(&args.policy)?;
            let r = policy.resolve_tier(&args.tier)?;
            let logits = load_logits(&args.logits)?;
            let perturbed = policy.apply_tier(&args.tier, &logits, args.request_id)?;
            save(&perturbed.to_tensor(), &args.out)?;
            writeln!(out, "tier={} sigma={} clamp={}", args.tier, r.spec.sigma, r.clamp.as_str()).ok();
            Ok(())
        }
    }
}

fn cmd_synth(command: SynthCommand) -> Result<(), Error> {
    match command {
        SynthCommand::Blobs(a) => {
            let spec = BlobsSpec {
                classes: a.classes,
                samples_per_class: a.samples_per_class,
                separation: a.separation,
                feature_dim: a.dim,
                seed: a.seed,
            };
            let (logits, labels) = gen_blobs_logits(&spec).map_err(|e| Error::Usage(e.to_string()))?;
            save(&logits.to_tensor(), &a.logits_out)?;
            save(&labels.to_tensor(), &a.labels_out)
        }
        SynthCommand::Scene(a) => {
            let spec = SceneSpec {
                height: a.height,
                width: a.width,
                classes: a.classes,
                shapes: a.shapes,
                seed: a.seed,
            };
            let scene = gen_scene(&spec).map_err(|e| match e {
                utilgate_core::Error::InvalidParameter(m) => Error::Usage(m),
                other => Error::Core(other),
            })?;
            save(&scene.logits.to_tensor(), &a.logits_out)?;
            save(&scene.labels.to_tensor(), &a.labels_out)?;
            if let Some(path) = &a.importance_out {
                save(&scene.importance.to_tensor(), path)?;
            }
            Ok(())
        }
    }
}

/// Runs one parsed invocation, writing summary lines to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), Error> {
    match cli.command {
        Command::Perturb(a) => cmd_perturb(a, out),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Fit(a) => cmd_fit(a, out),
        Command::Solve(a) => cmd_solve(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Tier(c) => cmd_tier(c, out),
        Command::Synth(c) => cmd_synth(c),
    }
}
