//! The `rangeguard` command line.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime errors.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::campaign::{
    compare_variants, correct_inputs, run_campaign, CampaignConfig, CampaignMode, CampaignResult, MultiBitMode,
    Variant,
};
use crate::graph::{load_model, save_model, ActKind, Graph};
use crate::modelzoo::{
    evaluate_accuracy, load_dataset, save_rgtn_dataset, separable_dataset, steering_dataset, toy_dataset, train, Architecture, Dataset,
    TrainSpec,
};
use crate::numerics::{CorrectionPolicy, NumericFormat};
use crate::profiler::{bound_convergence_report, profile_bounds, BoundSet, ProfileOptions, DEFAULT_RESERVOIR};
use crate::ranger::{act_swap, instrument, Extension};

#[derive(Debug, Parser)]
#[command(name = "rangeguard", version, about = "Range-restriction instrumentation and fault injection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a shipped architecture and write its manifest and weights.
    Train(TrainArgs),
    /// Derive per-activation bounds from sample data.
    Profile(ProfileArgs),
    /// Insert range-restriction operators using a bounds file.
    Instrument(InstrumentArgs),
    /// Run a fault-injection campaign.
    Inject(InjectArgs),
    /// Fault-free accuracy of a model.
    Evaluate(EvaluateArgs),
    /// Print campaign reports and the relative SDC reduction between variants.
    Report(ReportArgs),
    /// Running per-layer maxima over growing sample counts, as CSV.
    Convergence(ConvergenceArgs),
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Model manifest (JSON).
    #[arg(long)]
    model: PathBuf,
    /// Weights blob; defaults to the manifest path with a `.rgwb` extension.
    #[arg(long)]
    weights: Option<PathBuf>,
}

impl ModelArgs {
    fn load(&self) -> Result<Graph> {
        let weights = self.weights.clone().unwrap_or_else(|| weights_path(&self.model));
        load_model(&self.model, &weights).with_context(|| format!("loading {}", self.model.display()))
    }
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Input samples (IDX images or RGTN tensor).
    #[arg(long)]
    inputs: PathBuf,
    /// Targets (IDX labels or RGTN tensor).
    #[arg(long)]
    targets: PathBuf,
    /// Use only the first N samples.
    #[arg(long)]
    limit: Option<usize>,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        load_data(&self.inputs, &self.targets, self.limit)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PolicyArg {
    ToBound,
    ToZero,
    Random,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ExtensionArg {
    OneHop,
    Transitive,
}

impl From<ExtensionArg> for Extension {
    fn from(e: ExtensionArg) -> Self {
        match e {
            ExtensionArg::OneHop => Extension::OneHop,
            ExtensionArg::Transitive => Extension::Transitive,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Sampled,
    Exhaustive,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MultiBitArg {
    SingleValue,
    AdjacentValues,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    arch: Architecture,
    /// Training inputs; synthetic architectures generate data when omitted.
    #[arg(long, requires = "targets")]
    inputs: Option<PathBuf>,
    #[arg(long, requires = "inputs")]
    targets: Option<PathBuf>,
    /// Synthetic training samples to generate.
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    workers: Option<usize>,
    /// Manifest to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    out_weights: Option<PathBuf>,
    /// Write the generated synthetic training set, plus a 1000-sample
    /// held-out set from a different seed, as RGTN files in this directory.
    #[arg(long)]
    export_data: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ProfileArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 100.0)]
    percentile: f64,
    #[arg(long, default_value = "float32")]
    format: NumericFormat,
    #[arg(long, default_value_t = DEFAULT_RESERVOIR)]
    reservoir: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct InstrumentArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    bounds: PathBuf,
    #[arg(long, value_enum, default_value = "to-bound")]
    policy: PolicyArg,
    #[arg(long, value_enum, default_value = "transitive")]
    extension: ExtensionArg,
    /// Seed for the random replacement policy.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    out_weights: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InjectArgs {
    /// Full experiment description; replaces every other flag.
    #[arg(long, conflicts_with_all = ["model", "inputs"])]
    config: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    model: Option<PathBuf>,
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Also run the model instrumented with these bounds.
    #[arg(long)]
    bounds: Option<PathBuf>,
    /// Extra variants as `name=manifest.json`.
    #[arg(long = "variant", value_name = "NAME=PATH")]
    variants: Vec<String>,
    /// Also run a copy with every ReLU replaced by Tanh.
    #[arg(long)]
    act_swap: bool,
    #[arg(long, required_unless_present = "config", requires = "targets")]
    inputs: Option<PathBuf>,
    #[arg(long)]
    targets: Option<PathBuf>,
    /// Correctly predicted inputs to inject into.
    #[arg(long, default_value_t = 10)]
    num_inputs: usize,
    /// Sampled trials per input.
    #[arg(long, default_value_t = 500)]
    trials: usize,
    #[arg(long, default_value_t = 1)]
    bits: u32,
    #[arg(long, value_enum, default_value = "single-value")]
    multi_bit: MultiBitArg,
    #[arg(long, default_value = "fixed32")]
    format: NumericFormat,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    exclude_last_fc: bool,
    #[arg(long, value_enum, default_value = "sampled")]
    mode: ModeArg,
    #[arg(long, value_enum, default_value = "to-bound")]
    policy: PolicyArg,
    #[arg(long, value_enum, default_value = "transitive")]
    extension: ExtensionArg,
    #[arg(long)]
    workers: Option<usize>,
    /// JSON-lines trial log; an interrupted campaign resumes from it.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Report JSON to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Prefix for `-bits.csv` and `-thresholds.csv` plot data.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "float32")]
    format: NumericFormat,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Campaign reports; variants are compared against the first one listed.
    #[arg(long, num_args = 1.., required = true)]
    compare: Vec<PathBuf>,
    /// Write the comparison as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ConvergenceArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_delimiter = ',', default_value = "10,100,1000")]
    checkpoints: Vec<usize>,
    #[arg(long, default_value = "float32")]
    format: NumericFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Runs the tool on `args` (including the program name) and returns the
/// process exit code.
pub fn main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    let workers = match &command {
        Command::Train(a) => a.workers,
        Command::Profile(a) => a.workers,
        Command::Inject(a) => a.workers,
        Command::Evaluate(a) => a.workers,
        _ => None,
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().context("starting worker pool")?;
    pool.install(|| match command {
        Command::Train(a) => cmd_train(a),
        Command::Profile(a) => cmd_profile(a),
        Command::Instrument(a) => cmd_instrument(a),
        Command::Inject(a) => cmd_inject(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Report(a) => cmd_report(a),
        Command::Convergence(a) => cmd_convergence(a),
    })
}

fn weights_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("rgwb")
}

fn load_data(inputs: &Path, targets: &Path, limit: Option<usize>) -> Result<Dataset> {
    let data = load_dataset(inputs, targets).with_context(|| format!("loading {}", inputs.display()))?;
    Ok(match limit {
        Some(n) => data.slice(0, n.min(data.len())),
        None => data,
    })
}

fn policy(p: PolicyArg, seed: u64) -> CorrectionPolicy {
    match p {
        PolicyArg::ToBound => CorrectionPolicy::ToBound,
        PolicyArg::ToZero => CorrectionPolicy::ToZero,
        PolicyArg::Random => CorrectionPolicy::RandomInRange { seed },
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn save(graph: &Graph, manifest: &Path, weights: Option<&Path>) -> Result<()> {
    if let Some(dir) = manifest.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let weights = weights.map_or_else(|| weights_path(manifest), Path::to_path_buf);
    save_model(graph, manifest, &weights).with_context(|| format!("writing {}", manifest.display()))
}

/// Synthetic training data for architectures that do not read files.
pub fn synthetic_data(arch: Architecture, samples: usize, seed: u64) -> Result<Dataset> {
    Ok(match arch {
        Architecture::TinyMlp => separable_dataset(samples, seed),
        Architecture::SteerMini => steering_dataset(samples, seed, 16),
        Architecture::SteerMiniRad => steering_dataset(samples, seed, 16).to_radians(),
        Architecture::ToyChain => toy_dataset(samples, seed),
        Architecture::LenetMini | Architecture::LenetMiniTanh => {
            bail!("{arch} needs --inputs and --targets (e.g. data/mnist/train-*.idx)")
        }
    })
}

/// Seed of the held-out synthetic set paired with training seed `seed`.
pub fn holdout_seed(seed: u64) -> u64 {
    seed + 1000
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let data = match (&a.inputs, &a.targets) {
        (Some(x), Some(y)) => load_data(x, y, None)?,
        _ => synthetic_data(a.arch, a.samples, a.seed)?,
    };
    if let Some(dir) = &a.export_data {
        if a.inputs.is_some() {
            bail!("--export-data only applies to generated training sets");
        }
        fs::create_dir_all(dir)?;
        let held_out = synthetic_data(a.arch, 1000, holdout_seed(a.seed))?;
        save_rgtn_dataset(&data, &dir.join("train-inputs.rgtn"), &dir.join("train-targets.rgtn"))?;
        save_rgtn_dataset(&held_out, &dir.join("val-inputs.rgtn"), &dir.join("val-targets.rgtn"))?;
    }
    let mut spec = TrainSpec::defaults(a.arch);
    spec.seed = a.seed;
    spec.epochs = a.epochs.unwrap_or(spec.epochs);
    spec.learning_rate = a.lr.unwrap_or(spec.learning_rate);
    spec.batch_size = a.batch.unwrap_or(spec.batch_size);
    let report = train(&spec, &data)?;
    for (i, l) in report.epoch_loss.iter().enumerate() {
        println!("epoch {:>3}  loss {l:.6}", i + 1);
    }
    let metrics = evaluate_accuracy(&report.graph, &data, NumericFormat::Float32)?;
    println!("train {metrics}");
    save(&report.graph, &a.out, a.out_weights.as_deref())
}

fn cmd_profile(a: ProfileArgs) -> Result<()> {
    let graph = a.model.load()?;
    let data = a.data.load()?;
    let options = ProfileOptions {
        percentile: a.percentile,
        format: a.format,
        reservoir_size: a.reservoir,
        seed: a.seed,
    };
    let bounds = profile_bounds(&graph, data.inputs, &options)?;
    for (id, (low, up)) in &bounds.act_bounds {
        println!("node {id:>4}  [{low}, {up}]");
    }
    write(&a.out, bounds.to_json())
}

fn cmd_instrument(a: InstrumentArgs) -> Result<()> {
    let graph = a.model.load()?;
    let bounds = BoundSet::load(&a.bounds).with_context(|| format!("loading {}", a.bounds.display()))?;
    let inst = instrument(&graph, &bounds, policy(a.policy, a.seed), a.extension.into())?;
    for (protected, clip, low, up) in &inst.clips {
        println!("clip {clip:>4} after node {protected:>4}  [{low}, {up}]");
    }
    save(&inst.graph, &a.out, a.out_weights.as_deref())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let graph = a.model.load()?;
    let data = a.data.load()?;
    println!("{}", evaluate_accuracy(&graph, &data, a.format)?);
    Ok(())
}

fn cmd_convergence(a: ConvergenceArgs) -> Result<()> {
    let graph = a.model.load()?;
    let data = a.data.load()?;
    let report = bound_convergence_report(&graph, data.inputs, &a.checkpoints, a.format)?;
    match &a.out {
        Some(p) => write(p, report.to_csv()),
        None => {
            print!("{}", report.to_csv());
            Ok(())
        }
    }
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let mut variants = Vec::new();
    for path in &a.compare {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let result = CampaignResult::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
        print!("{}", result.to_table());
        variants.extend(result.variants);
    }
    let comparison = compare_variants(&variants);
    print!("{}", comparison.to_table());
    if let Some(out) = &a.out {
        write(out, serde_json::to_string_pretty(&comparison)? + "\n")?;
    }
    Ok(())
}

struct Outputs {
    report: Option<PathBuf>,
    csv: Option<PathBuf>,
}

fn finish_campaign(config: &CampaignConfig, outputs: &Outputs) -> Result<()> {
    let result = run_campaign(config)?;
    print!("{}", result.to_table());
    if result.variants.len() > 1 {
        print!("{}", compare_variants(&result.variants).to_table());
    }
    if let Some(p) = &outputs.report {
        write(p, result.to_json())?;
    }
    if let Some(prefix) = &outputs.csv {
        let name = prefix.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        write(&prefix.with_file_name(format!("{name}-bits.csv")), result.bit_histogram_csv())?;
        write(
            &prefix.with_file_name(format!("{name}-thresholds.csv")),
            result.threshold_csv(),
        )?;
    }
    Ok(())
}

fn cmd_inject(a: InjectArgs) -> Result<()> {
    if let Some(path) = &a.config {
        return run_experiment(path);
    }
    let (Some(model), Some(inputs), Some(targets)) = (&a.model, &a.inputs, &a.targets) else {
        bail!("--model, --inputs and --targets are required without --config");
    };
    let weights = a.weights.clone().unwrap_or_else(|| weights_path(model));
    let base = load_model(model, &weights).with_context(|| format!("loading {}", model.display()))?;
    let mut variants = vec![Variant::new("original", base.clone())];
    if let Some(b) = &a.bounds {
        let bounds = BoundSet::load(b).with_context(|| format!("loading {}", b.display()))?;
        let inst = instrument(&base, &bounds, policy(a.policy, a.seed), a.extension.into())?;
        variants.push(Variant::new("ranger", inst.graph));
    }
    if a.act_swap {
        variants.push(Variant::new("act-swap", act_swap(&base, ActKind::ReLU, ActKind::Tanh)));
    }
    for spec in &a.variants {
        let Some((name, path)) = spec.split_once('=') else {
            bail!("--variant expects NAME=PATH, got '{spec}'");
        };
        let path = PathBuf::from(path);
        let g = load_model(&path, &weights_path(&path)).with_context(|| format!("loading {}", path.display()))?;
        variants.push(Variant::new(name, g));
    }
    let data = load_data(inputs, targets, None)?;
    let picked = correct_inputs(&variants, &data, a.num_inputs, a.format)?;
    if picked.len() < a.num_inputs {
        bail!(
            "only {} of {} requested inputs are correctly predicted",
            picked.len(),
            a.num_inputs
        );
    }
    let mut config = CampaignConfig::new(variants, picked);
    config.trials_per_input = a.trials;
    config.format = a.format;
    config.seed = a.seed;
    config.exclude_last_fc = a.exclude_last_fc;
    config.bit_count = a.bits;
    config.multi_bit_mode = match a.multi_bit {
        MultiBitArg::SingleValue => MultiBitMode::SingleValue,
        MultiBitArg::AdjacentValues => MultiBitMode::AdjacentValues,
    };
    config.mode = match a.mode {
        ModeArg::Sampled => CampaignMode::Sampled,
        ModeArg::Exhaustive => CampaignMode::Exhaustive,
    };
    config.log_path = a.log.clone();
    finish_campaign(
        &config,
        &Outputs {
            report: a.out.clone(),
            csv: a.csv.clone(),
        },
    )
}

/// One TOML file describing train (if needed), profile, instrument and
/// inject. Relative paths resolve against the file's directory.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Experiment {
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_format")]
    format: String,
    model: ModelSection,
    data: DataSection,
    profile: Option<ProfileSection>,
    #[serde(default)]
    ranger: RangerSection,
    #[serde(default)]
    act_swap: bool,
    campaign: CampaignSection,
    output: OutputSection,
}

fn default_format() -> String {
    "fixed32".into()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSection {
    manifest: PathBuf,
    weights: Option<PathBuf>,
    /// Trains the model when the manifest does not exist yet.
    train: Option<TrainSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainSection {
    architecture: Architecture,
    inputs: Option<PathBuf>,
    targets: Option<PathBuf>,
    #[serde(default = "default_samples")]
    samples: usize,
    epochs: Option<usize>,
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    #[serde(default = "one")]
    seed: u64,
}

fn default_samples() -> usize {
    2000
}

fn one() -> u64 {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataSection {
    inputs: PathBuf,
    targets: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileSection {
    inputs: PathBuf,
    targets: PathBuf,
    limit: Option<usize>,
    #[serde(default = "hundred")]
    percentile: f64,
}

fn hundred() -> f64 {
    100.0
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RangerSection {
    #[serde(default)]
    policy: Option<String>,
    #[serde(default)]
    extension: Extension,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CampaignSection {
    #[serde(default = "ten")]
    inputs: usize,
    trials: usize,
    #[serde(default = "bits_one")]
    bits: u32,
    #[serde(default = "yes")]
    exclude_last_fc: bool,
    #[serde(default)]
    mode: CampaignMode,
    #[serde(default)]
    multi_bit_mode: MultiBitMode,
}

fn ten() -> usize {
    10
}

fn bits_one() -> u32 {
    1
}

fn yes() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputSection {
    report: PathBuf,
    bounds: Option<PathBuf>,
    log: Option<PathBuf>,
    csv: Option<PathBuf>,
}

fn parse_policy(s: Option<&str>, seed: u64) -> Result<CorrectionPolicy> {
    Ok(match s.unwrap_or("to-bound") {
        "to-bound" => CorrectionPolicy::ToBound,
        "to-zero" => CorrectionPolicy::ToZero,
        "random" => CorrectionPolicy::RandomInRange { seed },
        other => bail!("unknown policy '{other}' (to-bound, to-zero, random)"),
    })
}

fn run_experiment(path: &Path) -> Result<()> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let exp: Experiment = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let root = path.parent().unwrap_or(Path::new("."));
    let at = |p: &Path| root.join(p);
    let format: NumericFormat = exp.format.parse()?;

    let manifest = at(&exp.model.manifest);
    let weights = exp.model.weights.as_deref().map_or_else(|| weights_path(&manifest), at);
    if !manifest.exists() {
        let Some(t) = &exp.model.train else {
            bail!("{} does not exist and no [model.train] section is given", manifest.display());
        };
        let data = match (&t.inputs, &t.targets) {
            (Some(x), Some(y)) => load_data(&at(x), &at(y), None)?,
            _ => synthetic_data(t.architecture, t.samples, t.seed)?,
        };
        let mut spec = TrainSpec::defaults(t.architecture);
        spec.seed = t.seed;
        spec.epochs = t.epochs.unwrap_or(spec.epochs);
        spec.learning_rate = t.learning_rate.unwrap_or(spec.learning_rate);
        spec.batch_size = t.batch_size.unwrap_or(spec.batch_size);
        let report = train(&spec, &data)?;
        println!("trained {} ({} epochs)", t.architecture, report.epoch_loss.len());
        save(&report.graph, &manifest, Some(&weights))?;
    }
    let base = load_model(&manifest, &weights).with_context(|| format!("loading {}", manifest.display()))?;
    let mut variants = vec![Variant::new("original", base.clone())];
    if let Some(p) = &exp.profile {
        let data = load_data(&at(&p.inputs), &at(&p.targets), p.limit)?;
        let options = ProfileOptions {
            percentile: p.percentile,
            format,
            seed: exp.seed,
            ..ProfileOptions::default()
        };
        let bounds = profile_bounds(&base, data.inputs, &options)?;
        if let Some(out) = &exp.output.bounds {
            write(&at(out), bounds.to_json())?;
        }
        let policy = parse_policy(exp.ranger.policy.as_deref(), exp.seed)?;
        let inst = instrument(&base, &bounds, policy, exp.ranger.extension)?;
        variants.push(Variant::new("ranger", inst.graph));
    }
    if exp.act_swap {
        variants.push(Variant::new("act-swap", act_swap(&base, ActKind::ReLU, ActKind::Tanh)));
    }
    let data = load_data(&at(&exp.data.inputs), &at(&exp.data.targets), None)?;
    let picked = correct_inputs(&variants, &data, exp.campaign.inputs, format)?;
    if picked.len() < exp.campaign.inputs {
        bail!(
            "only {} of {} requested inputs are correctly predicted",
            picked.len(),
            exp.campaign.inputs
        );
    }
    let mut config = CampaignConfig::new(variants, picked);
    config.trials_per_input = exp.campaign.trials;
    config.format = format;
    config.seed = exp.seed;
    config.exclude_last_fc = exp.campaign.exclude_last_fc;
    config.bit_count = exp.campaign.bits;
    config.multi_bit_mode = exp.campaign.multi_bit_mode;
    config.mode = exp.campaign.mode;
    config.log_path = exp.output.log.as_deref().map(at);
    finish_campaign(
        &config,
        &Outputs {
            report: Some(at(&exp.output.report)),
            csv: exp.output.csv.as_deref().map(at),
        },
    )
}
