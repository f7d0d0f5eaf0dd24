//! Command-line front end. Every subcommand resolves its flags into a JSON
//! config, writes it next to its outputs and can be re-run from that file.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use super::ablate::{ablate, AblationGrid, GridReport};
use super::eval::{evaluate_samples, EvalReport, MatchPolicy};
use super::plot::{default_title, plot_loss_curves, Window};
use super::HarnessError;
use crate::curriculum::{select_beta, ScheduleKind, ScheduleParams};
use crate::datagen::{generate_corpus, Alphabet, Corpus, CorpusSpec, LengthDist, Split, Tier, TierMix};
use crate::model::{gradient_check, DecoderKind, InjectionMode, ModelBundle, ModelConfig};
use crate::numerics::gradcheck::{op_suite, GradCheckReport, TOLERANCE};
use crate::training::{
    load_metrics, matched_pair_run, train, train_losses, ComparisonRow, Dataset, RunConfig, TrainOptions,
    RESOLVED_CONFIG_FILE,
};

pub const EVAL_REPORT_FILE: &str = "eval_report.json";
pub const COMPARE_FILE: &str = "compare.csv";
pub const COMPARE_SUMMARY_FILE: &str = "compare_summary.csv";
pub const SELECT_BETA_FILE: &str = "select_beta.json";

#[derive(Debug, Parser)]
#[command(name = "teachlab", version, about = "Label-injection curriculum experiments on synthetic word images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic word-image corpus.
    GenData(GenDataArgs),
    /// Train one model.
    Train(RunFlags),
    /// Score a trained model on a corpus split.
    Eval(EvalArgs),
    /// Train several schedules on matched seeds and tabulate them.
    Compare(CompareArgs),
    /// Loss-aware alpha x beta grid against the injection-free baseline.
    Ablate(AblateArgs),
    /// Finite-difference check of every op and of both full models.
    Gradcheck(GradcheckArgs),
    /// Draw loss curves from metrics files as SVG.
    Plot(PlotArgs),
    /// Pick beta just under a converged baseline loss.
    SelectBeta(SelectBetaArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Corpus spec JSON; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub count: Option<usize>,
    /// First N characters of a-z0-9.
    #[arg(long, conflicts_with = "alphabet")]
    pub alphabet_size: Option<usize>,
    /// Explicit alphabet characters.
    #[arg(long)]
    pub alphabet: Option<String>,
    /// Tier proportions, e.g. `clean=0.5,noisy=0.5`.
    #[arg(long)]
    pub tiers: Option<String>,
    #[arg(long)]
    pub min_len: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub max_seq_len: Option<usize>,
}

/// Flags shared by every command that trains.
#[derive(Debug, Args, Clone, Default)]
pub struct RunFlags {
    /// Resolved run config JSON; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// loss_aware, linear, constant or none.
    #[arg(long)]
    pub schedule: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<u64>,
    /// linear_head or ar_decoder.
    #[arg(long)]
    pub decoder: Option<String>,
    /// pad or none.
    #[arg(long)]
    pub injection: Option<String>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub eval_every: Option<u64>,
    #[arg(long)]
    pub total_mask_steps: Option<u64>,
    #[arg(long)]
    pub constant_r: Option<f64>,
    #[arg(long)]
    pub eval_limit: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// Encoder and decoder depth.
    #[arg(long)]
    pub depth: Option<usize>,
    /// Attention heads in encoder and decoder.
    #[arg(long)]
    pub heads: Option<usize>,
    /// Print validation rows while training.
    #[arg(long)]
    pub verbose: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Resolved eval config JSON; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory holding the checkpoint and model config.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// train, val or test.
    #[arg(long)]
    pub split: Option<String>,
    /// pad or none.
    #[arg(long)]
    pub injection: Option<String>,
    #[arg(long)]
    pub case_insensitive: bool,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Defaults to `<model>/eval_<split>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub run: RunFlags,
    /// Comma-separated schedule kinds.
    #[arg(long)]
    pub schedules: Option<String>,
    /// Number of seeds, counting up from --seed.
    #[arg(long)]
    pub seeds: Option<u64>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub run: RunFlags,
    #[arg(long)]
    pub alphas: Option<String>,
    #[arg(long)]
    pub betas: Option<String>,
    #[arg(long)]
    pub seeds: Option<u64>,
    /// Skip the injection-free reference runs.
    #[arg(long)]
    pub no_baseline: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the reports and resolved config here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// metrics.csv files, one curve each.
    #[arg(required_unless_present = "config")]
    pub metrics: Vec<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// full, early or late.
    #[arg(long)]
    pub window: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub title: Option<String>,
}

#[derive(Debug, Args)]
pub struct SelectBetaArgs {
    /// Baseline metrics.csv to read; without it a baseline is trained.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunFlags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub model_dir: PathBuf,
    pub data_dir: PathBuf,
    pub split: Split,
    pub injection: InjectionMode,
    pub policy: MatchPolicy,
    pub batch_size: usize,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub base: RunConfig,
    pub schedules: Vec<ScheduleParams>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateConfig {
    pub base: RunConfig,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub baseline: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotConfig {
    pub metrics: Vec<PathBuf>,
    pub window: Window,
    pub out: PathBuf,
    pub title: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectBetaReport {
    pub source: PathBuf,
    pub steps: usize,
    pub tail_steps: usize,
    pub beta: f64,
}

fn contract(msg: impl Into<String>) -> HarnessError {
    HarnessError::Contract(msg.into())
}

fn parse<T: std::str::FromStr>(what: &str, s: &str) -> Result<T, HarnessError>
where
    T::Err: std::fmt::Display,
{
    s.trim().parse().map_err(|e| contract(format!("--{what}: {e}")))
}

fn parse_list<T: std::str::FromStr>(what: &str, s: &str) -> Result<Vec<T>, HarnessError>
where
    T::Err: std::fmt::Display,
{
    let v = s
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| parse(what, p))
        .collect::<Result<Vec<T>, _>>()?;
    if v.is_empty() {
        return Err(contract(format!("--{what} is empty")));
    }
    Ok(v)
}

fn parse_tiers(s: &str) -> Result<TierMix, HarnessError> {
    let mut mix = TierMix::default();
    for part in s.split(',').filter(|p| !p.trim().is_empty()) {
        let (name, w) = part
            .split_once('=')
            .ok_or_else(|| contract(format!("--tiers: expected name=weight, got `{part}`")))?;
        let w: f64 = parse("tiers", w)?;
        match Tier::ALL.iter().find(|t| t.as_str() == name.trim()) {
            Some(Tier::Clean) => mix.clean = w,
            Some(Tier::Noisy) => mix.noisy = w,
            Some(Tier::Occluded) => mix.occluded = w,
            Some(Tier::Perspective) => mix.perspective = w,
            None => return Err(contract(format!("--tiers: unknown tier `{name}`"))),
        }
    }
    mix.validate()?;
    Ok(mix)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| contract(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| contract(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn out_dir(out: Option<&PathBuf>) -> Result<PathBuf, HarnessError> {
    out.cloned().ok_or_else(|| contract("--out is required"))
}

fn gen_data(args: &GenDataArgs) -> Result<(), HarnessError> {
    let mut spec: CorpusSpec = match &args.config {
        Some(p) => read_json(p)?,
        None => CorpusSpec::default(),
    };
    let out = out_dir(args.out.as_ref())?;
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if let Some(n) = args.count {
        spec.count = n;
    }
    if let Some(n) = args.alphabet_size {
        spec.alphabet = Alphabet::default_prefix(n)?;
    }
    if let Some(chars) = &args.alphabet {
        spec.alphabet = Alphabet::new(chars)?;
    }
    if let Some(t) = &args.tiers {
        spec.tier_mix = parse_tiers(t)?;
    }
    if let Some(n) = args.min_len {
        spec.length.min = n;
    }
    if let Some(n) = args.max_len {
        spec.length.max = n;
    }
    if let Some(n) = args.height {
        spec.height = n;
    }
    if let Some(n) = args.width {
        spec.width = n;
    }
    if let Some(n) = args.max_seq_len {
        spec.max_seq_len = n;
    }
    let LengthDist { min, max } = spec.length;
    let manifest = generate_corpus(&spec, &out)?;
    write_json(&out.join(RESOLVED_CONFIG_FILE), &spec)?;
    println!(
        "wrote {} samples (labels {min}..={max}, {}x{}) to {}",
        manifest.len(),
        spec.width,
        spec.height,
        out.display()
    );
    Ok(())
}

/// Model shape matching a corpus, at the default width and depth.
pub fn model_for_corpus(spec: &CorpusSpec) -> ModelConfig {
    let patch = |side: usize| if side % 8 == 0 { 8 } else if side % 4 == 0 { 4 } else { side };
    ModelConfig {
        height: spec.height,
        width: spec.width,
        patch_height: patch(spec.height),
        patch_width: patch(spec.width),
        max_seq_len: spec.max_seq_len,
        vocab_size: spec.alphabet.vocab_size(),
        ..ModelConfig::default()
    }
}

/// Applies `flags` on top of `--config` (or corpus-derived defaults).
pub fn resolve_run(flags: &RunFlags) -> Result<RunConfig, HarnessError> {
    let mut cfg = match &flags.config {
        Some(p) => read_json::<RunConfig>(p)?,
        None => {
            let data = flags.data.as_ref().ok_or_else(|| contract("--data or --config is required"))?;
            let corpus = Corpus::open(data)?;
            let out = out_dir(flags.out.as_ref())?;
            RunConfig::new(
                model_for_corpus(&corpus.spec),
                ScheduleParams::of_kind(ScheduleKind::LossAware),
                data,
                &out,
            )
        }
    };
    apply_flags(&mut cfg, flags)?;
    cfg.validate()?;
    Ok(cfg)
}

fn apply_flags(cfg: &mut RunConfig, f: &RunFlags) -> Result<(), HarnessError> {
    if let Some(s) = f.seed {
        cfg.seed = s;
        cfg.model.seed = s;
    }
    if let Some(o) = &f.out {
        cfg.out_dir = o.clone();
    }
    if let Some(d) = &f.data {
        cfg.data_dir = d.clone();
    }
    if let Some(k) = &f.schedule {
        let kind: ScheduleKind = parse("schedule", k)?;
        if kind != cfg.schedule.kind {
            cfg.schedule = ScheduleParams {
                kind,
                ..cfg.schedule.clone()
            };
        }
    }
    if let Some(a) = f.alpha {
        cfg.schedule.alpha = a;
    }
    if let Some(b) = f.beta {
        cfg.schedule.beta = b;
    }
    if let Some(n) = f.total_mask_steps {
        cfg.schedule.total_mask_steps = n;
    }
    if let Some(r) = f.constant_r {
        cfg.schedule.constant_r = r;
    }
    if let Some(n) = f.steps {
        cfg.steps = n;
    }
    if let Some(d) = &f.decoder {
        cfg.model.decoder_kind = parse::<DecoderKind>("decoder", d)?;
    }
    if let Some(i) = &f.injection {
        cfg.injection = parse::<InjectionMode>("injection", i)?;
    }
    if let Some(n) = f.batch_size {
        cfg.batch_size = n;
    }
    if let Some(lr) = f.lr {
        cfg.optimizer.lr = lr;
    }
    if let Some(n) = f.eval_every {
        cfg.eval_every = n;
    }
    if f.eval_limit.is_some() {
        cfg.eval_limit = f.eval_limit;
    }
    if let Some(e) = f.embed_dim {
        cfg.model.embed_dim = e;
    }
    if let Some(d) = f.depth {
        cfg.model.encoder_depth = d;
        cfg.model.decoder_depth = d;
    }
    if let Some(h) = f.heads {
        cfg.model.encoder_heads = h;
        cfg.model.decoder_heads = h;
    }
    Ok(())
}

fn train_options(flags: &RunFlags) -> TrainOptions {
    TrainOptions {
        verbose: flags.verbose,
        ..TrainOptions::from_env()
    }
}

fn cmd_train(flags: &RunFlags) -> Result<(), HarnessError> {
    let cfg = resolve_run(flags)?;
    let outcome = train(&cfg, train_options(flags))?;
    print!(
        "trained {} steps ({}), final loss {:.4}",
        cfg.effective_steps(),
        cfg.schedule.kind,
        outcome.tail_loss(crate::training::FINAL_WINDOW)
    );
    if let Some(e) = &outcome.final_eval {
        print!(", val word acc {:.4}, char acc {:.4}", e.overall.word_acc, e.overall.char_acc);
    }
    println!("\noutputs in {}", cfg.out_dir.display());
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<(), HarnessError> {
    let mut cfg: Option<EvalConfig> = args.config.as_deref().map(read_json).transpose()?;
    let base = match cfg.take() {
        Some(c) => c,
        None => {
            let model_dir = args.model.clone().ok_or_else(|| contract("--model or --config is required"))?;
            let data_dir = args.data.clone().ok_or_else(|| contract("--data or --config is required"))?;
            EvalConfig {
                out_dir: PathBuf::new(),
                model_dir,
                data_dir,
                split: Split::Val,
                injection: InjectionMode::Pad,
                policy: MatchPolicy::CaseSensitive,
                batch_size: 64,
            }
        }
    };
    let mut c = base;
    if let Some(m) = &args.model {
        c.model_dir = m.clone();
    }
    if let Some(d) = &args.data {
        c.data_dir = d.clone();
    }
    if let Some(s) = &args.split {
        c.split = parse("split", s)?;
    }
    if let Some(i) = &args.injection {
        c.injection = parse("injection", i)?;
    }
    if args.case_insensitive {
        c.policy = MatchPolicy::CaseInsensitive;
    }
    if let Some(b) = args.batch_size {
        c.batch_size = b;
    }
    if let Some(o) = &args.out {
        c.out_dir = o.clone();
    }
    if c.out_dir.as_os_str().is_empty() {
        c.out_dir = c.model_dir.join(format!("eval_{}", c.split.as_str()));
    }
    let model = ModelBundle::load(&c.model_dir)?;
    let corpus = Corpus::open(&c.data_dir)?;
    let data = Dataset {
        alphabet: corpus.spec.alphabet.clone(),
        height: corpus.spec.height,
        width: corpus.spec.width,
        max_seq_len: corpus.spec.max_seq_len,
        train: Vec::new(),
        val: Vec::new(),
    };
    data.check_model(&model.config)?;
    let samples = corpus.load_split(c.split)?;
    let mut report: EvalReport =
        evaluate_samples(&model, &samples, &corpus.spec.alphabet, c.injection, c.policy, c.batch_size)?;
    report.checkpoint = c.model_dir.join(crate::model::CHECKPOINT_FILE).display().to_string();
    report.seeds = vec![model.config.seed];
    write_json(&c.out_dir.join(RESOLVED_CONFIG_FILE), &c)?;
    write_json(&c.out_dir.join(EVAL_REPORT_FILE), &report)?;
    println!("split {} ({} samples)", c.split.as_str(), report.overall.count);
    for (tier, s) in &report.tiers {
        println!("  {:<12} n={:<5} word {:.4}  char {:.4}", tier.as_str(), s.count, s.word_acc, s.char_acc);
    }
    println!(
        "  {:<12} n={:<5} word {:.4}  char {:.4}",
        "overall", report.overall.count, report.overall.word_acc, report.overall.char_acc
    );
    Ok(())
}

/// Loads `--config` as a full resolved config of type `T`, or falls back to
/// treating it as a plain run config.
fn load_wrapped<T: serde::de::DeserializeOwned>(flags: &RunFlags) -> Result<Option<T>, HarnessError> {
    let Some(p) = &flags.config else { return Ok(None) };
    let text = std::fs::read_to_string(p)?;
    Ok(serde_json::from_str::<T>(&text).ok())
}

fn base_from_wrapped(base: RunConfig, flags: &RunFlags) -> Result<RunConfig, HarnessError> {
    let mut cfg = base;
    apply_flags(&mut cfg, flags)?;
    cfg.validate()?;
    Ok(cfg)
}

fn seed_list(first: u64, n: u64) -> Result<Vec<u64>, HarnessError> {
    if n == 0 {
        return Err(contract("--seeds must be positive"));
    }
    Ok((0..n).map(|i| first + i).collect())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

fn std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len().max(1) as f64).sqrt()
}

fn resolve_compare(args: &CompareArgs) -> Result<CompareConfig, HarnessError> {
    let mut cfg = match load_wrapped::<CompareConfig>(&args.run)? {
        Some(c) => CompareConfig {
            base: base_from_wrapped(c.base, &args.run)?,
            ..c
        },
        None => CompareConfig {
            base: resolve_run(&args.run)?,
            schedules: [ScheduleKind::LossAware, ScheduleKind::Linear, ScheduleKind::None]
                .map(ScheduleParams::of_kind)
                .to_vec(),
            seeds: Vec::new(),
        },
    };
    if let Some(s) = &args.schedules {
        cfg.schedules = parse_list::<ScheduleKind>("schedules", s)?
            .into_iter()
            .map(|kind| ScheduleParams {
                kind,
                ..cfg.base.schedule.clone()
            })
            .collect();
    }
    if args.seeds.is_some() || args.run.seed.is_some() || cfg.seeds.is_empty() {
        cfg.seeds = seed_list(cfg.base.seed, args.seeds.unwrap_or(cfg.seeds.len().max(1) as u64))?;
    }
    for s in &cfg.schedules {
        s.validate()?;
    }
    Ok(cfg)
}

/// Trains every schedule for every seed; writes per-run rows and a
/// per-schedule summary with the word-accuracy delta against `none`.
pub fn run_compare(cfg: &CompareConfig, opts: TrainOptions) -> Result<Vec<ComparisonRow>, HarnessError> {
    let data = Dataset::load(&cfg.base.data_dir)?;
    let out = &cfg.base.out_dir;
    write_json(&out.join(RESOLVED_CONFIG_FILE), cfg)?;
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let run = RunConfig {
            seed,
            model: ModelConfig {
                seed,
                ..cfg.base.model.clone()
            },
            out_dir: out.join(format!("seed{seed}")),
            ..cfg.base.clone()
        };
        rows.extend(matched_pair_run(&run, &data, &cfg.schedules, opts)?);
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(out.join(COMPARE_FILE))?);
    writeln!(f, "schedule,seed,val_word_acc,val_char_acc,final_loss")?;
    let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
    for r in &rows {
        writeln!(f, "{},{},{},{},{}", r.label, r.seed, opt(r.val_word_acc), opt(r.val_char_acc), r.final_loss)?;
    }
    f.flush()?;

    let mut labels: Vec<&str> = Vec::new();
    for r in &rows {
        if !labels.contains(&r.label.as_str()) {
            labels.push(&r.label);
        }
    }
    let col = |label: &str, get: &dyn Fn(&ComparisonRow) -> f64| -> Vec<f64> {
        rows.iter().filter(|r| r.label == label).map(get).collect()
    };
    let none_word = labels.contains(&"none").then(|| mean(&col("none", &|r| r.val_word_acc.unwrap_or(0.0))));
    let mut f = std::io::BufWriter::new(std::fs::File::create(out.join(COMPARE_SUMMARY_FILE))?);
    writeln!(f, "schedule,seeds,mean_word_acc,std_word_acc,mean_char_acc,mean_final_loss,delta_word_vs_none")?;
    for label in &labels {
        let w = col(label, &|r| r.val_word_acc.unwrap_or(0.0));
        let c = col(label, &|r| r.val_char_acc.unwrap_or(0.0));
        let l = col(label, &|r| r.final_loss);
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            label,
            w.len(),
            mean(&w),
            std(&w),
            mean(&c),
            mean(&l),
            opt(none_word.map(|b| mean(&w) - b))
        )?;
    }
    f.flush()?;
    Ok(rows)
}

fn cmd_compare(args: &CompareArgs) -> Result<(), HarnessError> {
    let cfg = resolve_compare(args)?;
    let rows = run_compare(&cfg, train_options(&args.run))?;
    for r in &rows {
        println!(
            "{:<12} seed {:<4} word {:.4}  char {:.4}  final loss {:.4}",
            r.label,
            r.seed,
            r.val_word_acc.unwrap_or(f64::NAN),
            r.val_char_acc.unwrap_or(f64::NAN),
            r.final_loss
        );
    }
    println!("wrote {}", cfg.base.out_dir.join(COMPARE_SUMMARY_FILE).display());
    Ok(())
}

fn resolve_ablate(args: &AblateArgs) -> Result<AblateConfig, HarnessError> {
    let mut cfg = match load_wrapped::<AblateConfig>(&args.run)? {
        Some(c) => AblateConfig {
            base: base_from_wrapped(c.base, &args.run)?,
            ..c
        },
        None => AblateConfig {
            base: resolve_run(&args.run)?,
            alphas: vec![0.5, 2.0],
            betas: vec![0.01, 0.1],
            seeds: Vec::new(),
            baseline: true,
        },
    };
    if let Some(a) = &args.alphas {
        cfg.alphas = parse_list("alphas", a)?;
    }
    if let Some(b) = &args.betas {
        cfg.betas = parse_list("betas", b)?;
    }
    if args.seeds.is_some() || args.run.seed.is_some() || cfg.seeds.is_empty() {
        cfg.seeds = seed_list(cfg.base.seed, args.seeds.unwrap_or(cfg.seeds.len().max(1) as u64))?;
    }
    if args.no_baseline {
        cfg.baseline = false;
    }
    Ok(cfg)
}

pub fn run_ablate(cfg: &AblateConfig, opts: TrainOptions) -> Result<GridReport, HarnessError> {
    let data = Dataset::load(&cfg.base.data_dir)?;
    write_json(&cfg.base.out_dir.join(RESOLVED_CONFIG_FILE), cfg)?;
    let grid = AblationGrid {
        alphas: cfg.alphas.clone(),
        betas: cfg.betas.clone(),
        seeds: cfg.seeds.clone(),
        base: cfg.base.clone(),
    };
    ablate(&grid, &data, opts, cfg.baseline)
}

fn cmd_ablate(args: &AblateArgs) -> Result<(), HarnessError> {
    let cfg = resolve_ablate(args)?;
    let report = run_ablate(&cfg, train_options(&args.run))?;
    if let Some(b) = report.baseline_word_acc() {
        println!("baseline          word {b:.4}");
    }
    for c in &report.cells {
        println!(
            "alpha {:<5} beta {:<6} word {:.4} +- {:.4}{}{}",
            c.alpha,
            c.beta,
            c.mean_word_acc,
            c.std_word_acc,
            c.delta_vs_baseline.map_or(String::new(), |d| format!("  delta {d:+.4}")),
            if c.argmax { "  <- best" } else { "" }
        );
    }
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<bool, HarnessError> {
    let mut reports: Vec<GradCheckReport> = op_suite(args.seed)?;
    for kind in [DecoderKind::LinearHead, DecoderKind::ArDecoder] {
        reports.push(gradient_check(kind, args.seed)?);
    }
    let mut worst = 0.0f64;
    for r in &reports {
        worst = worst.max(r.max_rel_error);
        println!(
            "{:<24} max rel error {:.3e} over {} elements{}",
            r.label,
            r.max_rel_error,
            r.elements,
            if r.passed() { String::new() } else { format!("  FAIL at {}", r.worst) }
        );
    }
    println!("max relative error {worst:.3e} (tolerance {TOLERANCE:e})");
    if let Some(out) = &args.out {
        #[derive(Serialize)]
        struct Resolved {
            seed: u64,
        }
        #[derive(Serialize)]
        struct Row<'a> {
            label: &'a str,
            max_rel_error: f64,
            worst: &'a str,
            elements: usize,
        }
        write_json(&out.join(RESOLVED_CONFIG_FILE), &Resolved { seed: args.seed })?;
        let rows: Vec<Row> = reports
            .iter()
            .map(|r| Row {
                label: &r.label,
                max_rel_error: r.max_rel_error,
                worst: &r.worst,
                elements: r.elements,
            })
            .collect();
        write_json(&out.join("gradcheck.json"), &rows)?;
    }
    Ok(worst < TOLERANCE)
}

fn cmd_plot(args: &PlotArgs) -> Result<(), HarnessError> {
    let mut cfg = match &args.config {
        Some(p) => read_json::<PlotConfig>(p)?,
        None => PlotConfig {
            metrics: Vec::new(),
            window: Window::Full,
            out: out_dir(args.out.as_ref())?,
            title: String::new(),
        },
    };
    if !args.metrics.is_empty() {
        cfg.metrics = args.metrics.clone();
    }
    if let Some(w) = &args.window {
        cfg.window = w.parse()?;
    }
    if let Some(o) = &args.out {
        cfg.out = o.clone();
    }
    if let Some(t) = &args.title {
        cfg.title = t.clone();
    }
    if cfg.title.is_empty() {
        cfg.title = default_title(cfg.window);
    }
    let paths: Vec<&Path> = cfg.metrics.iter().map(PathBuf::as_path).collect();
    plot_loss_curves(&paths, cfg.window, &cfg.title, &cfg.out)?;
    let stem = cfg.out.file_stem().and_then(|s| s.to_str()).unwrap_or("plot");
    write_json(&cfg.out.with_file_name(format!("{stem}.{RESOLVED_CONFIG_FILE}")), &cfg)?;
    println!("wrote {}", cfg.out.display());
    Ok(())
}

fn cmd_select_beta(args: &SelectBetaArgs) -> Result<(), HarnessError> {
    let (source, losses, out) = match &args.metrics {
        Some(m) => {
            let losses: Vec<f64> = train_losses(&load_metrics(m)?).into_iter().map(|(_, l)| l).collect();
            let out = match &args.run.out {
                Some(o) => o.clone(),
                None => m.parent().map_or_else(PathBuf::new, Path::to_path_buf),
            };
            if args.run.config.is_some() || args.run.data.is_some() {
                return Err(contract("--metrics cannot be combined with --config or --data"));
            }
            #[derive(Serialize)]
            struct Resolved<'a> {
                metrics: &'a Path,
                out_dir: &'a Path,
            }
            write_json(
                &out.join(RESOLVED_CONFIG_FILE),
                &Resolved {
                    metrics: m,
                    out_dir: &out,
                },
            )?;
            (m.clone(), losses, out)
        }
        None => {
            let mut flags = args.run.clone();
            flags.schedule = Some(ScheduleKind::None.as_str().into());
            let cfg = resolve_run(&flags)?;
            let outcome = train(&cfg, train_options(&flags))?;
            (cfg.out_dir.join(crate::training::METRICS_FILE), outcome.train_losses(), cfg.out_dir)
        }
    };
    let beta = select_beta(&losses)?;
    let report = SelectBetaReport {
        source,
        steps: losses.len(),
        tail_steps: losses.len().div_ceil(10),
        beta,
    };
    write_json(&out.join(SELECT_BETA_FILE), &report)?;
    println!("beta {beta:.6} (0.9 x mean of the last {} of {} losses)", report.tail_steps, report.steps);
    Ok(())
}

/// Runs a parsed command. `Ok(false)` means the command ran but its check
/// failed (gradcheck above tolerance).
pub fn execute(cli: &Cli) -> Result<bool, HarnessError> {
    match &cli.command {
        Command::GenData(a) => gen_data(a).map(|_| true),
        Command::Train(a) => cmd_train(a).map(|_| true),
        Command::Eval(a) => cmd_eval(a).map(|_| true),
        Command::Compare(a) => cmd_compare(a).map(|_| true),
        Command::Ablate(a) => cmd_ablate(a).map(|_| true),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Plot(a) => cmd_plot(a).map(|_| true),
        Command::SelectBeta(a) => cmd_select_beta(a).map(|_| true),
    }
}

/// Parses `args` (program name first) and runs it, returning the exit code:
/// 0 on success, 1 on a usage or contract error, 2 on an I/O error.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match execute(&cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
