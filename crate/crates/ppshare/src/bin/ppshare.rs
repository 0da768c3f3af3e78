//! Command-line front end: dataset synthesis, training, merge-pruning,
//! bound verification, graph export, evaluation, and strategy
//! comparison, each writing a resolved config snapshot next to its
//! outputs so any run can be reproduced byte for byte.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use ppshare::analysis::{
    build_class_graph, compare_strategies, evaluate, patch_assignment_rate, write_comparison_csv,
    write_scope_csv,
};
use ppshare::dataset::{load_dataset, save_dataset, synthesize, SynthSpec};
use ppshare::error::{Error, Result};
use ppshare::model::{load_model, save_model};
use ppshare::prune::{run_prune, write_prune_csv, write_prune_jsonl, PruneConfig};
use ppshare::similarity::Strategy;
use ppshare::theorem::{run_sweep, ConstructSpec};
use ppshare::train::{train_phase1, write_history_csv, FinetuneScope, TrainConfig};

#[derive(Parser)]
#[command(
    name = "ppshare",
    version,
    about = "Prototype-sharing classifier: train, merge-prune, verify, analyze"
)]
struct Cli {
    /// Worker threads (env PPSHARE_THREADS; default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic patch-feature dataset with planted
    /// cross-class redundancy.
    Synth(SynthArgs),
    /// Phase-one training on a patch-feature dataset.
    Train(TrainArgs),
    /// Merge-prune a trained model, finetuning after every step.
    Prune(PruneArgs),
    /// Sweep constructed instances through the logit-bound verifier.
    Verify(VerifyArgs),
    /// Export the class-similarity graph of a model.
    Graph(GraphArgs),
    /// Report accuracy of a model on a dataset.
    Eval(EvalArgs),
    /// Compare pruning strategies and finetuning scopes across seeds.
    Compare(CompareArgs),
}

/// Resolved settings for one run; the saved snapshot doubles as a
/// config file for replaying the run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    command: Option<String>,
    features: Option<PathBuf>,
    val: Option<PathBuf>,
    model: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    /// Root seed; when set it feeds every stage.
    seed: Option<u64>,
    threads: Option<usize>,
    synth: Option<SynthSpec>,
    train: TrainConfig,
    prune: PruneConfig,
}

impl RunConfig {
    fn load(path: Option<&Path>) -> Result<RunConfig> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    Error::validation(format!("cannot read config {}: {e}", p.display()))
                })?;
                let rc: RunConfig = serde_json::from_str(&text)
                    .map_err(|e| Error::validation(format!("bad config {}: {e}", p.display())))?;
                Ok(rc)
            }
        }
    }

    fn save(&self, out_dir: &Path) -> Result<()> {
        std::fs::create_dir_all(out_dir)?;
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(out_dir.join("run_config.json"), text)?;
        Ok(())
    }
}

fn require(path: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    path.clone()
        .ok_or_else(|| Error::validation(format!("{what} must be given by flag or config")))
}

fn load_dataset_at(path: &Path) -> Result<ppshare::dataset::FeatureDataset> {
    load_dataset(path).map_err(|e| match e {
        Error::Io(io) => Error::validation(format!("cannot read {}: {io}", path.display())),
        other => other,
    })
}

fn load_model_at(path: &Path) -> Result<ppshare::model::Model> {
    load_model(path).map_err(|e| match e {
        Error::Io(io) => Error::validation(format!("cannot read {}: {io}", path.display())),
        other => other,
    })
}

#[derive(clap::Args)]
struct SynthArgs {
    /// JSON file with the dataset shape (classes, dims, clusters, ...).
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Base config; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let mut rc = RunConfig::load(args.config.as_deref())?;
    if let Some(spec_path) = &args.spec {
        let text = std::fs::read_to_string(spec_path).map_err(|e| {
            Error::validation(format!("cannot read spec {}: {e}", spec_path.display()))
        })?;
        let spec: SynthSpec = serde_json::from_str(&text)
            .map_err(|e| Error::validation(format!("bad spec {}: {e}", spec_path.display())))?;
        rc.synth = Some(spec);
    }
    if let Some(s) = args.seed {
        rc.seed = Some(s);
    }
    if let Some(d) = &args.out_dir {
        rc.out_dir = Some(d.clone());
    }
    let spec = rc
        .synth
        .clone()
        .ok_or_else(|| Error::validation("no synth spec: pass --spec or a config with one"))?;
    let seed = rc.seed.unwrap_or(0);
    let out_dir = require(&rc.out_dir, "--out-dir")?;

    let (train, val, plan) = synthesize(&spec, seed)?;
    rc.command = Some("synth".into());
    rc.seed = Some(seed);
    rc.save(&out_dir)?;
    save_dataset(&train, out_dir.join("train.pfm"))?;
    save_dataset(&val, out_dir.join("val.pfm"))?;
    let mut plan_text = serde_json::to_string_pretty(&plan)?;
    plan_text.push('\n');
    std::fs::write(out_dir.join("plan.json"), plan_text)?;
    println!(
        "synth: {} train / {} val images, {} classes -> {}",
        train.len(),
        val.len(),
        train.num_classes,
        out_dir.display()
    );
    Ok(())
}

#[derive(clap::Args)]
struct TrainArgs {
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    protos_per_class: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    finetune_iters: Option<usize>,
    /// Train the add-on projection in front of the prototype layer.
    #[arg(long)]
    use_addon: bool,
    /// Snap each prototype to its nearest training patch afterwards.
    #[arg(long)]
    project: bool,
    #[arg(long)]
    seed: Option<u64>,
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut rc = RunConfig::load(args.config.as_deref())?;
    if let Some(p) = &args.features {
        rc.features = Some(p.clone());
    }
    if let Some(p) = &args.val {
        rc.val = Some(p.clone());
    }
    if let Some(d) = &args.out_dir {
        rc.out_dir = Some(d.clone());
    }
    if let Some(v) = args.epochs {
        rc.train.epochs = v;
    }
    if let Some(v) = args.protos_per_class {
        rc.train.protos_per_class = v;
    }
    if let Some(v) = args.batch_size {
        rc.train.batch_size = v;
    }
    if let Some(v) = args.epsilon {
        rc.train.epsilon = v;
    }
    if let Some(v) = args.finetune_iters {
        rc.train.finetune_iters = v;
    }
    if args.use_addon {
        rc.train.use_addon = true;
    }
    if let Some(s) = args.seed {
        rc.seed = Some(s);
    }
    if let Some(s) = rc.seed {
        rc.train.seed = s;
    }
    rc.train.validate()?;

    let features = require(&rc.features, "--features")?;
    let out_dir = require(&rc.out_dir, "--out-dir")?;
    let train = load_dataset_at(&features)?;
    let val = rc.val.as_deref().map(load_dataset_at).transpose()?;

    rc.command = Some("train".into());
    rc.save(&out_dir)?;
    let (mut model, history) = train_phase1(&train, val.as_ref(), &rc.train)?;
    if args.project {
        ppshare::train::project_prototypes(&mut model, &train)?;
    }
    save_model(&model, out_dir.join("model.json"))?;
    write_history_csv(&history, out_dir.join("history.csv"))?;
    let last = history.last();
    println!(
        "train: {} epochs, train acc {}, val acc {} -> {}",
        history.len(),
        last.map(|h| format!("{:.4}", h.train_acc))
            .unwrap_or_else(|| "-".into()),
        last.and_then(|h| h.val_acc)
            .map(|a| format!("{a:.4}"))
            .unwrap_or_else(|| "-".into()),
        out_dir.display()
    );
    Ok(())
}

#[derive(clap::Args)]
struct PruneArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Fraction of the pool merged per step.
    #[arg(long)]
    zeta: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    /// Stop once the pool reaches this size.
    #[arg(long)]
    target_size: Option<usize>,
    /// dd | di | random
    #[arg(long, value_parser = Strategy::from_str)]
    strategy: Option<Strategy>,
    /// head | protos+head | all
    #[arg(long, value_parser = FinetuneScope::from_str)]
    scope: Option<FinetuneScope>,
    #[arg(long)]
    finetune_iters: Option<usize>,
    /// Only rank prototype pairs whose class sets are disjoint.
    #[arg(long)]
    inter_class_only: bool,
    /// Abort when validation accuracy drops more than this.
    #[arg(long)]
    max_val_drop: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

fn cmd_prune(args: &PruneArgs) -> Result<()> {
    let mut rc = RunConfig::load(args.config.as_deref())?;
    if let Some(p) = &args.model {
        rc.model = Some(p.clone());
    }
    if let Some(p) = &args.features {
        rc.features = Some(p.clone());
    }
    if let Some(p) = &args.val {
        rc.val = Some(p.clone());
    }
    if let Some(d) = &args.out_dir {
        rc.out_dir = Some(d.clone());
    }
    if let Some(v) = args.zeta {
        rc.prune.zeta = v;
    }
    if let Some(v) = args.steps {
        rc.prune.steps = v;
    }
    if let Some(v) = args.target_size {
        rc.prune.target_pool = Some(v);
    }
    if let Some(v) = args.strategy {
        rc.prune.strategy = v;
    }
    if let Some(v) = args.scope {
        rc.prune.scope = v;
    }
    if let Some(v) = args.finetune_iters {
        rc.train.finetune_iters = v;
    }
    if args.inter_class_only {
        rc.prune.inter_class_only = true;
    }
    if let Some(v) = args.max_val_drop {
        rc.prune.max_val_drop = Some(v);
    }
    if let Some(s) = args.seed {
        rc.seed = Some(s);
    }
    if let Some(s) = rc.seed {
        rc.prune.seed = s;
    }
    rc.prune.validate()?;
    rc.train.validate()?;

    let model_path = require(&rc.model, "--model")?;
    let features = require(&rc.features, "--features")?;
    let out_dir = require(&rc.out_dir, "--out-dir")?;
    let mut model = load_model_at(&model_path)?;
    let train = load_dataset_at(&features)?;
    let val = rc.val.as_deref().map(load_dataset_at).transpose()?;

    rc.command = Some("prune".into());
    rc.save(&out_dir)?;
    let log = run_prune(&mut model, &train, val.as_ref(), &rc.train, &rc.prune)?;
    save_model(&model, out_dir.join("model.json"))?;
    write_prune_jsonl(&log, out_dir.join("prune_log.jsonl"))?;
    write_prune_csv(&log, out_dir.join("prune_summary.csv"))?;
    let last = log.records.last();
    println!(
        "prune: pool {} -> {}, train acc {}, val acc {} -> {}",
        log.initial_pool,
        last.map(|r| r.pool_after).unwrap_or(log.initial_pool),
        last.map(|r| format!("{:.4}", r.train_acc))
            .unwrap_or_else(|| "-".into()),
        last.and_then(|r| r.val_acc)
            .map(|a| format!("{a:.4}"))
            .unwrap_or_else(|| "-".into()),
        out_dir.display()
    );
    Ok(())
}

#[derive(clap::Args)]
struct VerifyArgs {
    /// Sharpness parameter, strictly inside (0, 1).
    #[arg(long, default_value_t = 0.5)]
    delta: f64,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 3)]
    retained_per_class: usize,
    #[arg(long, default_value_t = 1)]
    merged_per_class: usize,
    #[arg(long, default_value_t = 4)]
    feat_dim: usize,
    #[arg(long, default_value_t = 0.9)]
    max_radius: f64,
    #[arg(long, default_value_t = 1e-4)]
    epsilon: f64,
}

fn cmd_verify(args: &VerifyArgs) -> Result<()> {
    let spec = ConstructSpec {
        num_classes: args.classes,
        retained_per_class: args.retained_per_class,
        merged_per_class: args.merged_per_class,
        feat_dim: args.feat_dim,
        epsilon: args.epsilon,
        max_radius: args.max_radius,
    };
    let summary = run_sweep(&spec, args.delta, args.trials, args.seed)?;
    println!("delta  trials  assumption_fail  bound_viol  margin_hold  flips_under_margin");
    println!(
        "{:<5.2}  {:<6}  {:<15}  {:<10}  {:<11}  {}",
        summary.delta,
        summary.trials,
        summary.assumption_failures,
        summary.bound_violations,
        summary.margin_hold_count,
        summary.flips_under_margin
    );
    for line in &summary.failures {
        println!("  {line}");
    }
    if !summary.clean() {
        return Err(Error::invariant(format!(
            "verification sweep found {} assumption failures, {} bound violations, {} flips",
            summary.assumption_failures, summary.bound_violations, summary.flips_under_margin
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, ValueEnum)]
enum GraphFormat {
    Dot,
    Json,
}

#[derive(clap::Args)]
struct GraphArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value_t = GraphFormat::Dot)]
    format: GraphFormat,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_graph(args: &GraphArgs) -> Result<()> {
    let model = load_model_at(&args.model)?;
    let graph = build_class_graph(&model);
    let text = match args.format {
        GraphFormat::Dot => graph.to_dot(),
        GraphFormat::Json => graph.to_json()?,
    };
    match &args.out {
        Some(path) => {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            std::fs::write(path, text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    features: PathBuf,
    /// Also report the patch-assignment rate at this many activations
    /// per image.
    #[arg(long)]
    rate_top: Option<usize>,
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let model = load_model_at(&args.model)?;
    let data = load_dataset_at(&args.features)?;
    let eval = evaluate(&model, &data)?;
    println!("accuracy {:.6}", eval.accuracy);
    for (k, acc) in eval.per_class.iter().enumerate() {
        let n: usize = eval.confusion[k].iter().sum();
        match acc {
            Some(a) => println!("class {k} accuracy {a:.6} (n={n})"),
            None => println!("class {k} accuracy - (n=0)"),
        }
    }
    if let Some(n) = args.rate_top {
        let rate = patch_assignment_rate(&model, &data, n)?;
        println!("patch_assignment_rate {rate:.6}");
    }
    Ok(())
}

#[derive(clap::Args)]
struct CompareArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', value_parser = Strategy::from_str,
          default_values_t = [Strategy::DataDependent, Strategy::DataIndependent, Strategy::Random])]
    strategies: Vec<Strategy>,
    #[arg(long, value_delimiter = ',', value_parser = FinetuneScope::from_str,
          default_values_t = [FinetuneScope::HeadOnly, FinetuneScope::ProtosAndHead, FinetuneScope::All])]
    scopes: Vec<FinetuneScope>,
    #[arg(long, value_delimiter = ',', default_values_t = [0u64])]
    seeds: Vec<u64>,
    #[arg(long)]
    zeta: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    finetune_iters: Option<usize>,
    #[arg(long)]
    inter_class_only: bool,
}

fn cmd_compare(args: &CompareArgs) -> Result<()> {
    let mut rc = RunConfig::load(args.config.as_deref())?;
    if let Some(p) = &args.model {
        rc.model = Some(p.clone());
    }
    if let Some(p) = &args.features {
        rc.features = Some(p.clone());
    }
    if let Some(p) = &args.val {
        rc.val = Some(p.clone());
    }
    if let Some(d) = &args.out_dir {
        rc.out_dir = Some(d.clone());
    }
    if let Some(v) = args.zeta {
        rc.prune.zeta = v;
    }
    if let Some(v) = args.steps {
        rc.prune.steps = v;
    }
    if let Some(v) = args.finetune_iters {
        rc.train.finetune_iters = v;
    }
    if args.inter_class_only {
        rc.prune.inter_class_only = true;
    }
    rc.prune.validate()?;
    rc.train.validate()?;

    let model_path = require(&rc.model, "--model")?;
    let features = require(&rc.features, "--features")?;
    let out_dir = require(&rc.out_dir, "--out-dir")?;
    let model = load_model_at(&model_path)?;
    let train = load_dataset_at(&features)?;
    let val = rc.val.as_deref().map(load_dataset_at).transpose()?;

    rc.command = Some("compare".into());
    rc.save(&out_dir)?;
    let cmp = compare_strategies(
        &model,
        &train,
        val.as_ref(),
        &rc.train,
        &rc.prune,
        &args.strategies,
        &args.scopes,
        &args.seeds,
    )?;
    write_comparison_csv(&cmp, &out_dir.join("curves.csv"))?;
    write_scope_csv(&cmp, &out_dir.join("scopes.csv"))?;
    let mut json = serde_json::to_string_pretty(&cmp)?;
    json.push('\n');
    std::fs::write(out_dir.join("comparison.json"), json)?;
    println!(
        "compare: {} strategy runs, {} scope runs -> {}",
        cmp.curves.len(),
        cmp.scope_table.len(),
        out_dir.display()
    );
    Ok(())
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var("PPSHARE_THREADS") {
        Ok(s) => {
            let n: usize = s
                .parse()
                .map_err(|_| Error::validation(format!("bad PPSHARE_THREADS value: {s:?}")))?;
            Ok(Some(n))
        }
        Err(_) => Ok(None),
    }
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = thread_count(cli.threads)? {
        if n == 0 {
            return Err(Error::validation("thread count must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::validation(format!("cannot size the thread pool: {e}")))?;
    }
    match &cli.command {
        Cmd::Synth(a) => cmd_synth(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Prune(a) => cmd_prune(a),
        Cmd::Verify(a) => cmd_verify(a),
        Cmd::Graph(a) => cmd_graph(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Compare(a) => cmd_compare(a),
    }
}

fn main() -> ExitCode {
    // die quietly when a downstream pipe closes, like any unix filter
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version requests are not errors
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Invariant(msg)) => {
            eprintln!("invariant violation: {msg}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
