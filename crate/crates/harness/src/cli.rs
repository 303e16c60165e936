//! Command-line front end.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use fcvp_core::force::{read_force_checkpoint, write_force_checkpoint, ForceModel, TransitionSample};
use fcvp_core::policy::{read_policy_checkpoint, write_policy_checkpoint, AnyPolicy, CemIteration, GaussianPolicy};
use fcvp_core::training::FinetuneKind;
use serde::Serialize;

use crate::config::{ExperimentConfig, Method};
use crate::io::{self, DatasetMeta, ForceRow, ResultRow};
use crate::pipeline::{self, Models};
use crate::report;
use crate::{io_err, HarnessError, Result};

pub const RESULTS_CSV: &str = "results.csv";
pub const FORCES_CSV: &str = "forces.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const RESOLVED_CONFIG: &str = "resolved_config.toml";
pub const TRAJECTORY_DIR: &str = "trajectories";
pub const DATASET_FILE: &str = "dataset.jsonl";

#[derive(Debug, Parser)]
#[command(name = "fcvp", version, about = "Force-constrained visual policy dressing experiments")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `experiment.base_seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Input artifact as `name=path`; names: policy, multimodal, residual,
    /// force_model, dataset.
    #[arg(long = "checkpoint", global = true, value_parser = parse_checkpoint)]
    pub checkpoints: Vec<(String, PathBuf)>,
    /// Restricts the evaluated methods; defaults to the configured list.
    #[arg(long = "method", global = true)]
    pub methods: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyKind {
    Vision,
    Multimodal,
    Residual,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Trains the vision policy in sim A, or fine-tunes a force-aware
    /// variant of it in sim B.
    TrainPolicy {
        #[arg(long = "kind", value_enum, default_value = "vision")]
        kind: PolicyKind,
    },
    /// Collects the force dataset in sim B.
    Collect,
    /// Fits the force dynamics model to a collected dataset.
    TrainForceModel {
        /// History length; defaults to `experiment.history_len`.
        #[arg(long)]
        history_len: Option<usize>,
    },
    /// Runs every configured method on the evaluation grid in sim B.
    Eval,
    /// Trains one force model per history length and evaluates each.
    AblateHistory,
    /// Aggregates `results.csv` into a summary and the force distribution.
    Report,
    /// Runs every stage in order into one output directory.
    Pipeline,
}

fn parse_checkpoint(s: &str) -> std::result::Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
        _ => Err(format!("expected name=path, got '{s}'")),
    }
}

/// Parses `argv` and runs the command. Errors are printed to stderr; the
/// return value is the process exit status.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                HarnessError::Usage(_) => 2,
                _ => 1,
            }
        }
    }
}

struct Ctx {
    cfg: ExperimentConfig,
    seed: u64,
    out: PathBuf,
    checkpoints: BTreeMap<String, PathBuf>,
    methods: Vec<Method>,
}

impl Ctx {
    fn new(common: Common) -> Result<Self> {
        let path = common
            .config
            .ok_or_else(|| HarnessError::Usage("--config <path> is required".into()))?;
        let mut cfg = ExperimentConfig::load(&path)?;
        if let Some(s) = common.seed {
            cfg.experiment.base_seed = s;
        }
        let methods = if common.methods.is_empty() {
            cfg.experiment.methods.clone()
        } else {
            common.methods.iter().map(|m| Method::parse(m)).collect::<Result<_>>()?
        };
        std::fs::create_dir_all(&common.out).map_err(io_err(common.out.display().to_string()))?;
        let resolved = cfg.resolved_toml()?;
        let rpath = common.out.join(RESOLVED_CONFIG);
        std::fs::write(&rpath, resolved).map_err(io_err(rpath.display().to_string()))?;
        Ok(Self {
            seed: cfg.experiment.base_seed,
            cfg,
            out: common.out,
            checkpoints: common.checkpoints.into_iter().collect(),
            methods,
        })
    }

    fn checkpoint(&self, name: &str) -> Result<&Path> {
        self.checkpoints
            .get(name)
            .map(PathBuf::as_path)
            .ok_or_else(|| HarnessError::MissingCheckpoint(name.to_string()))
    }

    fn out_path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(io_err(path.display().to_string()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(io_err(path.display().to_string()))
}

pub fn save_policy(path: &Path, policy: &AnyPolicy) -> Result<()> {
    let mut w = create(path)?;
    write_policy_checkpoint(&mut w, policy)?;
    w.flush().map_err(io_err(path.display().to_string()))
}

pub fn load_policy(path: &Path) -> Result<AnyPolicy> {
    Ok(read_policy_checkpoint(open(path)?)?)
}

/// Loads a vision-only Gaussian policy.
pub fn load_vision_policy(path: &Path) -> Result<GaussianPolicy> {
    match load_policy(path)? {
        AnyPolicy::Gaussian(p) if p.history_len() == 0 => Ok(p),
        _ => Err(HarnessError::Usage(format!(
            "{} is not a vision-only policy checkpoint",
            path.display()
        ))),
    }
}

pub fn save_force_model(path: &Path, model: &ForceModel) -> Result<()> {
    let mut w = create(path)?;
    write_force_checkpoint(&mut w, model)?;
    w.flush().map_err(io_err(path.display().to_string()))
}

pub fn load_force_model(path: &Path) -> Result<ForceModel> {
    Ok(read_force_checkpoint(open(path)?)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| HarnessError::Config(e.to_string()))?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(io_err(path.display().to_string()))
}

fn policy_file(kind: PolicyKind) -> &'static str {
    match kind {
        PolicyKind::Vision => "policy.ckpt",
        PolicyKind::Multimodal => "multimodal.ckpt",
        PolicyKind::Residual => "residual.ckpt",
    }
}

fn train_policy(ctx: &Ctx, kind: PolicyKind) -> Result<PathBuf> {
    let (policy, log): (AnyPolicy, Vec<CemIteration>) = match kind {
        PolicyKind::Vision => {
            let (p, out) = pipeline::train_policy(&ctx.cfg, ctx.seed)?;
            (AnyPolicy::Gaussian(p), out.log)
        }
        PolicyKind::Multimodal | PolicyKind::Residual => {
            let base = load_vision_policy(ctx.checkpoint("policy")?)?;
            let fk = if kind == PolicyKind::Multimodal {
                FinetuneKind::Multimodal
            } else {
                FinetuneKind::Residual
            };
            let (p, out) = pipeline::finetune(&ctx.cfg, &base, fk, ctx.seed)?;
            (p, out.log)
        }
    };
    let path = ctx.out_path(policy_file(kind));
    save_policy(&path, &policy)?;
    let stem = policy_file(kind).trim_end_matches(".ckpt");
    io::write_csv(&ctx.out_path(&format!("{stem}_cem_log.csv")), &log)?;
    if let Some(last) = log.last() {
        println!("{stem}: best return {:.4} after {} iterations", last.best_return, log.len());
    }
    Ok(path)
}

fn collect(ctx: &Ctx) -> Result<PathBuf> {
    let policy = load_vision_policy(ctx.checkpoint("policy")?)?;
    let (samples, rep) = pipeline::collect(&ctx.cfg, &policy, ctx.seed)?;
    let meta = DatasetMeta {
        target: "force magnitude at t+1".into(),
        stored_history: ctx.cfg.collect.stored_history,
        kept_episodes: rep.kept_episodes,
        dropped_episodes: rep.dropped,
    };
    let path = ctx.out_path(DATASET_FILE);
    io::save_dataset(&path, &meta, &samples)?;
    println!(
        "dataset: {} samples from {} episodes ({} dropped)",
        samples.len(),
        meta.kept_episodes,
        meta.dropped_episodes.len()
    );
    Ok(path)
}

fn load_samples(ctx: &Ctx) -> Result<Vec<TransitionSample>> {
    Ok(io::load_dataset(ctx.checkpoint("dataset")?)?.1)
}

fn train_force(ctx: &Ctx, history_len: Option<usize>) -> Result<PathBuf> {
    let data = load_samples(ctx)?;
    let n = history_len.unwrap_or(ctx.cfg.experiment.history_len);
    let (model, rep) = pipeline::train_force(&ctx.cfg, &data, n, ctx.seed)?;
    let path = ctx.out_path("force_model.ckpt");
    save_force_model(&path, &model)?;
    write_json(&ctx.out_path("force_model_report.json"), &rep)?;
    println!(
        "force model: held-out MSE {:.4} vs persistence {:.4}",
        rep.heldout_mse, rep.persistence_mse
    );
    Ok(path)
}

fn load_models(ctx: &Ctx) -> Result<Models> {
    let get = |name: &str| ctx.checkpoints.get(name).map(PathBuf::as_path);
    Ok(Models {
        policy: get("policy").map(load_vision_policy).transpose()?,
        force_model: get("force_model").map(load_force_model).transpose()?,
        multimodal: get("multimodal").map(load_policy).transpose()?,
        residual: get("residual").map(load_policy).transpose()?,
    })
}

fn eval(ctx: &Ctx, models: &Models) -> Result<Vec<ResultRow>> {
    let results = pipeline::run_eval(&ctx.cfg, models, &ctx.methods)?;
    let dir = ctx.out_path(TRAJECTORY_DIR);
    std::fs::create_dir_all(&dir).map_err(io_err(dir.display().to_string()))?;
    let mut rows = Vec::with_capacity(results.len());
    for (row, traj) in results {
        let name = io::trajectory_file_name(&row.method, &row.pose_region, &row.garment_id, row.seed);
        io::save_trajectory(&dir.join(name), &traj)?;
        rows.push(row);
    }
    io::write_csv(&ctx.out_path(RESULTS_CSV), &rows)?;
    println!("eval: {} cells", rows.len());
    Ok(rows)
}

fn ablate(ctx: &Ctx) -> Result<()> {
    let policy = load_vision_policy(ctx.checkpoint("policy")?)?;
    let data = load_samples(ctx)?;
    let out = pipeline::ablate_history(&ctx.cfg, &policy, &data, ctx.seed)?;
    let mut rows = Vec::with_capacity(out.len());
    for (row, model) in out {
        save_force_model(&ctx.out_path(&format!("force_model_n{}.ckpt", row.history_len)), &model)?;
        println!(
            "N={}: violation {:.4}, dressed {:.4}, held-out MSE {:.4}",
            row.history_len, row.mean_violation, row.mean_dressed_ratio, row.heldout_mse
        );
        rows.push(row);
    }
    io::write_csv(&ctx.out_path(ABLATION_CSV), &rows)
}

/// Summarizes `results.csv` in the output directory and extracts the
/// post-warm-up forces of every listed trajectory.
fn report_cmd(ctx: &Ctx) -> Result<()> {
    let results_path = ctx.out_path(RESULTS_CSV);
    let rows: Vec<ResultRow> = io::read_csv(&results_path)?;
    let summary = report::summarize(&rows).map_err(|e| match e {
        HarnessError::NoRows(_) => HarnessError::NoRows(results_path.display().to_string()),
        e => e,
    })?;
    io::write_csv(&ctx.out_path(SUMMARY_CSV), &summary)?;
    let dir = ctx.out_path(TRAJECTORY_DIR);
    let mut forces: Vec<ForceRow> = Vec::new();
    for r in &rows {
        let name = io::trajectory_file_name(&r.method, &r.pose_region, &r.garment_id, r.seed);
        let traj = io::load_trajectory(&dir.join(name))?;
        forces.extend(pipeline::force_rows(&traj, ctx.cfg.experiment.skip_steps));
    }
    io::write_csv(&ctx.out_path(FORCES_CSV), &forces)?;
    let table = report::render_table(&summary);
    let tpath = ctx.out_path("summary.txt");
    std::fs::write(&tpath, &table).map_err(io_err(tpath.display().to_string()))?;
    print!("{table}");
    Ok(())
}

fn pipeline_cmd(ctx: &mut Ctx) -> Result<()> {
    let policy = train_policy(ctx, PolicyKind::Vision)?;
    ctx.checkpoints.insert("policy".into(), policy);
    if ctx.methods.contains(&Method::Multimodal) {
        let p = train_policy(ctx, PolicyKind::Multimodal)?;
        ctx.checkpoints.insert("multimodal".into(), p);
    }
    if ctx.methods.contains(&Method::Residual) {
        let p = train_policy(ctx, PolicyKind::Residual)?;
        ctx.checkpoints.insert("residual".into(), p);
    }
    let data = collect(ctx)?;
    ctx.checkpoints.insert("dataset".into(), data);
    let force = train_force(ctx, None)?;
    ctx.checkpoints.insert("force_model".into(), force);
    let models = load_models(ctx)?;
    eval(ctx, &models)?;
    ablate(ctx)?;
    report_cmd(ctx)
}

pub fn run(cli: Cli) -> Result<()> {
    let mut ctx = Ctx::new(cli.common)?;
    match cli.command {
        Command::TrainPolicy { kind } => train_policy(&ctx, kind).map(|_| ()),
        Command::Collect => collect(&ctx).map(|_| ()),
        Command::TrainForceModel { history_len } => train_force(&ctx, history_len).map(|_| ()),
        Command::Eval => {
            let models = load_models(&ctx)?;
            eval(&ctx, &models).map(|_| ())
        }
        Command::AblateHistory => ablate(&ctx),
        Command::Report => report_cmd(&ctx),
        Command::Pipeline => pipeline_cmd(&mut ctx),
    }
}
