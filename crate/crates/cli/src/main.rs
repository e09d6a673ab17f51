use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use surgrl::harness::{
    arena_score, display_score, policy_predictions, published_external_table, published_public_table, read_dataset, run_stage_pipeline_with,
    score_predictions, ArenaTable, Overrides, RunConfig, StageToggles, DATASET_SCHEMA,
};
use surgrl::io::{read_json, write_json, write_jsonl, Header};
use surgrl::metrics::{evaluate_files, CvsOverall, EvalTask};
use surgrl::policy::load_checkpoint;
use surgrl::synth::{gen_dataset, TaskKind};
use surgrl::{ExecMode, LabError, Result};

#[derive(Parser)]
#[command(name = "surgrl", version, about = "Toy GRPO laboratory: training stages, refinement, metrics and Arena scores")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Supervised fine-tuning on bare answers.
    TrainSft(RunArgs),
    /// Chain-of-thought cold start on teacher traces.
    TrainCot(RunArgs),
    /// GRPO with hierarchical rewards.
    TrainGrpo(RunArgs),
    /// Rejection-sampling refinement with teacher distillation.
    Refine(RunArgs),
    /// Score predictions, either from files or from a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Arena Scores for a table of primary metrics.
    Arena(ArenaArgs),
    /// All enabled stages end to end.
    Demo(RunArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value = "phase")]
    task: String,
    #[arg(long, short, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Start from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    group_size: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    lambda_f: Option<f64>,
    #[arg(long)]
    lambda_a: Option<f64>,
    #[arg(long)]
    lambda_s: Option<f64>,
    #[arg(long)]
    structure_cutoff: Option<u64>,
    #[arg(long)]
    k_rollouts: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long, value_enum)]
    entropy_focus: Option<OnOff>,
    /// Run on one thread (results are identical either way).
    #[arg(long)]
    sequential: bool,
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    task: Option<String>,
    #[arg(long, requires = "truth", conflicts_with_all = ["checkpoint", "data"])]
    pred: Option<PathBuf>,
    #[arg(long, requires = "pred")]
    truth: Option<PathBuf>,
    #[arg(long, requires = "data")]
    checkpoint: Option<PathBuf>,
    #[arg(long, requires = "checkpoint")]
    data: Option<PathBuf>,
    /// CVS overall accuracy: pooled criterion judgments or whole frames.
    #[arg(long, value_enum, default_value = "joint-pool")]
    cvs_overall: CvsMode,
    #[arg(long, default_value_t = 32)]
    max_len: usize,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CvsMode {
    JointPool,
    FrameLevel,
}

#[derive(Clone, Copy, ValueEnum)]
enum Published {
    Public,
    External,
}

#[derive(Args)]
struct ArenaArgs {
    #[arg(long, conflicts_with = "published", required_unless_present = "published")]
    table: Option<PathBuf>,
    #[arg(long, value_enum)]
    published: Option<Published>,
    /// Print only this model's score.
    #[arg(long)]
    model: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    let only = |f: fn(&mut StageToggles)| {
        let mut s = StageToggles::NONE;
        f(&mut s);
        Some(s)
    };
    match cmd {
        Command::Gen(a) => gen(a),
        Command::TrainSft(a) => run(a, only(|s| s.label_sft = true)),
        Command::TrainCot(a) => run(a, only(|s| s.cot_sft = true)),
        Command::TrainGrpo(a) => run(a, only(|s| s.grpo = true)),
        Command::Refine(a) => run(a, only(|s| s.refine = true)),
        Command::Demo(a) => run(a, None),
        Command::Eval(a) => eval(a),
        Command::Arena(a) => arena(a),
    }
}

fn gen(a: GenArgs) -> Result<()> {
    let kind: TaskKind = a.task.parse()?;
    let data = gen_dataset(a.seed, kind, a.n)?;
    let header = Header::new(DATASET_SCHEMA).with("task", kind.as_str()).with("seed", a.seed);
    write_jsonl(&a.out, &header, &data)?;
    println!("wrote {} {} instances to {}", data.len(), kind, a.out.display());
    Ok(())
}

fn build_config(a: &RunArgs, stages: Option<StageToggles>) -> Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = stages {
        cfg.stages = s;
    }
    if a.init.is_some() {
        cfg.init_checkpoint = a.init.clone();
    }
    Overrides {
        seed: a.seed,
        out: a.out.clone(),
        group_size: a.group_size,
        tau: a.tau,
        epsilon: a.epsilon,
        lambda_f: a.lambda_f,
        lambda_a: a.lambda_a,
        lambda_s: a.lambda_s,
        structure_cutoff: a.structure_cutoff,
        k_rollouts: a.k_rollouts,
        iterations: a.iterations,
        entropy_focus: a.entropy_focus.map(|v| matches!(v, OnOff::On)),
    }
    .apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn run(a: RunArgs, stages: Option<StageToggles>) -> Result<()> {
    let cfg = build_config(&a, stages)?;
    let mode = if a.sequential { ExecMode::Sequential } else { ExecMode::Parallel };
    let quiet = a.quiet;
    let mut progress = |msg: &str| {
        if !quiet {
            eprintln!("{msg}");
        }
    };
    let summary = run_stage_pipeline_with(&cfg, mode, &mut progress)?;
    println!("config_hash {}", summary.config_hash);
    println!("artifacts {}", cfg.out.display());
    if let Some(m) = &summary.final_metrics {
        println!("{}", serde_json::to_string_pretty(m)?);
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let report = match (&a.pred, &a.truth, &a.checkpoint, &a.data) {
        (Some(pred), Some(truth), None, None) => {
            let task: EvalTask = a
                .task
                .as_deref()
                .ok_or_else(|| LabError::Config("--task is required with --pred/--truth".into()))?
                .parse()?;
            let overall = match a.cvs_overall {
                CvsMode::JointPool => CvsOverall::JointPool,
                CvsMode::FrameLevel => CvsOverall::FrameLevel,
            };
            evaluate_files(task, pred, truth, overall)?
        }
        (None, None, Some(ckpt), Some(data)) => {
            let policy = load_checkpoint(ckpt)?;
            let instances = read_dataset(data)?;
            let preds = policy_predictions(&policy, &instances, a.max_len, ExecMode::Parallel)?;
            score_predictions(&preds, &instances)?
        }
        _ => return Err(LabError::Config("eval needs --pred and --truth, or --checkpoint and --data".into())),
    };
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn arena(a: ArenaArgs) -> Result<()> {
    let table: ArenaTable = match (a.table, a.published) {
        (Some(p), _) => read_json(&p)?,
        (None, Some(Published::Public)) => published_public_table(),
        (None, Some(Published::External)) => published_external_table(),
        (None, None) => return Err(LabError::Config("arena needs --table or --published".into())),
    };
    match a.model {
        Some(m) => println!("{m}\t{}", display_score(arena_score(&table, &m)?)),
        None => {
            for (m, s) in table.ranking() {
                println!("{m}\t{}", display_score(s));
            }
        }
    }
    Ok(())
}
