//! The `goplan` command line. Every command reads a flat `key = value`
//! config, writes into one output directory and is reproducible for a
//! fixed config and seed.
//!
//! Exit codes: 0 success, 1 internal failure, 2 user or configuration error.

mod svg;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::buffer::TrajectoryBuffer;
use crate::config::{ConfigError, RunConfig};
use crate::env::{read_dataset, write_dataset, EnvSpec};
use crate::eval::{evaluate, ood_evaluate, EvalReport, Planning};
use crate::numerics::{Checkpoint, RngStream};
use crate::pipeline::{self, Agent, PipelineError, LOSS_CSV_HEADER};
use crate::reanalysis::IterationMetrics;

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PRETRAIN_CHECKPOINT: &str = "pretrain.ckpt";
pub const PRETRAIN_LOSSES: &str = "pretrain_losses.csv";
pub const REANALYZED_CHECKPOINT: &str = "reanalyzed.ckpt";
pub const REANALYSIS_METRICS: &str = "reanalysis_metrics.csv";
pub const REANALYSIS_BUFFER: &str = "reanalysis_buffer.jsonl";
pub const APPENDIX_A_CSV: &str = "appendix_a.csv";
pub const APPENDIX_A_HEADER: &str = "model,ood_fraction,high_reward_mass,status";

/// A problem with the invocation, config or input files rather than with
/// the computation.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct UserError(pub String);

fn user(msg: impl Into<String>) -> anyhow::Error {
    UserError(msg.into()).into()
}

#[derive(Debug, Parser)]
#[command(name = "goplan", version, about = "Goal-conditioned offline planning experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the offline dataset and its manifest.
    GenData(CommonArgs),
    /// Train dynamics ensemble, value function and CGAN policy.
    Pretrain(CommonArgs),
    /// Finetune a pretrained agent on imagined trajectories.
    Reanalyze(CommonArgs),
    /// Evaluate a checkpoint in the true environment.
    Eval(EvalArgs),
    /// Mode-separation study of four generators on the line bandit.
    AppendixA(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config's `out`; defaults to `out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Input checkpoint; defaults to the previous stage's output.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Plan at every step with the learned ensemble.
    #[arg(long)]
    pub plan: bool,
}

struct RunContext {
    config: RunConfig,
    spec: EnvSpec,
    seed: u64,
    out: PathBuf,
    checkpoint: Option<PathBuf>,
}

impl RunContext {
    fn load(args: &CommonArgs) -> Result<Self> {
        let config = RunConfig::from_file(&args.config)
            .with_context(|| format!("config {}", args.config.display()))?;
        let out = args
            .out
            .clone()
            .or_else(|| config.out_dir.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"));
        fs::create_dir_all(&out)
            .map_err(|e| user(format!("cannot create output directory {}: {e}", out.display())))?;
        Ok(Self {
            seed: args.seed.unwrap_or(config.seed),
            spec: config.spec(),
            config,
            out,
            checkpoint: args.checkpoint.clone(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn dataset_path(&self) -> PathBuf {
        self.config
            .dataset_path
            .as_ref()
            .map(PathBuf::from)
            .unwrap_or_else(|| self.path(DATASET_FILE))
    }

    fn offline(&self) -> Result<TrajectoryBuffer> {
        let path = self.dataset_path();
        let file = File::open(&path)
            .map_err(|e| user(format!("cannot open dataset {}: {e}", path.display())))?;
        let data = read_dataset(BufReader::new(file))
            .map_err(|e| user(format!("dataset {}: {e}", path.display())))?;
        if data.header.spec_hash != self.spec.spec_hash() {
            return Err(user(format!(
                "dataset {} was generated for a different environment spec",
                path.display()
            )));
        }
        Ok(TrajectoryBuffer::from_trajectories(&self.spec, data.trajectories)?)
    }

    fn agent(&self, default: &[&str]) -> Result<Agent> {
        let path = match &self.checkpoint {
            Some(p) => p.clone(),
            None => default
                .iter()
                .map(|name| self.path(name))
                .find(|p| p.exists())
                .ok_or_else(|| {
                    user(format!(
                        "no checkpoint found in {} (looked for {})",
                        self.out.display(),
                        default.join(", ")
                    ))
                })?,
        };
        log::info!("loading checkpoint {}", path.display());
        let ck = Checkpoint::load(&path)
            .map_err(|e| user(format!("checkpoint {}: {e}", path.display())))?;
        Agent::from_checkpoint(&self.config, &self.spec, &ck)
            .map_err(|e| user(format!("checkpoint {}: {e}", path.display())))
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| user(format!("cannot write {}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| user(format!("cannot write {}: {e}", path.display())))
}

fn csv(header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut s = String::from(header);
    s.push('\n');
    for row in rows {
        s.push_str(&row);
        s.push('\n');
    }
    s
}

#[derive(Serialize)]
struct Manifest {
    env: &'static str,
    spec_hash: String,
    config_sha256: String,
    seed: u64,
    trajectories: usize,
    transitions: usize,
}

fn gen_data(ctx: &RunContext) -> Result<()> {
    let trajectories = pipeline::generate(&ctx.config, ctx.seed)?;
    let path = ctx.path(DATASET_FILE);
    write_dataset(create(&path)?, &ctx.spec, &trajectories, None)?;
    let manifest = Manifest {
        env: ctx.spec.kind.name(),
        spec_hash: ctx.spec.spec_hash(),
        config_sha256: hex::encode(Sha256::digest(ctx.config.to_text().as_bytes())),
        seed: ctx.seed,
        trajectories: trajectories.len(),
        transitions: trajectories.iter().map(|t| t.len()).sum(),
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    write_file(&ctx.path(MANIFEST_FILE), text)?;
    println!(
        "wrote {} ({} trajectories, {} transitions)",
        path.display(),
        manifest.trajectories,
        manifest.transitions
    );
    Ok(())
}

fn pretrain(ctx: &RunContext) -> Result<()> {
    let offline = ctx.offline()?;
    let (agent, losses) = pipeline::pretrain(&ctx.config, &ctx.spec, &offline, ctx.seed)?;
    write_file(&ctx.path(PRETRAIN_CHECKPOINT), agent.to_checkpoint().to_bytes())?;
    write_file(
        &ctx.path(PRETRAIN_LOSSES),
        csv(LOSS_CSV_HEADER, losses.iter().map(|r| r.csv_row())),
    )?;
    println!("wrote {}", ctx.path(PRETRAIN_CHECKPOINT).display());
    Ok(())
}

fn reanalyze(ctx: &RunContext) -> Result<()> {
    let offline = ctx.offline()?;
    let mut agent = ctx.agent(&[PRETRAIN_CHECKPOINT])?;
    let outcome = pipeline::reanalyze(&ctx.config, &ctx.spec, &mut agent, &offline, ctx.seed)?;
    write_file(&ctx.path(REANALYZED_CHECKPOINT), agent.to_checkpoint().to_bytes())?;
    write_file(
        &ctx.path(REANALYSIS_METRICS),
        csv(IterationMetrics::CSV_HEADER, outcome.metrics.iter().map(|m| m.csv_row())),
    )?;
    let (trajs, tags): (Vec<_>, Vec<_>) = outcome
        .buffer
        .iter()
        .map(|(t, tag)| (t.clone(), tag.name().to_string()))
        .unzip();
    write_dataset(create(&ctx.path(REANALYSIS_BUFFER))?, &ctx.spec, &trajs, Some(&tags))?;
    println!(
        "wrote {} ({} iterations, {} buffered trajectories)",
        ctx.path(REANALYZED_CHECKPOINT).display(),
        outcome.metrics.len(),
        trajs.len()
    );
    Ok(())
}

/// CSV and SVG file names for an evaluation mode.
pub fn eval_outputs(plan: bool) -> (&'static str, &'static str) {
    if plan {
        ("eval_with_planning.csv", "eval_with_planning.svg")
    } else {
        ("eval_policy_only.csv", "eval_policy_only.svg")
    }
}

fn eval(ctx: &RunContext, plan: bool) -> Result<()> {
    let agent = ctx.agent(&[REANALYZED_CHECKPOINT, PRETRAIN_CHECKPOINT])?;
    let planning = Planning {
        model: &agent.ensemble,
        config: ctx.config.planner,
    };
    let planning = plan.then_some(&planning);
    let mut rng = RngStream::new(ctx.seed);
    let reports: Vec<(String, EvalReport)> = match &ctx.config.split {
        Some(split) => {
            ood_evaluate(&ctx.spec, split, &agent.policy, planning, &ctx.config.eval, &mut rng)?.regimes
        }
        None => vec![(
            "all".to_string(),
            evaluate(&ctx.spec, &agent.policy, planning, &ctx.config.eval, &mut rng)?,
        )],
    };
    let run_id = format!("seed{}", ctx.seed);
    let (csv_name, svg_name) = eval_outputs(plan);
    write_file(
        &ctx.path(csv_name),
        csv(
            EvalReport::CSV_HEADER,
            reports.iter().map(|(regime, r)| r.csv_row(&run_id, regime)),
        ),
    )?;
    let bars: Vec<(String, f64)> = reports.iter().map(|(n, r)| (n.clone(), r.success_rate)).collect();
    let mode = reports[0].1.mode.name();
    write_file(
        &ctx.path(svg_name),
        svg::bar_chart(&format!("success rate ({mode})"), &bars),
    )?;
    for (regime, r) in &reports {
        println!("{regime}: success {:.3} return {:.3}", r.success_rate, r.mean_return);
    }
    Ok(())
}

pub fn appendix_a_scatter(model: &str) -> String {
    format!("appendix_a_{model}.svg")
}

fn appendix_a(ctx: &RunContext) -> Result<()> {
    let rows = pipeline::appendix_a(&ctx.config, ctx.seed)?;
    let lines = rows.iter().map(|row| match &row.metrics {
        Ok(m) => format!("{},{:.6},{:.6},ok", row.model, m.ood_fraction, m.high_reward_mass),
        Err(e) => format!("{},,,{}", row.model, e.replace([',', '\n'], ";")),
    });
    write_file(&ctx.path(APPENDIX_A_CSV), csv(APPENDIX_A_HEADER, lines))?;
    for row in &rows {
        let bound = EnvSpec::line_bandit().action_bound;
        write_file(
            &ctx.path(&appendix_a_scatter(row.model)),
            svg::scatter(row.model, &row.samples, (0.0, 1.0), (-bound, bound)),
        )?;
        match &row.metrics {
            Ok(m) => println!(
                "{}: ood_fraction {:.3} high_reward_mass {:.3}",
                row.model, m.ood_fraction, m.high_reward_mass
            ),
            Err(e) => println!("{}: failed: {e}", row.model),
        }
    }
    Ok(())
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("GOPLAN_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| user(format!("GOPLAN_THREADS must be a positive integer, got `{v}`")))?;
        // A second call in the same process keeps the existing pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match &cli.command {
        Command::GenData(a) => gen_data(&RunContext::load(a)?),
        Command::Pretrain(a) => pretrain(&RunContext::load(a)?),
        Command::Reanalyze(a) => reanalyze(&RunContext::load(a)?),
        Command::Eval(a) => eval(&RunContext::load(&a.common)?, a.plan),
        Command::AppendixA(a) => appendix_a(&RunContext::load(a)?),
    }
}

pub fn exit_code(err: &anyhow::Error) -> i32 {
    let is_user = err.chain().any(|e| {
        e.is::<UserError>()
            || e.is::<ConfigError>()
            || matches!(e.downcast_ref::<PipelineError>(), Some(PipelineError::Config(_)))
    });
    if is_user {
        2
    } else {
        1
    }
}

/// Parses the process arguments, runs the command and returns the exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
