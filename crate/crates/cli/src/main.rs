use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dosinglab::agents::{write_train_log, Checkpoint, TrainMode};
use dosinglab::envsim::{write_env_metrics, ForestModel};
use dosinglab::evalrep::{write_aggregate_csv, write_report};
use dosinglab::experiment::{self, ExperimentConfig};
use dosinglab::mixers::MixerKind;
use dosinglab::Error;

/// Synthetic anesthesia data, forest environment, and multi-agent dosing policies.
#[derive(Debug, Parser)]
#[command(name = "dosinglab", version)]
struct Cli {
    /// Experiment configuration (JSON with synth, pipeline, envsim, agents, mixer, eval sections).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random source; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate raw cases into <out>/tracks, profiles.csv and manifest.json.
    Generate {
        #[arg(long)]
        out: PathBuf,
        /// Number of cases; overrides synth.n_cases.
        #[arg(long)]
        cases: Option<usize>,
        /// Overwrite a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Resample, align and filter raw cases into <out>/records and fix the train/test split.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the forest environment on the training split.
    TrainEnv {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        /// Number of trees; overrides envsim.n_trees.
        #[arg(long)]
        trees: Option<usize>,
    },
    /// One-step prediction metrics of a fitted environment.
    EvalEnv {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "test", value_parser = ["train", "test"])]
        split: String,
        /// Add the population PK/PD model as a comparison row.
        #[arg(long, value_parser = ["pkpd"])]
        baseline: Option<String>,
        /// Write env_metrics_<split>.json here as well as printing it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the two dosing agents through a mixer.
    TrainAgents {
        #[command(flatten)]
        data: DataArgs,
        /// Forest environment; required online, optional offline (its normalizer is reused).
        #[arg(long)]
        model: Option<PathBuf>,
        /// vdn, qmix, qtran, qplex, qatten, cw_qmix or ow_qmix; overrides mixer.kind.
        #[arg(long)]
        mixer: Option<String>,
        /// online or offline; overrides agents.mode.
        #[arg(long)]
        mode: Option<String>,
        /// Overrides agents.episodes.
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate metrics of checkpoints against the behavior policy.
    EvalAgents {
        #[command(flatten)]
        eval: EvalArgs,
        /// Write metrics_aggregate.csv here as well as printing it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full comparison bundle on the test split.
    Report {
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Output directory of `preprocess`.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Forest environment the policies are rolled out in.
    #[arg(long)]
    model: PathBuf,
    /// Trained checkpoint; repeat to compare several.
    #[arg(long = "checkpoint", required = true)]
    checkpoints: Vec<PathBuf>,
    #[arg(long, default_value = "test", value_parser = ["train", "test"])]
    split: String,
    /// Also roll each policy out in the population PK/PD model.
    #[arg(long, value_parser = ["pkpd"])]
    baseline: Option<String>,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn is_non_empty_dir(p: &Path) -> bool {
    std::fs::read_dir(p).map(|mut d| d.next().is_some()).unwrap_or(false)
}

fn create_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))
}

fn pick_split(data: &Path, split: &str) -> Result<Vec<dosinglab::types::CaseRecord>> {
    let (train, test) = experiment::load_split(data)?;
    Ok(if split == "train" { train } else { test })
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot start the worker pool")?;
    }
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Generate { out, cases, force } => {
            if let Some(n) = cases {
                cfg.synth.n_cases = n;
            }
            let cfg = cfg.resolved()?;
            if is_non_empty_dir(&out) {
                if !force {
                    return Err(Error::Config(format!("{} is not empty; pass --force to overwrite", out.display())).into());
                }
                for f in ["tracks", "profiles.csv", "manifest.json", "config.json"] {
                    let p = out.join(f);
                    if p.is_dir() {
                        std::fs::remove_dir_all(&p)?;
                    } else if p.is_file() {
                        std::fs::remove_file(&p)?;
                    }
                }
            }
            let manifest = experiment::generate(&cfg, &out)?;
            cfg.save(&out.join("config.json"))?;
            println!("generated {} cases in {}", manifest.n_cases, out.display());
        }
        Command::Preprocess { input, out } => {
            let cfg = cfg.resolved()?;
            create_out(&out)?;
            let report = experiment::preprocess(&cfg, &input, &out)?;
            cfg.save(&out.join("config.json"))?;
            if report.warnings > 0 {
                log::warn!("skipped {} corrupt rows", report.warnings);
            }
            println!(
                "kept {} of {} cases, dropped {}, warnings {}",
                report.kept,
                report.input_cases,
                report.input_cases - report.kept,
                report.warnings
            );
        }
        Command::TrainEnv { data, out, trees } => {
            if let Some(n) = trees {
                cfg.envsim.n_trees = n;
            }
            let cfg = cfg.resolved()?;
            let (train, _) = experiment::load_split(&data.data)?;
            create_out(&out)?;
            let model = experiment::fit_env(&cfg, &train)?;
            model.save(&out.join("env_model.json"))?;
            let metrics = experiment::env_metrics(&cfg, &model, &train, "train", false)?;
            write_env_metrics(&out.join("env_metrics.json"), &metrics)?;
            cfg.save(&out.join("config.json"))?;
            println!("trained {} trees on {} cases", model.trees.len(), train.len());
        }
        Command::EvalEnv { data, model, split, baseline, out } => {
            let cfg = cfg.resolved()?;
            let model = ForestModel::load(&model)?;
            let records = pick_split(&data.data, &split)?;
            let metrics = experiment::env_metrics(&cfg, &model, &records, &split, baseline.is_some())?;
            if let Some(out) = out {
                create_out(&out)?;
                write_env_metrics(&out.join(format!("env_metrics_{split}.json")), &metrics)?;
            }
            println!("{}", serde_json::to_string_pretty(&metrics)?);
        }
        Command::TrainAgents { data, model, mixer, mode, episodes, out } => {
            if let Some(m) = mixer {
                cfg.mixer.kind = m.parse::<MixerKind>()?;
            }
            if let Some(m) = mode {
                cfg.agents.mode = m.parse::<TrainMode>()?;
            }
            if let Some(n) = episodes {
                cfg.agents.train.episodes = n;
            }
            let cfg = cfg.resolved()?;
            if cfg.agents.mode == TrainMode::Online && model.is_none() {
                return Err(Error::Config("online training needs --model".into()).into());
            }
            let env = model.as_deref().map(ForestModel::load).transpose()?;
            let (train, _) = experiment::load_split(&data.data)?;
            create_out(&out)?;
            let (ckpt, log) = experiment::train_agents(&cfg, &train, env.as_ref())?;
            let tag = experiment::checkpoint_label(&ckpt);
            ckpt.save(&out.join(format!("checkpoint_{tag}.json")))?;
            let f = std::fs::File::create(out.join(format!("train_log_{tag}.csv")))?;
            write_train_log(f, &log)?;
            cfg.save(&out.join("config.json"))?;
            println!("trained {tag} for {} episodes ({} updates)", ckpt.episodes_done, ckpt.updates);
        }
        Command::EvalAgents { eval, out } => {
            let cfg = cfg.resolved()?;
            let report = evaluate(&cfg, &eval)?;
            if let Some(out) = out {
                create_out(&out)?;
                write_aggregate_csv(std::fs::File::create(out.join("metrics_aggregate.csv"))?, &report.aggregate)?;
            }
            println!("{}", serde_json::to_string_pretty(&report.aggregate)?);
        }
        Command::Report { eval, out } => {
            let cfg = cfg.resolved()?;
            let report = evaluate(&cfg, &eval)?;
            create_out(&out)?;
            write_report(&out, &report)?;
            cfg.save(&out.join("config.json"))?;
            for a in &report.aggregate {
                println!("{:<20} cr {:>10.2} mdpe {:>7.2} mdape {:>7.2}", a.method, a.cr, a.mdpe_mean, a.mdape_mean);
            }
        }
    }
    Ok(())
}

fn evaluate(cfg: &ExperimentConfig, eval: &EvalArgs) -> Result<dosinglab::evalrep::Report> {
    let env = ForestModel::load(&eval.model)?;
    let checkpoints = eval
        .checkpoints
        .iter()
        .map(|p| Checkpoint::load(p))
        .collect::<dosinglab::Result<Vec<_>>>()?;
    let records = pick_split(&eval.data.data, &eval.split)?;
    if records.is_empty() {
        bail!(Error::Data(format!("the {} split is empty", eval.split)));
    }
    let pkpd = eval.baseline.is_some() || cfg.eval.baseline_pkpd;
    Ok(experiment::evaluate_agents(cfg, &env, &checkpoints, &records, pkpd)?)
}

/// 1 usage or configuration, 2 data, 3 divergence.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Config(_)) => 1,
        Some(Error::Divergence { .. }) => 3,
        Some(_) => 2,
        None if err.chain().any(|e| e.is::<std::io::Error>()) => 2,
        None => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
