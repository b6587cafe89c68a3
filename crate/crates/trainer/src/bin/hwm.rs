use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hwm_envs::ReplayBuffer;
use hwm_trainer::bench::{self, BenchSpec};
use hwm_trainer::config::SCHEMES;
use hwm_trainer::probe::probe_world_model;
use hwm_trainer::train::BUFFER_FILE;
use hwm_trainer::{export, Agent, ExperimentConfig, Result, TrainerError};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(
    name = "hwm",
    version,
    about = "Harmonized world-model training and analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "runs/latest")]
    out: PathBuf,
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(SCHEMES))]
    scheme: Option<String>,
    /// Fixed weight of the observation loss.
    #[arg(long)]
    wo: Option<f64>,
    /// Fixed weight of the reward loss.
    #[arg(long)]
    wr: Option<f64>,
    /// Fixed weight of the dynamics loss.
    #[arg(long)]
    wd: Option<f64>,
    /// Total environment steps (online) or the step budget offline.
    #[arg(long)]
    steps: Option<usize>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = &self.scheme {
            cfg.set("scheme", s)?;
        }
        let weights = [("wo", self.wo), ("wr", self.wr), ("wd", self.wd)];
        for (key, v) in weights {
            if let Some(v) = v {
                if cfg.scheme != "fixed" {
                    return Err(TrainerError::Config(format!(
                        "--{key} only applies to the fixed scheme, not {}",
                        cfg.scheme
                    )));
                }
                cfg.set(key, &v.to_string())?;
            }
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.steps {
            cfg.total_steps = n;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train online in the distractor grid.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Train on a fixed replay buffer.
    OfflineTrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        buffer: PathBuf,
    },
    /// Regress ground-truth state from a checkpoint's latent features.
    Probe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        buffer: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Harmonizer descent on synthetic loss streams.
    HarmonizerBench {
        #[command(flatten)]
        common: Common,
    },
    /// Aggregate run directories into a CSV of bucketed means and intervals.
    Export {
        #[command(flatten)]
        common: Common,
        /// Run directories to aggregate.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Env-step bucket width.
        #[arg(long, default_value_t = 5000)]
        bucket: u64,
        /// Aggregate runs even if their configurations differ.
        #[arg(long)]
        force: bool,
    },
    /// Train a collector online and save every episode it saw.
    MakeBuffer {
        #[command(flatten)]
        common: Common,
    },
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| TrainerError::Metrics(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common } => {
            let cfg = common.config()?;
            let s = hwm_trainer::train(&cfg, &common.out)?;
            info!(
                "{} updates, final eval return {:?}",
                s.updates, s.final_eval_return
            );
        }
        Command::OfflineTrain { common, buffer } => {
            let cfg = common.config()?;
            let buffer = ReplayBuffer::load(&buffer)?;
            let s = hwm_trainer::offline_train(&cfg, &buffer, &common.out)?;
            info!("{} offline updates", s.updates);
        }
        Command::Probe {
            common,
            buffer,
            checkpoint,
        } => {
            let cfg = common.config()?;
            let buffer = ReplayBuffer::load(&buffer)?;
            let mut agent = Agent::new(&cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
            agent.load(&checkpoint)?;
            let report = probe_world_model(&agent.wm, &buffer, &cfg)?;
            std::fs::create_dir_all(&common.out)?;
            write_json(&common.out.join("probe.json"), &report)?;
            info!("probe validation mse {:.4}", report.val_mse);
        }
        Command::HarmonizerBench { common } => {
            if common.scheme.is_some()
                || common.wo.is_some()
                || common.wr.is_some()
                || common.wd.is_some()
            {
                return Err(TrainerError::Config(
                    "harmonizer-bench takes no weighting flags".into(),
                ));
            }
            let mut spec = BenchSpec::default();
            if let Some(n) = common.steps {
                spec.steps = n;
            }
            if let Some(s) = common.seed {
                spec.seed = s;
            }
            let report = bench::run(&spec)?;
            std::fs::create_dir_all(&common.out)?;
            write_json(&common.out.join("bench.json"), &report)?;
            bench::write_curve(&report.curve, &common.out.join("curve.csv"))?;
        }
        Command::Export {
            common,
            runs,
            bucket,
            force,
        } => {
            std::fs::create_dir_all(&common.out)?;
            let rows = export::export(&runs, bucket, force, &common.out.join("export.csv"))?;
            info!("{} rows from {} runs", rows.len(), runs.len());
        }
        Command::MakeBuffer { common } => {
            let cfg = common.config()?;
            let (s, buffer) = hwm_trainer::make_buffer(&cfg, &common.out)?;
            info!(
                "{} episodes, {} steps in {}",
                s.episodes,
                buffer.steps(),
                common.out.join(BUFFER_FILE).display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
