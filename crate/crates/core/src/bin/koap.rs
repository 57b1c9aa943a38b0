use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use koap::baselines::{train_controller, Method, TrainedController};
use koap::data::{read_jsonl, write_jsonl, Trajectory};
use koap::envs::LtiSystem;
use koap::harness::{
    build_levels_with_observations, evaluate_controller, run_matrix, success_rate, EnvSpec, ExperimentConfig,
};
use koap::planner::{sample_plan, train_planner, DiffusionModel};
use koap::{KoapError, Result};

#[derive(Parser)]
#[command(
    name = "koap",
    version,
    about = "Plan-then-control imitation from mostly action-free demonstrations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum EnvKind {
    Avoid,
    Lti,
}

#[derive(Subcommand)]
enum Command {
    /// Print the default experiment config for an environment.
    Config {
        #[arg(long, value_enum, default_value = "avoid")]
        env: EnvKind,
    },
    /// Generate labeled demonstrations as JSON lines.
    GenData {
        #[arg(long, value_enum, default_value = "avoid")]
        env: EnvKind,
        /// Take the environment from this experiment config instead.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        n_traj: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the state planner on the observation part of a pool.
    TrainPlanner {
        #[arg(long)]
        config: PathBuf,
        /// Demonstration pool (JSON lines); actions are ignored.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        obs_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a controller at one action-label level of a pool.
    TrainController {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        method: Method,
        #[arg(long)]
        level: f64,
        /// Demonstration pool (JSON lines).
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        obs_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Closed-loop evaluation of a trained controller.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        controller: PathBuf,
        /// Planner checkpoint; required unless the method acts directly.
        #[arg(long)]
        planner: Option<PathBuf>,
        /// Overrides the method recorded in the checkpoint (must agree).
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Comma-separated evaluation seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// CSV of per-seed success rates.
        #[arg(long)]
        out: PathBuf,
        /// Optional JSON dump of every rollout record.
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Train and evaluate the configured method x level x obs-fraction x
    /// seed matrix (resumable).
    RunMatrix {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Sample one plan; conditioning is JSON `{"current": [...], "history": [[...], ...]}`.
    SamplePlan {
        #[arg(long)]
        planner: PathBuf,
        /// Path to the conditioning JSON, or the JSON itself.
        #[arg(long)]
        conditioning: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Deserialize)]
struct Conditioning {
    current: Vec<f64>,
    history: Vec<Vec<f64>>,
}

fn default_env(kind: EnvKind) -> EnvSpec {
    match kind {
        EnvKind::Avoid => EnvSpec::default(),
        EnvKind::Lti => EnvSpec::Lti {
            system: LtiSystem::damped_oscillator(),
            t_len: 20,
        },
    }
}

fn read_pool(path: &Path) -> Result<Vec<Trajectory>> {
    read_jsonl(BufReader::new(File::open(path)?))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Config { env } => {
            let cfg = ExperimentConfig::for_env(default_env(env));
            println!("{}", serde_json::to_string_pretty(&cfg)?);
        }
        Command::GenData {
            env,
            config,
            n_traj,
            seed,
            out,
        } => {
            let spec = match config {
                Some(p) => ExperimentConfig::load(&p)?.env,
                None => default_env(env),
            };
            let pool = spec.generate_pool(n_traj, seed)?;
            let mut w = BufWriter::new(File::create(&out)?);
            write_jsonl(&mut w, &pool)?;
            w.flush()?;
        }
        Command::TrainPlanner {
            config,
            data,
            obs_fraction,
            seed,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let pool = read_pool(&data)?;
            let bundles =
                build_levels_with_observations(&pool, &[1.0], obs_fraction, cfg.dataset.seed.wrapping_add(seed))?;
            let (model, log) = train_planner(&bundles[0].dx, &cfg.planner_config(seed))?;
            model.save(&out)?;
            log::info!("planner final loss {:?}", log.last());
        }
        Command::TrainController {
            config,
            method,
            level,
            bundle,
            obs_fraction,
            seed,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let pool = read_pool(&bundle)?;
            let b = cfg.bundles(&pool, &[level], obs_fraction, seed)?.remove(0);
            let (ctrl, log) = train_controller(method, &b.dx, &b.da, &cfg.controller_config(seed))?;
            ctrl.save(&out)?;
            log::info!("{method} final loss {:?}", log.last());
        }
        Command::Evaluate {
            config,
            controller,
            planner,
            method,
            episodes,
            seeds,
            out,
            records,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(e) = episodes {
                cfg.rollout.episodes = e;
            }
            if let Some(s) = seeds {
                cfg.rollout.seeds = s;
            }
            let ctrl = TrainedController::load(&controller)?;
            if let Some(m) = method {
                if m != ctrl.method {
                    return Err(KoapError::Config(format!(
                        "checkpoint holds a {} controller, not {m}",
                        ctrl.method
                    )));
                }
            }
            let planner = planner.map(|p| DiffusionModel::load(&p)).transpose()?;
            let mut w = csv::Writer::from_path(&out)?;
            w.write_record(["method", "seed", "episodes", "success"])?;
            let mut all = Vec::new();
            for &seed in &cfg.rollout.seeds {
                let recs = evaluate_controller(&ctrl, planner.as_ref(), &cfg.env, &cfg.rollout, seed)?;
                w.write_record([
                    ctrl.method.to_string(),
                    seed.to_string(),
                    recs.len().to_string(),
                    format!("{:.6}", success_rate(&recs)),
                ])?;
                all.extend(recs);
            }
            w.flush()?;
            if let Some(path) = records {
                std::fs::write(path, serde_json::to_vec(&all)?)?;
            }
        }
        Command::RunMatrix { config, out_dir } => {
            let cfg = ExperimentConfig::load(&config)?;
            let summary = run_matrix(&cfg, &out_dir)?;
            for row in &summary.rows {
                println!(
                    "{:<10} level {:.3} obs {:.3}: {:.2} ± {:.2} ({} seeds)",
                    row.method.as_str(),
                    row.level,
                    row.obs_fraction,
                    100.0 * row.mean,
                    100.0 * row.std,
                    row.seeds
                );
            }
            for f in &summary.failures {
                eprintln!("failed: {f}");
            }
        }
        Command::SamplePlan {
            planner,
            conditioning,
            seed,
        } => {
            let model = DiffusionModel::load(&planner)?;
            let text = if Path::new(&conditioning).exists() {
                std::fs::read_to_string(&conditioning)?
            } else {
                conditioning
            };
            let cond: Conditioning = serde_json::from_str(&text)?;
            let plan = sample_plan(&model, &cond.current, &cond.history, seed)?;
            println!("{}", serde_json::to_string(&plan)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
