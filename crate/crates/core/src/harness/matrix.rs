use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::dataset::{build_levels_with_observations, DatasetBundle, EnvSpec};
use super::rollout::{mean_std, run_episodes, success_rate, Policy, RolloutConfig, RolloutRecord};
use crate::baselines::{train_controller, ControllerConfig, Method, TrainedController};
use crate::data::Trajectory;
use crate::error::{KoapError, Result};
use crate::planner::{train_planner, DiffusionConfig, DiffusionModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// Demonstrations in the pool.
    pub pool_size: usize,
    /// Seed of the pool; split seeds add the evaluation seed.
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            pool_size: 500,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixConfig {
    pub methods: Vec<Method>,
    /// Fractions of the pool carrying labels.
    pub levels: Vec<f64>,
    /// Fractions of the pool available as observations.
    pub obs_fractions: Vec<f64>,
}

impl Default for MatrixConfig {
    fn default() -> Self {
        Self {
            methods: vec![Method::Koap, Method::Dd],
            levels: vec![0.02, 0.05, 0.1, 0.25, 0.5],
            obs_fractions: vec![1.0],
        }
    }
}

/// Full experiment description, the JSON config file of `run-matrix`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub env: EnvSpec,
    #[serde(default)]
    pub dataset: DatasetConfig,
    pub planner: DiffusionConfig,
    pub controller: ControllerConfig,
    #[serde(default)]
    pub rollout: RolloutConfig,
    #[serde(default)]
    pub matrix: MatrixConfig,
}

/// Environment variable replacing the evaluation seeds by a single seed.
pub const SEED_ENV_VAR: &str = "KOAP_SEED";

impl ExperimentConfig {
    /// Defaults sized for `env`.
    pub fn for_env(env: EnvSpec) -> Self {
        let (d, a) = (env.state_dim(), env.action_dim());
        Self {
            env,
            dataset: DatasetConfig::default(),
            planner: DiffusionConfig::planner(d),
            controller: ControllerConfig::for_dims(d, a),
            rollout: RolloutConfig::default(),
            matrix: MatrixConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.rollout.validate()?;
        let (d, a) = (self.env.state_dim(), self.env.action_dim());
        let arch = self.controller.arch();
        if arch.state_dim != d || arch.action_dim != a || self.planner.arch.state_dim != d {
            return Err(KoapError::Config(format!(
                "model dims do not match the {} environment ({d} states, {a} actions)",
                self.env.id()
            )));
        }
        let w = arch.window;
        let p = &self.planner.arch;
        let r = &self.rollout;
        if w.horizon != r.horizon || p.horizon != r.horizon || w.history != r.history || p.history != r.history {
            return Err(KoapError::Config(
                "planner, controller and rollout must agree on horizon and history".into(),
            ));
        }
        Ok(())
    }

    /// Read a JSON config; `KOAP_SEED`, when set, replaces the seed list.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: Self = serde_json::from_slice(&fs::read(path)?)?;
        cfg.apply_seed_override(std::env::var(SEED_ENV_VAR).ok().as_deref())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_seed_override(&mut self, value: Option<&str>) -> Result<()> {
        if let Some(v) = value {
            let seed = v
                .trim()
                .parse()
                .map_err(|_| KoapError::Config(format!("{SEED_ENV_VAR}={v:?} is not an unsigned integer")))?;
            self.rollout.seeds = vec![seed];
        }
        Ok(())
    }

    pub fn pool(&self) -> Result<Vec<Trajectory>> {
        self.env.generate_pool(self.dataset.pool_size, self.dataset.seed)
    }

    /// Label levels for evaluation seed `seed` at one observation fraction.
    pub fn bundles(
        &self,
        pool: &[Trajectory],
        levels: &[f64],
        obs_fraction: f64,
        seed: u64,
    ) -> Result<Vec<DatasetBundle>> {
        build_levels_with_observations(pool, levels, obs_fraction, self.dataset.seed.wrapping_add(seed))
    }

    pub fn planner_config(&self, seed: u64) -> DiffusionConfig {
        let mut p = self.planner.clone();
        p.train.seed = seed;
        p
    }

    pub fn controller_config(&self, seed: u64) -> ControllerConfig {
        self.controller.clone().with_seed(seed)
    }
}

/// Outcome of one (method, level, obs_fraction, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub method: Method,
    pub level: f64,
    pub obs_fraction: f64,
    pub seed: u64,
    /// `None` when the cell failed.
    pub success: Option<f64>,
    pub error: Option<String>,
    pub records: Vec<RolloutRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub level: f64,
    pub obs_fraction: f64,
    pub mean: f64,
    pub std: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSummary {
    pub rows: Vec<SummaryRow>,
    pub failures: Vec<String>,
}

impl MatrixSummary {
    pub fn get(&self, method: Method, level: f64, obs_fraction: f64) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.level == level && r.obs_fraction == obs_fraction)
    }
}

/// Evaluate a trained controller (with `planner` when it consumes plans)
/// over `cfg.episodes` episodes under evaluation seed `seed`.
pub fn evaluate_controller(
    controller: &TrainedController,
    planner: Option<&DiffusionModel>,
    env: &EnvSpec,
    cfg: &RolloutConfig,
    seed: u64,
) -> Result<Vec<RolloutRecord>> {
    let policy = if controller.method.uses_planner() {
        let planner = planner
            .ok_or_else(|| KoapError::Orchestration(format!("method {} needs a trained planner", controller.method)))?;
        Policy::PlanThenControl {
            planner,
            controller: controller.as_dyn(),
        }
    } else {
        Policy::Direct(controller.as_dyn())
    };
    run_episodes(policy, env, cfg, seed, controller.method.as_str())
}

fn fmt_fraction(f: f64) -> String {
    format!("{f:.4}")
}

fn cell_path(dir: &Path, method: Method, level: f64, obs: f64, seed: u64) -> PathBuf {
    dir.join("cells").join(format!(
        "{method}_l{}_o{}_s{seed}.json",
        fmt_fraction(level),
        fmt_fraction(obs)
    ))
}

/// Train or reload the shared planner for one (seed, observation fraction).
fn planner_for(cfg: &ExperimentConfig, dir: &Path, dx: &[Trajectory], obs: f64, seed: u64) -> Result<DiffusionModel> {
    let path = dir
        .join("planners")
        .join(format!("planner_o{}_s{seed}.ckpt", fmt_fraction(obs)));
    if path.exists() {
        return DiffusionModel::load(&path);
    }
    info!("training planner (obs {obs}, seed {seed})");
    let (model, _) = train_planner(dx, &cfg.planner_config(seed))?;
    fs::create_dir_all(path.parent().expect("planner dir"))?;
    model.save(&path)?;
    Ok(model)
}

fn run_cell(
    cfg: &ExperimentConfig,
    bundle: &DatasetBundle,
    method: Method,
    planner: Option<&DiffusionModel>,
    seed: u64,
) -> Result<Vec<RolloutRecord>> {
    let (controller, _) = train_controller(method, &bundle.dx, &bundle.da, &cfg.controller_config(seed))?;
    evaluate_controller(&controller, planner, &cfg.env, &cfg.rollout, seed)
}

/// Run every missing cell of the matrix under `dir`, then merge all cells
/// into `metrics.csv` and `summary.json`. Cells already on disk are reused,
/// so an interrupted run resumes where it stopped. A failing cell is
/// recorded and the matrix continues.
pub fn run_matrix(cfg: &ExperimentConfig, dir: &Path) -> Result<MatrixSummary> {
    cfg.validate()?;
    fs::create_dir_all(dir.join("cells"))?;
    let pool = cfg.pool()?;
    let m = &cfg.matrix;
    for &seed in &cfg.rollout.seeds {
        for &obs in &m.obs_fractions {
            let pending: Vec<(Method, f64)> = m
                .methods
                .iter()
                .flat_map(|&meth| m.levels.iter().map(move |&l| (meth, l)))
                .filter(|&(meth, l)| !cell_path(dir, meth, l, obs, seed).exists())
                .collect();
            if pending.is_empty() {
                continue;
            }
            let outcome = (|| -> Result<(Vec<DatasetBundle>, Option<DiffusionModel>)> {
                let bundles = cfg.bundles(&pool, &m.levels, obs, seed)?;
                let planner = if pending.iter().any(|(meth, _)| meth.uses_planner()) {
                    Some(planner_for(cfg, dir, &bundles[0].dx, obs, seed)?)
                } else {
                    None
                };
                Ok((bundles, planner))
            })();
            for (method, level) in pending {
                let result = match &outcome {
                    Ok((bundles, planner)) => {
                        let bundle = bundles
                            .iter()
                            .find(|b| b.level == level)
                            .expect("bundle per configured level");
                        info!("cell {method} level {level} obs {obs} seed {seed}");
                        run_cell(cfg, bundle, method, planner.as_ref(), seed)
                    }
                    Err(e) => Err(KoapError::Orchestration(format!("stage setup failed: {e}"))),
                };
                let cell = match result {
                    Ok(records) => CellResult {
                        method,
                        level,
                        obs_fraction: obs,
                        seed,
                        success: Some(success_rate(&records)),
                        error: None,
                        records,
                    },
                    Err(e) => {
                        warn!("cell {method} level {level} obs {obs} seed {seed} failed: {e}");
                        CellResult {
                            method,
                            level,
                            obs_fraction: obs,
                            seed,
                            success: None,
                            error: Some(e.to_string()),
                            records: Vec::new(),
                        }
                    }
                };
                fs::write(cell_path(dir, method, level, obs, seed), serde_json::to_vec(&cell)?)?;
            }
        }
    }
    merge_cells(cfg, dir)
}

/// Collect the configured cells from `dir`, write `metrics.csv` (method,
/// level, obs_fraction, seed, success) and `summary.json`.
pub fn merge_cells(cfg: &ExperimentConfig, dir: &Path) -> Result<MatrixSummary> {
    let m = &cfg.matrix;
    let mut cells = Vec::new();
    for &method in &m.methods {
        for &level in &m.levels {
            for &obs in &m.obs_fractions {
                for &seed in &cfg.rollout.seeds {
                    let path = cell_path(dir, method, level, obs, seed);
                    let cell: CellResult = serde_json::from_slice(
                        &fs::read(&path)
                            .map_err(|e| KoapError::Orchestration(format!("missing cell {}: {e}", path.display())))?,
                    )?;
                    cells.push(cell);
                }
            }
        }
    }
    let mut w = csv::Writer::from_path(dir.join("metrics.csv"))?;
    w.write_record(["method", "level", "obs_fraction", "seed", "success"])?;
    let mut groups: BTreeMap<(Method, String, String), Vec<f64>> = BTreeMap::new();
    let mut failures = Vec::new();
    for c in &cells {
        match c.success {
            Some(s) => {
                w.write_record([
                    c.method.as_str().to_string(),
                    fmt_fraction(c.level),
                    fmt_fraction(c.obs_fraction),
                    c.seed.to_string(),
                    format!("{s:.6}"),
                ])?;
                groups
                    .entry((c.method, fmt_fraction(c.level), fmt_fraction(c.obs_fraction)))
                    .or_default()
                    .push(s);
            }
            None => failures.push(format!(
                "{} level {} obs {} seed {}: {}",
                c.method,
                c.level,
                c.obs_fraction,
                c.seed,
                c.error.as_deref().unwrap_or("unknown error")
            )),
        }
    }
    w.flush()?;
    let mut rows = Vec::new();
    for &method in &m.methods {
        for &level in &m.levels {
            for &obs in &m.obs_fractions {
                if let Some(v) = groups.get(&(method, fmt_fraction(level), fmt_fraction(obs))) {
                    let (mean, std) = mean_std(v);
                    rows.push(SummaryRow {
                        method,
                        level,
                        obs_fraction: obs,
                        mean,
                        std,
                        seeds: v.len(),
                    });
                }
            }
        }
    }
    let summary = MatrixSummary { rows, failures };
    fs::write(dir.join("summary.json"), serde_json::to_vec_pretty(&summary)?)?;
    Ok(summary)
}
