//! Run configuration: one TOML document, unknown keys rejected.

use std::path::{Path, PathBuf};

use ballspin_core::checkpoint::digest_hex;
use ballspin_core::curriculum::CurriculumSchedule;
use ballspin_core::env::EnvConfig;
use ballspin_core::nn::NetworkConfig;
use ballspin_core::ppo::PpoConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const CONFIG_SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema: u32,
    pub seed: u64,
    pub num_envs: usize,
    pub steps_per_env: usize,
    pub iterations: u64,
    /// Iterations between intermediate checkpoints; 0 writes only the final one.
    pub checkpoint_interval: u64,
    /// Not part of the canonical text: moving a run does not change its digest.
    #[serde(skip_serializing)]
    pub output_dir: PathBuf,
    /// Rollout threads; 0 uses the available cores. Overridden by
    /// `BALLSPIN_WORKERS`. Not part of the canonical text: results do not
    /// depend on it.
    #[serde(skip_serializing)]
    pub workers: usize,
    /// Training stops as diverged after this many consecutive iterations
    /// without a finite update.
    pub max_nonfinite_iterations: u32,
    pub env: EnvConfig,
    pub curriculum: CurriculumSchedule,
    pub ppo: PpoConfig,
    pub network: NetworkConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema: CONFIG_SCHEMA,
            seed: 0,
            num_envs: 64,
            steps_per_env: 100,
            iterations: 5000,
            checkpoint_interval: 100,
            output_dir: PathBuf::from("runs/default"),
            workers: 0,
            max_nonfinite_iterations: 5,
            env: EnvConfig::default(),
            curriculum: CurriculumSchedule::default(),
            ppo: PpoConfig::default(),
            network: NetworkConfig::default(),
        }
    }
}

impl RunConfig {
    /// Balancing at zero speed with light randomization, the smallest
    /// configuration in which learning is measurable on one CPU.
    pub fn stage0() -> Self {
        let mut cfg = Self { iterations: 500, checkpoint_interval: 0, ..Self::default() };
        cfg.curriculum.factor_initial = 0.2;
        cfg.curriculum.factor_final = 0.2;
        cfg.curriculum.speed_initial_deg = 0.0;
        cfg.curriculum.speed_final_deg = 0.0;
        cfg
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.schema != CONFIG_SCHEMA {
            return bad(format!("schema {} is not supported (expected {CONFIG_SCHEMA})", self.schema));
        }
        if self.num_envs == 0 || self.steps_per_env == 0 {
            return bad("num_envs and steps_per_env must be positive".into());
        }
        if self.max_nonfinite_iterations == 0 {
            return bad("max_nonfinite_iterations must be positive".into());
        }
        self.env.validate()?;
        self.curriculum.validate()?;
        self.ppo.validate()?;
        self.network.validate()?;
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Every result-affecting field, defaults included, in a fixed order.
    pub fn canonical_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn digest(&self) -> String {
        digest_hex(&self.canonical_toml())
    }

    /// Worker count after the environment override.
    pub fn effective_workers(&self) -> Result<usize, CliError> {
        let requested = match std::env::var(WORKERS_ENV) {
            Ok(v) => v
                .trim()
                .parse::<usize>()
                .map_err(|_| CliError::Config(format!("{WORKERS_ENV}={v:?} is not a non-negative integer")))?,
            Err(_) => self.workers,
        };
        Ok(if requested == 0 { std::thread::available_parallelism().map_or(1, |n| n.get()) } else { requested })
    }
}

pub const WORKERS_ENV: &str = "BALLSPIN_WORKERS";
