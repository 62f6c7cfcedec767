//! Collect/update loop with metrics and checkpoints.

use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ballspin_core::checkpoint::Checkpoint;
use ballspin_core::curriculum::CurriculumState;
use ballspin_core::env::{ACTION_DIM, OBS_DIM};
use ballspin_core::nn::PolicyParams;
use ballspin_core::ppo::{update, Adam, UpdateStats};
use ballspin_core::rollout::{collect, EnvPool, RolloutBatch};
use ballspin_core::seeding::substream;
use rand::RngCore;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;

pub const METRICS_FILE: &str = "metrics.csv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const CONFIG_FILE: &str = "config.toml";

/// One metrics row. Column order is the field order.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRow {
    pub iteration: u64,
    pub mean_reward: f64,
    pub r_q: f64,
    pub r_v: f64,
    pub r_tau: f64,
    pub r_slip: f64,
    pub r_collide: f64,
    /// Mean length of episodes that ended in this batch; NaN when none did.
    pub mean_episode_length: f64,
    pub episodes: usize,
    pub reset_failures: u64,
    pub loss: f64,
    pub value_loss: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub grad_norm: f64,
    pub skipped_minibatches: usize,
    pub update_skipped: bool,
    pub factor: f64,
    pub speed_deg: f64,
    pub period_s: f64,
    pub wall_time_s: f64,
    pub config_digest: String,
}

impl MetricsRow {
    fn new(
        iteration: u64,
        batch: &RolloutBatch,
        stats: Option<&UpdateStats>,
        curriculum: &CurriculumState,
        wall_time_s: f64,
        digest: &str,
    ) -> Self {
        let terms = batch.mean_reward_terms();
        let lengths: Vec<f64> = batch.episodes().map(|e| e.length as f64).collect();
        let mean_len = if lengths.is_empty() { f64::NAN } else { lengths.iter().sum::<f64>() / lengths.len() as f64 };
        let nan = f64::NAN;
        Self {
            iteration,
            mean_reward: batch.mean_reward(),
            r_q: terms.r_q,
            r_v: terms.r_v,
            r_tau: terms.r_tau,
            r_slip: terms.r_slip,
            r_collide: terms.r_collide,
            mean_episode_length: mean_len,
            episodes: lengths.len(),
            reset_failures: batch.reset_failures(),
            loss: stats.map_or(nan, |s| s.loss),
            value_loss: stats.map_or(nan, |s| s.value_loss),
            clip_fraction: stats.map_or(nan, |s| s.clip_fraction),
            approx_kl: stats.map_or(nan, |s| s.approx_kl),
            grad_norm: stats.map_or(nan, |s| s.grad_norm),
            skipped_minibatches: stats.map_or(0, |s| s.skipped),
            update_skipped: stats.is_none_or(|s| s.skipped == s.minibatches),
            factor: curriculum.factor,
            speed_deg: curriculum.target_speed_deg(),
            period_s: curriculum.update_period.seconds(),
            wall_time_s,
            config_digest: digest.to_string(),
        }
    }
}

/// Returned by the per-iteration callback.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: PolicyParams<f32>,
    pub iterations: u64,
    pub rows: Vec<MetricsRow>,
    pub final_checkpoint: PathBuf,
}

/// Initial parameters of a run.
pub fn initial_params(cfg: &RunConfig) -> PolicyParams<f32> {
    PolicyParams::init(cfg.seed, OBS_DIM, ACTION_DIM, &cfg.network)
}

fn checkpoint_path(out: &Path, iteration: u64) -> PathBuf {
    out.join("checkpoints").join(format!("iter_{iteration:06}.ckpt"))
}

fn write_checkpoint(path: &Path, params: &PolicyParams<f32>, iteration: u64, cfg_text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    Checkpoint::new(params.clone(), iteration, cfg_text).save(path).map_err(|e| CliError::io(path, e))
}

/// Runs `cfg.iterations` collect/update iterations into `out`. `on_iteration`
/// sees every metrics row and the updated parameters and may stop early;
/// the final checkpoint is written either way.
pub fn train(
    cfg: &RunConfig,
    out: &Path,
    workers: usize,
    mut on_iteration: impl FnMut(&MetricsRow, &PolicyParams<f32>) -> Control,
) -> Result<TrainOutcome, CliError> {
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let cfg_text = cfg.canonical_toml();
    let digest = cfg.digest();
    let cfg_path = out.join(CONFIG_FILE);
    std::fs::write(&cfg_path, &cfg_text).map_err(|e| CliError::io(&cfg_path, e))?;

    let metrics_path = out.join(METRICS_FILE);
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .truncate(true)
        .open(&metrics_path)
        .map_err(|e| CliError::io(&metrics_path, e))?;
    let mut metrics = csv::Writer::from_writer(file);

    let start = Instant::now();
    let mut params = initial_params(cfg);
    let mut adam = Adam::new(&params);
    let mut curriculum = cfg.curriculum.at(0);
    let mut pool = EnvPool::new(&cfg.env, cfg.seed, cfg.num_envs, &curriculum, &cfg.curriculum.axes)?;
    let mut shuffle = substream(cfg.seed, &[0x7368_7566_666c]);
    let mut rows = Vec::new();
    let mut nonfinite_streak = 0u32;
    let mut done_iterations = 0;

    for iteration in 0..cfg.iterations {
        curriculum = cfg.curriculum.at(iteration);
        log::info!(
            "iteration {iteration}: factor {:.3}, speed {:.2} deg/s, period {} s",
            curriculum.factor,
            curriculum.target_speed_deg(),
            curriculum.update_period.seconds()
        );
        let batch = collect(&params, &mut pool, cfg.steps_per_env, &curriculum, workers)?;
        let train_batch = batch.to_train_batch(OBS_DIM, &cfg.ppo)?;
        let shuffle_seed = shuffle.next_u64();
        let stats = match update(&mut params, &mut adam, &train_batch, &cfg.ppo, shuffle_seed) {
            Ok(s) => Some(s),
            Err(e @ (ballspin_core::Error::NonFiniteLoss(_) | ballspin_core::Error::NonFiniteGradient(_))) => {
                log::warn!("iteration {iteration}: update skipped: {e}");
                None
            }
            Err(e) => return Err(e.into()),
        };
        let row = MetricsRow::new(iteration, &batch, stats.as_ref(), &curriculum, start.elapsed().as_secs_f64(), &digest);
        metrics.serialize(&row)?;
        metrics.flush().map_err(|e| CliError::io(&metrics_path, e))?;
        nonfinite_streak = if row.update_skipped { nonfinite_streak + 1 } else { 0 };
        done_iterations = iteration + 1;
        if nonfinite_streak >= cfg.max_nonfinite_iterations || !params.is_finite() {
            return Err(CliError::Diverged(format!(
                "{nonfinite_streak} consecutive iterations without a finite update at iteration {iteration}"
            )));
        }
        if cfg.checkpoint_interval > 0 && done_iterations % cfg.checkpoint_interval == 0 && done_iterations < cfg.iterations {
            write_checkpoint(&checkpoint_path(out, done_iterations), &params, done_iterations, &cfg_text)?;
        }
        let control = on_iteration(&row, &params);
        rows.push(row);
        if control == Control::Stop {
            break;
        }
    }
    let final_checkpoint = out.join(FINAL_CHECKPOINT);
    write_checkpoint(&final_checkpoint, &params, done_iterations, &cfg_text)?;
    Ok(TrainOutcome { params, iterations: done_iterations, rows, final_checkpoint })
}
