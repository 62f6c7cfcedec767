//! Deterministic evaluation episodes with per-step traces.

use std::path::{Path, PathBuf};

use ballspin_core::checkpoint::Checkpoint;
use ballspin_core::curriculum::{Axis, CurriculumState};
use ballspin_core::env::{BallEnv, StepResult, OBS_DIM};
use ballspin_core::nn::PolicyParams;
use ballspin_core::physics::Leg;
use ballspin_core::rollout::{run_episode, ActionMode, EpisodeSummary};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;

/// Master-seed offset separating evaluation streams from training streams.
pub const EVAL_STREAM: u64 = 0x6576_616c;

#[derive(Clone, Debug)]
pub struct EvalRequest {
    pub axis: Axis,
    pub speed_deg: f64,
    pub episodes: usize,
    pub seed: u64,
}

/// One trace row; column order is the field order.
#[derive(Clone, Debug, Serialize)]
struct TraceRow {
    time_s: f64,
    target_w: f64,
    target_x: f64,
    target_y: f64,
    target_z: f64,
    ball_w: f64,
    ball_x: f64,
    ball_y: f64,
    ball_z: f64,
    delta_q: f64,
    ball_pos_x: f64,
    ball_pos_y: f64,
    ball_pos_z: f64,
    tau: [f64; 12],
    qd: [f64; 12],
    r_q: f64,
    r_v: f64,
    r_tau: f64,
    r_slip: f64,
    r_collide: f64,
    r_total: f64,
    contact_lf: u8,
    contact_rf: u8,
    contact_lh: u8,
    contact_rh: u8,
    commanded_speed_deg: f64,
    config_digest: String,
}

fn trace_header() -> Vec<String> {
    let mut h: Vec<String> = ["time_s", "target_w", "target_x", "target_y", "target_z", "ball_w", "ball_x", "ball_y", "ball_z"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend(["delta_q", "ball_pos_x", "ball_pos_y", "ball_pos_z"].map(String::from));
    h.extend((0..12).map(|i| format!("tau_{i}")));
    h.extend((0..12).map(|i| format!("qd_{i}")));
    h.extend(
        ["r_q", "r_v", "r_tau", "r_slip", "r_collide", "r_total", "contact_lf", "contact_rf", "contact_lh", "contact_rh"]
            .map(String::from),
    );
    h.extend(["commanded_speed_deg", "config_digest"].map(String::from));
    h
}

fn trace_row(env: &BallEnv, r: &StepResult, digest: &str) -> TraceRow {
    let t = env.target();
    let b = &env.ball().orientation;
    let p = env.ball().position;
    let legs = env.supporting_legs();
    let touching = |leg: Leg| legs.contains(&leg) as u8;
    let mut tau = [0.0; 12];
    let mut qd = [0.0; 12];
    for i in 0..12 {
        tau[i] = env.torques()[i];
        qd[i] = env.robot().joints_vel[i];
    }
    TraceRow {
        time_s: env.steps() as f64 * env.config().physics.control_dt,
        target_w: t.w(),
        target_x: t.x(),
        target_y: t.y(),
        target_z: t.z(),
        ball_w: b.w(),
        ball_x: b.x(),
        ball_y: b.y(),
        ball_z: b.z(),
        delta_q: r.delta_q,
        ball_pos_x: p.x,
        ball_pos_y: p.y,
        ball_pos_z: p.z,
        tau,
        qd,
        r_q: r.reward.r_q,
        r_v: r.reward.r_v,
        r_tau: r.reward.r_tau,
        r_slip: r.reward.r_slip,
        r_collide: r.reward.r_collide,
        r_total: r.reward.total,
        contact_lf: touching(Leg::LF),
        contact_rf: touching(Leg::RF),
        contact_lh: touching(Leg::LH),
        contact_rh: touching(Leg::RH),
        commanded_speed_deg: env.command().magnitude().to_degrees(),
        config_digest: digest.to_string(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpisodeReport {
    pub episode: u64,
    pub steps: u32,
    pub survival_time_s: f64,
    pub mean_delta_q: f64,
    pub max_delta_q: f64,
    /// Mean ball angular speed, deg/s.
    pub mean_angular_speed_deg: f64,
    /// Mean ball angular velocity along the commanded axis, deg/s.
    pub mean_axis_speed_deg: f64,
    pub total_reward: f64,
    pub verdict: String,
    pub truncated: bool,
    pub trace: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalSummary {
    pub config_digest: String,
    pub checkpoint_iteration: u64,
    pub axis: String,
    pub speed_deg: f64,
    pub seed: u64,
    pub mean_delta_q: f64,
    pub max_delta_q: f64,
    pub mean_angular_speed_deg: f64,
    pub mean_survival_time_s: f64,
    pub episodes: Vec<EpisodeReport>,
}

/// Curriculum state for evaluation: the checkpoint's factor and period at
/// the requested speed.
pub fn eval_curriculum(cfg: &RunConfig, iteration: u64, speed_deg: f64) -> CurriculumState {
    let mut c = cfg.curriculum.at(iteration);
    c.target_speed = speed_deg.to_radians();
    c
}

/// Runs `req.episodes` mean-action episodes and writes one trace per
/// episode plus `summary.json` into `out`.
pub fn evaluate(
    params: &PolicyParams<f32>,
    cfg: &RunConfig,
    iteration: u64,
    req: &EvalRequest,
    out: &Path,
) -> Result<EvalSummary, CliError> {
    if !(req.speed_deg >= 0.0 && req.speed_deg.is_finite()) {
        return Err(CliError::Config(format!("speed {} deg/s must be finite and >= 0", req.speed_deg)));
    }
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let digest = cfg.digest();
    let curriculum = eval_curriculum(cfg, iteration, req.speed_deg);
    let master = req.seed ^ EVAL_STREAM;
    let mut reports = Vec::with_capacity(req.episodes);
    for k in 0..req.episodes as u64 {
        let path = out.join(format!("episode_{k:03}.csv"));
        let file = std::fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        w.write_record(trace_header())?;
        let mut rows_err = None;
        let (mut dq_sum, mut dq_max, mut w_sum, mut axis_sum, mut n) = (0.0, 0.0f64, 0.0, 0.0, 0u64);
        let summary: EpisodeSummary =
            run_episode(params, &cfg.env, master, k, 0, &curriculum, &[req.axis], ActionMode::Mean, |env, r, _| {
                let row = trace_row(env, r, &digest);
                if let Err(e) = w.serialize(&row) {
                    rows_err.get_or_insert(e);
                }
                dq_sum += r.delta_q;
                dq_max = dq_max.max(r.delta_q);
                w_sum += env.ball().ang_vel.norm();
                axis_sum += env.ball().ang_vel.dot(&env.command().axis());
                n += 1;
            })?;
        if let Some(e) = rows_err {
            return Err(e.into());
        }
        w.flush().map_err(|e| CliError::io(&path, e))?;
        let n = n.max(1) as f64;
        reports.push(EpisodeReport {
            episode: summary.episode,
            steps: summary.length,
            survival_time_s: summary.length as f64 * cfg.env.physics.control_dt,
            mean_delta_q: dq_sum / n,
            max_delta_q: dq_max,
            mean_angular_speed_deg: (w_sum / n).to_degrees(),
            mean_axis_speed_deg: (axis_sum / n).to_degrees(),
            total_reward: summary.total_reward,
            verdict: summary.verdict.name().to_string(),
            truncated: summary.truncated,
            trace: PathBuf::from(path.file_name().expect("file name")),
        });
    }
    let m = reports.len().max(1) as f64;
    let summary = EvalSummary {
        config_digest: digest,
        checkpoint_iteration: iteration,
        axis: req.axis.name().to_string(),
        speed_deg: req.speed_deg,
        seed: req.seed,
        mean_delta_q: reports.iter().map(|r| r.mean_delta_q).sum::<f64>() / m,
        max_delta_q: reports.iter().map(|r| r.max_delta_q).fold(0.0, f64::max),
        mean_angular_speed_deg: reports.iter().map(|r| r.mean_angular_speed_deg).sum::<f64>() / m,
        mean_survival_time_s: reports.iter().map(|r| r.survival_time_s).sum::<f64>() / m,
        episodes: reports,
    };
    let path = out.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
    Ok(summary)
}

/// Loads a checkpoint and the run config embedded in it, checking the
/// network shapes against the observation and action contract.
pub fn load_checkpoint(path: &Path) -> Result<(Checkpoint<f32>, RunConfig), CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let ckpt = Checkpoint::<f32>::from_bytes(&bytes)?;
    let cfg = RunConfig::from_toml(&ckpt.config_toml)
        .map_err(|e| CliError::Schema(format!("embedded config does not load: {e}")))?;
    let p = &ckpt.params;
    if p.policy.input_dim() != OBS_DIM || p.policy.output_dim() != ballspin_core::env::ACTION_DIM || p.value.input_dim() != OBS_DIM {
        return Err(CliError::Schema(format!(
            "network maps {}->{} but the environment needs {}->{}",
            p.policy.input_dim(),
            p.policy.output_dim(),
            OBS_DIM,
            ballspin_core::env::ACTION_DIM
        )));
    }
    Ok((ckpt, cfg))
}

/// Mean episode length, in control steps, over `episodes` episodes drawn
/// from evaluation streams of `seed`, all at the curriculum state of
/// `iteration`.
pub fn mean_survival_steps(
    params: &PolicyParams<f32>,
    cfg: &RunConfig,
    iteration: u64,
    seed: u64,
    episodes: usize,
    mode: ActionMode,
) -> Result<f64, CliError> {
    let curriculum = cfg.curriculum.at(iteration);
    let mut total = 0u64;
    for k in 0..episodes as u64 {
        let s = run_episode(params, &cfg.env, seed ^ EVAL_STREAM, k, 0, &curriculum, &cfg.curriculum.axes, mode, |_, _, _| {})?;
        total += s.length as u64;
    }
    Ok(total as f64 / episodes.max(1) as f64)
}
