//! Parallel, scheduling-independent collection of rollout batches.
//!
//! Each environment owns its random streams, keyed by `(master seed, env
//! index, episode index)`, and is stepped by exactly one worker at a time.
//! Results are merged by env index, so any worker count yields the same
//! batch.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curriculum::{Axis, CurriculumState};
use crate::env::{BallEnv, EnvConfig, Observation, RewardBreakdown, StepResult, Verdict, ACTION_DIM};
use crate::error::{Error, Result};
use crate::nn::{PolicyParams, Scalar};
use crate::ppo::{compute_gae, gaussian_log_prob, PpoConfig, TrainBatch, Transition};
use crate::seeding::{EpisodeSeed, Purpose};

/// Feasible draws tried per reset before giving up.
pub const MAX_RESET_ATTEMPTS: u32 = 200;

/// Resets `env` with successive episode substreams until one is feasible.
/// Returns the observation, the episode index used and the number of
/// rejected draws.
pub fn reset_with_rerolls(
    env: &mut BallEnv,
    master: u64,
    env_index: u64,
    first_episode: u64,
    curriculum: &CurriculumState,
    axes: &[Axis],
) -> Result<(Observation, u64, u32)> {
    let mut failures = 0u32;
    for attempt in 0..MAX_RESET_ATTEMPTS as u64 {
        let episode = first_episode + attempt;
        match env.reset(EpisodeSeed::new(master, env_index, episode), curriculum, axes) {
            Ok(obs) => return Ok((obs, episode, failures)),
            Err(Error::ResetFailed(reason)) => {
                failures += 1;
                if failures % 2 == 0 {
                    log::debug!("env {env_index}: reset failed twice in a row ({reason}); re-seeding from episode {}", episode + 1);
                }
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::ResetFailed(format!("env {env_index}: no feasible draw in {MAX_RESET_ATTEMPTS} attempts")))
}

/// Summary of one finished episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub env: u64,
    pub episode: u64,
    pub length: u32,
    pub total_reward: f64,
    pub verdict: Verdict,
    pub truncated: bool,
}

#[derive(Clone, Debug)]
struct EnvSlot {
    index: u64,
    env: BallEnv,
    obs: Observation,
    episode: u64,
    action_rng: ChaCha8Rng,
    episode_reward: f64,
}

/// Environments stepped together by [`collect`].
#[derive(Clone, Debug)]
pub struct EnvPool {
    master_seed: u64,
    axes: Vec<Axis>,
    slots: Vec<EnvSlot>,
    reset_failures: u64,
}

impl EnvPool {
    pub fn new(cfg: &EnvConfig, master_seed: u64, num_envs: usize, curriculum: &CurriculumState, axes: &[Axis]) -> Result<Self> {
        cfg.validate()?;
        if num_envs == 0 {
            return Err(Error::invalid_config("env count must be positive"));
        }
        if axes.is_empty() {
            return Err(Error::invalid_config("axis set must not be empty"));
        }
        let mut reset_failures = 0;
        let mut slots = Vec::with_capacity(num_envs);
        for index in 0..num_envs as u64 {
            let mut env = BallEnv::unreset(cfg.clone())?;
            let (obs, episode, failures) = reset_with_rerolls(&mut env, master_seed, index, 0, curriculum, axes)?;
            reset_failures += failures as u64;
            slots.push(EnvSlot {
                index,
                env,
                obs,
                episode,
                action_rng: EpisodeSeed::new(master_seed, index, episode).rng(Purpose::Action),
                episode_reward: 0.0,
            });
        }
        Ok(Self { master_seed, axes: axes.to_vec(), slots, reset_failures })
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// Rejected reset draws since the pool was created.
    pub fn reset_failures(&self) -> u64 {
        self.reset_failures
    }

    pub fn env(&self, index: usize) -> &BallEnv {
        &self.slots[index].env
    }
}

/// Transitions of one environment in time order.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvRollout {
    pub env: u64,
    pub transitions: Vec<Transition>,
    /// Value of the observation following the last transition.
    pub bootstrap_value: f64,
    pub reward_terms: RewardBreakdown,
    pub episodes: Vec<EpisodeSummary>,
    /// `(episode index, first step)` of every episode touched by this batch.
    pub seed_ledger: Vec<(u64, usize)>,
    pub reset_failures: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutBatch {
    pub envs: Vec<EnvRollout>,
    pub steps_per_env: usize,
}

impl RolloutBatch {
    pub fn num_envs(&self) -> usize {
        self.envs.len()
    }

    pub fn len(&self) -> usize {
        self.envs.iter().map(|e| e.transitions.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mean_reward(&self) -> f64 {
        let n = self.len().max(1) as f64;
        self.envs.iter().flat_map(|e| &e.transitions).map(|t| t.reward).sum::<f64>() / n
    }

    /// Per-step mean of each reward term.
    pub fn mean_reward_terms(&self) -> RewardBreakdown {
        let n = self.len().max(1) as f64;
        let mut s = [0.0; 5];
        for e in &self.envs {
            for (acc, v) in s.iter_mut().zip(e.reward_terms.terms()) {
                *acc += v;
            }
        }
        RewardBreakdown::from_terms(s[0] / n, s[1] / n, s[2] / n, s[3] / n, s[4] / n)
    }

    pub fn episodes(&self) -> impl Iterator<Item = &EpisodeSummary> {
        self.envs.iter().flat_map(|e| &e.episodes)
    }

    pub fn reset_failures(&self) -> u64 {
        self.envs.iter().map(|e| e.reset_failures as u64).sum()
    }

    /// GAE per environment, concatenated in env order.
    pub fn to_train_batch(&self, obs_dim: usize, cfg: &PpoConfig) -> Result<TrainBatch> {
        let mut batch = TrainBatch::new(obs_dim, ACTION_DIM);
        for e in &self.envs {
            let gae = compute_gae(&e.transitions, e.bootstrap_value, cfg);
            batch.extend(&e.transitions, &gae)?;
        }
        Ok(batch)
    }
}

fn to_input<F: Scalar>(obs: &Observation) -> Vec<F> {
    obs.as_slice().iter().map(|v| F::from_real(*v)).collect()
}

/// Gaussian sample around `mean` with the policy's log-std.
pub fn sample_action<F: Scalar, R: Rng + ?Sized>(mean: &[F], log_std: &[F], rng: &mut R) -> Vec<f64> {
    mean.iter()
        .zip(log_std)
        .map(|(m, s)| {
            let z: f64 = rng.sample(StandardNormal);
            m.to_real() + s.to_real().exp() * z
        })
        .collect()
}

fn step_slot<F: Scalar>(
    slot: &mut EnvSlot,
    params: &PolicyParams<F>,
    steps: usize,
    curriculum: &CurriculumState,
    master: u64,
    axes: &[Axis],
) -> Result<EnvRollout> {
    let mut transitions = Vec::with_capacity(steps);
    let mut terms = [0.0; 5];
    let mut episodes = Vec::new();
    let mut ledger = vec![(slot.episode, 0)];
    let mut reset_failures = 0;
    for t in 0..steps {
        let input = to_input::<F>(&slot.obs);
        let (mean, value) = params.forward(&input)?;
        let action = sample_action(&mean, &params.log_std, &mut slot.action_rng);
        let log_prob = gaussian_log_prob(&action, &mean, &params.log_std);
        let r = slot.env.step(&action)?;
        for (acc, v) in terms.iter_mut().zip(r.reward.terms()) {
            *acc += v;
        }
        slot.episode_reward += r.reward.total;
        let done = r.done();
        let timeout_value = if r.truncated { params.forward(&to_input::<F>(&r.observation))?.1.to_real() } else { 0.0 };
        transitions.push(Transition {
            observation: slot.obs.as_slice().to_vec(),
            action,
            log_prob,
            reward: r.reward.total,
            value: value.to_real(),
            done,
            timeout: r.truncated,
            timeout_value,
        });
        if done {
            episodes.push(EpisodeSummary {
                env: slot.index,
                episode: slot.episode,
                length: slot.env.steps(),
                total_reward: slot.episode_reward,
                verdict: r.verdict,
                truncated: r.truncated,
            });
            let (obs, episode, failures) =
                reset_with_rerolls(&mut slot.env, master, slot.index, slot.episode + 1, curriculum, axes)?;
            reset_failures += failures;
            slot.obs = obs;
            slot.episode = episode;
            slot.action_rng = EpisodeSeed::new(master, slot.index, episode).rng(Purpose::Action);
            slot.episode_reward = 0.0;
            if t + 1 < steps {
                ledger.push((episode, t + 1));
            }
        } else {
            slot.obs = r.observation;
        }
    }
    let bootstrap_value = params.forward(&to_input::<F>(&slot.obs))?.1.to_real();
    Ok(EnvRollout {
        env: slot.index,
        transitions,
        bootstrap_value,
        reward_terms: RewardBreakdown::from_terms(terms[0], terms[1], terms[2], terms[3], terms[4]),
        episodes,
        seed_ledger: ledger,
        reset_failures,
    })
}

/// Steps every environment `steps_per_env` times with actions sampled from
/// `params`, resetting finished episodes under `curriculum`. `workers`
/// threads share the read-only snapshot; the batch does not depend on it.
pub fn collect<F: Scalar>(
    params: &PolicyParams<F>,
    pool: &mut EnvPool,
    steps_per_env: usize,
    curriculum: &CurriculumState,
    workers: usize,
) -> Result<RolloutBatch> {
    let master = pool.master_seed;
    let axes = pool.axes.clone();
    let run = |slots: &mut [EnvSlot]| -> Result<Vec<EnvRollout>> {
        slots
            .par_iter_mut()
            .map(|slot| step_slot(slot, params, steps_per_env, curriculum, master, &axes))
            .collect()
    };
    let envs = if workers <= 1 {
        pool.slots
            .iter_mut()
            .map(|slot| step_slot(slot, params, steps_per_env, curriculum, master, &axes))
            .collect::<Result<Vec<_>>>()?
    } else {
        let threads = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::invalid_config(format!("worker pool: {e}")))?;
        threads.install(|| run(&mut pool.slots))?
    };
    pool.reset_failures += envs.iter().map(|e| e.reset_failures as u64).sum::<u64>();
    Ok(RolloutBatch { envs, steps_per_env })
}

/// How actions are chosen outside training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionMode {
    /// The policy mean.
    Mean,
    /// Gaussian samples from the episode's action stream.
    Sample,
}

/// Runs one episode from a feasible reset of `(master, env_index,
/// first_episode..)` until it ends or `max_steps` is reached. `observer`
/// sees the env after every step together with the raw action.
pub fn run_episode<F: Scalar>(
    params: &PolicyParams<F>,
    cfg: &EnvConfig,
    master: u64,
    env_index: u64,
    first_episode: u64,
    curriculum: &CurriculumState,
    axes: &[Axis],
    mode: ActionMode,
    mut observer: impl FnMut(&BallEnv, &StepResult, &[f64]),
) -> Result<EpisodeSummary> {
    let mut env = BallEnv::unreset(cfg.clone())?;
    let (mut obs, episode, _) = reset_with_rerolls(&mut env, master, env_index, first_episode, curriculum, axes)?;
    let mut rng = EpisodeSeed::new(master, env_index, episode).rng(Purpose::Action);
    let mut total = 0.0;
    loop {
        let (mean, _) = params.forward(&to_input::<F>(&obs))?;
        let action = match mode {
            ActionMode::Mean => mean.iter().map(|m| m.to_real()).collect(),
            ActionMode::Sample => sample_action(&mean, &params.log_std, &mut rng),
        };
        let r = env.step(&action)?;
        total += r.reward.total;
        observer(&env, &r, &action);
        if r.done() {
            return Ok(EpisodeSummary {
                env: env_index,
                episode,
                length: env.steps(),
                total_reward: total,
                verdict: r.verdict,
                truncated: r.truncated,
            });
        }
        obs = r.observation;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curriculum::CurriculumSchedule;
    use crate::nn::NetworkConfig;
    use crate::env::OBS_DIM;

    fn stage0() -> CurriculumState {
        let mut c = CurriculumSchedule::default().at(0);
        c.factor = 0.2;
        c
    }

    fn params() -> PolicyParams<f32> {
        PolicyParams::init(1, OBS_DIM, ACTION_DIM, &NetworkConfig::default())
    }

    const AXES: [Axis; 3] = [Axis::Roll, Axis::Pitch, Axis::Yaw];

    #[test]
    fn one_env_ten_steps() {
        let mut pool = EnvPool::new(&EnvConfig::default(), 3, 1, &stage0(), &AXES).unwrap();
        let b = collect(&params(), &mut pool, 10, &stage0(), 1).unwrap();
        assert_eq!(b.len(), 10);
        assert_eq!(b.num_envs(), 1);
        assert!(b.envs[0].transitions.iter().all(|t| t.observation.len() == OBS_DIM));
    }

    #[test]
    fn worker_count_does_not_change_the_batch() {
        let p = params();
        let run = |workers| {
            let mut pool = EnvPool::new(&EnvConfig::default(), 5, 4, &stage0(), &AXES).unwrap();
            let a = collect(&p, &mut pool, 60, &stage0(), workers).unwrap();
            let b = collect(&p, &mut pool, 60, &stage0(), workers).unwrap();
            (a, b)
        };
        let one = run(1);
        assert_eq!(one, run(2));
        assert_eq!(one, run(4));
    }

    #[test]
    fn episodes_do_not_cross_boundaries() {
        let cfg = EnvConfig { max_episode_steps: 25, ..Default::default() };
        let mut pool = EnvPool::new(&cfg, 6, 2, &stage0(), &AXES).unwrap();
        let b = collect(&params(), &mut pool, 80, &stage0(), 1).unwrap();
        for e in &b.envs {
            let mut len = 0;
            for t in &e.transitions {
                len += 1;
                assert!(len <= 25);
                if t.done {
                    len = 0;
                }
            }
            assert!(e.episodes.iter().all(|ep| ep.length <= 25));
            for w in e.seed_ledger.windows(2) {
                assert!(w[1].0 > w[0].0 && w[1].1 > w[0].1);
            }
        }
        let tb = b.to_train_batch(OBS_DIM, &PpoConfig::default()).unwrap();
        assert_eq!(tb.len(), 160);
    }

    #[test]
    fn random_policy_reward_is_finite_and_reproducible() {
        let run = || {
            let mut pool = EnvPool::new(&EnvConfig::default(), 8, 2, &stage0(), &AXES).unwrap();
            collect(&params(), &mut pool, 100, &stage0(), 1).unwrap().mean_reward()
        };
        let r = run();
        assert!(r.is_finite());
        assert_eq!(r.to_bits(), run().to_bits());
    }

    #[test]
    fn mean_mode_episode_is_deterministic() {
        let p = params();
        let cfg = EnvConfig { max_episode_steps: 200, ..Default::default() };
        let go = || {
            let mut deltas = Vec::new();
            let s = run_episode(&p, &cfg, 2, 0, 0, &stage0(), &AXES, ActionMode::Mean, |env, _, _| deltas.push(env.delta_q()))
                .unwrap();
            (s, deltas)
        };
        assert_eq!(go(), go());
    }
}
