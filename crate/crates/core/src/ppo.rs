//! Clipped-surrogate policy optimization with GAE advantages and Adam.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{PolicyParams, Scalar};
use crate::seeding::substream;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub clip: f64,
    pub learning_rate: f64,
    pub gae_lambda: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub value_weight: f64,
    pub max_grad_norm: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.998,
            clip: 0.2,
            learning_rate: 1e-3,
            gae_lambda: 0.95,
            epochs: 4,
            minibatch_size: 4096,
            value_weight: 0.5,
            max_grad_norm: 1.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::invalid_config(format!("ppo: {m}")));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return err("gamma must be in (0, 1]");
        }
        if !(self.clip > 0.0 && self.clip.is_finite()) {
            return err("clip must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return err("learning_rate must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return err("gae_lambda must be in [0, 1]");
        }
        if self.epochs == 0 || self.minibatch_size == 0 {
            return err("epochs and minibatch_size must be positive");
        }
        if !(self.value_weight >= 0.0) || !(self.max_grad_norm > 0.0) {
            return err("value_weight must be >= 0 and max_grad_norm positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return err("adam betas must be in [0, 1) and eps positive");
        }
        Ok(())
    }
}

/// One environment step under the behavior policy.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub observation: Vec<f64>,
    /// Unsquashed Gaussian sample.
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    /// The episode ended after this step (terminal or truncated).
    pub done: bool,
    /// The episode was cut by the step cap rather than a terminal verdict.
    pub timeout: bool,
    /// Value of the final observation when `timeout`; unused otherwise.
    pub timeout_value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gae {
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

/// Backward GAE recursion over one time-ordered trajectory of a single
/// environment. `bootstrap_value` is the value of the observation after the
/// last transition; it is ignored when that transition ended an episode.
/// Advantages are raw (see [`normalize`]).
pub fn compute_gae(trajectory: &[Transition], bootstrap_value: f64, cfg: &PpoConfig) -> Gae {
    let n = trajectory.len();
    let mut advantages = vec![0.0; n];
    let mut next_value = bootstrap_value;
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let tr = &trajectory[t];
        if tr.done {
            next_value = if tr.timeout { tr.timeout_value } else { 0.0 };
            next_adv = 0.0;
        }
        let delta = tr.reward + cfg.gamma * next_value - tr.value;
        let adv = delta + cfg.gamma * cfg.gae_lambda * next_adv;
        advantages[t] = adv;
        next_adv = adv;
        next_value = tr.value;
    }
    let returns = advantages.iter().zip(trajectory).map(|(a, t)| a + t.value).collect();
    Gae { advantages, returns }
}

/// Shifts and scales to zero mean and unit standard deviation.
pub fn normalize(values: &mut [f64]) {
    if values.is_empty() {
        return;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let scale = 1.0 / (var.sqrt() + 1e-8);
    values.iter_mut().for_each(|v| *v = (*v - mean) * scale);
}

/// Log density of a diagonal Gaussian.
pub fn gaussian_log_prob<F: Scalar>(action: &[f64], mean: &[F], log_std: &[F]) -> f64 {
    action
        .iter()
        .zip(mean)
        .zip(log_std)
        .map(|((a, m), s)| {
            let s = s.to_real();
            let z = (a - m.to_real()) * (-s).exp();
            -0.5 * z * z - s - 0.5 * LN_2PI
        })
        .sum()
}

/// Flattened training samples with advantages and return targets.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainBatch {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub observations: Vec<f64>,
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl TrainBatch {
    pub fn new(obs_dim: usize, action_dim: usize) -> Self {
        Self { obs_dim, action_dim, ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }

    /// Appends one trajectory with its GAE results.
    pub fn extend(&mut self, trajectory: &[Transition], gae: &Gae) -> Result<()> {
        for (t, tr) in trajectory.iter().enumerate() {
            if tr.observation.len() != self.obs_dim {
                return Err(Error::shape(self.obs_dim, tr.observation.len()));
            }
            if tr.action.len() != self.action_dim {
                return Err(Error::shape(self.action_dim, tr.action.len()));
            }
            self.observations.extend_from_slice(&tr.observation);
            self.actions.extend_from_slice(&tr.action);
            self.log_probs.push(tr.log_prob);
            self.advantages.push(gae.advantages[t]);
            self.returns.push(gae.returns[t]);
        }
        Ok(())
    }

    pub fn select(&self, indices: &[usize]) -> TrainBatch {
        let mut out = TrainBatch::new(self.obs_dim, self.action_dim);
        for &i in indices {
            out.observations.extend_from_slice(&self.observations[i * self.obs_dim..(i + 1) * self.obs_dim]);
            out.actions.extend_from_slice(&self.actions[i * self.action_dim..(i + 1) * self.action_dim]);
            out.log_probs.push(self.log_probs[i]);
            out.advantages.push(self.advantages[i]);
            out.returns.push(self.returns[i]);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub clip_fraction: f64,
    /// Mean of `(r - 1) - ln r`, non-negative per sample.
    pub approx_kl: f64,
}

/// Clipped surrogate plus weighted value loss on a minibatch, and its
/// gradient with respect to every parameter.
pub fn ppo_loss_and_grad<F: Scalar>(
    params: &PolicyParams<F>,
    batch: &TrainBatch,
    cfg: &PpoConfig,
) -> Result<(LossStats, PolicyParams<F>)> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::invalid_config("empty minibatch"));
    }
    let ad = batch.action_dim;
    let obs: Vec<F> = batch.observations.iter().map(|v| F::from_real(*v)).collect();
    let cache = params.forward_batch(&obs, n)?;
    let means = cache.means();
    let values = cache.values();
    debug_assert_eq!(means.len(), n * ad);

    let inv_n = 1.0 / n as f64;
    let log_std: Vec<f64> = params.log_std.iter().map(|v| v.to_real()).collect();
    let inv_var: Vec<f64> = log_std.iter().map(|s| (-2.0 * s).exp()).collect();
    let mut d_mean = vec![F::zero(); n * ad];
    let mut d_value = vec![F::zero(); n];
    let mut d_log_std = vec![0.0; ad];
    let mut stats = LossStats::default();
    let mut clipped = 0usize;

    for i in 0..n {
        let a = &batch.actions[i * ad..(i + 1) * ad];
        let mu = &means[i * ad..(i + 1) * ad];
        let lp = gaussian_log_prob(a, mu, &params.log_std);
        let ratio = (lp - batch.log_probs[i]).exp();
        if !ratio.is_finite() {
            return Err(Error::NonFiniteLoss(format!("probability ratio {ratio} at sample {i}")));
        }
        let adv = batch.advantages[i];
        let unclipped = ratio * adv;
        let clipped_ratio = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip);
        let surrogate = unclipped.min(clipped_ratio * adv);
        if clipped_ratio != ratio {
            clipped += 1;
        }
        stats.policy_loss -= surrogate * inv_n;
        stats.approx_kl += ((ratio - 1.0) - ratio.ln()) * inv_n;

        // d(-surrogate)/d(lp), zero when the clipped branch is selected.
        if unclipped <= clipped_ratio * adv {
            let g = -adv * ratio * inv_n;
            for j in 0..ad {
                let diff = a[j] - mu[j].to_real();
                d_mean[i * ad + j] = F::from_real(g * diff * inv_var[j]);
                d_log_std[j] += g * (diff * diff * inv_var[j] - 1.0);
            }
        }

        let err = values[i].to_real() - batch.returns[i];
        stats.value_loss += err * err * inv_n;
        d_value[i] = F::from_real(2.0 * cfg.value_weight * err * inv_n);
    }
    stats.clip_fraction = clipped as f64 * inv_n;
    stats.loss = stats.policy_loss + cfg.value_weight * stats.value_loss;
    if !stats.loss.is_finite() {
        return Err(Error::NonFiniteLoss(format!("loss {}", stats.loss)));
    }
    let d_log_std: Vec<F> = d_log_std.into_iter().map(F::from_real).collect();
    let grad = params.backward(&cache, &d_mean, &d_value, &d_log_std)?;
    Ok((stats, grad))
}

/// Loss statistics only.
pub fn ppo_loss<F: Scalar>(params: &PolicyParams<F>, batch: &TrainBatch, cfg: &PpoConfig) -> Result<LossStats> {
    ppo_loss_and_grad(params, batch, cfg).map(|r| r.0)
}

/// Adam moments, shaped like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<F> {
    pub m: PolicyParams<F>,
    pub v: PolicyParams<F>,
    pub steps: u64,
}

impl<F: Scalar> Adam<F> {
    pub fn new(params: &PolicyParams<F>) -> Self {
        Self { m: params.zeros_like(), v: params.zeros_like(), steps: 0 }
    }

    pub fn step(&mut self, params: &mut PolicyParams<F>, grad: &PolicyParams<F>, cfg: &PpoConfig) {
        self.steps += 1;
        let t = self.steps as i32;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let step_size = cfg.learning_rate * (1.0 - b2.powi(t)).sqrt() / (1.0 - b1.powi(t));
        let (fb1, fb2) = (F::from_real(b1), F::from_real(b2));
        let (fs, feps) = (F::from_real(step_size), F::from_real(cfg.adam_eps));
        let grads = grad.tensors();
        for (((p, m), v), g) in params
            .tensors_mut()
            .into_iter()
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
            .zip(grads.iter().map(|t| t.2))
        {
            for k in 0..p.len() {
                m[k] = fb1 * m[k] + (F::one() - fb1) * g[k];
                v[k] = fb2 * v[k] + (F::one() - fb2) * g[k] * g[k];
                p[k] = p[k] - fs * m[k] / (v[k].sqrt() + feps);
            }
        }
    }
}

/// Scales `grad` so its global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm<F: Scalar>(grad: &mut PolicyParams<F>, max_norm: f64) -> f64 {
    let norm = grad.norm_squared().sqrt();
    if norm > max_norm {
        let s = F::from_real(max_norm / norm);
        for t in grad.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub grad_norm: f64,
    pub minibatches: usize,
    pub skipped: usize,
}

/// Splits `n` samples into `ceil(n / size)` nearly equal minibatches.
pub fn minibatch_bounds(n: usize, size: usize) -> Vec<(usize, usize)> {
    let k = n.div_ceil(size).max(1);
    (0..k).map(|j| (j * n / k, (j + 1) * n / k)).collect()
}

/// Runs `epochs` passes of shuffled minibatch Adam steps. The advantages in
/// `batch` are normalized here. `shuffle_seed` selects the permutation
/// stream. Minibatches with a non-finite loss or gradient are skipped and
/// counted.
pub fn update<F: Scalar>(
    params: &mut PolicyParams<F>,
    adam: &mut Adam<F>,
    batch: &TrainBatch,
    cfg: &PpoConfig,
    shuffle_seed: u64,
) -> Result<UpdateStats> {
    if batch.is_empty() {
        return Err(Error::invalid_config("empty training batch"));
    }
    let mut batch = batch.clone();
    normalize(&mut batch.advantages);
    let mut rng = substream(shuffle_seed, &[0x7368_7566]);
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut stats = UpdateStats::default();
    let mut counted = 0usize;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (lo, hi) in minibatch_bounds(order.len(), cfg.minibatch_size) {
            let mb = batch.select(&order[lo..hi]);
            stats.minibatches += 1;
            match ppo_loss_and_grad(params, &mb, cfg) {
                Ok((s, mut grad)) => {
                    let norm = clip_grad_norm(&mut grad, cfg.max_grad_norm);
                    adam.step(params, &grad, cfg);
                    stats.loss += s.loss;
                    stats.policy_loss += s.policy_loss;
                    stats.value_loss += s.value_loss;
                    stats.clip_fraction += s.clip_fraction;
                    stats.approx_kl += s.approx_kl;
                    stats.grad_norm += norm;
                    counted += 1;
                }
                Err(Error::NonFiniteGradient(m) | Error::NonFiniteLoss(m)) => {
                    log::warn!("skipping minibatch: {m}");
                    stats.skipped += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
    if counted > 0 {
        let c = counted as f64;
        stats.loss /= c;
        stats.policy_loss /= c;
        stats.value_loss /= c;
        stats.clip_fraction /= c;
        stats.approx_kl /= c;
        stats.grad_norm /= c;
    }
    Ok(stats)
}

/// One-step bandit: a single constant observation, a scalar Gaussian action
/// and reward `-(a - c)^2`. Used to check that the optimizer learns.
pub mod toy {
    use rand::Rng;
    use rand_distr::StandardNormal;

    use super::*;
    use crate::nn::NetworkConfig;

    pub struct ToyProblem {
        pub target: f64,
        pub samples_per_update: usize,
        pub network: NetworkConfig,
        pub ppo: PpoConfig,
    }

    impl Default for ToyProblem {
        fn default() -> Self {
            Self {
                target: 1.0,
                samples_per_update: 256,
                network: NetworkConfig { hidden: vec![16, 16], init_std: 0.3, policy_output_gain: 0.01 },
                ppo: PpoConfig { minibatch_size: 64, ..Default::default() },
            }
        }
    }

    impl ToyProblem {
        /// Best achievable expected reward is 0 (zero variance at the target).
        pub const OPTIMUM: f64 = 0.0;

        /// Mean sampled reward of each of `updates` iterations.
        pub fn train(&self, seed: u64, updates: usize) -> Result<Vec<f64>> {
            let mut params = PolicyParams::<f64>::init(seed, 1, 1, &self.network);
            let mut adam = Adam::new(&params);
            let mut rng = substream(seed, &[0x746f_79]);
            let obs = [1.0];
            let mut history = Vec::with_capacity(updates);
            for it in 0..updates {
                let (mean, value) = params.forward(&obs)?;
                let std = params.log_std[0].exp();
                let mut trajectory = Vec::with_capacity(self.samples_per_update);
                for _ in 0..self.samples_per_update {
                    let z: f64 = rng.sample(StandardNormal);
                    let a = mean[0] + std * z;
                    trajectory.push(Transition {
                        observation: obs.to_vec(),
                        action: vec![a],
                        log_prob: gaussian_log_prob(&[a], &mean, &params.log_std),
                        reward: -(a - self.target).powi(2),
                        value,
                        done: true,
                        timeout: false,
                        timeout_value: 0.0,
                    });
                }
                history.push(trajectory.iter().map(|t| t.reward).sum::<f64>() / trajectory.len() as f64);
                let gae = compute_gae(&trajectory, 0.0, &self.ppo);
                let mut batch = TrainBatch::new(1, 1);
                batch.extend(&trajectory, &gae)?;
                update(&mut params, &mut adam, &batch, &self.ppo, seed.wrapping_add(it as u64))?;
            }
            Ok(history)
        }
    }
}
