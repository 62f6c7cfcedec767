//! Domain randomization and external disturbances.
//!
//! Every additive noise is zero-mean Gaussian whose standard deviation is the
//! configured value times the curriculum factor. Uniform ranges shrink
//! linearly toward their midpoints as the factor goes to zero.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::ObservationFrame;
use crate::error::{Error, Result};
use crate::physics::{JointVector, PhysicsConfig, SceneModel, NUM_JOINTS, NUM_LEGS};
use crate::rotation::{quat_compose, UnitQuaternion};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RandomizationConfig {
    /// m, shank length and knee position.
    pub shank_noise_std: f64,
    /// rad
    pub joint_pos_noise_std: f64,
    /// rad/s
    pub joint_vel_noise_std: f64,
    /// Relative half-width of the uniform ball mass perturbation.
    pub ball_mass_rel: f64,
    pub ball_radius_rel: f64,
    pub friction_range: [f64; 2],
    pub restitution_range: [f64; 2],
    /// m
    pub ball_pos_noise_std: f64,
    /// rad per axis
    pub ball_ori_noise_std: f64,
    /// Half-widths of the uniform initial-state perturbations.
    pub init_joint_range: f64,
    pub init_base_xy_range: f64,
    pub init_base_yaw_range: f64,
    pub init_ball_xy_range: f64,
    /// Half-width of the initial ball rotation angle, rad.
    pub init_ball_angle_range: f64,
}

impl Default for RandomizationConfig {
    fn default() -> Self {
        Self {
            shank_noise_std: 0.03,
            joint_pos_noise_std: 0.05,
            joint_vel_noise_std: 0.3,
            ball_mass_rel: 0.05,
            ball_radius_rel: 0.10,
            friction_range: [0.5, 1.1],
            restitution_range: [0.9, 1.0],
            ball_pos_noise_std: 0.04,
            ball_ori_noise_std: 0.03,
            init_joint_range: 0.05,
            init_base_xy_range: 0.05,
            init_base_yaw_range: 0.1,
            init_ball_xy_range: 0.03,
            init_ball_angle_range: std::f64::consts::PI,
        }
    }
}

impl RandomizationConfig {
    pub fn validate(&self) -> Result<()> {
        let stds = [
            ("shank_noise_std", self.shank_noise_std),
            ("joint_pos_noise_std", self.joint_pos_noise_std),
            ("joint_vel_noise_std", self.joint_vel_noise_std),
            ("ball_pos_noise_std", self.ball_pos_noise_std),
            ("ball_ori_noise_std", self.ball_ori_noise_std),
            ("init_joint_range", self.init_joint_range),
            ("init_base_xy_range", self.init_base_xy_range),
            ("init_base_yaw_range", self.init_base_yaw_range),
            ("init_ball_xy_range", self.init_ball_xy_range),
            ("init_ball_angle_range", self.init_ball_angle_range),
        ];
        for (name, v) in stds {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid_config(format!("randomization.{name} must be >= 0, got {v}")));
            }
        }
        for (name, v) in [("ball_mass_rel", self.ball_mass_rel), ("ball_radius_rel", self.ball_radius_rel)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::invalid_config(format!("randomization.{name} must be in [0, 1), got {v}")));
            }
        }
        let [f0, f1] = self.friction_range;
        if !(0.0 <= f0 && f0 <= f1 && f1 <= 2.0) {
            return Err(Error::invalid_config("randomization.friction_range must satisfy 0 <= lo <= hi <= 2"));
        }
        let [e0, e1] = self.restitution_range;
        if !(0.0 <= e0 && e0 <= e1 && e1 <= 1.0) {
            return Err(Error::invalid_config("randomization.restitution_range must satisfy 0 <= lo <= hi <= 1"));
        }
        Ok(())
    }
}

/// Per-episode model perturbations and initial-state offsets.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomizationSample {
    pub shank_length_delta: [f64; NUM_LEGS],
    pub shank_offset: [Vector3<f64>; NUM_LEGS],
    pub ball_mass: f64,
    pub ball_radius: f64,
    pub friction: f64,
    pub restitution: f64,
    pub init_joint_delta: JointVector,
    pub init_base_xy: [f64; 2],
    pub init_base_yaw: f64,
    pub init_ball_xy: [f64; 2],
    pub init_ball_rotation: UnitQuaternion,
}

impl RandomizationSample {
    pub fn scene_model(&self, physics: &PhysicsConfig) -> SceneModel {
        let mut model = SceneModel::nominal(physics.clone());
        model.ball_mass = self.ball_mass;
        model.ball_radius = self.ball_radius;
        model.ball_friction = self.friction;
        model.ball_restitution = self.restitution;
        for i in 0..NUM_LEGS {
            // Keep a usable shank under extreme draws.
            model.shank_lengths[i] = (physics.shank_length + self.shank_length_delta[i]).max(0.25 * physics.shank_length);
            model.shank_offsets[i] = self.shank_offset[i];
        }
        model
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, std: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    z * std
}

/// Uniform in `[-half, half]`.
fn symmetric<R: Rng + ?Sized>(rng: &mut R, half: f64) -> f64 {
    half * (2.0 * rng.random::<f64>() - 1.0)
}

/// Draw from `[lo, hi]` shrunk toward its midpoint by `factor`.
fn shrunk_uniform<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: [f64; 2], factor: f64) -> f64 {
    let mid = 0.5 * (lo + hi);
    let u: f64 = rng.random();
    (mid + factor * (lo + (hi - lo) * u - mid)).clamp(lo, hi)
}

fn check_factor(factor: f64) {
    debug_assert!((0.0..=1.0).contains(&factor), "curriculum factor {factor} outside [0, 1]");
}

/// Samples one episode's model and initial-state perturbations. Every draw is
/// made regardless of `factor`, so a given stream yields the same sequence.
pub fn sample_domain<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &RandomizationConfig,
    physics: &PhysicsConfig,
    factor: f64,
) -> RandomizationSample {
    check_factor(factor);
    let std = factor * cfg.shank_noise_std;
    let mut shank_length_delta = [0.0; NUM_LEGS];
    let mut shank_offset = [Vector3::zeros(); NUM_LEGS];
    for i in 0..NUM_LEGS {
        shank_length_delta[i] = gaussian(rng, std);
        shank_offset[i] = Vector3::new(gaussian(rng, std), gaussian(rng, std), gaussian(rng, std));
    }
    let mass_scale = 1.0 + factor * symmetric(rng, cfg.ball_mass_rel);
    let radius_scale = 1.0 + factor * symmetric(rng, cfg.ball_radius_rel);
    let friction = shrunk_uniform(rng, cfg.friction_range, factor);
    let restitution = shrunk_uniform(rng, cfg.restitution_range, factor);

    let mut init_joint_delta = JointVector::zeros();
    for i in 0..NUM_JOINTS {
        init_joint_delta[i] = factor * symmetric(rng, cfg.init_joint_range);
    }
    let init_base_xy = [factor * symmetric(rng, cfg.init_base_xy_range), factor * symmetric(rng, cfg.init_base_xy_range)];
    let init_base_yaw = factor * symmetric(rng, cfg.init_base_yaw_range);
    let init_ball_xy = [factor * symmetric(rng, cfg.init_ball_xy_range), factor * symmetric(rng, cfg.init_ball_xy_range)];
    let axis = Vector3::new(gaussian(rng, 1.0), gaussian(rng, 1.0), gaussian(rng, 1.0));
    let angle = factor * symmetric(rng, cfg.init_ball_angle_range);
    let init_ball_rotation = UnitQuaternion::from_axis_angle(&axis, angle);

    RandomizationSample {
        shank_length_delta,
        shank_offset,
        ball_mass: physics.ball_mass * mass_scale,
        ball_radius: physics.ball_radius * radius_scale,
        friction,
        restitution,
        init_joint_delta,
        init_base_xy,
        init_base_yaw,
        init_ball_xy,
        init_ball_rotation,
    }
}

/// Measurement noise on one observation frame. The previous action is left
/// untouched and the orientation noise is a small random rotation.
pub fn perturb_observation<R: Rng + ?Sized>(
    frame: &ObservationFrame,
    rng: &mut R,
    cfg: &RandomizationConfig,
    factor: f64,
) -> ObservationFrame {
    check_factor(factor);
    let mut out = frame.clone();
    let pos_std = factor * cfg.joint_pos_noise_std;
    let vel_std = factor * cfg.joint_vel_noise_std;
    for i in 0..NUM_JOINTS {
        out.joints_pos[i] += gaussian(rng, pos_std);
        out.joints_vel[i] += gaussian(rng, vel_std);
    }
    let ball_std = factor * cfg.ball_pos_noise_std;
    for k in 0..3 {
        out.ball_pos_in_base[k] += gaussian(rng, ball_std);
    }
    let ori_std = factor * cfg.ball_ori_noise_std;
    let rotvec = Vector3::new(gaussian(rng, ori_std), gaussian(rng, ori_std), gaussian(rng, ori_std));
    if factor > 0.0 {
        out.quat_diff = quat_compose(&frame.quat_diff, &UnitQuaternion::exp(&rotvec));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DisturbanceConfig {
    /// N
    pub magnitude: f64,
    /// s
    pub duration: f64,
    /// Activation probability per decision window.
    pub probability: f64,
    /// s
    pub window: f64,
}

impl Default for DisturbanceConfig {
    fn default() -> Self {
        Self { magnitude: 50.0, duration: 0.4, probability: 0.2, window: 1.0 }
    }
}

impl DisturbanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.magnitude >= 0.0 && self.magnitude.is_finite()) {
            return Err(Error::invalid_config("disturbance.magnitude must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::invalid_config("disturbance.probability must be in [0, 1]"));
        }
        if !(self.duration > 0.0 && self.window >= self.duration) {
            return Err(Error::invalid_config("disturbance requires 0 < duration <= window"));
        }
        Ok(())
    }
}

/// Stateful disturbance generator for one episode, stepped on the control
/// grid. At each window start a Bernoulli draw decides whether a push begins
/// somewhere inside that window; the push keeps a fixed random direction and
/// ends before the window does.
#[derive(Clone, Debug)]
pub struct DisturbanceSchedule<R> {
    rng: R,
    magnitude: f64,
    probability: f64,
    window_steps: u64,
    duration_steps: u64,
    control_dt: f64,
    next_step: u64,
    active: Option<(u64, Vector3<f64>)>,
    activations: u64,
}

impl<R: Rng> DisturbanceSchedule<R> {
    pub fn new(rng: R, cfg: &DisturbanceConfig, control_dt: f64) -> Self {
        let window_steps = ((cfg.window / control_dt).round() as u64).max(1);
        let duration_steps = ((cfg.duration / control_dt).round() as u64).clamp(1, window_steps);
        Self {
            rng,
            magnitude: cfg.magnitude,
            probability: cfg.probability,
            window_steps,
            duration_steps,
            control_dt,
            next_step: 0,
            active: None,
            activations: 0,
        }
    }

    /// Force for control step `step`; steps must be visited in order.
    pub fn force_at_step(&mut self, step: u64) -> Vector3<f64> {
        debug_assert!(step + 1 >= self.next_step, "disturbance queried out of order");
        while self.next_step <= step {
            let k = self.next_step;
            if k % self.window_steps == 0 {
                // The draws happen even with probability zero so the stream
                // position does not depend on the configuration.
                let fire = self.rng.random::<f64>() < self.probability;
                let slack = self.window_steps - self.duration_steps;
                let offset = self.rng.random_range(0..=slack);
                let dir = random_unit_vector(&mut self.rng);
                if fire && self.magnitude > 0.0 {
                    self.active = Some((k + offset, dir));
                    self.activations += 1;
                }
            }
            self.next_step += 1;
        }
        match self.active {
            Some((start, dir)) if step >= start && step < start + self.duration_steps => dir * self.magnitude,
            _ => Vector3::zeros(),
        }
    }

    /// Force at simulation time `t` (s), snapped to the control grid.
    pub fn force(&mut self, t: f64) -> Vector3<f64> {
        let step = (t / self.control_dt).round().max(0.0) as u64;
        self.force_at_step(step)
    }

    pub fn activations(&self) -> u64 {
        self.activations
    }

    pub fn duration_steps(&self) -> u64 {
        self.duration_steps
    }
}

pub fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    loop {
        let v = Vector3::new(n.sample(rng), n.sample(rng), n.sample(rng));
        let len = v.norm();
        if len > 1e-9 {
            return v / len;
        }
    }
}
