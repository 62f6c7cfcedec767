//! The ball-rotation MDP: action mapping, observation history, reward,
//! early termination and the episode lifecycle.

mod observation;
mod reward;
mod termination;

pub use observation::{build_observation, Observation, ObservationFrame, ACTION_DIM, FRAME_DIM, HISTORY_LEN, OBS_DIM};
pub use reward::{compute_reward, orientation_reward, RewardBreakdown, RewardCoefficients};
pub use termination::{check_termination, TerminationConfig, Verdict};

use nalgebra::Vector3;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::curriculum::{sample_command, Axis, CurriculumState};
use crate::error::{Error, Result};
use crate::physics::{self, detect_contacts, BallState, ContactPoint, JointVector, Leg, PhysicsConfig, RobotState, SceneModel, NUM_JOINTS};
use crate::randomize::{perturb_observation, sample_domain, DisturbanceConfig, DisturbanceSchedule, RandomizationConfig};
use crate::rotation::{propagate_target, quat_angle, quat_difference, AngularVelocityCommand, UnitQuaternion};
use crate::seeding::{EpisodeSeed, Purpose};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub physics: PhysicsConfig,
    pub randomization: RandomizationConfig,
    pub disturbance: DisturbanceConfig,
    pub rewards: RewardCoefficients,
    pub termination: TerminationConfig,
    /// Target swing about the nominal pose at a saturated action, rad, per
    /// `[haa, hfe, kfe]`.
    pub action_scale: [f64; 3],
    pub max_episode_steps: u32,
    pub settle_min_steps: u32,
    pub settle_max_steps: u32,
    /// m/s; settle ends once the ball has been slower than this, and on the
    /// feet, for `settle_quiet_steps` consecutive steps.
    pub settle_ball_speed: f64,
    pub settle_quiet_steps: u32,
    /// Ball clearance above the highest foot at placement, m.
    pub drop_clearance: f64,
    /// Push forces on the ball. The activation probability is scaled by the
    /// curriculum factor.
    pub disturbances: bool,
    /// Advance the target from the measured ball orientation instead of the
    /// previous target.
    pub target_from_measured: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            physics: PhysicsConfig::default(),
            randomization: RandomizationConfig::default(),
            disturbance: DisturbanceConfig::default(),
            rewards: RewardCoefficients::default(),
            termination: TerminationConfig::default(),
            action_scale: [0.5, 0.8, 0.8],
            max_episode_steps: 1000,
            settle_min_steps: 20,
            settle_max_steps: 200,
            settle_ball_speed: 0.02,
            settle_quiet_steps: 10,
            drop_clearance: 0.002,
            disturbances: true,
            target_from_measured: false,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.physics.validate()?;
        self.randomization.validate()?;
        self.disturbance.validate()?;
        self.rewards.validate()?;
        self.termination.validate()?;
        if self.action_scale.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::invalid_config("env.action_scale entries must be >= 0"));
        }
        if self.max_episode_steps == 0 {
            return Err(Error::invalid_config("env.max_episode_steps must be positive"));
        }
        if self.settle_min_steps > self.settle_max_steps {
            return Err(Error::invalid_config("env.settle_min_steps must not exceed settle_max_steps"));
        }
        if !(self.settle_ball_speed > 0.0) || !(self.drop_clearance >= 0.0) {
            return Err(Error::invalid_config("env.settle_ball_speed must be positive and drop_clearance >= 0"));
        }
        Ok(())
    }

    /// Joint targets for a raw policy output: `nominal + scale * tanh(a)`,
    /// clamped to the joint limits. Also returns the bounded action.
    pub fn map_action(&self, raw: &[f64]) -> (JointVector, JointVector) {
        debug_assert_eq!(raw.len(), NUM_JOINTS);
        let nominal = self.physics.nominal_pose();
        let limits = self.physics.limit_vector();
        let mut squashed = JointVector::zeros();
        let mut targets = JointVector::zeros();
        for i in 0..NUM_JOINTS {
            squashed[i] = raw[i].tanh();
            let t = nominal[i] + self.action_scale[i % 3] * squashed[i];
            targets[i] = t.clamp(-limits[i], limits[i]);
        }
        (targets, squashed)
    }
}

#[derive(Clone, Debug)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: RewardBreakdown,
    pub verdict: Verdict,
    /// Episode reached `max_episode_steps` without a terminal verdict.
    pub truncated: bool,
    /// Geodesic distance between ball and target after the step, rad.
    pub delta_q: f64,
    pub foot_contacts: usize,
    pub disturbance: Vector3<f64>,
}

impl StepResult {
    pub fn done(&self) -> bool {
        self.verdict.is_terminal() || self.truncated
    }
}

/// One environment instance. Not shared between threads.
#[derive(Clone, Debug)]
pub struct BallEnv {
    cfg: EnvConfig,
    model: SceneModel,
    robot: RobotState,
    ball: BallState,
    target: UnitQuaternion,
    command: AngularVelocityCommand,
    period_steps: u32,
    counter: u32,
    steps: u32,
    no_contact_steps: u32,
    rest_position: Vector3<f64>,
    history: [ObservationFrame; HISTORY_LEN],
    prev_action: JointVector,
    factor: f64,
    obs_rng: ChaCha8Rng,
    disturbance: DisturbanceSchedule<ChaCha8Rng>,
    contacts: Vec<ContactPoint>,
    torques: JointVector,
}

fn frame_of(robot: &RobotState, ball: &BallState, target: &UnitQuaternion, prev_action: &JointVector) -> ObservationFrame {
    ObservationFrame {
        joints_pos: robot.joints_pos.clone(),
        joints_vel: robot.joints_vel.clone(),
        ball_pos_in_base: robot.world_to_base(&ball.position),
        quat_diff: quat_difference(&ball.orientation, target),
        prev_action: prev_action.clone(),
    }
}

fn foot_ball_count(contacts: &[ContactPoint]) -> usize {
    contacts.iter().filter(|c| c.is_foot_ball()).count()
}

impl BallEnv {
    /// Resets into a new episode. The command axis is drawn in the base frame
    /// from `axes` and expressed in the world frame.
    pub fn new(cfg: EnvConfig, seed: EpisodeSeed, curriculum: &CurriculumState, axes: &[Axis]) -> Result<(Self, Observation)> {
        cfg.validate()?;
        let mut env = Self::placeholder(cfg);
        let obs = env.reset(seed, curriculum, axes)?;
        Ok((env, obs))
    }

    /// A validated env that must be reset before stepping.
    pub fn unreset(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self::placeholder(cfg))
    }

    fn placeholder(cfg: EnvConfig) -> Self {
        let model = SceneModel::nominal(cfg.physics.clone());
        let robot = RobotState {
            base_position: Vector3::zeros(),
            base_orientation: UnitQuaternion::identity(),
            base_lin_vel: Vector3::zeros(),
            base_ang_vel: Vector3::zeros(),
            joints_pos: JointVector::zeros(),
            joints_vel: JointVector::zeros(),
        };
        let ball = BallState::at_rest(Vector3::zeros(), model.ball_mass, model.ball_radius);
        let frame = frame_of(&robot, &ball, &UnitQuaternion::identity(), &JointVector::zeros());
        let seed = EpisodeSeed::new(0, 0, 0);
        let disturbance = DisturbanceSchedule::new(seed.rng(Purpose::Disturbance), &cfg.disturbance, cfg.physics.control_dt);
        Self {
            model,
            robot,
            ball,
            target: UnitQuaternion::identity(),
            command: AngularVelocityCommand::zero(crate::rotation::UpdatePeriod::OneSecond),
            period_steps: 1,
            counter: 0,
            steps: 0,
            no_contact_steps: 0,
            rest_position: Vector3::zeros(),
            history: [frame.clone(), frame.clone(), frame],
            prev_action: JointVector::zeros(),
            factor: 0.0,
            obs_rng: seed.rng(Purpose::Observation),
            disturbance,
            contacts: Vec::new(),
            torques: JointVector::zeros(),
            cfg,
        }
    }

    /// Samples a domain, places the robot supine and drops the ball onto the
    /// feet, then settles while holding the initial pose. A terminal verdict
    /// during settling gives `ResetFailed`; the caller re-rolls.
    pub fn reset(&mut self, seed: EpisodeSeed, curriculum: &CurriculumState, axes: &[Axis]) -> Result<Observation> {
        let cfg = &self.cfg;
        let factor = curriculum.factor;
        let sample = sample_domain(&mut seed.rng(Purpose::Domain), &cfg.randomization, &cfg.physics, factor);
        let model = sample.scene_model(&cfg.physics);

        let initial_pose = {
            let nominal = cfg.physics.nominal_pose();
            let limits = cfg.physics.limit_vector();
            let mut q = JointVector::zeros();
            for i in 0..NUM_JOINTS {
                q[i] = (nominal[i] + sample.init_joint_delta[i]).clamp(-limits[i], limits[i]);
            }
            q
        };
        let supine = UnitQuaternion::from_axis_angle(&Vector3::x(), std::f64::consts::PI);
        let yaw = UnitQuaternion::from_axis_angle(&Vector3::z(), sample.init_base_yaw);
        let mut robot = RobotState {
            base_position: Vector3::new(sample.init_base_xy[0], sample.init_base_xy[1], cfg.physics.base_half_extents[2]),
            base_orientation: yaw * supine,
            base_lin_vel: Vector3::zeros(),
            base_ang_vel: Vector3::zeros(),
            joints_pos: initial_pose.clone(),
            joints_vel: JointVector::zeros(),
        };

        let feet = physics::forward_kinematics(&model, &robot.joints_pos, &robot);
        let centroid = feet.iter().fold(Vector3::zeros(), |acc, f| acc + f) / feet.len() as f64;
        let cx = centroid.x + sample.init_ball_xy[0];
        let cy = centroid.y + sample.init_ball_xy[1];
        let reach = model.ball_radius + cfg.physics.foot_radius;
        let z = feet
            .iter()
            .map(|f| {
                let d2 = (f.x - cx).powi(2) + (f.y - cy).powi(2);
                f.z + (reach * reach - d2).max(0.0).sqrt()
            })
            .fold(f64::NEG_INFINITY, f64::max);
        let mut ball = BallState::at_rest(Vector3::new(cx, cy, z + cfg.drop_clearance), model.ball_mass, model.ball_radius);
        ball.orientation = sample.init_ball_rotation;

        let drop_position = ball.position;
        let dt = cfg.physics.control_dt;
        let mut contacts = Vec::new();
        let mut torques = JointVector::zeros();
        let mut no_contact_steps = 0u32;
        let mut quiet = 0u32;
        let mut settled = false;
        for k in 0..cfg.settle_max_steps {
            let out = physics::step(&model, &robot, &ball, &initial_pose, &Vector3::zeros(), dt)
                .map_err(|e| Error::ResetFailed(format!("settle step {k}: {e}")))?;
            robot = out.robot;
            ball = out.ball;
            contacts = out.contacts;
            torques = out.torques;
            no_contact_steps = if foot_ball_count(&contacts) > 0 { 0 } else { no_contact_steps + 1 };
            let verdict = check_termination(&ball, &contacts, &drop_position, no_contact_steps as f64 * dt, &cfg.termination);
            if verdict.is_terminal() {
                return Err(Error::ResetFailed(format!("settle step {k}: {verdict}")));
            }
            quiet = if no_contact_steps == 0 && ball.lin_vel.norm() < cfg.settle_ball_speed { quiet + 1 } else { 0 };
            if k + 1 >= cfg.settle_min_steps && quiet >= cfg.settle_quiet_steps {
                settled = true;
                break;
            }
        }
        if !settled {
            return Err(Error::ResetFailed("ball did not come to rest on the feet".into()));
        }

        let command = sample_command(curriculum, &mut seed.rng(Purpose::Command), axes).rotated(&robot.base_orientation);
        let disturbance_cfg = DisturbanceConfig {
            probability: if cfg.disturbances { cfg.disturbance.probability * factor } else { 0.0 },
            ..cfg.disturbance.clone()
        };

        self.period_steps = command.period().steps(dt);
        self.command = command;
        self.target = ball.orientation;
        self.rest_position = ball.position;
        self.counter = 0;
        self.steps = 0;
        self.no_contact_steps = 0;
        self.prev_action = JointVector::zeros();
        self.factor = factor;
        self.obs_rng = seed.rng(Purpose::Observation);
        self.disturbance = DisturbanceSchedule::new(seed.rng(Purpose::Disturbance), &disturbance_cfg, dt);
        self.model = model;
        self.robot = robot;
        self.ball = ball;
        self.contacts = contacts;
        self.torques = torques;

        let frame = self.measured_frame();
        self.history = [frame.clone(), frame.clone(), frame];
        Ok(self.observation())
    }

    fn measured_frame(&mut self) -> ObservationFrame {
        let clean = frame_of(&self.robot, &self.ball, &self.target, &self.prev_action);
        perturb_observation(&clean, &mut self.obs_rng, &self.cfg.randomization, self.factor)
    }

    /// Current observation assembled from the stored history.
    pub fn observation(&self) -> Observation {
        build_observation(&self.history, self.t_remain())
    }

    /// Time to the next target update, as a fraction of the period.
    pub fn t_remain(&self) -> f64 {
        (self.period_steps - self.counter) as f64 / self.period_steps as f64
    }

    /// Applies the policy output for one control step with the scheduled
    /// disturbance.
    pub fn step(&mut self, raw_action: &[f64]) -> Result<StepResult> {
        let force = self.disturbance.force_at_step(self.steps as u64);
        self.step_with_force(raw_action, force)
    }

    /// One control step with an explicit push on the ball instead of the
    /// scheduled one.
    pub fn step_with_force(&mut self, raw_action: &[f64], disturbance: Vector3<f64>) -> Result<StepResult> {
        if raw_action.len() != ACTION_DIM {
            return Err(Error::shape(ACTION_DIM, raw_action.len()));
        }
        if raw_action.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFiniteState("action".into()));
        }
        let (targets, squashed) = self.cfg.map_action(raw_action);
        let dt = self.cfg.physics.control_dt;
        self.steps += 1;
        let out = match physics::step(&self.model, &self.robot, &self.ball, &targets, &disturbance, dt) {
            Ok(out) => out,
            Err(Error::NonFiniteState(_)) => {
                return Ok(StepResult {
                    observation: self.observation(),
                    reward: RewardBreakdown::default(),
                    verdict: Verdict::NonFinite,
                    truncated: false,
                    delta_q: self.delta_q(),
                    foot_contacts: 0,
                    disturbance,
                });
            }
            Err(e) => return Err(e),
        };
        self.robot = out.robot;
        self.ball = out.ball;
        self.contacts = out.contacts;
        self.torques = out.torques;
        self.prev_action = squashed;

        let foot_contacts = foot_ball_count(&self.contacts);
        self.no_contact_steps = if foot_contacts > 0 { 0 } else { self.no_contact_steps + 1 };
        let reward = compute_reward(&self.robot, &self.ball, &self.torques, &self.contacts, &self.target, &self.cfg.rewards);
        let verdict = check_termination(
            &self.ball,
            &self.contacts,
            &self.rest_position,
            self.no_contact_time(),
            &self.cfg.termination,
        );

        self.counter += 1;
        if self.counter >= self.period_steps {
            let base = if self.cfg.target_from_measured { self.ball.orientation } else { self.target };
            self.target = propagate_target(&base, &self.command);
            self.counter = 0;
        }

        let frame = self.measured_frame();
        self.history.rotate_right(1);
        self.history[0] = frame;
        let truncated = !verdict.is_terminal() && self.steps >= self.cfg.max_episode_steps;
        Ok(StepResult {
            observation: self.observation(),
            reward,
            verdict,
            truncated,
            delta_q: self.delta_q(),
            foot_contacts,
            disturbance,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn model(&self) -> &SceneModel {
        &self.model
    }

    pub fn robot(&self) -> &RobotState {
        &self.robot
    }

    pub fn ball(&self) -> &BallState {
        &self.ball
    }

    pub fn target(&self) -> &UnitQuaternion {
        &self.target
    }

    /// World-frame command of the running episode.
    pub fn command(&self) -> &AngularVelocityCommand {
        &self.command
    }

    pub fn contacts(&self) -> &[ContactPoint] {
        &self.contacts
    }

    pub fn torques(&self) -> &JointVector {
        &self.torques
    }

    pub fn rest_position(&self) -> &Vector3<f64> {
        &self.rest_position
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    pub fn period_steps(&self) -> u32 {
        self.period_steps
    }

    pub fn no_contact_time(&self) -> f64 {
        self.no_contact_steps as f64 * self.cfg.physics.control_dt
    }

    pub fn delta_q(&self) -> f64 {
        quat_angle(&quat_difference(&self.ball.orientation, &self.target))
    }

    pub fn disturbance_activations(&self) -> u64 {
        self.disturbance.activations()
    }

    /// Legs whose feet currently touch the ball.
    pub fn supporting_legs(&self) -> Vec<Leg> {
        Leg::ALL
            .into_iter()
            .filter(|leg| {
                self.contacts.iter().any(|c| c.is_foot_ball() && c.body_a == physics::Body::Foot(*leg))
            })
            .collect()
    }

    /// Contacts of the current state, recomputed from scratch.
    pub fn detect(&self) -> Vec<ContactPoint> {
        detect_contacts(&self.model, &self.robot, &self.ball)
    }
}
