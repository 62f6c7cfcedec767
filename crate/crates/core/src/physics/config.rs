use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::state::{Joint, JointVector, Leg, NUM_LEGS};
use crate::error::{Error, Result};

/// Physical constants and robot geometry. Body frame: `x` forward, `y` left,
/// `z` up when standing; lying supine the legs point along world `+z`.
///
/// Zero-pose reference: with all joints at zero and the base at the origin
/// with identity orientation, foot centers sit at
/// `(±hip_x, ±(hip_y + haa_offset), -(thigh_length + shank_length))`,
/// i.e. `(±0.3, ±0.18, -0.6)` m with the defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsConfig {
    /// s
    pub substep_dt: f64,
    /// s
    pub control_dt: f64,
    /// m/s^2, acts along world -z.
    pub gravity: f64,

    /// Nm/rad
    pub kp: f64,
    /// Nm s/rad
    pub kd: f64,
    /// Nm
    pub torque_limit: f64,
    /// Reflected inertia of each joint, kg m^2.
    pub joint_inertia: f64,
    /// Symmetric position limits for HAA, HFE, KFE, rad.
    pub joint_limits: [f64; 3],
    /// Left-front nominal pose (HAA, HFE, KFE); right legs mirror HAA, hind
    /// legs mirror HFE and KFE.
    pub nominal_front: [f64; 3],

    pub hip_x: f64,
    pub hip_y: f64,
    /// Lateral HAA-to-HFE offset, m.
    pub haa_offset: f64,
    pub thigh_length: f64,
    pub shank_length: f64,
    pub foot_radius: f64,
    /// Collision radius of thigh and shank capsules, m.
    pub link_radius: f64,
    /// Length at the distal end of the shank covered by the foot instead of
    /// the shank capsule, m.
    pub shank_foot_margin: f64,

    pub base_mass: f64,
    pub base_half_extents: [f64; 3],

    pub ball_mass: f64,
    pub ball_radius: f64,
    /// `I = factor * m * r^2`; 2/3 for a thin shell.
    pub ball_inertia_factor: f64,
    /// Nominal ball friction and restitution (centre of the randomization range).
    pub ball_friction: f64,
    pub ball_restitution: f64,

    /// N/m, foot-ball pairs.
    pub ball_contact_stiffness: f64,
    /// N/m, ball-ground and foot-ground pairs.
    pub ground_contact_stiffness: f64,
    /// N/m per torso corner.
    pub base_ground_stiffness: f64,
    pub ground_friction: f64,
    pub ground_restitution: f64,
    /// Reference impact speed for the Hunt-Crossley damping, m/s.
    pub impact_speed_ref: f64,
    /// Slope of the regularized friction law below saturation, N s/m.
    pub friction_viscosity: f64,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        Self {
            substep_dt: 0.0025,
            control_dt: 0.01,
            gravity: 9.81,
            kp: 150.0,
            kd: 4.0,
            torque_limit: 80.0,
            joint_inertia: 0.2,
            joint_limits: [0.6, 1.6, 2.6],
            nominal_front: [-0.05, -0.3, 0.9],
            hip_x: 0.3,
            hip_y: 0.1,
            haa_offset: 0.08,
            thigh_length: 0.3,
            shank_length: 0.3,
            foot_radius: 0.03,
            link_radius: 0.02,
            shank_foot_margin: 0.06,
            base_mass: 40.0,
            base_half_extents: [0.35, 0.12, 0.1],
            ball_mass: 3.0,
            ball_radius: 0.4,
            ball_inertia_factor: 2.0 / 3.0,
            ball_friction: 0.8,
            ball_restitution: 0.95,
            ball_contact_stiffness: 8000.0,
            ground_contact_stiffness: 20000.0,
            base_ground_stiffness: 50000.0,
            ground_friction: 0.8,
            ground_restitution: 0.5,
            impact_speed_ref: 1.0,
            friction_viscosity: 150.0,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid_config(format!("physics.{name} must be positive, got {v}")))
    }
}

fn in_range(name: &str, v: f64, lo: f64, hi: f64) -> Result<()> {
    if (lo..=hi).contains(&v) {
        Ok(())
    } else {
        Err(Error::invalid_config(format!("physics.{name} = {v} outside [{lo}, {hi}]")))
    }
}

impl PhysicsConfig {
    pub fn validate(&self) -> Result<()> {
        positive("substep_dt", self.substep_dt)?;
        positive("control_dt", self.control_dt)?;
        self.substeps_per_control()?;
        in_range("gravity", self.gravity, 0.0, 100.0)?;
        in_range("kp", self.kp, 0.0, 1e5)?;
        in_range("kd", self.kd, 0.0, 1e4)?;
        positive("torque_limit", self.torque_limit)?;
        positive("joint_inertia", self.joint_inertia)?;
        for (i, l) in self.joint_limits.iter().enumerate() {
            positive(&format!("joint_limits[{i}]"), *l)?;
            if self.nominal_front[i].abs() > *l {
                return Err(Error::invalid_config(format!("physics.nominal_front[{i}] outside joint limits")));
            }
        }
        for (name, v) in [
            ("hip_x", self.hip_x),
            ("hip_y", self.hip_y),
            ("haa_offset", self.haa_offset),
            ("thigh_length", self.thigh_length),
            ("shank_length", self.shank_length),
            ("foot_radius", self.foot_radius),
            ("link_radius", self.link_radius),
            ("base_mass", self.base_mass),
            ("ball_mass", self.ball_mass),
            ("ball_radius", self.ball_radius),
            ("ball_inertia_factor", self.ball_inertia_factor),
            ("ball_contact_stiffness", self.ball_contact_stiffness),
            ("ground_contact_stiffness", self.ground_contact_stiffness),
            ("base_ground_stiffness", self.base_ground_stiffness),
            ("impact_speed_ref", self.impact_speed_ref),
            ("friction_viscosity", self.friction_viscosity),
        ] {
            positive(name, v)?;
        }
        in_range("shank_foot_margin", self.shank_foot_margin, 0.0, self.shank_length)?;
        for (i, h) in self.base_half_extents.iter().enumerate() {
            positive(&format!("base_half_extents[{i}]"), *h)?;
        }
        in_range("ball_friction", self.ball_friction, 0.0, 2.0)?;
        in_range("ground_friction", self.ground_friction, 0.0, 2.0)?;
        in_range("ball_restitution", self.ball_restitution, 0.0, 1.0)?;
        in_range("ground_restitution", self.ground_restitution, 0.0, 1.0)?;
        Ok(())
    }

    /// Substeps per control step; the substep must divide the control step.
    pub fn substeps_per_control(&self) -> Result<usize> {
        self.substeps_for(self.control_dt)
    }

    pub fn substeps_for(&self, dt: f64) -> Result<usize> {
        let n = (dt / self.substep_dt).round();
        if n < 1.0 || ((n * self.substep_dt) - dt).abs() > 1e-9 * dt.max(1.0) {
            return Err(Error::invalid_config(format!(
                "step {dt} s is not a whole multiple of substep_dt {} s",
                self.substep_dt
            )));
        }
        Ok(n as usize)
    }

    pub fn nominal_pose(&self) -> JointVector {
        let mut q = JointVector::zeros();
        let [haa, hfe, kfe] = self.nominal_front;
        for leg in Leg::ALL {
            let s = if leg.is_front() { 1.0 } else { -1.0 };
            let m = if leg.is_left() { 1.0 } else { -1.0 };
            q.set_leg(leg, [m * haa, s * hfe, s * kfe]);
        }
        q
    }

    pub fn joint_limit(&self, joint: Joint) -> f64 {
        self.joint_limits[joint as usize]
    }

    pub fn limit_vector(&self) -> JointVector {
        let mut v = JointVector::zeros();
        for leg in Leg::ALL {
            v.set_leg(leg, self.joint_limits);
        }
        v
    }
}

/// Per-episode physical model: configuration plus the randomized quantities.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneModel {
    pub config: PhysicsConfig,
    pub ball_mass: f64,
    pub ball_radius: f64,
    pub ball_friction: f64,
    pub ball_restitution: f64,
    pub shank_lengths: [f64; NUM_LEGS],
    /// Knee position offset in the thigh frame, m.
    pub shank_offsets: [Vector3<f64>; NUM_LEGS],
}

impl SceneModel {
    pub fn nominal(config: PhysicsConfig) -> Self {
        Self {
            ball_mass: config.ball_mass,
            ball_radius: config.ball_radius,
            ball_friction: config.ball_friction,
            ball_restitution: config.ball_restitution,
            shank_lengths: [config.shank_length; NUM_LEGS],
            shank_offsets: [Vector3::zeros(); NUM_LEGS],
            config,
        }
    }

    pub fn ball_inertia(&self) -> f64 {
        self.config.ball_inertia_factor * self.ball_mass * self.ball_radius * self.ball_radius
    }

    /// Solid-box inertia of the torso in the body frame.
    pub fn base_inertia_body(&self) -> Matrix3<f64> {
        let [a, b, c] = self.config.base_half_extents.map(|h| 2.0 * h);
        let m = self.config.base_mass / 12.0;
        Matrix3::from_diagonal(&Vector3::new(m * (b * b + c * c), m * (a * a + c * c), m * (a * a + b * b)))
    }

    /// Hunt-Crossley damping per unit penetration rate for restitution `e`.
    pub fn hunt_crossley_alpha(&self, restitution: f64) -> f64 {
        1.5 * (1.0 - restitution) / self.config.impact_speed_ref
    }
}
