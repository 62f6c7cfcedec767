use std::ops::{Index, IndexMut};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::rotation::UnitQuaternion;

pub const NUM_LEGS: usize = 4;
pub const JOINTS_PER_LEG: usize = 3;
pub const NUM_JOINTS: usize = NUM_LEGS * JOINTS_PER_LEG;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Leg {
    LF,
    RF,
    LH,
    RH,
}

impl Leg {
    pub const ALL: [Leg; NUM_LEGS] = [Leg::LF, Leg::RF, Leg::LH, Leg::RH];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_front(self) -> bool {
        matches!(self, Leg::LF | Leg::RF)
    }

    pub fn is_left(self) -> bool {
        matches!(self, Leg::LF | Leg::LH)
    }

    pub fn name(self) -> &'static str {
        match self {
            Leg::LF => "LF",
            Leg::RF => "RF",
            Leg::LH => "LH",
            Leg::RH => "RH",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Joint {
    Haa,
    Hfe,
    Kfe,
}

impl Joint {
    pub const ALL: [Joint; JOINTS_PER_LEG] = [Joint::Haa, Joint::Hfe, Joint::Kfe];
}

/// Twelve joint quantities ordered `(LF, RF, LH, RH) x (HAA, HFE, KFE)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct JointVector(pub [f64; NUM_JOINTS]);

impl JointVector {
    pub const fn zeros() -> Self {
        JointVector([0.0; NUM_JOINTS])
    }

    pub fn splat(v: f64) -> Self {
        JointVector([v; NUM_JOINTS])
    }

    pub fn from_slice(values: &[f64]) -> Option<Self> {
        <[f64; NUM_JOINTS]>::try_from(values).ok().map(JointVector)
    }

    pub fn leg(&self, leg: Leg) -> [f64; JOINTS_PER_LEG] {
        let i = leg.index() * JOINTS_PER_LEG;
        [self.0[i], self.0[i + 1], self.0[i + 2]]
    }

    pub fn set_leg(&mut self, leg: Leg, values: [f64; JOINTS_PER_LEG]) {
        let i = leg.index() * JOINTS_PER_LEG;
        self.0[i..i + JOINTS_PER_LEG].copy_from_slice(&values);
    }

    pub fn get(&self, leg: Leg, joint: Joint) -> f64 {
        self.0[leg.index() * JOINTS_PER_LEG + joint as usize]
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.0.iter()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm_squared(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        JointVector(self.0.map(f))
    }
}

impl Index<usize> for JointVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for JointVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub base_position: Vector3<f64>,
    pub base_orientation: UnitQuaternion,
    pub base_lin_vel: Vector3<f64>,
    /// World frame.
    pub base_ang_vel: Vector3<f64>,
    pub joints_pos: JointVector,
    pub joints_vel: JointVector,
}

impl RobotState {
    pub fn is_finite(&self) -> bool {
        self.base_position.iter().all(|v| v.is_finite())
            && self.base_orientation.to_array().iter().all(|v| v.is_finite())
            && self.base_lin_vel.iter().all(|v| v.is_finite())
            && self.base_ang_vel.iter().all(|v| v.is_finite())
            && self.joints_pos.is_finite()
            && self.joints_vel.is_finite()
    }

    /// Maps a world-frame point into the base frame.
    pub fn world_to_base(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.base_orientation.inverse().rotate(&(p - self.base_position))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallState {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion,
    pub lin_vel: Vector3<f64>,
    /// World frame.
    pub ang_vel: Vector3<f64>,
    pub mass: f64,
    pub radius: f64,
}

impl BallState {
    pub fn at_rest(position: Vector3<f64>, mass: f64, radius: f64) -> Self {
        Self {
            position,
            orientation: UnitQuaternion::identity(),
            lin_vel: Vector3::zeros(),
            ang_vel: Vector3::zeros(),
            mass,
            radius,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.orientation.to_array().iter().all(|v| v.is_finite())
            && self.lin_vel.iter().all(|v| v.is_finite())
            && self.ang_vel.iter().all(|v| v.is_finite())
    }

    /// Velocity of the material point of the ball located at `p`.
    pub fn point_velocity(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.lin_vel + self.ang_vel.cross(&(p - self.position))
    }
}
