//! Serial-chain kinematics of the four 3-DoF legs.

use nalgebra::{Matrix3, Vector3};

use super::config::SceneModel;
use super::state::{JointVector, Leg, RobotState, JOINTS_PER_LEG, NUM_LEGS};
use crate::rotation::UnitQuaternion;

fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// World-frame positions along one leg plus the joint axes.
#[derive(Clone, Debug, PartialEq)]
pub struct LegFrame {
    /// HAA, HFE and KFE joint origins.
    pub joint_origins: [Vector3<f64>; JOINTS_PER_LEG],
    pub joint_axes: [Vector3<f64>; JOINTS_PER_LEG],
    pub foot: Vector3<f64>,
}

impl LegFrame {
    pub fn hfe(&self) -> Vector3<f64> {
        self.joint_origins[1]
    }

    pub fn knee(&self) -> Vector3<f64> {
        self.joint_origins[2]
    }

    /// Columns are d(foot)/d(joint) in the world frame.
    pub fn jacobian(&self) -> Matrix3<f64> {
        let mut j = Matrix3::zeros();
        for k in 0..JOINTS_PER_LEG {
            j.set_column(k, &self.joint_axes[k].cross(&(self.foot - self.joint_origins[k])));
        }
        j
    }
}

pub fn hip_mount(model: &SceneModel, leg: Leg) -> Vector3<f64> {
    let c = &model.config;
    let sx = if leg.is_front() { 1.0 } else { -1.0 };
    let sy = if leg.is_left() { 1.0 } else { -1.0 };
    Vector3::new(sx * c.hip_x, sy * c.hip_y, 0.0)
}

/// Leg chain in the base frame.
pub fn leg_frame_body(model: &SceneModel, leg: Leg, q: [f64; JOINTS_PER_LEG]) -> LegFrame {
    let c = &model.config;
    let sy = if leg.is_left() { 1.0 } else { -1.0 };
    let hip = hip_mount(model, leg);
    let r0 = rot_x(q[0]);
    let hfe = hip + r0 * Vector3::new(0.0, sy * c.haa_offset, 0.0);
    let r1 = r0 * rot_y(q[1]);
    let knee = hfe + r1 * (Vector3::new(0.0, 0.0, -c.thigh_length) + model.shank_offsets[leg.index()]);
    let r2 = r1 * rot_y(q[2]);
    let foot = knee + r2 * Vector3::new(0.0, 0.0, -model.shank_lengths[leg.index()]);
    LegFrame {
        joint_origins: [hip, hfe, knee],
        joint_axes: [Vector3::x(), r0 * Vector3::y(), r1 * Vector3::y()],
        foot,
    }
}

fn to_world(frame: LegFrame, position: &Vector3<f64>, orientation: &UnitQuaternion) -> LegFrame {
    let p = |v: &Vector3<f64>| position + orientation.rotate(v);
    LegFrame {
        joint_origins: frame.joint_origins.map(|o| p(&o)),
        joint_axes: frame.joint_axes.map(|a| orientation.rotate(&a)),
        foot: p(&frame.foot),
    }
}

/// World-frame leg chains for all four legs.
pub fn leg_frames(model: &SceneModel, robot: &RobotState) -> [LegFrame; NUM_LEGS] {
    Leg::ALL.map(|leg| {
        to_world(
            leg_frame_body(model, leg, robot.joints_pos.leg(leg)),
            &robot.base_position,
            &robot.base_orientation,
        )
    })
}

/// World-frame foot-sphere centres.
pub fn forward_kinematics(model: &SceneModel, joints_pos: &JointVector, base: &RobotState) -> [Vector3<f64>; NUM_LEGS] {
    Leg::ALL.map(|leg| {
        let f = leg_frame_body(model, leg, joints_pos.leg(leg)).foot;
        base.base_position + base.base_orientation.rotate(&f)
    })
}

/// World velocity of a point rigidly attached to the base.
pub fn base_point_velocity(robot: &RobotState, p: &Vector3<f64>) -> Vector3<f64> {
    robot.base_lin_vel + robot.base_ang_vel.cross(&(p - robot.base_position))
}

/// World velocity of a foot centre.
pub fn foot_velocity(robot: &RobotState, frame: &LegFrame, leg: Leg) -> Vector3<f64> {
    let qd = robot.joints_vel.leg(leg);
    base_point_velocity(robot, &frame.foot) + frame.jacobian() * Vector3::new(qd[0], qd[1], qd[2])
}
