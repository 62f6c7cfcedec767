//! Simplified rigid-body simulation of the supine robot and the ball.
//!
//! The base is a free box resting on the ground, the legs are massless
//! chains whose joints carry a decoupled reflected inertia, and all contacts
//! are compliant (penalty) with Hunt-Crossley damping and regularized Coulomb
//! friction. Contact forces at the feet act on the joints through the leg
//! Jacobian transpose and on the base as a wrench at the foot.

mod config;
mod contact;
mod kinematics;
mod state;

pub use config::{PhysicsConfig, SceneModel};
pub use contact::{detect_contacts, torso_corners, Body, ContactLaw, ContactPoint};
pub use kinematics::{forward_kinematics, hip_mount, leg_frame_body, leg_frames, LegFrame};
pub use state::{BallState, Joint, JointVector, Leg, RobotState, JOINTS_PER_LEG, NUM_JOINTS, NUM_LEGS};

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::rotation::UnitQuaternion;

/// Result of advancing the scene by one step.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub robot: RobotState,
    pub ball: BallState,
    /// PD torques of the final substep (after clamping).
    pub torques: JointVector,
    /// Contacts of the final substep with their applied forces.
    pub contacts: Vec<ContactPoint>,
}

/// Clamped PD torque towards `targets`.
pub fn pd_torque(config: &PhysicsConfig, pos: &JointVector, vel: &JointVector, targets: &JointVector) -> JointVector {
    let mut tau = JointVector::zeros();
    for i in 0..NUM_JOINTS {
        let raw = config.kp * (targets[i] - pos[i]) - config.kd * vel[i];
        tau[i] = raw.clamp(-config.torque_limit, config.torque_limit);
    }
    tau
}

fn integrate_orientation(q: &UnitQuaternion, omega: &Vector3<f64>, dt: f64) -> UnitQuaternion {
    UnitQuaternion::exp(&(omega * dt)) * *q
}

/// Advances robot and ball by `dt` (a whole number of substeps) with
/// semi-implicit Euler. `external_force` acts on the ball centre.
pub fn step(
    model: &SceneModel,
    robot: &RobotState,
    ball: &BallState,
    joint_targets: &JointVector,
    external_force: &Vector3<f64>,
    dt: f64,
) -> Result<StepOutput> {
    let cfg = &model.config;
    let substeps = cfg.substeps_for(dt)?;
    let h = cfg.substep_dt;
    let gravity = Vector3::new(0.0, 0.0, -cfg.gravity);
    let limits = cfg.limit_vector();
    let base_inertia_body = model.base_inertia_body();
    let ball_inertia = model.ball_inertia();

    let mut robot = robot.clone();
    let mut ball = ball.clone();
    let mut torques = JointVector::zeros();
    let mut contacts = Vec::new();

    for _ in 0..substeps {
        let frames = leg_frames(model, &robot);
        contacts = contact::detect_with_frames(model, &robot, &ball, &frames);

        let mut ball_force = ball.mass * gravity + external_force;
        let mut ball_torque = Vector3::zeros();
        let mut base_force = cfg.base_mass * gravity;
        let mut base_torque = Vector3::zeros();
        let mut foot_forces = [Vector3::zeros(); NUM_LEGS];

        for c in contacts.iter_mut() {
            let Some(law) = ContactLaw::for_pair(model, c.body_a, c.body_b) else {
                continue;
            };
            law.resolve(c);
            let f = c.force_on_b();
            match (c.body_a, c.body_b) {
                (Body::Foot(leg), Body::Ball) => {
                    ball_force += f;
                    ball_torque += (c.point - ball.position).cross(&f);
                    foot_forces[leg.index()] -= f;
                }
                (Body::Ground, Body::Ball) => {
                    ball_force += f;
                    ball_torque += (c.point - ball.position).cross(&f);
                }
                (Body::Ground, Body::Foot(leg)) => foot_forces[leg.index()] += f,
                (Body::Ground, Body::Torso) => {
                    base_force += f;
                    base_torque += (c.point - robot.base_position).cross(&f);
                }
                _ => {}
            }
        }

        // Joints: PD plus contact torques through J^T; the foot force is
        // carried through the massless leg into the base.
        torques = pd_torque(cfg, &robot.joints_pos, &robot.joints_vel, joint_targets);
        for leg in Leg::ALL {
            let frame = &frames[leg.index()];
            let f = foot_forces[leg.index()];
            let contact_tau = frame.jacobian().transpose() * f;
            base_force += f;
            base_torque += (frame.foot - robot.base_position).cross(&f);
            for k in 0..JOINTS_PER_LEG {
                let i = leg.index() * JOINTS_PER_LEG + k;
                let acc = (torques[i] + contact_tau[k]) / cfg.joint_inertia;
                let mut v = robot.joints_vel[i] + h * acc;
                let mut p = robot.joints_pos[i] + h * v;
                if p > limits[i] {
                    p = limits[i];
                    v = v.min(0.0);
                } else if p < -limits[i] {
                    p = -limits[i];
                    v = v.max(0.0);
                }
                robot.joints_vel[i] = v;
                robot.joints_pos[i] = p;
            }
        }

        // Ball.
        ball.lin_vel += ball_force * (h / ball.mass);
        ball.ang_vel += ball_torque * (h / ball_inertia);
        ball.position += ball.lin_vel * h;
        ball.orientation = integrate_orientation(&ball.orientation, &ball.ang_vel, h);

        // Base, with the world-frame inertia and the gyroscopic term.
        let r = robot.base_orientation.to_rotation_matrix();
        let inertia_world: Matrix3<f64> = r * base_inertia_body * r.transpose();
        let inv_inertia = r * base_inertia_body.try_inverse().unwrap_or_else(Matrix3::zeros) * r.transpose();
        let gyro = robot.base_ang_vel.cross(&(inertia_world * robot.base_ang_vel));
        robot.base_lin_vel += base_force * (h / cfg.base_mass);
        robot.base_ang_vel += inv_inertia * (base_torque - gyro) * h;
        robot.base_position += robot.base_lin_vel * h;
        robot.base_orientation = integrate_orientation(&robot.base_orientation, &robot.base_ang_vel, h);

        if !robot.is_finite() {
            return Err(Error::NonFiniteState("robot".into()));
        }
        if !ball.is_finite() {
            return Err(Error::NonFiniteState("ball".into()));
        }
    }

    Ok(StepOutput { robot, ball, torques, contacts })
}

/// Kinetic plus gravitational energy of every body, plus the elastic energy
/// stored in force-transmitting contacts.
pub fn mechanical_energy(model: &SceneModel, robot: &RobotState, ball: &BallState) -> f64 {
    let cfg = &model.config;
    let g = cfg.gravity;
    let ball_ke = 0.5 * ball.mass * ball.lin_vel.norm_squared() + 0.5 * model.ball_inertia() * ball.ang_vel.norm_squared();
    let ball_pe = ball.mass * g * ball.position.z;
    let r = robot.base_orientation.to_rotation_matrix();
    let inertia_world = r * model.base_inertia_body() * r.transpose();
    let base_ke = 0.5 * cfg.base_mass * robot.base_lin_vel.norm_squared()
        + 0.5 * robot.base_ang_vel.dot(&(inertia_world * robot.base_ang_vel));
    let base_pe = cfg.base_mass * g * robot.base_position.z;
    let joint_ke = 0.5 * cfg.joint_inertia * robot.joints_vel.norm_squared();
    let elastic: f64 = detect_contacts(model, robot, ball)
        .iter()
        .filter_map(|c| ContactLaw::for_pair(model, c.body_a, c.body_b).map(|law| law.potential_energy(c.penetration)))
        .sum();
    ball_ke + ball_pe + base_ke + base_pe + joint_ke + elastic
}
