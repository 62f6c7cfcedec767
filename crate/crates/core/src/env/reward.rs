use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{ContactPoint, JointVector, RobotState, BallState};
use crate::rotation::{quat_angle, quat_difference, UnitQuaternion};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardCoefficients {
    pub k_q: f64,
    pub k_v: f64,
    pub k_tau: f64,
    pub k_slip: f64,
    pub k_collide: f64,
}

impl Default for RewardCoefficients {
    fn default() -> Self {
        Self { k_q: 1.0, k_v: 0.5, k_tau: 1e-4, k_slip: 0.1, k_collide: 0.1 }
    }
}

impl RewardCoefficients {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("k_q", self.k_q),
            ("k_v", self.k_v),
            ("k_tau", self.k_tau),
            ("k_slip", self.k_slip),
            ("k_collide", self.k_collide),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid_config(format!("rewards.{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_q: f64,
    pub r_v: f64,
    pub r_tau: f64,
    pub r_slip: f64,
    pub r_collide: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn from_terms(r_q: f64, r_v: f64, r_tau: f64, r_slip: f64, r_collide: f64) -> Self {
        Self { r_q, r_v, r_tau, r_slip, r_collide, total: r_q + r_v + r_tau + r_slip + r_collide }
    }

    pub fn terms(&self) -> [f64; 5] {
        [self.r_q, self.r_v, self.r_tau, self.r_slip, self.r_collide]
    }
}

/// `k_q / (e^dq + 2 + e^-dq)`, largest at `dq = 0`.
pub fn orientation_reward(k_q: f64, delta_q: f64) -> f64 {
    k_q / (delta_q.exp() + 2.0 + (-delta_q).exp())
}

/// The five-term reward for the state reached after a step. Slip and
/// normal-velocity penalties sum over foot-ball contacts.
pub fn compute_reward(
    robot: &RobotState,
    ball: &BallState,
    torques: &JointVector,
    contacts: &[ContactPoint],
    target: &UnitQuaternion,
    coeffs: &RewardCoefficients,
) -> RewardBreakdown {
    let delta_q = quat_angle(&quat_difference(&ball.orientation, target));
    let r_q = orientation_reward(coeffs.k_q, delta_q);
    let r_v = -coeffs.k_v * robot.base_lin_vel.norm();
    let r_tau = -coeffs.k_tau * torques.norm_squared();
    let (slip, normal): (f64, f64) = contacts
        .iter()
        .filter(|c| c.is_foot_ball())
        .fold((0.0, 0.0), |(s, n), c| (s + c.v_tan.norm(), n + c.v_norm.abs()));
    RewardBreakdown::from_terms(r_q, r_v, r_tau, -coeffs.k_slip * slip, -coeffs.k_collide * normal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::{Body, Leg};
    use nalgebra::Vector3;

    fn robot() -> RobotState {
        RobotState {
            base_position: Vector3::new(0.0, 0.0, 0.1),
            base_orientation: UnitQuaternion::identity(),
            base_lin_vel: Vector3::zeros(),
            base_ang_vel: Vector3::zeros(),
            joints_pos: JointVector::zeros(),
            joints_vel: JointVector::zeros(),
        }
    }

    fn ball() -> BallState {
        BallState::at_rest(Vector3::new(0.0, 0.0, 1.0), 3.0, 0.4)
    }

    fn foot_contact(v_norm: f64, v_tan: Vector3<f64>) -> ContactPoint {
        ContactPoint {
            body_a: Body::Foot(Leg::LF),
            body_b: Body::Ball,
            point: Vector3::zeros(),
            normal: Vector3::z(),
            penetration: 0.001,
            v_norm,
            v_tan,
            normal_force: 0.0,
            tangential_force: Vector3::zeros(),
        }
    }

    #[test]
    fn orientation_term_values() {
        assert_eq!(orientation_reward(1.0, 0.0), 0.25);
        let pi = std::f64::consts::PI;
        let oracle = 1.0 / (pi.exp() + 2.0 + (-pi).exp());
        assert!((orientation_reward(1.0, pi) - oracle).abs() < 1e-15);
        // 50-digit evaluation of 1/(e^pi + 2 + e^-pi).
        assert!((orientation_reward(1.0, pi) - 0.039_707_898_295_015_831).abs() < 1e-12);
    }

    #[test]
    fn orientation_term_strictly_decreasing() {
        let mut prev = orientation_reward(1.0, 0.0);
        for i in 1..=1000 {
            let r = orientation_reward(1.0, std::f64::consts::PI * i as f64 / 1000.0);
            assert!(r < prev);
            prev = r;
        }
    }

    #[test]
    fn zero_branches() {
        let r = compute_reward(&robot(), &ball(), &JointVector::zeros(), &[], &UnitQuaternion::identity(), &RewardCoefficients::default());
        assert_eq!(r.r_q, 0.25);
        assert_eq!((r.r_v, r.r_tau, r.r_slip, r.r_collide), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(r.total, 0.25);
    }

    #[test]
    fn torque_penalty() {
        let coeffs = RewardCoefficients { k_tau: 0.001, ..Default::default() };
        let r = compute_reward(&robot(), &ball(), &JointVector::splat(1.0), &[], &UnitQuaternion::identity(), &coeffs);
        assert!((r.r_tau + 0.012).abs() < 1e-15);
    }

    #[test]
    fn contact_penalties_sum_over_foot_contacts() {
        let coeffs = RewardCoefficients::default();
        let mut other = foot_contact(5.0, Vector3::new(5.0, 0.0, 0.0));
        other.body_a = Body::Ground;
        other.body_b = Body::Foot(Leg::RH);
        let contacts = [
            foot_contact(-0.2, Vector3::new(0.3, 0.4, 0.0)),
            foot_contact(0.1, Vector3::new(0.0, 1.0, 0.0)),
            other,
        ];
        let mut rb = robot();
        rb.base_lin_vel = Vector3::new(0.0, 3.0, 4.0);
        rb.base_ang_vel = Vector3::new(9.0, 9.0, 9.0);
        let r = compute_reward(&rb, &ball(), &JointVector::zeros(), &contacts, &UnitQuaternion::identity(), &coeffs);
        assert!((r.r_slip + 0.1 * 1.5).abs() < 1e-15);
        assert!((r.r_collide + 0.1 * 0.3).abs() < 1e-15);
        assert_eq!(r.r_v, -0.5 * 5.0);
        assert_eq!(r.total, r.r_q + r.r_v + r.r_tau + r.r_slip + r.r_collide);
    }

    #[test]
    fn negative_coefficient_rejected() {
        assert!(RewardCoefficients { k_v: -1.0, ..Default::default() }.validate().is_err());
    }
}
