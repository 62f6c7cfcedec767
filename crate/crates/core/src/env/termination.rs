use std::fmt;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{BallState, ContactPoint};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TerminationConfig {
    /// Half-width of the horizontal feasible region, in ball radii.
    pub horizontal_region: f64,
    /// Half-height of the vertical feasible region, in ball radii.
    pub vertical_region: f64,
    /// s
    pub max_no_contact_time: f64,
}

impl Default for TerminationConfig {
    fn default() -> Self {
        Self { horizontal_region: 1.5, vertical_region: 1.0, max_no_contact_time: 1.0 }
    }
}

impl TerminationConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("horizontal_region", self.horizontal_region),
            ("vertical_region", self.vertical_region),
            ("max_no_contact_time", self.max_no_contact_time),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid_config(format!("termination.{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Why an episode ended early. Rules are checked in declaration order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    None,
    SelfCollision,
    IllegalContact,
    OutOfRegion,
    NoContactTimeout,
    /// The integrator produced a non-finite state.
    NonFinite,
}

impl Verdict {
    pub fn is_terminal(self) -> bool {
        self != Verdict::None
    }

    pub fn name(self) -> &'static str {
        match self {
            Verdict::None => "none",
            Verdict::SelfCollision => "self_collision",
            Verdict::IllegalContact => "illegal_contact",
            Verdict::OutOfRegion => "out_of_region",
            Verdict::NoContactTimeout => "no_contact_timeout",
            Verdict::NonFinite => "non_finite",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// First violated rule, or `Verdict::None`. `rest_position` is the ball's
/// nominal rest position in the world frame; `no_contact_time` is the
/// continuous time without any foot-ball contact.
pub fn check_termination(
    ball: &BallState,
    contacts: &[ContactPoint],
    rest_position: &Vector3<f64>,
    no_contact_time: f64,
    cfg: &TerminationConfig,
) -> Verdict {
    if contacts.iter().any(|c| c.is_self_collision()) {
        return Verdict::SelfCollision;
    }
    if contacts.iter().any(|c| c.is_illegal_ball_contact()) {
        return Verdict::IllegalContact;
    }
    let d = ball.position - rest_position;
    let h = cfg.horizontal_region * ball.radius;
    if d.x.abs() > h || d.y.abs() > h || d.z.abs() > cfg.vertical_region * ball.radius {
        return Verdict::OutOfRegion;
    }
    if no_contact_time > cfg.max_no_contact_time {
        return Verdict::NoContactTimeout;
    }
    Verdict::None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::{Body, Leg};

    fn contact(a: Body, b: Body) -> ContactPoint {
        ContactPoint {
            body_a: a,
            body_b: b,
            point: Vector3::zeros(),
            normal: Vector3::z(),
            penetration: 0.0,
            v_norm: 0.0,
            v_tan: Vector3::zeros(),
            normal_force: 0.0,
            tangential_force: Vector3::zeros(),
        }
    }

    fn ball_at(p: Vector3<f64>) -> BallState {
        BallState::at_rest(p, 3.0, 0.4)
    }

    const REST: Vector3<f64> = Vector3::new(0.0, 0.0, 1.0);

    #[test]
    fn interior_point_in_contact() {
        let c = [contact(Body::Foot(Leg::LF), Body::Ball)];
        let v = check_termination(&ball_at(REST), &c, &REST, 0.0, &TerminationConfig::default());
        assert_eq!(v, Verdict::None);
    }

    #[test]
    fn horizontal_offset_beyond_region() {
        let cfg = TerminationConfig::default();
        let v = check_termination(&ball_at(REST + Vector3::new(1.6 * 0.4, 0.0, 0.0)), &[], &REST, 0.0, &cfg);
        assert_eq!(v, Verdict::OutOfRegion);
        let v = check_termination(&ball_at(REST + Vector3::new(0.0, -1.4 * 0.4, 0.0)), &[], &REST, 0.0, &cfg);
        assert_eq!(v, Verdict::None);
        let v = check_termination(&ball_at(REST + Vector3::new(0.0, 0.0, -1.1 * 0.4)), &[], &REST, 0.0, &cfg);
        assert_eq!(v, Verdict::OutOfRegion);
    }

    #[test]
    fn no_contact_timeout() {
        let cfg = TerminationConfig::default();
        assert_eq!(check_termination(&ball_at(REST), &[], &REST, 1.2, &cfg), Verdict::NoContactTimeout);
        assert_eq!(check_termination(&ball_at(REST), &[], &REST, 0.8, &cfg), Verdict::None);
    }

    #[test]
    fn first_rule_wins() {
        let cfg = TerminationConfig::default();
        let far = ball_at(REST + Vector3::new(5.0, 0.0, 0.0));
        let all = [
            contact(Body::Shank(Leg::LF), Body::Ball),
            contact(Body::Foot(Leg::LF), Body::Foot(Leg::RF)),
        ];
        assert_eq!(check_termination(&far, &all, &REST, 9.0, &cfg), Verdict::SelfCollision);
        assert_eq!(check_termination(&far, &all[..1], &REST, 9.0, &cfg), Verdict::IllegalContact);
        assert_eq!(check_termination(&far, &[], &REST, 9.0, &cfg), Verdict::OutOfRegion);
    }
}
