//! Collision detection and the penalty contact law.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::config::SceneModel;
use super::kinematics::{base_point_velocity, foot_velocity, leg_frames, LegFrame};
use super::state::{BallState, Leg, RobotState, NUM_LEGS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Body {
    Ground,
    Ball,
    Torso,
    Thigh(Leg),
    Shank(Leg),
    Foot(Leg),
}

impl Body {
    pub fn is_foot(self) -> bool {
        matches!(self, Body::Foot(_))
    }

    pub fn is_robot(self) -> bool {
        !matches!(self, Body::Ground | Body::Ball)
    }
}

/// One contact. The normal points from `body_a` into `body_b`; the force on
/// `body_b` is `normal_force * normal + tangential_force` and `body_a`
/// receives the opposite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactPoint {
    pub body_a: Body,
    pub body_b: Body,
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
    /// m, >= 0
    pub penetration: f64,
    /// Relative normal velocity of `b` with respect to `a`; positive when separating.
    pub v_norm: f64,
    /// Relative tangential velocity of `b` with respect to `a`.
    pub v_tan: Vector3<f64>,
    /// N, >= 0. Zero for detection-only pairs.
    pub normal_force: f64,
    pub tangential_force: Vector3<f64>,
}

impl ContactPoint {
    fn new(
        body_a: Body,
        body_b: Body,
        point: Vector3<f64>,
        normal: Vector3<f64>,
        penetration: f64,
        v_rel: Vector3<f64>,
    ) -> Self {
        let v_norm = v_rel.dot(&normal);
        let v_tan = v_rel - normal * v_norm;
        Self {
            body_a,
            body_b,
            point,
            normal,
            penetration: penetration.max(0.0),
            v_norm,
            v_tan,
            normal_force: 0.0,
            tangential_force: Vector3::zeros(),
        }
    }

    pub fn is_foot_ball(&self) -> bool {
        self.body_a.is_foot() && self.body_b == Body::Ball
    }

    /// Ball touching a robot link other than a foot.
    pub fn is_illegal_ball_contact(&self) -> bool {
        self.body_b == Body::Ball && self.body_a.is_robot() && !self.body_a.is_foot()
    }

    pub fn is_self_collision(&self) -> bool {
        self.body_a.is_robot() && self.body_b.is_robot()
    }

    /// Pairs that exchange force; the rest are only reported.
    pub fn transmits_force(&self) -> bool {
        matches!(
            (self.body_a, self.body_b),
            (Body::Foot(_), Body::Ball) | (Body::Ground, Body::Ball) | (Body::Ground, Body::Foot(_)) | (Body::Ground, Body::Torso)
        )
    }

    pub fn force_on_b(&self) -> Vector3<f64> {
        self.normal * self.normal_force + self.tangential_force
    }
}

/// Stiffness, Hunt-Crossley damping and friction of one contact pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactLaw {
    pub stiffness: f64,
    /// s/m
    pub alpha: f64,
    pub friction: f64,
    /// N s/m
    pub viscosity: f64,
}

impl ContactLaw {
    pub fn for_pair(model: &SceneModel, a: Body, b: Body) -> Option<Self> {
        let c = &model.config;
        let (stiffness, friction, restitution) = match (a, b) {
            (Body::Foot(_), Body::Ball) => (c.ball_contact_stiffness, model.ball_friction, model.ball_restitution),
            (Body::Ground, Body::Ball) => (c.ground_contact_stiffness, model.ball_friction, model.ball_restitution),
            (Body::Ground, Body::Foot(_)) => (c.ground_contact_stiffness, c.ground_friction, c.ground_restitution),
            (Body::Ground, Body::Torso) => (c.base_ground_stiffness, c.ground_friction, c.ground_restitution),
            _ => return None,
        };
        Some(Self { stiffness, alpha: model.hunt_crossley_alpha(restitution), friction, viscosity: c.friction_viscosity })
    }

    /// Hunt-Crossley normal force `k d (1 + alpha d_dot)` clamped at zero,
    /// plus regularized Coulomb friction `-t min(mu Fn, c |v_t|)`.
    pub fn resolve(&self, contact: &mut ContactPoint) {
        let penetration_rate = -contact.v_norm;
        let fn_ = (self.stiffness * contact.penetration * (1.0 + self.alpha * penetration_rate)).max(0.0);
        contact.normal_force = fn_;
        let speed = contact.v_tan.norm();
        contact.tangential_force = if speed > 0.0 && fn_ > 0.0 {
            let magnitude = (self.friction * fn_).min(self.viscosity * speed);
            contact.v_tan * (-magnitude / speed)
        } else {
            Vector3::zeros()
        };
    }

    pub fn potential_energy(&self, penetration: f64) -> f64 {
        0.5 * self.stiffness * penetration * penetration
    }
}

fn closest_on_segment(a: &Vector3<f64>, b: &Vector3<f64>, p: &Vector3<f64>) -> Vector3<f64> {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return *a;
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    a + ab * t
}

/// Sphere against the torso box. Returns `(point on box, outward normal, penetration)`.
fn sphere_box(robot: &RobotState, half: &[f64; 3], center: &Vector3<f64>, radius: f64) -> Option<(Vector3<f64>, Vector3<f64>, f64)> {
    let local = robot.world_to_base(center);
    let clamped = Vector3::new(
        local.x.clamp(-half[0], half[0]),
        local.y.clamp(-half[1], half[1]),
        local.z.clamp(-half[2], half[2]),
    );
    let d = local - clamped;
    let dist = d.norm();
    let (closest, normal_local, penetration) = if dist > 0.0 {
        if dist > radius {
            return None;
        }
        (clamped, d / dist, radius - dist)
    } else {
        // Centre inside the box: push out through the nearest face.
        let mut best = (f64::INFINITY, 0usize, 1.0);
        for axis in 0..3 {
            for sign in [-1.0, 1.0] {
                let gap = half[axis] - sign * local[axis];
                if gap < best.0 {
                    best = (gap, axis, sign);
                }
            }
        }
        let mut n = Vector3::zeros();
        n[best.1] = best.2;
        let mut face = local;
        face[best.1] = best.2 * half[best.1];
        (face, n, radius + best.0)
    };
    let q = robot.base_orientation;
    Some((robot.base_position + q.rotate(&closest), q.rotate(&normal_local), penetration))
}

pub fn torso_corners(model: &SceneModel, robot: &RobotState) -> [Vector3<f64>; 8] {
    let [hx, hy, hz] = model.config.base_half_extents;
    let mut out = [Vector3::zeros(); 8];
    for (i, c) in out.iter_mut().enumerate() {
        let local = Vector3::new(
            if i & 1 == 0 { -hx } else { hx },
            if i & 2 == 0 { -hy } else { hy },
            if i & 4 == 0 { -hz } else { hz },
        );
        *c = robot.base_position + robot.base_orientation.rotate(&local);
    }
    out
}

/// All contacts between the robot, the ball and the ground plane `z = 0`,
/// with relative velocities filled in and forces left at zero.
pub fn detect_contacts(model: &SceneModel, robot: &RobotState, ball: &BallState) -> Vec<ContactPoint> {
    let frames = leg_frames(model, robot);
    detect_with_frames(model, robot, ball, &frames)
}

pub(crate) fn detect_with_frames(
    model: &SceneModel,
    robot: &RobotState,
    ball: &BallState,
    frames: &[LegFrame; NUM_LEGS],
) -> Vec<ContactPoint> {
    let c = &model.config;
    let r_foot = c.foot_radius;
    let mut out = Vec::new();
    let up = Vector3::z();
    let feet_vel: [Vector3<f64>; NUM_LEGS] = Leg::ALL.map(|leg| foot_velocity(robot, &frames[leg.index()], leg));

    for leg in Leg::ALL {
        let f = &frames[leg.index()];
        let foot = f.foot;
        let v_foot = feet_vel[leg.index()];

        // Foot-ball (sphere-sphere).
        let d = ball.position - foot;
        let dist = d.norm();
        if dist <= ball.radius + r_foot && dist > 0.0 {
            let n = d / dist;
            let point = foot + n * r_foot;
            let v_rel = ball.point_velocity(&point) - v_foot;
            out.push(ContactPoint::new(Body::Foot(leg), Body::Ball, point, n, ball.radius + r_foot - dist, v_rel));
        }

        // Foot-ground (sphere-plane).
        if foot.z <= r_foot {
            let point = Vector3::new(foot.x, foot.y, 0.0);
            out.push(ContactPoint::new(Body::Ground, Body::Foot(leg), point, up, r_foot - foot.z, v_foot));
        }

        // Thigh and shank capsules against the ball.
        let shank_dir = (foot - f.knee()).try_normalize(0.0).unwrap_or_else(Vector3::zeros);
        let shank_end = foot - shank_dir * c.shank_foot_margin;
        for (body, a, b) in [(Body::Thigh(leg), f.hfe(), f.knee()), (Body::Shank(leg), f.knee(), shank_end)] {
            let p = closest_on_segment(&a, &b, &ball.position);
            let d = ball.position - p;
            let dist = d.norm();
            if dist <= ball.radius + c.link_radius && dist > 0.0 {
                let n = d / dist;
                let point = p + n * c.link_radius;
                let v_rel = ball.point_velocity(&point) - base_point_velocity(robot, &point);
                out.push(ContactPoint::new(body, Body::Ball, point, n, ball.radius + c.link_radius - dist, v_rel));
            }
        }

        // Foot against the torso.
        if let Some((point, n, pen)) = sphere_box(robot, &c.base_half_extents, &foot, r_foot) {
            let v_rel = v_foot - base_point_velocity(robot, &point);
            out.push(ContactPoint::new(Body::Torso, Body::Foot(leg), point, n, pen, v_rel));
        }
    }

    // Foot-foot self collisions.
    for i in 0..NUM_LEGS {
        for j in (i + 1)..NUM_LEGS {
            let d = frames[j].foot - frames[i].foot;
            let dist = d.norm();
            if dist <= 2.0 * r_foot {
                let n = d.try_normalize(0.0).unwrap_or_else(Vector3::z);
                let point = frames[i].foot + n * r_foot;
                out.push(ContactPoint::new(
                    Body::Foot(Leg::ALL[i]),
                    Body::Foot(Leg::ALL[j]),
                    point,
                    n,
                    2.0 * r_foot - dist,
                    feet_vel[j] - feet_vel[i],
                ));
            }
        }
    }

    // Ball-ground.
    if ball.position.z <= ball.radius {
        let point = Vector3::new(ball.position.x, ball.position.y, 0.0);
        out.push(ContactPoint::new(Body::Ground, Body::Ball, point, up, ball.radius - ball.position.z, ball.point_velocity(&point)));
    }

    // Ball-torso.
    if let Some((point, n, pen)) = sphere_box(robot, &c.base_half_extents, &ball.position, ball.radius) {
        let v_rel = ball.point_velocity(&point) - base_point_velocity(robot, &point);
        out.push(ContactPoint::new(Body::Torso, Body::Ball, point, n, pen, v_rel));
    }

    // Torso corners against the ground.
    for corner in torso_corners(model, robot) {
        if corner.z <= 0.0 {
            let point = Vector3::new(corner.x, corner.y, 0.0);
            out.push(ContactPoint::new(Body::Ground, Body::Torso, point, up, -corner.z, base_point_velocity(robot, &corner)));
        }
    }

    out
}
