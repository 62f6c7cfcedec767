//! Unit quaternions and constant-rate target propagation.
//!
//! Quaternions are stored scalar-first and canonicalized to `w >= 0`, so the
//! geodesic angle `2 acos(w)` is single valued.

use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Angles below this use the series form of the exponential map.
const EXP_SERIES_THRESHOLD: f64 = 1e-8;

#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitQuaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl fmt::Debug for UnitQuaternion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Quat({:.9}, {:.9}, {:.9}, {:.9})", self.w, self.x, self.y, self.z)
    }
}

impl Default for UnitQuaternion {
    fn default() -> Self {
        Self::identity()
    }
}

impl UnitQuaternion {
    pub const fn identity() -> Self {
        Self { w: 1.0, x: 0.0, y: 0.0, z: 0.0 }
    }

    /// Normalizes and canonicalizes arbitrary components. Fails on a zero or
    /// non-finite input.
    pub fn try_new(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() || n < f64::MIN_POSITIVE {
            return Err(Error::InvalidQuaternion { w, x, y, z });
        }
        Ok(Self::canonical(w / n, x / n, y / n, z / n))
    }

    /// Like [`try_new`](Self::try_new) for inputs that are known to be close
    /// to unit norm (products and exponentials of unit quaternions).
    fn renormalized(w: f64, x: f64, y: f64, z: f64) -> Self {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        Self::canonical(w / n, x / n, y / n, z / n)
    }

    fn canonical(w: f64, x: f64, y: f64, z: f64) -> Self {
        if w < 0.0 {
            Self { w: -w, x: -x, y: -y, z: -z }
        } else {
            Self { w, x, y, z }
        }
    }

    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }

    /// `[w, x, y, z]`.
    pub fn to_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn vector_part(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn inverse(&self) -> Self {
        Self { w: self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    /// Rotation of `angle` radians about `axis` (normalized internally).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 || angle == 0.0 {
            return Self::identity();
        }
        Self::exp(&(axis * (angle / n)))
    }

    /// Exponential map from a rotation vector (axis times angle, radians).
    pub fn exp(rotvec: &Vector3<f64>) -> Self {
        let theta = rotvec.norm();
        let half = 0.5 * theta;
        // sin(theta/2)/theta, with its Taylor series near zero.
        let k = if theta < EXP_SERIES_THRESHOLD {
            0.5 - theta * theta / 48.0
        } else {
            half.sin() / theta
        };
        Self::renormalized(half.cos(), rotvec.x * k, rotvec.y * k, rotvec.z * k)
    }

    /// Logarithm map to a rotation vector with angle in `[0, pi]`.
    pub fn log(&self) -> Vector3<f64> {
        let v = self.vector_part();
        let s = v.norm();
        if s < EXP_SERIES_THRESHOLD {
            return v * 2.0;
        }
        let angle = 2.0 * s.atan2(self.w);
        v * (angle / s)
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        let u = self.vector_part();
        let t = u.cross(v) * 2.0;
        v + t * self.w + u.cross(&t)
    }

    pub fn to_rotation_matrix(&self) -> Matrix3<f64> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Shepperd's method; picks the numerically largest pivot.
    pub fn from_rotation_matrix(m: &Matrix3<f64>) -> Self {
        let tr = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let (w, x, y, z);
        if tr > m[(0, 0)] && tr > m[(1, 1)] && tr > m[(2, 2)] {
            let s = (1.0 + tr).sqrt() * 2.0;
            w = 0.25 * s;
            x = (m[(2, 1)] - m[(1, 2)]) / s;
            y = (m[(0, 2)] - m[(2, 0)]) / s;
            z = (m[(1, 0)] - m[(0, 1)]) / s;
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            w = (m[(2, 1)] - m[(1, 2)]) / s;
            x = 0.25 * s;
            y = (m[(0, 1)] + m[(1, 0)]) / s;
            z = (m[(0, 2)] + m[(2, 0)]) / s;
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            w = (m[(0, 2)] - m[(2, 0)]) / s;
            x = (m[(0, 1)] + m[(1, 0)]) / s;
            y = 0.25 * s;
            z = (m[(1, 2)] + m[(2, 1)]) / s;
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            w = (m[(1, 0)] - m[(0, 1)]) / s;
            x = (m[(0, 2)] + m[(2, 0)]) / s;
            y = (m[(1, 2)] + m[(2, 1)]) / s;
            z = 0.25 * s;
        }
        Self::renormalized(w, x, y, z)
    }

    /// Geodesic angle of this rotation, in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        quat_angle(self)
    }
}

/// Hamilton product `a * b` (apply `b` first, then `a`).
pub fn quat_compose(a: &UnitQuaternion, b: &UnitQuaternion) -> UnitQuaternion {
    UnitQuaternion::renormalized(
        a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
        a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
        a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
        a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
    )
}

/// `2 acos(w)` of a canonical quaternion difference.
pub fn quat_angle(q_diff: &UnitQuaternion) -> f64 {
    2.0 * q_diff.w.abs().clamp(-1.0, 1.0).acos()
}

/// Orientation difference from `from` to `to`, expressed in the frame of
/// `from`: `from^-1 * to`.
pub fn quat_difference(from: &UnitQuaternion, to: &UnitQuaternion) -> UnitQuaternion {
    quat_compose(&from.inverse(), to)
}

impl Mul for UnitQuaternion {
    type Output = UnitQuaternion;

    fn mul(self, rhs: UnitQuaternion) -> UnitQuaternion {
        quat_compose(&self, &rhs)
    }
}

impl Mul<&UnitQuaternion> for &UnitQuaternion {
    type Output = UnitQuaternion;

    fn mul(self, rhs: &UnitQuaternion) -> UnitQuaternion {
        quat_compose(self, rhs)
    }
}

/// Discrete target-update periods used by the curriculum (1, 2 and 3 Hz).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum UpdatePeriod {
    #[serde(rename = "1.0")]
    OneSecond,
    #[serde(rename = "0.5")]
    HalfSecond,
    #[serde(rename = "0.33")]
    ThirdSecond,
}

impl UpdatePeriod {
    pub const ALL: [UpdatePeriod; 3] =
        [UpdatePeriod::OneSecond, UpdatePeriod::HalfSecond, UpdatePeriod::ThirdSecond];

    pub fn seconds(self) -> f64 {
        match self {
            UpdatePeriod::OneSecond => 1.0,
            UpdatePeriod::HalfSecond => 0.5,
            UpdatePeriod::ThirdSecond => 0.33,
        }
    }

    pub fn from_seconds(s: f64) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| (p.seconds() - s).abs() < 1e-9)
            .ok_or_else(|| Error::invalid_config(format!("update period {s} s is not one of 1.0, 0.5, 0.33")))
    }

    /// Number of whole control steps of length `dt` in one period.
    pub fn steps(self, dt: f64) -> u32 {
        (self.seconds() / dt).round().max(1.0) as u32
    }
}

/// Commanded ball angular velocity: a unit axis, a rate, and the period at
/// which the target orientation advances.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngularVelocityCommand {
    axis: Vector3<f64>,
    magnitude: f64,
    period: UpdatePeriod,
}

impl AngularVelocityCommand {
    pub fn new(axis: Vector3<f64>, magnitude: f64, period: UpdatePeriod) -> Result<Self> {
        if !(magnitude >= 0.0 && magnitude.is_finite()) {
            return Err(Error::invalid_config(format!("angular speed must be >= 0, got {magnitude}")));
        }
        let n = axis.norm();
        if !n.is_finite() || (n - 1.0).abs() > 1e-9 {
            return Err(Error::invalid_config(format!("command axis must be unit length, |axis| = {n}")));
        }
        Ok(Self { axis, magnitude, period })
    }

    pub fn zero(period: UpdatePeriod) -> Self {
        Self { axis: Vector3::z(), magnitude: 0.0, period }
    }

    pub fn axis(&self) -> Vector3<f64> {
        self.axis
    }

    /// rad/s
    pub fn magnitude(&self) -> f64 {
        self.magnitude
    }

    pub fn period(&self) -> UpdatePeriod {
        self.period
    }

    /// Same command with the axis re-expressed through `frame`.
    pub fn rotated(&self, frame: &UnitQuaternion) -> Self {
        let axis = frame.rotate(&self.axis).normalize();
        Self { axis, ..*self }
    }

    /// Rotation covered in one update period.
    pub fn step_rotation(&self) -> UnitQuaternion {
        UnitQuaternion::exp(&(self.axis * (self.magnitude * self.period.seconds())))
    }
}

/// Advances the target by one update period of rotation at the commanded
/// rate. The axis is taken in the world frame, so the increment is applied
/// on the left.
pub fn propagate_target(current_target: &UnitQuaternion, cmd: &AngularVelocityCommand) -> UnitQuaternion {
    if cmd.magnitude == 0.0 {
        return *current_target;
    }
    quat_compose(&cmd.step_rotation(), current_target)
}
