//! Training curriculum over target speed, target-update period and the
//! randomization factor.

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotation::{AngularVelocityCommand, UpdatePeriod};

/// Rotation axis of the base frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Roll,
    Pitch,
    Yaw,
}

impl Axis {
    pub fn unit(self) -> Vector3<f64> {
        match self {
            Axis::Roll => Vector3::x(),
            Axis::Pitch => Vector3::y(),
            Axis::Yaw => Vector3::z(),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "roll" => Some(Axis::Roll),
            "pitch" => Some(Axis::Pitch),
            "yaw" => Some(Axis::Yaw),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::Roll => "roll",
            Axis::Pitch => "pitch",
            Axis::Yaw => "yaw",
        }
    }
}

/// Factor and speed ramp linearly between `ramp_start` and `ramp_end`; the
/// period steps 1.0 -> 0.5 -> 0.33 s at the two `period_milestones`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurriculumSchedule {
    pub ramp_start: u64,
    pub ramp_end: u64,
    pub factor_initial: f64,
    pub factor_final: f64,
    pub speed_initial_deg: f64,
    pub speed_final_deg: f64,
    pub period_milestones: [u64; 2],
    pub axes: Vec<Axis>,
}

impl Default for CurriculumSchedule {
    fn default() -> Self {
        Self {
            ramp_start: 1000,
            ramp_end: 4000,
            factor_initial: 0.0,
            factor_final: 1.0,
            speed_initial_deg: 0.0,
            speed_final_deg: 15.0,
            period_milestones: [2000, 3000],
            axes: vec![Axis::Roll, Axis::Pitch, Axis::Yaw],
        }
    }
}

impl CurriculumSchedule {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::invalid_config(format!("curriculum: {m}")));
        if self.ramp_end < self.ramp_start {
            return err("ramp_end must be >= ramp_start");
        }
        if !(0.0 <= self.factor_initial && self.factor_initial <= self.factor_final && self.factor_final <= 1.0) {
            return err("factors must satisfy 0 <= initial <= final <= 1");
        }
        if !(0.0 <= self.speed_initial_deg && self.speed_initial_deg <= self.speed_final_deg && self.speed_final_deg.is_finite()) {
            return err("speeds must satisfy 0 <= initial <= final");
        }
        if self.period_milestones[1] < self.period_milestones[0] {
            return err("period milestones must be non-decreasing");
        }
        if self.axes.is_empty() {
            return err("axis set must not be empty");
        }
        Ok(())
    }

    fn ramp(&self, iteration: u64) -> f64 {
        if iteration <= self.ramp_start {
            0.0
        } else if iteration >= self.ramp_end {
            1.0
        } else {
            (iteration - self.ramp_start) as f64 / (self.ramp_end - self.ramp_start) as f64
        }
    }

    /// Curriculum state after `iteration` updates.
    pub fn at(&self, iteration: u64) -> CurriculumState {
        let s = self.ramp(iteration);
        let period = if iteration >= self.period_milestones[1] {
            UpdatePeriod::ThirdSecond
        } else if iteration >= self.period_milestones[0] {
            UpdatePeriod::HalfSecond
        } else {
            UpdatePeriod::OneSecond
        };
        let speed_deg = self.speed_initial_deg + s * (self.speed_final_deg - self.speed_initial_deg);
        CurriculumState {
            factor: (self.factor_initial + s * (self.factor_final - self.factor_initial)).clamp(0.0, 1.0),
            target_speed: speed_deg.to_radians(),
            update_period: period,
            iteration,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurriculumState {
    pub factor: f64,
    /// rad/s
    pub target_speed: f64,
    pub update_period: UpdatePeriod,
    pub iteration: u64,
}

impl CurriculumState {
    pub fn initial(schedule: &CurriculumSchedule) -> Self {
        schedule.at(0)
    }

    pub fn target_speed_deg(&self) -> f64 {
        self.target_speed.to_degrees()
    }
}

/// State for the next iteration. Saturates once every ramp has finished.
pub fn advance(state: &CurriculumState, schedule: &CurriculumSchedule) -> CurriculumState {
    schedule.at(state.iteration + 1)
}

/// Draws one episode's command: uniform axis, uniform sign, current speed
/// and period. The axis is in the base frame.
pub fn sample_command<R: Rng + ?Sized>(state: &CurriculumState, rng: &mut R, axes: &[Axis]) -> AngularVelocityCommand {
    assert!(!axes.is_empty(), "axis set must not be empty");
    let axis = axes[rng.random_range(0..axes.len())];
    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    AngularVelocityCommand::new(axis.unit() * sign, state.target_speed, state.update_period)
        .expect("unit axis and validated speed")
}
