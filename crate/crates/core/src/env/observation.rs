use nalgebra::Vector3;

use crate::physics::{JointVector, NUM_JOINTS};
use crate::rotation::UnitQuaternion;

/// Scalars in one observation frame.
pub const FRAME_DIM: usize = 2 * NUM_JOINTS + 3 + 4 + NUM_JOINTS;
/// Frames stacked in one observation.
pub const HISTORY_LEN: usize = 3;
pub const OBS_DIM: usize = HISTORY_LEN * FRAME_DIM + 1;
pub const ACTION_DIM: usize = NUM_JOINTS;

/// One sampled frame: `(joint pos, joint vel, ball position in the base
/// frame, quaternion difference to the target, previous action)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ObservationFrame {
    pub joints_pos: JointVector,
    pub joints_vel: JointVector,
    pub ball_pos_in_base: Vector3<f64>,
    /// `ball^-1 * target`, canonical.
    pub quat_diff: UnitQuaternion,
    /// Bounded joint command of the previous step, in `[-1, 1]`.
    pub prev_action: JointVector,
}

impl ObservationFrame {
    pub fn write_to(&self, out: &mut [f64]) {
        debug_assert_eq!(out.len(), FRAME_DIM);
        out[..12].copy_from_slice(self.joints_pos.as_slice());
        out[12..24].copy_from_slice(self.joints_vel.as_slice());
        out[24..27].copy_from_slice(self.ball_pos_in_base.as_slice());
        out[27..31].copy_from_slice(&self.quat_diff.to_array());
        out[31..43].copy_from_slice(self.prev_action.as_slice());
    }
}

/// Flat policy input: frames `t`, `t-1`, `t-2` then the normalized time to
/// the next target update.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn frame(&self, k: usize) -> &[f64] {
        &self.0[k * FRAME_DIM..(k + 1) * FRAME_DIM]
    }

    pub fn t_remain(&self) -> f64 {
        self.0[OBS_DIM - 1]
    }
}

/// Stacks the newest three frames (newest first) and appends `t_remain`,
/// already normalized by the update period.
pub fn build_observation(history: &[ObservationFrame; HISTORY_LEN], t_remain_normalized: f64) -> Observation {
    let mut data = [0.0; OBS_DIM];
    for (k, frame) in history.iter().enumerate() {
        frame.write_to(&mut data[k * FRAME_DIM..(k + 1) * FRAME_DIM]);
    }
    data[OBS_DIM - 1] = t_remain_normalized;
    Observation(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimensions() {
        assert_eq!(FRAME_DIM, 43);
        assert_eq!(OBS_DIM, 130);
    }

    #[test]
    fn layout() {
        let f = ObservationFrame {
            joints_pos: JointVector::splat(1.0),
            joints_vel: JointVector::splat(2.0),
            ball_pos_in_base: Vector3::new(3.0, 4.0, 5.0),
            quat_diff: UnitQuaternion::identity(),
            prev_action: JointVector::splat(-1.0),
        };
        let mut g = f.clone();
        g.joints_pos[0] = 7.0;
        let obs = build_observation(&[g, f.clone(), f], 0.25);
        assert_eq!(obs.len(), 130);
        assert_eq!(obs.0[0], 7.0);
        assert_eq!(obs.0[43], 1.0);
        assert_eq!(obs.0[12], 2.0);
        assert_eq!(&obs.0[24..31], &[3.0, 4.0, 5.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(obs.0[42], -1.0);
        assert_eq!(obs.t_remain(), 0.25);
    }
}
