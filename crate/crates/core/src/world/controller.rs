use alloc::vec::Vec;

use crate::tensor::{State, StateTensor};
use crate::{Error, Result};

/// Drives one agent from outside the generative model.
pub trait EgoController {
    /// State for simulation step `step` (1-based: step 1 is the first
    /// frame after the last observation). `history` holds every realized
    /// frame so far, world coordinates, `A × frames`.
    fn next_state(&self, history: &StateTensor, step: usize) -> State;
}

/// Replays a logged track, optionally slowed down.
///
/// `track[0]` is the state at the last observed frame; the state at step `t`
/// is the log at continuous time `time_scale · t`, linearly interpolated and
/// clamped to the end of the log.
#[derive(Debug, Clone)]
pub struct ReplayController {
    track: Vec<State>,
    time_scale: f64,
}

impl ReplayController {
    pub fn new(track: Vec<State>, time_scale: f64) -> Result<Self> {
        if !(time_scale > 0.0 && time_scale <= 1.0) {
            return Err(Error::Domain { what: "time_scale", value: time_scale });
        }
        if track.is_empty() {
            return Err(Error::input("replay track is empty"));
        }
        Ok(Self { track, time_scale })
    }

    pub fn state_at(&self, time: f64) -> State {
        let last = self.track.len() - 1;
        if !(time > 0.0) {
            return self.track[0];
        }
        let i = crate::math::floor(time) as usize;
        if i >= last {
            return self.track[last];
        }
        let f = time - i as f64;
        let (a, b) = (self.track[i], self.track[i + 1]);
        [a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1]), a[2] + f * (b[2] - a[2])]
    }
}

impl EgoController for ReplayController {
    fn next_state(&self, _history: &StateTensor, step: usize) -> State {
        self.state_at(self.time_scale * step as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn line(n: usize) -> Vec<State> {
        (0..n).map(|i| [i as f64, 0.0, 0.0]).collect()
    }

    #[test]
    fn unit_scale_is_exact_replay() {
        let track: Vec<State> = (0..20).map(|i| [i as f64 * 1.3, (i * i) as f64 * 0.1, 0.01 * i as f64]).collect();
        let c = ReplayController::new(track.clone(), 1.0).unwrap();
        let h = StateTensor::zeros(1, 1);
        for (t, s) in track.iter().enumerate() {
            assert_eq!(c.next_state(&h, t), *s);
        }
    }

    #[test]
    fn half_speed_reaches_half_way() {
        let c = ReplayController::new(line(41), 0.5).unwrap();
        let h = StateTensor::zeros(1, 1);
        assert_eq!(c.next_state(&h, 40), [20.0, 0.0, 0.0]);
        assert_eq!(c.next_state(&h, 1), [0.5, 0.0, 0.0]);
    }

    #[test]
    fn clamps_past_the_end() {
        let c = ReplayController::new(line(5), 1.0).unwrap();
        assert_eq!(c.next_state(&StateTensor::zeros(1, 1), 99), [4.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_bad_scale() {
        assert!(ReplayController::new(line(3), 0.0).is_err());
        assert!(ReplayController::new(line(3), 1.5).is_err());
        assert!(ReplayController::new(vec![], 1.0).is_err());
    }
}
