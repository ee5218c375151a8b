use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::MapPolylines;
use crate::tensor::{State, StateTensor};
use crate::{Error, Result};

/// Meters per normalized scene unit.
pub const SCENE_SCALE: f64 = 50.0;

/// Largest plausible displacement between consecutive valid 10 Hz states.
pub const MAX_STEP_M: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentDims {
    pub length: f64,
    pub width: f64,
}

impl AgentDims {
    pub const fn new(length: f64, width: f64) -> Self {
        Self { length, width }
    }
}

/// Translation + isotropic scaling between world meters and scene units.
/// Headings are left untouched.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneFrame {
    pub origin: [f64; 2],
    pub scale: f64,
}

impl SceneFrame {
    pub const IDENTITY: SceneFrame = SceneFrame { origin: [0.0, 0.0], scale: 1.0 };

    pub fn centered(origin: [f64; 2]) -> Self {
        Self { origin, scale: SCENE_SCALE }
    }

    #[inline]
    pub fn point_to_local(&self, p: [f64; 2]) -> [f64; 2] {
        [(p[0] - self.origin[0]) / self.scale, (p[1] - self.origin[1]) / self.scale]
    }

    #[inline]
    pub fn point_to_world(&self, p: [f64; 2]) -> [f64; 2] {
        [p[0] * self.scale + self.origin[0], p[1] * self.scale + self.origin[1]]
    }

    #[inline]
    pub fn to_local(&self, s: State) -> State {
        let [x, y] = self.point_to_local([s[0], s[1]]);
        [x, y, s[2]]
    }

    #[inline]
    pub fn to_world(&self, s: State) -> State {
        let [x, y] = self.point_to_world([s[0], s[1]]);
        [x, y, s[2]]
    }

    /// Local-coordinate offset that maps points expressed in `self` into `other`.
    /// Only valid between frames of equal scale.
    pub fn translation_to(&self, other: &SceneFrame) -> [f64; 2] {
        [
            (self.origin[0] - other.origin[0]) / self.scale,
            (self.origin[1] - other.origin[1]) / self.scale,
        ]
    }
}

/// A traffic scene: `A` agent tracks of `T` frames at 10 Hz in world meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub location: String,
    pub track_ids: Vec<u64>,
    pub agent_types: Vec<String>,
    pub dims: Vec<AgentDims>,
    pub tracks: StateTensor,
    /// Agent-major `A × T` validity.
    pub valid: Vec<bool>,
    pub map: MapPolylines,
}

impl Scenario {
    pub fn agents(&self) -> usize {
        self.tracks.agents()
    }

    pub fn frames(&self) -> usize {
        self.tracks.slots()
    }

    #[inline]
    pub fn is_valid(&self, agent: usize, frame: usize) -> bool {
        self.valid[agent * self.frames() + frame]
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.agents();
        if a == 0 {
            return Err(Error::input("scenario has no agents"));
        }
        if self.frames() == 0 {
            return Err(Error::input("scenario has no frames"));
        }
        if self.dims.len() != a || self.track_ids.len() != a || self.agent_types.len() != a {
            return Err(Error::input("per-agent metadata length mismatch"));
        }
        if self.valid.len() != a * self.frames() {
            return Err(Error::input("validity mask shape mismatch"));
        }
        if self.dims.iter().any(|d| !(d.length > 0.0 && d.width > 0.0)) {
            return Err(Error::input("agent dimensions must be positive"));
        }
        Ok(())
    }

    /// Count of consecutive valid-state pairs that move further than 5 m.
    pub fn step_bound_violations(&self) -> usize {
        let mut count = 0;
        for a in 0..self.agents() {
            for t in 1..self.frames() {
                if self.is_valid(a, t) && self.is_valid(a, t - 1) {
                    let p = self.tracks.get(a, t - 1);
                    let q = self.tracks.get(a, t);
                    if crate::math::hypot(q[0] - p[0], q[1] - p[1]) >= MAX_STEP_M {
                        count += 1;
                    }
                }
            }
        }
        count
    }

    /// Agents valid at `frame`.
    pub fn valid_agents_at(&self, frame: usize) -> Vec<usize> {
        (0..self.agents()).filter(|&a| self.is_valid(a, frame)).collect()
    }

    /// Keeps only `frames` (a contiguous range); used for held-out ground truth.
    pub fn frame_range(&self, start: usize, len: usize) -> Scenario {
        let mut valid = vec![false; self.agents() * len];
        for a in 0..self.agents() {
            for t in 0..len {
                valid[a * len + t] = self.is_valid(a, start + t);
            }
        }
        Scenario { tracks: self.tracks.slot_range(start, len), valid, ..self.clone() }
    }

    /// Truncates to the `cap` agents nearest the centroid of frame-0 positions.
    pub fn truncate_agents(&self, cap: usize) -> Scenario {
        if self.agents() <= cap {
            return self.clone();
        }
        let c = centroid(self.valid_agents_at(0).iter().map(|&a| self.tracks.get(a, 0)));
        let mut order: Vec<usize> = (0..self.agents()).collect();
        let dist = |a: usize| {
            let s = self.tracks.get(a, 0);
            (s[0] - c[0]) * (s[0] - c[0]) + (s[1] - c[1]) * (s[1] - c[1])
        };
        order.sort_by(|&i, &j| dist(i).total_cmp(&dist(j)));
        order.truncate(cap);
        order.sort_unstable();
        self.select_agents(&order)
    }

    pub fn select_agents(&self, keep: &[usize]) -> Scenario {
        let t = self.frames();
        let mut tracks = StateTensor::zeros(keep.len(), t);
        let mut valid = Vec::with_capacity(keep.len() * t);
        for (i, &a) in keep.iter().enumerate() {
            for f in 0..t {
                tracks.set(i, f, self.tracks.get(a, f));
                valid.push(self.is_valid(a, f));
            }
        }
        Scenario {
            id: self.id.clone(),
            location: self.location.clone(),
            track_ids: keep.iter().map(|&a| self.track_ids[a]).collect(),
            agent_types: keep.iter().map(|&a| self.agent_types[a].clone()).collect(),
            dims: keep.iter().map(|&a| self.dims[a]).collect(),
            tracks,
            valid,
            map: self.map.clone(),
        }
    }
}

/// Mean `(x, y)` of an iterator of states; origin for an empty iterator.
pub fn centroid(states: impl Iterator<Item = State>) -> [f64; 2] {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for s in states {
        sx += s[0];
        sy += s[1];
        n += 1;
    }
    if n == 0 {
        [0.0, 0.0]
    } else {
        [sx / n as f64, sy / n as f64]
    }
}
