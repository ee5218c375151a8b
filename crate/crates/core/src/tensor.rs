//! Agent × slot × state arrays.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// `(x, y, heading)`.
pub type State = [f64; 3];

/// Dense `agents × slots × 3` array, agent-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateTensor {
    agents: usize,
    slots: usize,
    data: Vec<State>,
}

impl StateTensor {
    pub fn zeros(agents: usize, slots: usize) -> Self {
        Self { agents, slots, data: vec![[0.0; 3]; agents * slots] }
    }

    pub fn from_states(agents: usize, slots: usize, data: Vec<State>) -> Result<Self> {
        if data.len() != agents * slots {
            return Err(Error::input("state count does not match agents × slots"));
        }
        Ok(Self { agents, slots, data })
    }

    pub fn from_flat(agents: usize, slots: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != agents * slots * 3 {
            return Err(Error::input("flat length does not match agents × slots × 3"));
        }
        let data = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        Ok(Self { agents, slots, data })
    }

    #[inline]
    pub fn agents(&self) -> usize {
        self.agents
    }

    #[inline]
    pub fn slots(&self) -> usize {
        self.slots
    }

    #[inline]
    pub fn get(&self, agent: usize, slot: usize) -> State {
        self.data[agent * self.slots + slot]
    }

    #[inline]
    pub fn get_mut(&mut self, agent: usize, slot: usize) -> &mut State {
        &mut self.data[agent * self.slots + slot]
    }

    #[inline]
    pub fn set(&mut self, agent: usize, slot: usize, s: State) {
        self.data[agent * self.slots + slot] = s;
    }

    pub fn states(&self) -> &[State] {
        &self.data
    }

    pub fn states_mut(&mut self) -> &mut [State] {
        &mut self.data
    }

    pub fn flat(&self) -> Vec<f64> {
        self.data.iter().flat_map(|s| s.iter().copied()).collect()
    }

    pub fn same_shape(&self, other: &StateTensor) -> bool {
        self.agents == other.agents && self.slots == other.slots
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// Copy of slots `start..start + len`.
    pub fn slot_range(&self, start: usize, len: usize) -> Self {
        let mut out = Self::zeros(self.agents, len);
        for a in 0..self.agents {
            for w in 0..len {
                out.set(a, w, self.get(a, start + w));
            }
        }
        out
    }

    /// Rows reordered so that output agent `i` is input agent `perm[i]`.
    pub fn permute_agents(&self, perm: &[usize]) -> Self {
        let mut out = Self::zeros(self.agents, self.slots);
        for (i, &p) in perm.iter().enumerate() {
            for w in 0..self.slots {
                out.set(i, w, self.get(p, w));
            }
        }
        out
    }
}
