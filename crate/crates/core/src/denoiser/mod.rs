//! Clean-data estimators `D(x; σ)` over scene windows.

mod network;
mod oracle;
pub mod tape;
mod train;

use alloc::format;

use crate::diffusion::{SceneWindow, WindowFrame};
use crate::tensor::StateTensor;
use crate::world::{AgentDims, MapPolylines};
use crate::{Error, Result};

pub use network::{precondition, Preconditioning, ToyConfig, ToyDenoiser};
pub use oracle::{GaussianOracle, OracleMean};
pub use train::{fit, Adam, AdamConfig, TrainConfig, TrainReport};

/// Everything a denoiser sees for one evaluation.
#[derive(Debug, Clone, Copy)]
pub struct DenoiserInput<'a> {
    pub window: &'a SceneWindow,
    /// Per-slot noise scale of `window.states`.
    pub sigmas: &'a [f64],
    /// Coordinates of `window`.
    pub frame: &'a WindowFrame,
    /// Map in `frame.scene`.
    pub map: &'a MapPolylines,
    /// Footprint of each agent row.
    pub cond: &'a [AgentDims],
}

impl DenoiserInput<'_> {
    pub fn validate(&self) -> Result<()> {
        let w = self.window;
        if self.sigmas.len() != w.slots() {
            return Err(Error::input(format!("{} slot sigmas for a {}-slot window", self.sigmas.len(), w.slots())));
        }
        if self.cond.len() != w.agents() || w.agent_mask.len() != w.agents() || self.frame.anchors.len() != w.agents() {
            return Err(Error::input("conditioning does not cover every agent row"));
        }
        if !w.states.all_finite() {
            return Err(Error::input("non-finite state in denoiser input"));
        }
        if let Some(s) = self.sigmas.iter().find(|s| !s.is_finite() || **s < 0.0) {
            return Err(Error::Domain { what: "slot sigma", value: *s });
        }
        Ok(())
    }
}

pub trait Denoiser {
    /// Estimate of the clean window, same shape as `input.window.states`.
    fn denoise(&self, input: &DenoiserInput<'_>) -> Result<StateTensor>;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn denoise(&self, input: &DenoiserInput<'_>) -> Result<StateTensor> {
        (**self).denoise(input)
    }
}
