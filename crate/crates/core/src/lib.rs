//! Rolling-window diffusion planning for closed-loop multi-agent traffic
//! simulation.
//!
//! The crate is `no_std` with `alloc`. Everything that touches the file
//! system, the clock or the command line lives in the `rollsim` crate.
//!
//! Module map:
//!
//! - [`schedule`]: EDM noise curve, SNR, local diffusion-time maps, loss weights.
//! - [`diffusion`]: scene windows, forward noising, conditioning augmentation,
//!   training batches and the joint-window loss.
//! - [`denoiser`]: the clean-data estimator interface, a Gaussian oracle and a
//!   small attention network with its own reverse-mode differentiation.
//! - [`sampler`]: Heun integration of the probability-flow ODE along per-slot
//!   noise paths.
//! - [`engine`]: warm-up, rolling advance, the one-shot / autoregressive / MPC
//!   baselines and NFE accounting.
//! - [`world`]: scenarios, synthetic traffic, maps, controllers, collision geometry.
//! - [`metrics`]: minSceneADE/FDE, miss rate, collision rate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod denoiser;
pub mod diffusion;
pub mod engine;
mod error;
pub(crate) mod math;
pub mod metrics;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod tensor;
pub mod world;

pub use error::{Error, Result};
