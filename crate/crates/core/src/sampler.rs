//! Heun integration of the probability-flow ODE where every slot follows its
//! own noise path `σ(τ_w(τ))` as the global time `τ` runs from 1 to 0.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::denoiser::{Denoiser, DenoiserInput};
use crate::diffusion::{SceneWindow, WindowFrame};
use crate::schedule::{sigmas_of, window_local_times, ScheduleConfig, Stage};
use crate::world::{AgentDims, MapPolylines};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    /// Heun steps over a full 1 → 0 sweep (warm-up and joint windows).
    pub warmup_steps: usize,
    /// Heun steps per rolling frame. `None` keeps the per-slot step density
    /// of the warm-up: `ceil(warmup_steps / (W − n))`.
    pub rolling_substeps: Option<usize>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { warmup_steps: 40, rolling_substeps: None }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_steps == 0 || self.rolling_substeps == Some(0) {
            return Err(Error::config("sampler step counts must be positive"));
        }
        Ok(())
    }

    pub fn substeps(&self, schedule: &ScheduleConfig) -> usize {
        self.rolling_substeps.unwrap_or_else(|| self.warmup_steps.div_ceil(schedule.future_slots().max(1)))
    }

    /// Denoiser calls for one sweep of `steps` steps: Heun everywhere except
    /// the last interval, which lands on σ = 0 and takes a plain Euler step.
    pub fn sweep_nfe(steps: usize) -> usize {
        2 * steps - 1
    }
}

/// Global-time grid `1, 1 − 1/steps, …, 0`.
pub fn tau_grid(steps: usize) -> Vec<f64> {
    (0..=steps).map(|i| if i == steps { 0.0 } else { 1.0 - i as f64 / steps as f64 }).collect()
}

/// Warm-up grid. For global times above `1 − 1/(W − n)` every future slot
/// is still clipped at pure noise, so the steps are spread over
/// `[0, 1 − 1/(W − n)]` only. Empty when the window has one future slot.
pub fn warmup_grid(steps: usize, cfg: &ScheduleConfig) -> Vec<f64> {
    let span = cfg.future_slots();
    if span <= 1 {
        return Vec::new();
    }
    let top = 1.0 - 1.0 / span as f64;
    tau_grid(steps).into_iter().map(|t| t * top).collect()
}

/// Scene context handed to every denoiser call.
#[derive(Debug, Clone, Copy)]
pub struct Context<'a> {
    pub frame: &'a WindowFrame,
    pub map: &'a MapPolylines,
    pub cond: &'a [AgentDims],
    pub schedule: &'a ScheduleConfig,
}

fn input_sigmas(window: &SceneWindow, sigmas: &[f64]) -> Vec<f64> {
    sigmas.iter().zip(&window.obs_mask).map(|(s, obs)| if *obs { window.obs_sigma } else { *s }).collect()
}

/// One step of the per-slot ODE from global time `tau_from` to `tau_to`.
///
/// Observation slots are pinned. Slots whose σ does not change are left alone.
/// The corrector is skipped when `tau_to` is 0. Returns the number of denoiser
/// calls.
pub fn heun_step<D: Denoiser + ?Sized>(
    den: &D,
    window: &mut SceneWindow,
    stage: Stage,
    tau_from: f64,
    tau_to: f64,
    ctx: &Context<'_>,
) -> Result<usize> {
    if !(tau_to < tau_from) {
        return Err(Error::input("sampler steps must decrease global time"));
    }
    let sc = ctx.schedule;
    let t_from = window_local_times(stage, tau_from, sc)?;
    let t_to = window_local_times(stage, tau_to, sc)?;
    let s_from = sigmas_of(&t_from, sc)?;
    let s_to = sigmas_of(&t_to, sc)?;
    if t_from.len() != window.slots() {
        return Err(Error::input("window length does not match the schedule"));
    }
    let moving: Vec<bool> = (0..window.slots()).map(|w| !window.obs_mask[w] && s_to[w] != s_from[w]).collect();

    window.local_times = t_from;
    let sig_in = input_sigmas(window, &s_from);
    let d0 = den.denoise(&DenoiserInput { window, sigmas: &sig_in, frame: ctx.frame, map: ctx.map, cond: ctx.cond })?;
    let mut nfe = 1;

    let x0 = window.states.clone();
    let mut slopes = Vec::with_capacity(x0.states().len());
    for a in 0..x0.agents() {
        for w in 0..x0.slots() {
            let (x, d) = (x0.get(a, w), d0.get(a, w));
            let slope = if moving[w] { [0, 1, 2].map(|c| (x[c] - d[c]) / s_from[w]) } else { [0.0; 3] };
            slopes.push(slope);
            let dt = s_to[w] - s_from[w];
            let s = window.states.get_mut(a, w);
            for c in 0..3 {
                s[c] = x[c] + dt * slope[c];
            }
        }
    }
    window.local_times = t_to;

    if tau_to > 0.0 && moving.iter().any(|m| *m) {
        let sig_in = input_sigmas(window, &s_to);
        let d1 = den.denoise(&DenoiserInput { window, sigmas: &sig_in, frame: ctx.frame, map: ctx.map, cond: ctx.cond })?;
        nfe += 1;
        let mut i = 0;
        for a in 0..x0.agents() {
            for w in 0..x0.slots() {
                let slope0 = slopes[i];
                i += 1;
                if !moving[w] || s_to[w] == 0.0 {
                    continue;
                }
                let (x, d, xe) = (x0.get(a, w), d1.get(a, w), window.states.get(a, w));
                let dt = s_to[w] - s_from[w];
                let s = window.states.get_mut(a, w);
                for c in 0..3 {
                    let slope1 = (xe[c] - d[c]) / s_to[w];
                    s[c] = x[c] + dt * 0.5 * (slope0[c] + slope1);
                }
            }
        }
    }
    if !window.states.all_finite() {
        return Err(Error::State("sampler produced a non-finite state".into()));
    }
    Ok(nfe)
}

/// Runs `heun_step` along consecutive pairs of `taus`. Returns the call count.
pub fn integrate<D: Denoiser + ?Sized>(
    den: &D,
    window: &mut SceneWindow,
    stage: Stage,
    taus: &[f64],
    ctx: &Context<'_>,
) -> Result<usize> {
    let mut nfe = 0;
    for pair in taus.windows(2) {
        nfe += heun_step(den, window, stage, pair[0], pair[1], ctx)?;
    }
    Ok(nfe)
}
