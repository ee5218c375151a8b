//! Forward processes, conditioning augmentation and the joint-window objective.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::math::{cos, exp, ln, sin};
use crate::rng::normal;
use crate::schedule::{loss_weight, sigma_of_local_time, window_local_times, LocalTimeVector, ScheduleConfig, Stage};
use crate::tensor::{State, StateTensor};
use crate::world::{AgentDims, MapPolylines, Scenario, SceneFrame};
use crate::{Error, Result};

/// A window of `A × W` agent states in scene units with its noise bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneWindow {
    pub states: StateTensor,
    pub local_times: LocalTimeVector,
    /// `true` for the leading observation slots.
    pub obs_mask: Vec<bool>,
    pub agent_mask: Vec<bool>,
    /// Noise level currently carried by the observation slots (0 when clean).
    pub obs_sigma: f64,
}

impl SceneWindow {
    pub fn new(states: StateTensor, local_times: LocalTimeVector, obs_count: usize) -> Result<Self> {
        let w = states.slots();
        if local_times.len() != w {
            return Err(Error::input("local time count does not match window length"));
        }
        if obs_count > w {
            return Err(Error::input("more observation slots than window slots"));
        }
        let agent_mask = vec![true; states.agents()];
        Ok(Self { states, local_times, obs_mask: (0..w).map(|i| i < obs_count).collect(), agent_mask, obs_sigma: 0.0 })
    }

    pub fn agents(&self) -> usize {
        self.states.agents()
    }

    pub fn slots(&self) -> usize {
        self.states.slots()
    }

    pub fn obs_count(&self) -> usize {
        self.obs_mask.iter().filter(|o| **o).count()
    }

    /// Per-slot noise scales: the recorded augmentation level on observation
    /// slots, the schedule value elsewhere.
    pub fn slot_sigmas(&self, cfg: &ScheduleConfig) -> Result<Vec<f64>> {
        self.local_times
            .iter()
            .zip(&self.obs_mask)
            .map(|(t, obs)| if *obs { Ok(self.obs_sigma) } else { sigma_of_local_time(*t, cfg) })
            .collect()
    }
}

/// `clean + σ ε` elementwise with `ε ~ N(0, 1)`; returns `clean` unchanged for `σ = 0`.
pub fn forward_sample<R: Rng + ?Sized>(clean: &StateTensor, sigma: f64, rng: &mut R) -> Result<StateTensor> {
    if !(sigma >= 0.0) {
        return Err(Error::Domain { what: "sigma", value: sigma });
    }
    let mut out = clean.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    for s in out.states_mut() {
        for v in s.iter_mut() {
            *v += sigma * normal(rng);
        }
    }
    Ok(out)
}

fn noise_slot<R: Rng + ?Sized>(states: &mut StateTensor, slot: usize, sigma: f64, rng: &mut R) {
    if sigma == 0.0 {
        return;
    }
    for a in 0..states.agents() {
        let s = states.get_mut(a, slot);
        for v in s.iter_mut() {
            *v += sigma * normal(rng);
        }
    }
}

/// Noises each slot of `clean` at the level its local time dictates under `stage`.
pub fn rolling_forward_sample<R: Rng + ?Sized>(
    clean: &StateTensor,
    tau: f64,
    stage: Stage,
    cfg: &ScheduleConfig,
    rng: &mut R,
) -> Result<SceneWindow> {
    if clean.slots() != cfg.window {
        return Err(Error::input(format!("window has {} slots, config expects {}", clean.slots(), cfg.window)));
    }
    let times = window_local_times(stage, tau, cfg)?;
    let mut states = clean.clone();
    for (w, t) in times.iter().enumerate() {
        noise_slot(&mut states, w, sigma_of_local_time(*t, cfg)?, rng);
    }
    SceneWindow::new(states, times, cfg.obs_count)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMode {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Per-example probability of noising the observation slots in training.
    pub p_ca: f64,
    /// Draw the training level log-uniformly instead of uniformly in σ.
    pub log_uniform: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { p_ca: 0.5, log_uniform: false }
    }
}

/// Conditioning augmentation of the observation slots.
///
/// Training: with probability `p_ca` all observation slots share one level
/// `σ_ca ~ U[σ_min, σ_max]`. Test: always `σ_min`. Other slots are untouched.
pub fn augment_observations<R: Rng + ?Sized>(
    window: &SceneWindow,
    mode: AugmentMode,
    aug: &AugmentConfig,
    cfg: &ScheduleConfig,
    rng: &mut R,
) -> Result<SceneWindow> {
    if !(0.0..=1.0).contains(&aug.p_ca) {
        return Err(Error::config("p_ca must lie in [0, 1]"));
    }
    let sigma = match mode {
        AugmentMode::Test => cfg.sigma_min,
        AugmentMode::Train => {
            if aug.p_ca == 0.0 || !rng.gen_bool(aug.p_ca) {
                return Ok(window.clone());
            }
            if aug.log_uniform {
                exp(rng.gen_range(ln(cfg.sigma_min)..=ln(cfg.sigma_max)))
            } else {
                rng.gen_range(cfg.sigma_min..=cfg.sigma_max)
            }
        }
    };
    let mut out = window.clone();
    for (w, obs) in window.obs_mask.iter().enumerate() {
        if *obs {
            noise_slot(&mut out.states, w, sigma, rng);
        }
    }
    out.obs_sigma = sigma;
    Ok(out)
}

/// What the trained model is asked to do.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Warm-up with probability `task_ratio`, rolling otherwise.
    RollingWindow,
    /// Ordinary joint diffusion of all future slots.
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchConfig {
    pub schedule: ScheduleConfig,
    pub task: TaskKind,
    pub augment: AugmentConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    pub noisy: SceneWindow,
    pub clean_target: StateTensor,
    pub slot_sigmas: Vec<f64>,
    pub weights: Vec<f64>,
    pub map: MapPolylines,
    pub cond: Vec<AgentDims>,
    pub stage: Stage,
    pub tau: f64,
    pub start: usize,
    pub frame: WindowFrame,
}

/// Meters per unit of the residual coordinates the model diffuses.
pub const RESIDUAL_SCALE_M: f64 = 10.0;

/// Constant-velocity reference of one agent, taken at its last observed state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentAnchor {
    pub pos: [f64; 2],
    /// Meters per frame.
    pub vel: [f64; 2],
    pub heading: f64,
}

/// Coordinates of a window.
///
/// Each agent's states are expressed as the residual from its constant-velocity
/// extrapolation: position offset divided by [`RESIDUAL_SCALE_M`], heading
/// offset in radians. Slot `w` lies `w − (obs_count − 1)` frames after the
/// anchor. `scene` centres the map and the conditioning features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowFrame {
    pub scene: SceneFrame,
    pub anchors: Vec<AgentAnchor>,
    pub obs_count: usize,
}

impl WindowFrame {
    /// Frame of a window whose first `obs_count` slots of `states` (world
    /// frame) are observed. The scene origin is the centroid of valid observed
    /// positions.
    pub fn from_observations(states: &StateTensor, agent_mask: &[bool], obs_count: usize) -> Result<Self> {
        if obs_count == 0 || obs_count > states.slots() {
            return Err(Error::input("window frame needs at least one observed slot"));
        }
        let pts = (0..states.agents())
            .filter(|a| agent_mask[*a])
            .flat_map(|a| (0..obs_count).map(move |w| (a, w)))
            .map(|(a, w)| states.get(a, w));
        let scene = SceneFrame::centered(crate::world::scenario_centroid(pts));
        let last = obs_count - 1;
        let anchors = (0..states.agents())
            .map(|a| {
                let p = states.get(a, last);
                let vel = if last > 0 {
                    let q = states.get(a, 0);
                    [(p[0] - q[0]) / last as f64, (p[1] - q[1]) / last as f64]
                } else {
                    [0.0, 0.0]
                };
                AgentAnchor { pos: [p[0], p[1]], vel, heading: p[2] }
            })
            .collect();
        Ok(Self { scene, anchors, obs_count })
    }

    /// Every agent parked at the origin; for tests and frame-free denoisers.
    pub fn stationary(agents: usize, obs_count: usize) -> Self {
        let anchors = vec![AgentAnchor { pos: [0.0, 0.0], vel: [0.0, 0.0], heading: 0.0 }; agents];
        Self { scene: SceneFrame::centered([0.0, 0.0]), anchors, obs_count }
    }

    fn offset(&self, slot: usize) -> f64 {
        slot as f64 - (self.obs_count as f64 - 1.0)
    }

    /// Extrapolated world pose of `agent` at `slot`.
    pub fn reference(&self, agent: usize, slot: usize) -> State {
        let an = &self.anchors[agent];
        let k = self.offset(slot);
        [an.pos[0] + k * an.vel[0], an.pos[1] + k * an.vel[1], an.heading]
    }

    pub fn to_local(&self, agent: usize, slot: usize, s: State) -> State {
        let r = self.reference(agent, slot);
        [(s[0] - r[0]) / RESIDUAL_SCALE_M, (s[1] - r[1]) / RESIDUAL_SCALE_M, s[2] - r[2]]
    }

    pub fn to_world(&self, agent: usize, slot: usize, s: State) -> State {
        let r = self.reference(agent, slot);
        [s[0] * RESIDUAL_SCALE_M + r[0], s[1] * RESIDUAL_SCALE_M + r[1], s[2] + r[2]]
    }

    /// Noise-free context of one token: extrapolated position in scene units,
    /// heading direction, velocity.
    pub fn features(&self, agent: usize, slot: usize) -> [f64; 6] {
        let r = self.reference(agent, slot);
        let [x, y] = self.scene.point_to_local([r[0], r[1]]);
        let v = self.anchors[agent].vel;
        [x, y, cos(r[2]), sin(r[2]), v[0] / 2.0, v[1] / 2.0]
    }
}

/// Draws one training example from `scenario`.
pub fn make_training_batch<R: Rng + ?Sized>(scenario: &Scenario, cfg: &BatchConfig, rng: &mut R) -> Result<TrainingBatch> {
    let sc = &cfg.schedule;
    let w = sc.window;
    if scenario.frames() < w {
        return Err(Error::input(format!("scenario has {} frames, window needs {}", scenario.frames(), w)));
    }
    let start = rng.gen_range(0..=scenario.frames() - w);
    let stage = match cfg.task {
        TaskKind::Joint => Stage::Full,
        TaskKind::RollingWindow => {
            if sc.task_ratio > 0.0 && rng.gen_bool(sc.task_ratio) {
                Stage::Warmup
            } else {
                Stage::Rolling
            }
        }
    };
    let tau: f64 = rng.gen_range(0.0..1.0);

    let agent_mask: Vec<bool> = (0..scenario.agents()).map(|a| (start..start + w).all(|t| scenario.is_valid(a, t))).collect();
    let raw = scenario.tracks.slot_range(start, w);
    let frame = WindowFrame::from_observations(&raw, &agent_mask, sc.obs_count)?;
    let mut clean = raw;
    for a in 0..clean.agents() {
        for w in 0..w {
            let s = clean.get_mut(a, w);
            *s = frame.to_local(a, w, *s);
        }
    }

    let mut noisy = rolling_forward_sample(&clean, tau, stage, sc, rng)?;
    noisy.agent_mask = agent_mask;
    let noisy = augment_observations(&noisy, AugmentMode::Train, &cfg.augment, sc, rng)?;
    let slot_sigmas = noisy.slot_sigmas(sc)?;
    let weights = slot_sigmas.iter().map(|s| loss_weight(*s, sc)).collect();
    Ok(TrainingBatch {
        noisy,
        clean_target: clean,
        slot_sigmas,
        weights,
        map: scenario.map.in_frame(&frame.scene),
        cond: scenario.dims.clone(),
        stage,
        tau,
        start,
        frame,
    })
}

/// `Σ_w ω_w · MSE_w`, the per-slot mean taken over valid agents and the three
/// state channels.
pub fn road_loss(prediction: &StateTensor, batch: &TrainingBatch) -> Result<f64> {
    weighted_loss(prediction, &batch.clean_target, &batch.weights, &batch.noisy.agent_mask)
}

pub fn weighted_loss(prediction: &StateTensor, target: &StateTensor, weights: &[f64], agent_mask: &[bool]) -> Result<f64> {
    if !prediction.same_shape(target) || weights.len() != target.slots() || agent_mask.len() != target.agents() {
        return Err(Error::input("prediction, target, weights and mask shapes disagree"));
    }
    let valid = agent_mask.iter().filter(|m| **m).count();
    if valid == 0 {
        return Ok(0.0);
    }
    let denom = (valid * 3) as f64;
    let mut total = 0.0;
    for (w, weight) in weights.iter().enumerate() {
        if *weight == 0.0 {
            continue;
        }
        let mut sse = 0.0;
        for a in (0..target.agents()).filter(|a| agent_mask[*a]) {
            let (p, t) = (prediction.get(a, w), target.get(a, w));
            sse += (0..3).map(|c| (p[c] - t[c]) * (p[c] - t[c])).sum::<f64>();
        }
        total += weight * sse / denom;
    }
    Ok(total)
}
