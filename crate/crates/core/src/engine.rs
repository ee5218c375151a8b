//! Closed-loop rollouts: rolling-window warm-up and advance, the one-shot,
//! autoregressive and MPC baselines, ego injection and NFE accounting.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::denoiser::Denoiser;
use crate::diffusion::{augment_observations, AugmentConfig, AugmentMode, SceneWindow, WindowFrame};
use crate::math::hypot;
use crate::rng::normal;
use crate::sampler::{integrate, tau_grid, warmup_grid, Context, SamplerConfig};
use crate::schedule::{window_local_times, ScheduleConfig, Stage};
use crate::tensor::{State, StateTensor};
use crate::world::{collision_check, scenario_centroid, AgentDims, EgoController, MapPolylines, Scenario};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlannerKind {
    /// One joint plan of the whole horizon, replayed without feedback.
    OneShot,
    /// A fresh one-frame joint plan every step.
    Autoregressive,
    /// Joint plan over a lookahead, execute `replan` frames, repeat.
    Mpc { replan: usize },
    Rolling { window: usize, obs_count: usize },
}

impl PlannerKind {
    pub fn name(&self) -> alloc::string::String {
        match self {
            PlannerKind::OneShot => "one-shot".into(),
            PlannerKind::Autoregressive => "autoregressive".into(),
            PlannerKind::Mpc { replan } => format!("mpc-{replan}"),
            PlannerKind::Rolling { window, .. } => format!("rolling-{window}"),
        }
    }

    /// Window length the planner's model must have been built for.
    pub fn required_window(&self, obs_count: usize, horizon: usize, lookahead: usize) -> usize {
        match *self {
            PlannerKind::OneShot => obs_count + horizon,
            PlannerKind::Autoregressive => obs_count + 1,
            PlannerKind::Mpc { replan } => obs_count + lookahead.max(replan),
            PlannerKind::Rolling { window, .. } => window,
        }
    }

    /// Closed-form denoiser call count for a rollout of `horizon` frames.
    pub fn expected_nfe(&self, horizon: usize, sampler: &SamplerConfig, schedule: &ScheduleConfig) -> usize {
        let sweep = SamplerConfig::sweep_nfe(sampler.warmup_steps);
        match *self {
            PlannerKind::OneShot => sweep,
            PlannerKind::Autoregressive => horizon * sweep,
            PlannerKind::Mpc { replan } => horizon.div_ceil(replan) * sweep,
            PlannerKind::Rolling { .. } => {
                let warm = if schedule.future_slots() > 1 { sweep } else { 0 };
                warm + horizon * SamplerConfig::sweep_nfe(sampler.substeps(schedule))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub schedule: ScheduleConfig,
    pub sampler: SamplerConfig,
    /// Noise observation slots at σ_min before every denoise.
    pub test_augment: bool,
    /// Future frames planned by each MPC replan (raised to the stride if smaller).
    pub mpc_lookahead: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self { schedule: ScheduleConfig::default(), sampler: SamplerConfig::default(), test_augment: true, mpc_lookahead: 10 }
    }
}

/// An agent pair whose footprints overlap at a realized step (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub step: usize,
    pub a: usize,
    pub b: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutReport {
    pub planner: PlannerKind,
    /// The `T` simulated frames; agents not present at the last observation
    /// are marked invalid throughout.
    pub realized: Scenario,
    pub ego: Option<usize>,
    pub step_nfe: Vec<usize>,
    pub total_nfe: usize,
    pub collisions: Vec<CollisionEvent>,
    /// Seconds; filled in by callers that own a clock.
    pub wall_time_s: Option<f64>,
}

/// Read-only scene data shared by every step of a rollout.
#[derive(Debug, Clone)]
pub struct SceneInfo {
    pub dims: Vec<AgentDims>,
    /// Agents present at the last observation.
    pub agent_mask: Vec<bool>,
    /// World-frame map.
    pub map: MapPolylines,
}

/// Realized world-frame states, one `Vec<State>` per frame, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct History {
    pub frames: Vec<Vec<State>>,
}

impl History {
    /// The first `obs_count` frames of `init`. Gaps hold the previous valid
    /// state, or the first one for gaps at the start.
    pub fn from_prefix(init: &Scenario, obs_count: usize) -> Result<(Self, SceneInfo)> {
        init.validate()?;
        if obs_count == 0 || init.frames() < obs_count {
            return Err(Error::input(format!("need {obs_count} observed frames, scenario has {}", init.frames())));
        }
        let last = obs_count - 1;
        let agent_mask: Vec<bool> = (0..init.agents()).map(|a| init.is_valid(a, last)).collect();
        if !agent_mask.iter().any(|m| *m) {
            return Err(Error::input("no agent is present at the last observed frame"));
        }
        let mut frames = vec![vec![[0.0; 3]; init.agents()]; obs_count];
        for a in 0..init.agents() {
            let first = (0..obs_count).find(|t| init.is_valid(a, *t));
            let mut held = first.map_or([0.0; 3], |t| init.tracks.get(a, t));
            for (t, frame) in frames.iter_mut().enumerate() {
                if init.is_valid(a, t) {
                    held = init.tracks.get(a, t);
                }
                frame[a] = held;
            }
        }
        let info = SceneInfo { dims: init.dims.clone(), agent_mask, map: init.map.clone() };
        Ok((Self { frames }, info))
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn agents(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }

    pub fn to_tensor(&self) -> StateTensor {
        let (na, nt) = (self.agents(), self.len());
        let mut t = StateTensor::zeros(na, nt);
        for (f, frame) in self.frames.iter().enumerate() {
            for (a, s) in frame.iter().enumerate() {
                t.set(a, f, *s);
            }
        }
        t
    }
}

/// A window with the coordinates its states are expressed in.
#[derive(Debug, Clone, PartialEq)]
pub struct RollingWindow {
    pub window: SceneWindow,
    pub frame: WindowFrame,
    /// Shifts applied to `window` since `frame` was built: slot `w` is slot
    /// `w + lag` of `frame`.
    pub lag: usize,
}

fn fresh_noise<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> State {
    [sigma * normal(rng), sigma * normal(rng), sigma * normal(rng)]
}

fn recent_observations(history: &History, n: usize) -> Result<StateTensor> {
    if history.len() < n {
        return Err(Error::State("history shorter than the observation span".into()));
    }
    let mut obs = StateTensor::zeros(history.agents(), n);
    for (w, frame) in history.frames[history.len() - n..].iter().enumerate() {
        for (a, s) in frame.iter().enumerate() {
            obs.set(a, w, *s);
        }
    }
    Ok(obs)
}

/// Rebuilds the observation slots from the last `n` realized frames,
/// re-anchors the coordinates on them and carries the future slots across.
/// The change of coordinates is a per-slot translation, so noise is untouched.
fn refresh_observations<R: Rng + ?Sized>(
    rw: &mut RollingWindow,
    history: &History,
    info: &SceneInfo,
    cfg: &EngineConfig,
    rng: &mut R,
) -> Result<()> {
    let n = cfg.schedule.obs_count;
    let obs = recent_observations(history, n)?;
    let frame = WindowFrame::from_observations(&obs, &info.agent_mask, n)?;
    let win = &mut rw.window;
    for a in 0..win.agents() {
        for w in 0..win.slots() {
            let s = if w < n {
                frame.to_local(a, w, obs.get(a, w))
            } else {
                frame.to_local(a, w, rw.frame.to_world(a, w + rw.lag, win.states.get(a, w)))
            };
            win.states.set(a, w, s);
        }
    }
    win.obs_sigma = 0.0;
    win.agent_mask = info.agent_mask.clone();
    rw.frame = frame;
    rw.lag = 0;
    if cfg.test_augment {
        *win = augment_observations(win, AugmentMode::Test, &AugmentConfig::default(), &cfg.schedule, rng)?;
    }
    Ok(())
}

fn new_window<R: Rng + ?Sized>(
    history: &History,
    info: &SceneInfo,
    stage: Stage,
    cfg: &EngineConfig,
    rng: &mut R,
) -> Result<RollingWindow> {
    let sc = &cfg.schedule;
    let na = history.agents();
    let obs = recent_observations(history, sc.obs_count)?;
    let frame = WindowFrame::from_observations(&obs, &info.agent_mask, sc.obs_count)?;
    let mut states = StateTensor::zeros(na, sc.window);
    for a in 0..na {
        for w in 0..sc.window {
            let s = if w < sc.obs_count { frame.to_local(a, w, obs.get(a, w)) } else { fresh_noise(sc.sigma_max, rng) };
            states.set(a, w, s);
        }
    }
    let times = window_local_times(stage, 1.0, sc)?;
    let mut window = SceneWindow::new(states, times, sc.obs_count)?;
    window.agent_mask = info.agent_mask.clone();
    if cfg.test_augment {
        window = augment_observations(&window, AugmentMode::Test, &AugmentConfig::default(), sc, rng)?;
    }
    Ok(RollingWindow { window, frame, lag: 0 })
}

fn context<'a>(frame: &'a WindowFrame, map: &'a MapPolylines, info: &'a SceneInfo, cfg: &'a EngineConfig) -> Context<'a> {
    Context { frame, map, cond: &info.dims, schedule: &cfg.schedule }
}

/// Starts a rolling window: observations pinned, future slots from white
/// noise, integrated until the window carries the steady rolling pattern.
/// Returns the window and the denoiser call count.
pub fn warmup<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    history: &History,
    info: &SceneInfo,
    den: &D,
    cfg: &EngineConfig,
    rng: &mut R,
) -> Result<(RollingWindow, usize)> {
    let mut rw = new_window(history, info, Stage::Warmup, cfg, rng)?;
    let map = info.map.in_frame(&rw.frame.scene);
    let nfe = integrate(den, &mut rw.window, Stage::Warmup, &warmup_grid(cfg.sampler.warmup_steps, &cfg.schedule), &context(&rw.frame, &map, info, cfg))?;
    Ok((rw, nfe))
}

/// Advances a rolling window by one frame.
///
/// Observation slots are first refreshed from `history` (which carries any
/// ego override of the previous step). Returns the emitted world-frame states
/// and the denoiser call count; `rw` is left shifted with a fresh noise slot.
pub fn rolling_step<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    rw: &mut RollingWindow,
    history: &History,
    info: &SceneInfo,
    den: &D,
    cfg: &EngineConfig,
    rng: &mut R,
) -> Result<(Vec<State>, usize)> {
    let sc = &cfg.schedule;
    let expected = window_local_times(Stage::Rolling, 1.0, sc)?;
    if *rw.window.local_times != *expected {
        return Err(Error::State("window is not in the rolling pattern".into()));
    }
    refresh_observations(rw, history, info, cfg, rng)?;
    let map = info.map.in_frame(&rw.frame.scene);
    let steps = cfg.sampler.substeps(sc);
    let nfe = integrate(den, &mut rw.window, Stage::Rolling, &tau_grid(steps), &context(&rw.frame, &map, info, cfg))?;

    let n = sc.obs_count;
    let win = &mut rw.window;
    let emitted: Vec<State> = (0..win.agents()).map(|a| rw.frame.to_world(a, n, win.states.get(a, n))).collect();
    let mut shifted = StateTensor::zeros(win.agents(), win.slots());
    for a in 0..win.agents() {
        for w in 0..win.slots() - 1 {
            shifted.set(a, w, win.states.get(a, w + 1));
        }
        shifted.set(a, win.slots() - 1, fresh_noise(sc.sigma_max, rng));
    }
    win.states = shifted;
    win.local_times = win.local_times.shifted();
    rw.lag += 1;
    Ok((emitted, nfe))
}

/// Joint plan of every future slot of a fresh window. World-frame states,
/// `future[k][a]` for future frame `k`.
fn joint_plan<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    history: &History,
    info: &SceneInfo,
    den: &D,
    cfg: &EngineConfig,
    rng: &mut R,
) -> Result<(Vec<Vec<State>>, usize)> {
    let mut rw = new_window(history, info, Stage::Full, cfg, rng)?;
    let map = info.map.in_frame(&rw.frame.scene);
    let nfe = integrate(den, &mut rw.window, Stage::Full, &tau_grid(cfg.sampler.warmup_steps), &context(&rw.frame, &map, info, cfg))?;
    let sc = &cfg.schedule;
    let plan = (sc.obs_count..sc.window)
        .map(|w| (0..rw.window.agents()).map(|a| rw.frame.to_world(a, w, rw.window.states.get(a, w))).collect())
        .collect();
    Ok((plan, nfe))
}

pub struct Ego<'a> {
    pub agent: usize,
    pub controller: &'a dyn EgoController,
}

fn collisions_at(frame: &[State], info: &SceneInfo, step: usize, out: &mut Vec<CollisionEvent>) {
    for a in 0..frame.len() {
        if !info.agent_mask[a] {
            continue;
        }
        for b in a + 1..frame.len() {
            if info.agent_mask[b] && collision_check(frame[a], info.dims[a], frame[b], info.dims[b]) {
                out.push(CollisionEvent { step, a, b });
            }
        }
    }
}

/// Simulates `horizon` frames after the first `obs_count` frames of `init`.
pub fn rollout<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    init: &Scenario,
    planner: PlannerKind,
    ego: Option<Ego<'_>>,
    horizon: usize,
    den: &D,
    cfg: &EngineConfig,
    rng: &mut R,
) -> Result<RolloutReport> {
    if horizon == 0 {
        return Err(Error::config("horizon must be at least 1"));
    }
    cfg.schedule.validate()?;
    cfg.sampler.validate()?;
    let sc = &cfg.schedule;
    let n = sc.obs_count;
    match planner {
        PlannerKind::Mpc { replan: 0 } => return Err(Error::config("mpc replan stride must be at least 1")),
        PlannerKind::Rolling { window, obs_count } if window <= obs_count => {
            return Err(Error::config("rolling window must exceed its observation count"))
        }
        PlannerKind::Rolling { obs_count, .. } if obs_count != n => {
            return Err(Error::config(format!("planner observes {obs_count} frames, model observes {n}")))
        }
        _ => {}
    }
    let need = planner.required_window(n, horizon, cfg.mpc_lookahead);
    if need != sc.window {
        return Err(Error::config(format!("{} needs a {need}-slot window, model has {}", planner.name(), sc.window)));
    }
    let (mut history, info) = History::from_prefix(init, n)?;
    if let Some(e) = &ego {
        if e.agent >= history.agents() || !info.agent_mask[e.agent] {
            return Err(Error::config(format!("ego agent {} is not present at the last observation", e.agent)));
        }
    }

    let mut step_nfe = vec![0; horizon];
    let mut collisions = Vec::new();
    let mut pending: Vec<Vec<State>> = Vec::new();
    let mut rolling: Option<RollingWindow> = None;
    let last_obs = history.frames[n - 1].clone();

    for t in 0..horizon {
        let mut frame = match planner {
            PlannerKind::Rolling { .. } => {
                if rolling.is_none() {
                    let (rw, nfe) = warmup(&history, &info, den, cfg, rng)?;
                    step_nfe[t] += nfe;
                    rolling = Some(rw);
                }
                let rw = rolling.as_mut().expect("initialized above");
                let (frame, nfe) = rolling_step(rw, &history, &info, den, cfg, rng)?;
                step_nfe[t] += nfe;
                frame
            }
            PlannerKind::Autoregressive | PlannerKind::Mpc { .. } | PlannerKind::OneShot => {
                if pending.is_empty() {
                    let (plan, nfe) = joint_plan(&history, &info, den, cfg, rng)?;
                    step_nfe[t] += nfe;
                    let keep = match planner {
                        PlannerKind::Mpc { replan } => replan,
                        _ => plan.len(),
                    };
                    pending = plan.into_iter().take(keep).rev().collect();
                }
                pending.pop().expect("plan is non-empty")
            }
        };
        for a in 0..frame.len() {
            if !info.agent_mask[a] {
                frame[a] = last_obs[a];
            }
        }
        if let Some(e) = &ego {
            frame[e.agent] = e.controller.next_state(&history.to_tensor(), t + 1);
        }
        collisions_at(&frame, &info, t + 1, &mut collisions);
        history.frames.push(frame);
    }

    let mut tracks = StateTensor::zeros(history.agents(), horizon);
    for (t, frame) in history.frames[n..].iter().enumerate() {
        for (a, s) in frame.iter().enumerate() {
            tracks.set(a, t, *s);
        }
    }
    let valid = info.agent_mask.iter().flat_map(|m| core::iter::repeat(*m).take(horizon)).collect();
    let realized = Scenario { tracks, valid, ..init.clone() };
    let total_nfe = step_nfe.iter().sum();
    Ok(RolloutReport { planner, realized, ego: ego.map(|e| e.agent), step_nfe, total_nfe, collisions, wall_time_s: None })
}

/// The agent nearest the scene centroid among agents that have another
/// agent within `radius` meters at the last observed frame.
pub fn select_adversary(init: &Scenario, obs_count: usize, radius: f64) -> Option<usize> {
    let t = obs_count.checked_sub(1)?;
    if t >= init.frames() {
        return None;
    }
    let present = init.valid_agents_at(t);
    let c = scenario_centroid(present.iter().map(|a| init.tracks.get(*a, t)));
    let near = |a: usize, b: usize| {
        let (p, q) = (init.tracks.get(a, t), init.tracks.get(b, t));
        hypot(p[0] - q[0], p[1] - q[1]) <= radius
    };
    let dist = |a: usize| {
        let p = init.tracks.get(a, t);
        hypot(p[0] - c[0], p[1] - c[1])
    };
    present
        .iter()
        .copied()
        .filter(|&a| present.iter().any(|&b| b != a && near(a, b)))
        .min_by(|&a, &b| dist(a).total_cmp(&dist(b)))
}
