//! Run configuration, read from TOML. Every field has a default, so an empty
//! file is a valid config.

use std::path::{Path, PathBuf};

use rollsim_core::denoiser::{ToyConfig, TrainConfig};
use rollsim_core::diffusion::{AugmentConfig, BatchConfig, TaskKind};
use rollsim_core::engine::{EngineConfig, PlannerKind};
use rollsim_core::sampler::SamplerConfig;
use rollsim_core::schedule::ScheduleConfig;
use rollsim_core::world::SynthConfig;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub schedule: ScheduleConfig,
    pub sampler: SamplerConfig,
    pub planner: PlannerSection,
    pub world: WorldSection,
    pub training: TrainingSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerSection {
    /// `rolling`, `autoregressive`, `one-shot` or `mpc-<X>`.
    pub kind: String,
    /// Rolling window length W.
    pub window: usize,
    /// Simulated frames after the observations.
    pub horizon: usize,
    pub samples: usize,
    /// Replace one agent per scene by a slowed replay of its log.
    pub adversary: bool,
    pub adversary_time_scale: f64,
    /// An adversary candidate needs another agent within this many meters.
    pub adversary_radius: f64,
    pub test_augment: bool,
    pub mpc_lookahead: usize,
}

impl Default for PlannerSection {
    fn default() -> Self {
        Self {
            kind: "rolling".into(),
            window: 15,
            horizon: 40,
            samples: 3,
            adversary: false,
            adversary_time_scale: 0.5,
            adversary_radius: 10.0,
            test_augment: true,
            mpc_lookahead: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSection {
    /// Scenarios written by `synth`.
    pub scenarios: usize,
    pub synth: SynthConfig,
    /// Scenes with fewer agents present at the last observation are skipped
    /// by `simulate`.
    pub min_scene_agents: usize,
    /// Agents kept per scene, nearest the centroid first.
    pub agent_cap: usize,
    /// Scenario directory used when a command is not given one.
    pub data_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Default for WorldSection {
    fn default() -> Self {
        Self { scenarios: 2000, synth: SynthConfig::default(), min_scene_agents: 4, agent_cap: 32, data_dir: None, checkpoint: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub model: ToyConfig,
    pub optimizer: TrainConfig,
    pub augment: AugmentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            schedule: ScheduleConfig::default(),
            sampler: SamplerConfig::default(),
            planner: PlannerSection::default(),
            world: WorldSection::default(),
            training: TrainingSection::default(),
        }
    }
}

/// Parses a planner name. `window` applies to `rolling` only.
pub fn parse_planner(name: &str, window: usize, obs_count: usize) -> Result<PlannerKind> {
    match name {
        "rolling" => Ok(PlannerKind::Rolling { window, obs_count }),
        "autoregressive" | "ar" => Ok(PlannerKind::Autoregressive),
        "one-shot" | "oneshot" => Ok(PlannerKind::OneShot),
        _ => {
            let replan = name
                .strip_prefix("mpc-")
                .and_then(|x| x.parse::<usize>().ok())
                .filter(|x| *x > 0)
                .ok_or_else(|| Error::Config(format!("unknown planner '{name}'")))?;
            Ok(PlannerKind::Mpc { replan })
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::schema(path, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.sampler.validate()?;
        self.training.model.validate()?;
        self.world.synth.validate()?;
        let p = &self.planner;
        if p.horizon == 0 || p.samples == 0 {
            return Err(Error::Config("planner.horizon and planner.samples must be positive".into()));
        }
        if !(p.adversary_time_scale > 0.0 && p.adversary_time_scale <= 1.0) {
            return Err(Error::Config("planner.adversary_time_scale must lie in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.training.augment.p_ca) {
            return Err(Error::Config("training.augment.p_ca must lie in [0, 1]".into()));
        }
        if self.world.agent_cap == 0 {
            return Err(Error::Config("world.agent_cap must be positive".into()));
        }
        self.planner()?;
        for path in [&self.world.data_dir, &self.world.checkpoint].into_iter().flatten() {
            if !path.exists() {
                return Err(Error::Config(format!("{} does not exist", path.display())));
            }
        }
        Ok(())
    }

    pub fn planner(&self) -> Result<PlannerKind> {
        parse_planner(&self.planner.kind, self.planner.window, self.schedule.obs_count)
    }

    /// Schedule of the model `planner` runs on.
    pub fn model_schedule(&self, planner: PlannerKind) -> ScheduleConfig {
        let n = self.schedule.obs_count;
        let w = planner.required_window(n, self.planner.horizon, self.planner.mpc_lookahead);
        self.schedule.with_window(w, n)
    }

    pub fn batch_config(&self, planner: PlannerKind) -> BatchConfig {
        let task = match planner {
            PlannerKind::Rolling { .. } => TaskKind::RollingWindow,
            _ => TaskKind::Joint,
        };
        BatchConfig { schedule: self.model_schedule(planner), task, augment: self.training.augment }
    }

    pub fn engine_config(&self, planner: PlannerKind) -> EngineConfig {
        EngineConfig {
            schedule: self.model_schedule(planner),
            sampler: self.sampler,
            test_augment: self.planner.test_augment,
            mpc_lookahead: self.planner.mpc_lookahead,
        }
    }
}
