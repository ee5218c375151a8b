//! Corpus synthesis, training and closed-loop evaluation shared by the CLI
//! commands and the acceptance suite.

use std::time::Instant;

use rollsim_core::denoiser::{fit, Denoiser, ToyDenoiser, TrainReport};
use rollsim_core::engine::{rollout, select_adversary, Ego, PlannerKind, RolloutReport};
use rollsim_core::metrics::{self, MetricReport};
use rollsim_core::rng::{seeded, substream, substream_seed};
use rollsim_core::world::{synth_generate, ReplayController, Scenario, SynthConfig};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::{Error, Result};

/// Scenario `index` of stream `name`: `<name>-<index>` with its own rng.
pub fn synth_scenario(cfg: &SynthConfig, seed: u64, name: &str, index: u64, agent_cap: usize) -> Result<Scenario> {
    let mut rng = substream(seed, name, index);
    let mut sc = synth_generate(cfg, &mut rng)?.truncate_agents(agent_cap);
    sc.id = format!("{name}-{index:05}");
    Ok(sc)
}

pub fn synth_corpus(cfg: &SynthConfig, seed: u64, name: &str, count: usize, agent_cap: usize) -> Result<Vec<Scenario>> {
    (0..count as u64).map(|i| synth_scenario(cfg, seed, name, i, agent_cap)).collect()
}

/// At least `min_agents` agents present at the last observed frame.
pub fn eligible(sc: &Scenario, obs_count: usize, min_agents: usize) -> bool {
    obs_count >= 1 && sc.frames() >= obs_count && sc.valid_agents_at(obs_count - 1).len() >= min_agents
}

/// The first `count` eligible scenarios of stream `name`, long enough for
/// `obs_count + horizon` frames.
pub fn eval_scenes(cfg: &RunConfig, seed: u64, name: &str, count: usize) -> Result<Vec<Scenario>> {
    let n = cfg.schedule.obs_count;
    if cfg.world.synth.frames < n + cfg.planner.horizon {
        return Err(Error::Config(format!("synthetic scenes have {} frames, evaluation needs {}", cfg.world.synth.frames, n + cfg.planner.horizon)));
    }
    let mut out = Vec::with_capacity(count);
    let mut i = 0u64;
    while out.len() < count {
        let sc = synth_scenario(&cfg.world.synth, seed, name, i, cfg.world.agent_cap)?;
        if eligible(&sc, n, cfg.world.min_scene_agents) {
            out.push(sc);
        }
        i += 1;
        if i > 100 * count as u64 + 100 {
            return Err(Error::Config("synthetic generator rarely meets world.min_scene_agents".into()));
        }
    }
    Ok(out)
}

/// Builds and trains the model `planner` runs on.
pub fn train_model(
    cfg: &RunConfig,
    planner: PlannerKind,
    corpus: &[Scenario],
    seed: u64,
    progress: impl FnMut(usize, f64),
) -> Result<(ToyDenoiser, TrainReport)> {
    if corpus.is_empty() {
        return Err(Error::Config("training corpus is empty".into()));
    }
    let batch = cfg.batch_config(planner);
    let mut rng = substream(seed, "train", 0);
    let mut model = ToyDenoiser::new(cfg.training.model, batch.schedule, &mut rng)?;
    let report = fit(&mut model, corpus, &batch, &cfg.training.optimizer, &mut rng, progress)?;
    Ok((model, report))
}

/// All samples of one planner on one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRun {
    pub scenario_id: String,
    pub seed: u64,
    pub planner: PlannerKind,
    pub adversary: Option<usize>,
    pub samples: Vec<RolloutReport>,
}

/// Rollout seeds depend on the scene and sample only, so planners compared
/// on the same scene draw from paired streams.
pub fn rollout_seed(seed: u64, scene: u64, sample: usize) -> u64 {
    substream_seed(seed, "rollout", (scene << 16) | sample as u64)
}

/// Runs `samples` rollouts of `planner` from the first `obs_count` frames of
/// `scenario`. With `adversary`, the agent picked by [`select_adversary`]
/// follows its log slowed to `adversary_time_scale`.
pub fn simulate_scene<D: Denoiser + ?Sized>(
    den: &D,
    scenario: &Scenario,
    planner: PlannerKind,
    cfg: &RunConfig,
    seed: u64,
    scene: u64,
    adversary: bool,
) -> Result<SceneRun> {
    let engine = cfg.engine_config(planner);
    let n = engine.schedule.obs_count;
    let horizon = cfg.planner.horizon;
    if scenario.frames() < n {
        return Err(Error::Mismatch(format!("scenario {} has {} frames, {n} observations needed", scenario.id, scenario.frames())));
    }
    let adv = if adversary { select_adversary(scenario, n, cfg.planner.adversary_radius) } else { None };
    let controller = match adv {
        Some(a) => {
            let track: Vec<_> = (n - 1..scenario.frames()).map(|t| scenario.tracks.get(a, t)).collect();
            Some(ReplayController::new(track, cfg.planner.adversary_time_scale)?)
        }
        None => None,
    };
    let mut samples = Vec::with_capacity(cfg.planner.samples);
    for k in 0..cfg.planner.samples {
        let mut rng = seeded(rollout_seed(seed, scene, k));
        let ego = adv.zip(controller.as_ref()).map(|(agent, c)| Ego { agent, controller: c });
        let t0 = Instant::now();
        let mut r = rollout(scenario, planner, ego, horizon, den, &engine, &mut rng)?;
        r.wall_time_s = Some(t0.elapsed().as_secs_f64());
        samples.push(r);
    }
    Ok(SceneRun { scenario_id: scenario.id.clone(), seed, planner, adversary: adv, samples })
}

/// Metrics of one scene run against its logged scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMetrics {
    pub min_scene_ade: f64,
    pub min_scene_fde: f64,
    /// `(missed, counted)`; present with at least six samples.
    pub miss: Option<(usize, usize)>,
    pub ego_min_ade: Option<f64>,
    /// Samples with a collision involving the adversary, or any collision
    /// when the scene has none.
    pub colliding_samples: usize,
    pub samples: usize,
    pub total_nfe: usize,
}

pub fn scene_metrics(run: &SceneRun, logged: &Scenario, obs_count: usize) -> Result<SceneMetrics> {
    let first = run.samples.first().ok_or_else(|| Error::Mismatch(format!("report for {} has no samples", run.scenario_id)))?;
    let horizon = first.realized.frames();
    if logged.id != run.scenario_id || logged.agents() != first.realized.agents() || logged.frames() < obs_count + horizon {
        return Err(Error::Mismatch(format!("report for {} does not fit scenario {}", run.scenario_id, logged.id)));
    }
    let gt = logged.frame_range(obs_count, horizon);
    let realized: Vec<Scenario> = run.samples.iter().map(|r| r.realized.clone()).collect();
    let miss = match realized.get(..metrics::MISS_CANDIDATES) {
        Some(c) => Some(metrics::miss_counts(c, &gt)?),
        None => None,
    };
    let ego_min_ade = run.adversary.map(|e| metrics::ego_min_ade(&realized, &gt, e)).transpose()?;
    let colliding_samples = run
        .samples
        .iter()
        .filter(|r| match run.adversary {
            Some(adv) => r.collisions.iter().any(|e| e.a == adv || e.b == adv),
            None => !r.collisions.is_empty(),
        })
        .count();
    Ok(SceneMetrics {
        min_scene_ade: metrics::min_scene_ade(&realized, &gt)?,
        min_scene_fde: metrics::min_scene_fde(&realized, &gt)?,
        miss,
        ego_min_ade,
        colliding_samples,
        samples: realized.len(),
        total_nfe: run.samples.iter().map(|r| r.total_nfe).sum(),
    })
}

/// Scene means of the displacement metrics, pooled miss rate, and the
/// collision rate over all rollouts.
pub fn aggregate(scenes: &[SceneMetrics]) -> Result<MetricReport> {
    if scenes.is_empty() {
        return Err(Error::Mismatch("nothing to aggregate".into()));
    }
    let k = scenes.len() as f64;
    let mean = |f: fn(&SceneMetrics) -> f64| scenes.iter().map(f).sum::<f64>() / k;
    let miss_rate = scenes
        .iter()
        .map(|s| s.miss)
        .collect::<Option<Vec<_>>>()
        .map(|m| m.iter().fold((0, 0), |acc, (a, b)| (acc.0 + a, acc.1 + b)))
        .filter(|(_, counted)| *counted > 0)
        .map(|(missed, counted)| missed as f64 / counted as f64);
    let egos: Vec<f64> = scenes.iter().filter_map(|s| s.ego_min_ade).collect();
    let rollouts: usize = scenes.iter().map(|s| s.samples).sum();
    Ok(MetricReport {
        min_scene_ade: mean(|s| s.min_scene_ade),
        min_scene_fde: mean(|s| s.min_scene_fde),
        miss_rate,
        collision_rate: scenes.iter().map(|s| s.colliding_samples).sum::<usize>() as f64 / rollouts as f64,
        ego_min_ade: (!egos.is_empty()).then(|| egos.iter().sum::<f64>() / egos.len() as f64),
        sample_count: scenes.iter().map(|s| s.samples).min().unwrap_or(0),
    })
}

/// Runs `planner` on every scene and aggregates the metrics.
pub fn evaluate<D: Denoiser + ?Sized>(
    den: &D,
    scenes: &[Scenario],
    planner: PlannerKind,
    cfg: &RunConfig,
    seed: u64,
    adversary: bool,
) -> Result<(MetricReport, Vec<SceneMetrics>)> {
    let n = cfg.schedule.obs_count;
    let per_scene = scenes
        .iter()
        .enumerate()
        .map(|(i, sc)| scene_metrics(&simulate_scene(den, sc, planner, cfg, seed, i as u64, adversary)?, sc, n))
        .collect::<Result<Vec<_>>>()?;
    Ok((aggregate(&per_scene)?, per_scene))
}
