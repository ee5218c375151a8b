//! The five CLI commands. Each writes its artifacts under an output
//! directory and records the run seed in every JSON document it produces.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rollsim_core::denoiser::{GaussianOracle, ToyDenoiser, TrainConfig};
use rollsim_core::diffusion::{AugmentConfig, TaskKind};
use rollsim_core::engine::{rollout, PlannerKind};
use rollsim_core::metrics::MetricReport;
use rollsim_core::rng::seeded;
use rollsim_core::world::{Scenario, SynthConfig};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::experiment::{self, SceneMetrics, SceneRun};
use crate::io::{self, read_json, write_csv, write_json};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub id: String,
    pub file: String,
    pub agents: usize,
    pub frames: usize,
    pub location: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub generator: SynthConfig,
    pub agent_cap: usize,
    pub scenarios: Vec<ManifestRow>,
}

/// Writes `cfg.world.scenarios` synthetic scenarios and `manifest.json`.
pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    let mut rows = Vec::with_capacity(cfg.world.scenarios);
    for i in 0..cfg.world.scenarios as u64 {
        let sc = experiment::synth_scenario(&cfg.world.synth, cfg.seed, "synth", i, cfg.world.agent_cap)?;
        let path = io::save_scenario(&sc, out)?;
        rows.push(ManifestRow {
            id: sc.id.clone(),
            file: path.file_name().unwrap_or_default().to_string_lossy().into_owned(),
            agents: sc.agents(),
            frames: sc.frames(),
            location: sc.location.clone(),
        });
    }
    let manifest = Manifest { seed: cfg.seed, generator: cfg.world.synth.clone(), agent_cap: cfg.world.agent_cap, scenarios: rows };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// A trained model and what it was trained for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub seed: u64,
    pub planner: PlannerKind,
    pub horizon: usize,
    pub mpc_lookahead: usize,
    pub task: TaskKind,
    pub augment: AugmentConfig,
    pub optimizer: TrainConfig,
    pub model: ToyDenoiser,
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let ck: Checkpoint = read_json(path)?;
    ck.model.validate()?;
    Ok(ck)
}

/// Trains the model for `planner` on every scenario in `data`; writes
/// `checkpoint.json` and `loss.csv`.
pub fn cmd_train(cfg: &RunConfig, planner: PlannerKind, data: &Path, out: &Path, mut progress: impl FnMut(usize, f64)) -> Result<Checkpoint> {
    let corpus: Vec<Scenario> = io::load_dir(data)?.into_iter().map(|s| s.truncate_agents(cfg.world.agent_cap)).collect();
    if corpus.is_empty() {
        return Err(Error::Config(format!("no scenarios in {}", data.display())));
    }
    let (model, report) = experiment::train_model(cfg, planner, &corpus, cfg.seed, &mut progress)?;
    let ck = Checkpoint {
        seed: cfg.seed,
        planner,
        horizon: cfg.planner.horizon,
        mpc_lookahead: cfg.planner.mpc_lookahead,
        task: cfg.batch_config(planner).task,
        augment: cfg.training.augment,
        optimizer: cfg.training.optimizer,
        model,
    };
    write_json(&out.join("checkpoint.json"), &ck)?;
    let rows = report.losses.iter().enumerate().map(|(i, l)| vec![(i + 1).to_string(), l.to_string()]);
    write_csv(&out.join("loss.csv"), &["step", "loss"], rows)?;
    Ok(ck)
}

/// Checks that `ck` was built for `planner` under `cfg`.
pub fn check_compatible(ck: &Checkpoint, planner: PlannerKind, cfg: &RunConfig) -> Result<()> {
    let want = cfg.model_schedule(planner);
    let have = &ck.model.schedule;
    if have.window != want.window || have.obs_count != want.obs_count {
        return Err(Error::Mismatch(format!(
            "{} needs a window of {} slots with {} observations; checkpoint has {} and {}",
            planner.name(),
            want.window,
            want.obs_count,
            have.window,
            have.obs_count
        )));
    }
    if (ck.task == TaskKind::RollingWindow) != matches!(planner, PlannerKind::Rolling { .. }) {
        return Err(Error::Mismatch(format!("checkpoint was trained for {}, not {}", ck.planner.name(), planner.name())));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateSummary {
    pub seed: u64,
    pub planner: PlannerKind,
    pub scenes: usize,
    /// Scenes below `world.min_scene_agents` or too short for the horizon.
    pub skipped: Vec<String>,
    pub total_nfe: usize,
}

pub fn report_path(dir: &Path, scenario_id: &str, planner: &PlannerKind) -> PathBuf {
    dir.join(format!("{scenario_id}.{}.json", planner.name()))
}

/// Rolls out `planner` on every eligible scenario in `data`; writes one report
/// per scene to `<out>/reports/` and `simulate.json`.
pub fn cmd_simulate(cfg: &RunConfig, checkpoint: &Path, data: &Path, planner: PlannerKind, adversary: bool, out: &Path) -> Result<SimulateSummary> {
    let ck = load_checkpoint(checkpoint)?;
    check_compatible(&ck, planner, cfg)?;
    let mut run_cfg = cfg.clone();
    run_cfg.schedule = ck.model.schedule;
    let n = run_cfg.schedule.obs_count;
    let dir = out.join("reports");
    let mut summary = SimulateSummary { seed: cfg.seed, planner, scenes: 0, skipped: Vec::new(), total_nfe: 0 };
    for (i, path) in io::scenario_files(data)?.iter().enumerate() {
        let sc = io::load_scenario(path)?.truncate_agents(cfg.world.agent_cap);
        if !experiment::eligible(&sc, n, cfg.world.min_scene_agents) || sc.frames() < n + cfg.planner.horizon {
            summary.skipped.push(sc.id);
            continue;
        }
        let run = experiment::simulate_scene(&ck.model, &sc, planner, &run_cfg, cfg.seed, i as u64, adversary)?;
        summary.total_nfe += run.samples.iter().map(|r| r.total_nfe).sum::<usize>();
        summary.scenes += 1;
        write_json(&report_path(&dir, &sc.id, &planner), &run)?;
    }
    write_json(&out.join("simulate.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub planners: BTreeMap<String, MetricReport>,
}

const TRAJECTORY_COLUMNS: [&str; 8] = ["scenario_id", "planner", "sample", "track_id", "frame", "x", "y", "psi_rad"];

/// Scores every report in `reports` against the scenarios in `data`; writes
/// `metrics.json`, `comparison.csv` and `trajectories.csv`.
pub fn cmd_eval(cfg: &RunConfig, reports: &Path, data: &Path, out: &Path) -> Result<EvalReport> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(reports)
        .map_err(|e| Error::io(reports, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Mismatch(format!("no reports in {}", reports.display())));
    }
    let n = cfg.schedule.obs_count;
    let mut per_planner: BTreeMap<String, (Vec<SceneMetrics>, usize)> = BTreeMap::new();
    let mut traj = Vec::new();
    for f in &files {
        let run: SceneRun = read_json(f)?;
        let gt_path = data.join(format!("{}.csv", run.scenario_id));
        if !gt_path.exists() {
            return Err(Error::Mismatch(format!("{}: no ground truth for scenario {}", f.display(), run.scenario_id)));
        }
        let logged = io::load_scenario(&gt_path)?.truncate_agents(cfg.world.agent_cap);
        let m = experiment::scene_metrics(&run, &logged, n)?;
        let name = run.planner.name();
        let entry = per_planner.entry(name.clone()).or_default();
        entry.0.push(m);
        entry.1 += run.samples.iter().map(|r| r.total_nfe).sum::<usize>();
        for t in 0..logged.frames() {
            for a in 0..logged.agents() {
                if logged.is_valid(a, t) {
                    let s = logged.tracks.get(a, t);
                    traj.push(vec![run.scenario_id.clone(), "ground_truth".into(), String::new(), logged.track_ids[a].to_string(), t.to_string(), s[0].to_string(), s[1].to_string(), s[2].to_string()]);
                }
            }
        }
        for (k, r) in run.samples.iter().enumerate() {
            for t in 0..r.realized.frames() {
                for a in 0..r.realized.agents() {
                    if r.realized.is_valid(a, t) {
                        let s = r.realized.tracks.get(a, t);
                        traj.push(vec![run.scenario_id.clone(), name.clone(), k.to_string(), r.realized.track_ids[a].to_string(), (n + t).to_string(), s[0].to_string(), s[1].to_string(), s[2].to_string()]);
                    }
                }
            }
        }
    }
    let mut planners = BTreeMap::new();
    let mut rows = Vec::new();
    for (name, (scenes, nfe)) in &per_planner {
        let m = experiment::aggregate(scenes)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        rows.push(vec![
            name.clone(),
            scenes.len().to_string(),
            m.sample_count.to_string(),
            m.min_scene_ade.to_string(),
            m.min_scene_fde.to_string(),
            opt(m.miss_rate),
            m.collision_rate.to_string(),
            opt(m.ego_min_ade),
            (*nfe as f64 / scenes.iter().map(|s| s.samples).sum::<usize>() as f64).to_string(),
        ]);
        planners.insert(name.clone(), m);
    }
    let header = ["planner", "scenes", "samples", "min_scene_ade", "min_scene_fde", "miss_rate", "collision_rate", "ego_min_ade", "mean_nfe"];
    write_csv(&out.join("comparison.csv"), &header, rows)?;
    write_csv(&out.join("trajectories.csv"), &TRAJECTORY_COLUMNS, traj)?;
    let report = EvalReport { seed: cfg.seed, planners };
    write_json(&out.join("metrics.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NfeRow {
    pub planner: String,
    pub horizon: usize,
    pub window: usize,
    pub analytic: usize,
    pub measured: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NfeTable {
    pub seed: u64,
    pub rows: Vec<NfeRow>,
}

pub const BENCH_HORIZONS: [usize; 3] = [10, 20, 40];

/// Analytic and measured NFE of every planner variant at each horizon,
/// measured with a closed-form denoiser; writes `nfe.csv` and `nfe.json`.
/// Disagreement is an error.
pub fn cmd_bench_nfe(cfg: &RunConfig, out: &Path) -> Result<NfeTable> {
    let n = cfg.schedule.obs_count;
    let horizon_max = *BENCH_HORIZONS.iter().max().unwrap_or(&1);
    let mut synth = cfg.world.synth.clone();
    synth.frames = synth.frames.max(n + horizon_max);
    let scene = experiment::synth_scenario(&synth, cfg.seed, "bench", 0, cfg.world.agent_cap)?;
    let den = GaussianOracle::constant(0.0, 1.0)?;
    let planners = [
        PlannerKind::Rolling { window: 15, obs_count: n },
        PlannerKind::Rolling { window: 20, obs_count: n },
        PlannerKind::Autoregressive,
        PlannerKind::OneShot,
        PlannerKind::Mpc { replan: 1 },
        PlannerKind::Mpc { replan: 5 },
    ];
    let mut rows = Vec::new();
    for &horizon in &BENCH_HORIZONS {
        let mut c = cfg.clone();
        c.planner.horizon = horizon;
        for p in planners {
            let engine = c.engine_config(p);
            let analytic = p.expected_nfe(horizon, &engine.sampler, &engine.schedule);
            let r = rollout(&scene, p, None, horizon, &den, &engine, &mut seeded(cfg.seed))?;
            if r.total_nfe != analytic {
                return Err(Error::Check(format!("{} at T={horizon}: measured {} NFE, closed form {analytic}", p.name(), r.total_nfe)));
            }
            rows.push(NfeRow { planner: p.name(), horizon, window: engine.schedule.window, analytic, measured: r.total_nfe });
        }
    }
    let csv_rows = rows.iter().map(|r| vec![r.planner.clone(), r.horizon.to_string(), r.window.to_string(), r.analytic.to_string(), r.measured.to_string()]);
    write_csv(&out.join("nfe.csv"), &["planner", "horizon", "window", "analytic", "measured"], csv_rows)?;
    let table = NfeTable { seed: cfg.seed, rows };
    write_json(&out.join("nfe.json"), &table)?;
    Ok(table)
}
