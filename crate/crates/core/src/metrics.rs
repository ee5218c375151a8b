//! Displacement metrics, miss rate and collision rate. Positions only; headings
//! are ignored.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::engine::RolloutReport;
use crate::math::hypot;
use crate::world::Scenario;
use crate::{Error, Result};

/// Final-displacement threshold below which a candidate counts as a hit.
pub const MISS_THRESHOLD_M: f64 = 2.0;
pub const MISS_CANDIDATES: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub min_scene_ade: f64,
    pub min_scene_fde: f64,
    /// `None` with fewer than six samples.
    pub miss_rate: Option<f64>,
    pub collision_rate: f64,
    pub ego_min_ade: Option<f64>,
    pub sample_count: usize,
}

fn check_shapes(samples: &[Scenario], gt: &Scenario) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::input("at least one sample is required"));
    }
    for (k, s) in samples.iter().enumerate() {
        if !s.tracks.same_shape(&gt.tracks) || s.valid.len() != gt.valid.len() {
            return Err(Error::input(format!(
                "sample {k} is {}×{}, ground truth is {}×{}",
                s.agents(),
                s.frames(),
                gt.agents(),
                gt.frames()
            )));
        }
    }
    Ok(())
}

fn dist(sample: &Scenario, gt: &Scenario, a: usize, t: usize) -> f64 {
    let (p, q) = (sample.tracks.get(a, t), gt.tracks.get(a, t));
    hypot(p[0] - q[0], p[1] - q[1])
}

fn both_valid(sample: &Scenario, gt: &Scenario, a: usize, t: usize) -> bool {
    gt.is_valid(a, t) && sample.is_valid(a, t)
}

/// Mean position error over valid `(agent, step)` pairs of one sample.
pub fn scene_ade(sample: &Scenario, gt: &Scenario) -> Result<f64> {
    check_shapes(core::slice::from_ref(sample), gt)?;
    let (mut sum, mut n) = (0.0, 0usize);
    for a in 0..gt.agents() {
        for t in 0..gt.frames() {
            if both_valid(sample, gt, a, t) {
                sum += dist(sample, gt, a, t);
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::UndefinedMetric("no valid agent-step pair".into()));
    }
    Ok(sum / n as f64)
}

fn final_step(sample: &Scenario, gt: &Scenario, a: usize) -> Option<usize> {
    (0..gt.frames()).rev().find(|t| both_valid(sample, gt, a, *t))
}

/// Error at each agent's last valid step, averaged over agents.
pub fn scene_fde(sample: &Scenario, gt: &Scenario) -> Result<f64> {
    check_shapes(core::slice::from_ref(sample), gt)?;
    let errs: Vec<f64> = (0..gt.agents()).filter_map(|a| final_step(sample, gt, a).map(|t| dist(sample, gt, a, t))).collect();
    if errs.is_empty() {
        return Err(Error::UndefinedMetric("no agent has a valid final step".into()));
    }
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

fn min_over(samples: &[Scenario], gt: &Scenario, f: fn(&Scenario, &Scenario) -> Result<f64>) -> Result<f64> {
    check_shapes(samples, gt)?;
    let mut best = f64::INFINITY;
    for s in samples {
        best = best.min(f(s, gt)?);
    }
    Ok(best)
}

pub fn min_scene_ade(samples: &[Scenario], gt: &Scenario) -> Result<f64> {
    min_over(samples, gt, scene_ade)
}

pub fn min_scene_fde(samples: &[Scenario], gt: &Scenario) -> Result<f64> {
    min_over(samples, gt, scene_fde)
}

/// `(missed, counted)` agents: an agent misses when every one of the six
/// candidates ends at least 2 m from the ground truth.
pub fn miss_counts(samples: &[Scenario], gt: &Scenario) -> Result<(usize, usize)> {
    if samples.len() != MISS_CANDIDATES {
        return Err(Error::input(format!("miss rate needs {MISS_CANDIDATES} candidates, got {}", samples.len())));
    }
    check_shapes(samples, gt)?;
    let (mut missed, mut counted) = (0, 0);
    for a in 0..gt.agents() {
        let Some(t) = (0..gt.frames()).rev().find(|t| gt.is_valid(a, *t)) else { continue };
        counted += 1;
        let hit = samples.iter().any(|s| s.is_valid(a, t) && dist(s, gt, a, t) < MISS_THRESHOLD_M);
        if !hit {
            missed += 1;
        }
    }
    Ok((missed, counted))
}

pub fn miss_rate(samples: &[Scenario], gt: &Scenario) -> Result<f64> {
    let (missed, counted) = miss_counts(samples, gt)?;
    if counted == 0 {
        return Err(Error::UndefinedMetric("no agent has a valid final step".into()));
    }
    Ok(missed as f64 / counted as f64)
}

/// Fraction of rollouts in which the adversary collides with any other agent
/// at least once.
pub fn collision_rate(reports: &[RolloutReport], adversaries: &[usize]) -> Result<f64> {
    if reports.is_empty() {
        return Err(Error::input("collision rate over an empty set"));
    }
    if reports.len() != adversaries.len() {
        return Err(Error::input("one adversary id per rollout is required"));
    }
    let hits = reports
        .iter()
        .zip(adversaries)
        .filter(|(r, adv)| r.collisions.iter().any(|e| e.a == **adv || e.b == **adv))
        .count();
    Ok(hits as f64 / reports.len() as f64)
}

/// Best mean position error of the ego row over samples.
pub fn ego_min_ade(samples: &[Scenario], gt: &Scenario, ego: usize) -> Result<f64> {
    check_shapes(samples, gt)?;
    if ego >= gt.agents() {
        return Err(Error::input(format!("ego id {ego} out of range for {} agents", gt.agents())));
    }
    let mut best = f64::INFINITY;
    for s in samples {
        let errs: Vec<f64> = (0..gt.frames()).filter(|t| both_valid(s, gt, ego, *t)).map(|t| dist(s, gt, ego, t)).collect();
        if errs.is_empty() {
            return Err(Error::UndefinedMetric("ego has no valid step".into()));
        }
        best = best.min(errs.iter().sum::<f64>() / errs.len() as f64);
    }
    Ok(best)
}

impl MetricReport {
    /// Displacement metrics from `samples`; the miss rate uses the first six
    /// samples.
    pub fn from_samples(samples: &[Scenario], gt: &Scenario, ego: Option<usize>, collision_rate: f64) -> Result<Self> {
        Ok(Self {
            min_scene_ade: min_scene_ade(samples, gt)?,
            min_scene_fde: min_scene_fde(samples, gt)?,
            miss_rate: samples.get(..MISS_CANDIDATES).map(|c| miss_rate(c, gt)).transpose()?,
            collision_rate,
            ego_min_ade: ego.map(|e| ego_min_ade(samples, gt, e)).transpose()?,
            sample_count: samples.len(),
        })
    }
}
