use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ToyDenoiser;
use crate::diffusion::{make_training_batch, BatchConfig};
use crate::math::{powf, sqrt};
use crate::world::Scenario;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 2e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

pub struct Adam {
    cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(cfg: AdamConfig, shapes: impl Iterator<Item = usize>) -> Self {
        let m: Vec<Vec<f64>> = shapes.map(|n| vec![0.0; n]).collect();
        let v = m.clone();
        Self { cfg, m, v, t: 0 }
    }

    pub fn step(&mut self, params: &mut [Vec<f64>], grads: &[Vec<f64>], lr: f64) {
        self.t += 1;
        let c = &self.cfg;
        let bc1 = 1.0 - powf(c.beta1, self.t as f64);
        let bc2 = 1.0 - powf(c.beta2, self.t as f64);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for i in 0..p.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                p[i] -= lr * (m[i] / bc1) / (sqrt(v[i] / bc2) + c.eps);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub grad_clip: f64,
    /// Final learning rate as a fraction of the initial one (linear decay).
    pub final_lr_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { steps: 2000, batch_size: 8, adam: AdamConfig::default(), grad_clip: 1.0, final_lr_fraction: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean batch loss per optimizer step.
    pub losses: Vec<f64>,
}

/// Trains `model` in place on windows drawn from `scenarios`.
/// `progress` is called after every step with `(step, loss)`.
pub fn fit<R: Rng + ?Sized>(
    model: &mut ToyDenoiser,
    scenarios: &[Scenario],
    batch: &BatchConfig,
    cfg: &TrainConfig,
    rng: &mut R,
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    if cfg.batch_size == 0 {
        return Err(Error::config("batch_size must be positive"));
    }
    let usable: Vec<&Scenario> = scenarios.iter().filter(|s| s.frames() >= batch.schedule.window).collect();
    if usable.is_empty() {
        return Err(Error::input("no scenario is long enough for the training window"));
    }
    model.schedule = batch.schedule;
    let mut adam = Adam::new(cfg.adam, model.params.iter().map(|m| m.data.len()));
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut acc: Vec<Vec<f64>> = model.params.iter().map(|m| vec![0.0; m.data.len()]).collect();
        let mut loss = 0.0;
        for _ in 0..cfg.batch_size {
            let sc = usable[rng.gen_range(0..usable.len())];
            let b = make_training_batch(sc, batch, rng)?;
            let (l, g) = model.loss_and_grads(&b)?;
            loss += l;
            for (a, gi) in acc.iter_mut().zip(&g) {
                a.iter_mut().zip(gi).for_each(|(x, y)| *x += y);
            }
        }
        let inv = 1.0 / cfg.batch_size as f64;
        loss *= inv;
        let mut norm2 = 0.0;
        for a in acc.iter_mut() {
            for x in a.iter_mut() {
                *x *= inv;
                norm2 += *x * *x;
            }
        }
        if !loss.is_finite() || !norm2.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        let norm = sqrt(norm2);
        if cfg.grad_clip > 0.0 && norm > cfg.grad_clip {
            let s = cfg.grad_clip / norm;
            acc.iter_mut().flatten().for_each(|x| *x *= s);
        }
        let frac = if cfg.steps > 1 { step as f64 / (cfg.steps - 1) as f64 } else { 0.0 };
        let lr = cfg.adam.lr * (1.0 - frac * (1.0 - cfg.final_lr_fraction));
        let mut flat: Vec<Vec<f64>> = model.params.iter_mut().map(|m| core::mem::take(&mut m.data)).collect();
        adam.step(&mut flat, &acc, lr);
        for (m, d) in model.params.iter_mut().zip(flat) {
            m.data = d;
        }
        losses.push(loss);
        progress(step, loss);
    }
    Ok(TrainReport { losses })
}
