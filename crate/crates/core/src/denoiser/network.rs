//! Small attention denoiser: window-axis, agent-axis and map cross-attention
//! blocks behind EDM preconditioning.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Group, Matrix, Tape, Var};
use super::{Denoiser, DenoiserInput};
use crate::diffusion::TrainingBatch;
use crate::math::{cos, hypot, ln, powf, sin, sqrt};
use crate::rng::normal;
use crate::schedule::ScheduleConfig;
use crate::tensor::StateTensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preconditioning {
    pub c_skip: f64,
    pub c_out: f64,
    pub c_in: f64,
    pub c_noise: f64,
}

pub fn precondition(sigma: f64, cfg: &ScheduleConfig) -> Preconditioning {
    let sd2 = cfg.sigma_data * cfg.sigma_data;
    let tot = sigma * sigma + sd2;
    Preconditioning {
        c_skip: sd2 / tot,
        c_out: sigma * cfg.sigma_data / sqrt(tot),
        c_in: 1.0 / sqrt(tot),
        c_noise: ln(sigma.max(cfg.sigma_min / 10.0)) / 4.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub width: usize,
    pub heads: usize,
    pub blocks: usize,
    pub noise_freqs: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self { width: 32, heads: 4, blocks: 2, noise_freqs: 8 }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.heads == 0 || self.width % self.heads != 0 {
            return Err(Error::config("network width must be a positive multiple of heads"));
        }
        if self.noise_freqs == 0 {
            return Err(Error::config("noise_freqs must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Init {
    Weight,
    Small,
    Zeros,
    Ones,
}

const STATE_FEATURES: usize = 4;
const AGENT_FEATURES: usize = 8;
const MAP_FEATURES: usize = 5;

fn layout(cfg: &ToyConfig) -> Vec<(String, usize, usize, Init)> {
    let f = cfg.width;
    let k2 = 2 * cfg.noise_freqs;
    let mut l = Vec::new();
    let mut push = |name: String, r: usize, c: usize, init: Init| l.push((name, r, c, init));
    push("state.w".into(), STATE_FEATURES, f, Init::Weight);
    push("state.b".into(), 1, f, Init::Zeros);
    push("agent.w".into(), AGENT_FEATURES, f, Init::Weight);
    push("agent.b".into(), 1, f, Init::Zeros);
    push("noise.w1".into(), k2, f, Init::Weight);
    push("noise.b1".into(), 1, f, Init::Zeros);
    push("noise.w2".into(), f, f, Init::Weight);
    push("noise.b2".into(), 1, f, Init::Zeros);
    push("map.w1".into(), MAP_FEATURES, f, Init::Weight);
    push("map.b1".into(), 1, f, Init::Zeros);
    push("map.w2".into(), f, f, Init::Weight);
    push("map.b2".into(), 1, f, Init::Zeros);
    for b in 0..cfg.blocks {
        for kind in ["window", "agent", "cross"] {
            let p = format!("block{b}.{kind}");
            push(format!("{p}.ln_g"), 1, f, Init::Ones);
            push(format!("{p}.ln_b"), 1, f, Init::Zeros);
            push(format!("{p}.wq"), f, f, Init::Weight);
            push(format!("{p}.wk"), f, f, Init::Weight);
            push(format!("{p}.wv"), f, f, Init::Weight);
            push(format!("{p}.wo"), f, f, Init::Small);
            push(format!("{p}.bo"), 1, f, Init::Zeros);
        }
        let p = format!("block{b}.mlp");
        push(format!("{p}.ln_g"), 1, f, Init::Ones);
        push(format!("{p}.ln_b"), 1, f, Init::Zeros);
        push(format!("{p}.w1"), f, 2 * f, Init::Weight);
        push(format!("{p}.b1"), 1, 2 * f, Init::Zeros);
        push(format!("{p}.w2"), 2 * f, f, Init::Small);
        push(format!("{p}.b2"), 1, f, Init::Zeros);
    }
    push("out.ln_g".into(), 1, f, Init::Ones);
    push("out.ln_b".into(), 1, f, Init::Zeros);
    push("out.w".into(), f, 3, Init::Small);
    push("out.b".into(), 1, 3, Init::Zeros);
    l
}

/// Trainable attention denoiser. Serializes to a self-describing checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyDenoiser {
    pub config: ToyConfig,
    pub schedule: ScheduleConfig,
    pub names: Vec<String>,
    pub params: Vec<Matrix>,
}

pub(crate) struct Forward {
    pub out: Var,
    pub leaves: Vec<Var>,
    pub pre: Vec<Preconditioning>,
}

struct Cursor<'a> {
    vars: &'a [Var],
    i: usize,
}

impl Cursor<'_> {
    fn next(&mut self) -> Var {
        self.i += 1;
        self.vars[self.i - 1]
    }
}

fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Var {
    let y = tape.matmul(x, w);
    tape.add_row(y, b)
}

fn map_features(map: &crate::world::MapPolylines) -> Matrix {
    let mut data = Vec::new();
    let mut rows = 0;
    for pl in &map.polylines {
        let n = pl.len();
        for (i, p) in pl.iter().enumerate() {
            let (a, b) = (pl[i.saturating_sub(1)], pl[(i + 1).min(n - 1)]);
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let len = hypot(dx, dy);
            let (tx, ty) = if len > 0.0 { (dx / len, dy / len) } else { (0.0, 0.0) };
            let along = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
            data.extend_from_slice(&[p[0], p[1], tx, ty, along]);
            rows += 1;
        }
    }
    Matrix::from_vec(rows, MAP_FEATURES, data)
}

impl ToyDenoiser {
    pub fn new<R: Rng + ?Sized>(config: ToyConfig, schedule: ScheduleConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        schedule.validate()?;
        let mut names = Vec::new();
        let mut params = Vec::new();
        for (name, r, c, init) in layout(&config) {
            let std = match init {
                Init::Weight => 1.0 / sqrt(r as f64),
                Init::Small => 0.1 / sqrt(r as f64),
                Init::Zeros | Init::Ones => 0.0,
            };
            let data = (0..r * c)
                .map(|_| match init {
                    Init::Ones => 1.0,
                    Init::Zeros => 0.0,
                    _ => std * normal(rng),
                })
                .collect();
            names.push(name);
            params.push(Matrix::from_vec(r, c, data));
        }
        Ok(Self { config, schedule, names, params })
    }

    /// Checks a deserialized model against the layout its config implies.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.schedule.validate()?;
        let want = layout(&self.config);
        if want.len() != self.params.len() || self.names.len() != self.params.len() {
            return Err(Error::input(format!("checkpoint has {} tensors, config implies {}", self.params.len(), want.len())));
        }
        for ((name, r, c, _), (have_name, m)) in want.iter().zip(self.names.iter().zip(&self.params)) {
            if name != have_name || m.rows != *r || m.cols != *c || m.data.len() != r * c {
                return Err(Error::input(format!("checkpoint tensor {have_name} does not match expected {name} ({r}×{c})")));
            }
            if m.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::input(format!("checkpoint tensor {name} holds non-finite values")));
            }
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|m| m.data.len()).sum()
    }

    pub(crate) fn forward(&self, tape: &mut Tape, input: &DenoiserInput<'_>) -> Result<Forward> {
        input.validate()?;
        let cfg = &self.config;
        let f = cfg.width;
        let win = input.window;
        let (na, nw) = (win.agents(), win.slots());
        let n = na * nw;
        let pre: Vec<Preconditioning> = input.sigmas.iter().map(|s| precondition(*s, &self.schedule)).collect();

        let leaves: Vec<Var> = self.params.iter().map(|m| tape.leaf(m.clone())).collect();
        let mut p = Cursor { vars: &leaves, i: 0 };

        let mut sf = Vec::with_capacity(n * STATE_FEATURES);
        let mut af = Vec::with_capacity(n * AGENT_FEATURES);
        let k = cfg.noise_freqs;
        let mut nf = Vec::with_capacity(n * 2 * k);
        let mut tf = Vec::with_capacity(n * f);
        for a in 0..na {
            let dims = input.cond[a];
            for w in 0..nw {
                let s = win.states.get(a, w);
                let c = pre[w].c_in;
                sf.extend_from_slice(&[c * s[0], c * s[1], c * s[2], if win.obs_mask[w] { 1.0 } else { 0.0 }]);
                af.extend_from_slice(&[dims.length / 5.0, dims.width / 2.0]);
                af.extend_from_slice(&input.frame.features(a, w));
                for j in 0..k {
                    let arg = pre[w].c_noise * (j + 1) as f64;
                    nf.push(sin(arg));
                    nf.push(cos(arg));
                }
                for j in 0..f {
                    let rate = powf(100.0, -((j / 2 * 2) as f64) / f as f64);
                    let v = w as f64 * rate;
                    tf.push(if j % 2 == 0 { sin(v) } else { cos(v) });
                }
            }
        }
        let sf = tape.leaf(Matrix::from_vec(n, STATE_FEATURES, sf));
        let af = tape.leaf(Matrix::from_vec(n, AGENT_FEATURES, af));
        let nf = tape.leaf(Matrix::from_vec(n, 2 * k, nf));
        let tf = tape.leaf(Matrix::from_vec(n, f, tf));

        let (w, b) = (p.next(), p.next());
        let mut h = linear(tape, sf, w, b);
        let (w, b) = (p.next(), p.next());
        let ae = linear(tape, af, w, b);
        h = tape.add(h, ae);
        let (w1, b1, w2, b2) = (p.next(), p.next(), p.next(), p.next());
        let ne = linear(tape, nf, w1, b1);
        let ne = tape.silu(ne);
        let ne = linear(tape, ne, w2, b2);
        h = tape.add(h, ne);
        h = tape.add(h, tf);

        let (w1, b1, w2, b2) = (p.next(), p.next(), p.next(), p.next());
        let map_tokens = if input.map.is_empty() {
            None
        } else {
            let mf = tape.leaf(map_features(input.map));
            let m = linear(tape, mf, w1, b1);
            let m = tape.silu(m);
            Some(linear(tape, m, w2, b2))
        };

        let valid: Vec<usize> = (0..na).filter(|a| win.agent_mask[*a]).collect();
        let window_groups: Vec<Group> = (0..na)
            .map(|a| {
                let rows: Vec<usize> = (0..nw).map(|w| a * nw + w).collect();
                Group { queries: rows.clone(), keys: rows }
            })
            .collect();
        let agent_groups: Vec<Group> = (0..nw)
            .map(|w| {
                let keys_from = if valid.is_empty() { (0..na).collect::<Vec<_>>() } else { valid.clone() };
                Group { queries: (0..na).map(|a| a * nw + w).collect(), keys: keys_from.iter().map(|a| a * nw + w).collect() }
            })
            .collect();
        let map_rows = input.map.len() * input.map.points_per_polyline;

        for _ in 0..cfg.blocks {
            for kind in 0..3 {
                let (g, bt, wq, wk, wv, wo, bo) = (p.next(), p.next(), p.next(), p.next(), p.next(), p.next(), p.next());
                if kind == 2 && map_tokens.is_none() {
                    continue;
                }
                let y = tape.layer_norm(h, g, bt);
                let q = tape.matmul(y, wq);
                let (src, groups) = match kind {
                    0 => (y, window_groups.clone()),
                    1 => (y, agent_groups.clone()),
                    _ => {
                        let m = map_tokens.expect("checked above");
                        (m, vec![Group { queries: (0..n).collect(), keys: (0..map_rows).collect() }])
                    }
                };
                let kk = tape.matmul(src, wk);
                let vv = tape.matmul(src, wv);
                let att = tape.attention(q, kk, vv, groups, cfg.heads);
                let o = linear(tape, att, wo, bo);
                h = tape.add(h, o);
            }
            let (g, bt, w1, b1, w2, b2) = (p.next(), p.next(), p.next(), p.next(), p.next(), p.next());
            let y = tape.layer_norm(h, g, bt);
            let y = linear(tape, y, w1, b1);
            let y = tape.silu(y);
            let y = linear(tape, y, w2, b2);
            h = tape.add(h, y);
        }
        let (g, bt, w, b) = (p.next(), p.next(), p.next(), p.next());
        let y = tape.layer_norm(h, g, bt);
        let out = linear(tape, y, w, b);
        debug_assert_eq!(p.i, leaves.len());
        Ok(Forward { out, leaves, pre })
    }

    /// Training loss of one batch, identical to `road_loss(denoise(..), batch)`.
    pub fn batch_loss(&self, batch: &TrainingBatch) -> Result<f64> {
        let mut tape = Tape::new();
        let (loss, _) = self.loss_graph(&mut tape, batch)?;
        Ok(tape.value(loss).data[0])
    }

    /// Loss and per-tensor gradients for one batch.
    pub fn loss_and_grads(&self, batch: &TrainingBatch) -> Result<(f64, Vec<Vec<f64>>)> {
        let mut tape = Tape::new();
        let (loss, fwd) = self.loss_graph(&mut tape, batch)?;
        let grads = tape.backward(loss);
        let out = fwd
            .leaves
            .iter()
            .zip(&self.params)
            .map(|(v, m)| grads.of(*v).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; m.data.len()]))
            .collect();
        Ok((tape.value(loss).data[0], out))
    }

    fn loss_graph(&self, tape: &mut Tape, batch: &TrainingBatch) -> Result<(Var, Forward)> {
        let input = DenoiserInput { window: &batch.noisy, sigmas: &batch.slot_sigmas, frame: &batch.frame, map: &batch.map, cond: &batch.cond };
        let fwd = self.forward(tape, &input)?;
        let x = &batch.noisy.states;
        let y = &batch.clean_target;
        if !y.same_shape(x) || batch.weights.len() != x.slots() {
            return Err(Error::input("batch target does not match its window"));
        }
        let (na, nw) = (x.agents(), x.slots());
        let mask = &batch.noisy.agent_mask;
        let valid = mask.iter().filter(|m| **m).count().max(1) as f64;
        let mut target = Vec::with_capacity(na * nw * 3);
        let mut row_w = Vec::with_capacity(na * nw);
        let mut scales = Vec::with_capacity(na * nw);
        for a in 0..na {
            for w in 0..nw {
                let pc = fwd.pre[w];
                let (xs, ys) = (x.get(a, w), y.get(a, w));
                for c in 0..3 {
                    target.push(ys[c] - pc.c_skip * xs[c]);
                }
                row_w.push(if mask[a] { batch.weights[w] / (valid * 3.0) } else { 0.0 });
                scales.push(pc.c_out);
            }
        }
        let pred = tape.scale_rows(fwd.out, scales);
        let loss = tape.weighted_sse(pred, target, row_w);
        Ok((loss, fwd))
    }
}

impl Denoiser for ToyDenoiser {
    fn denoise(&self, input: &DenoiserInput<'_>) -> Result<StateTensor> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, input)?;
        let raw = tape.value(fwd.out);
        let x = &input.window.states;
        let nw = x.slots();
        let mut d = x.clone();
        for (r, s) in d.states_mut().iter_mut().enumerate() {
            let pc = fwd.pre[r % nw];
            let o = raw.row(r);
            for c in 0..3 {
                s[c] = pc.c_skip * s[c] + pc.c_out * o[c];
            }
        }
        if !d.all_finite() {
            return Err(Error::State("denoiser produced non-finite output".into()));
        }
        Ok(d)
    }
}
