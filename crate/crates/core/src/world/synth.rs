//! Synthetic traffic: lane layouts with car-following agents.
//!
//! Agents drive along lane centers under the intelligent driver model. Each
//! agent's desired speed occasionally jumps (stop-and-go), so followers have
//! to brake for their leaders. Cross-lane conflicts are resolved by dropping
//! agents until the ground truth is collision-free.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{collision_check, normalize_map, AgentDims, Scenario, SceneFrame};
use crate::math::{atan2, cos, powf, sin, sqrt};
use crate::tensor::StateTensor;
use crate::{Error, Result};

const DT: f64 = 0.1;
const SUBSTEPS: usize = 4;
const LANE_WIDTH: f64 = 3.5;
const LANE_SPACING: f64 = 0.5;

// Intelligent driver model.
const IDM_ACCEL: f64 = 1.5;
const IDM_DECEL: f64 = 2.5;
const IDM_MIN_GAP: f64 = 2.0;
const IDM_HEADWAY: f64 = 1.2;
const MAX_BRAKE: f64 = 8.0;
const MAX_SPEED: f64 = 14.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    Straight,
    Arc,
    Intersection,
}

impl Layout {
    pub fn name(self) -> &'static str {
        match self {
            Layout::Straight => "straight",
            Layout::Arc => "arc",
            Layout::Intersection => "intersection",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Frames per scenario at 10 Hz.
    pub frames: usize,
    pub min_agents: usize,
    pub max_agents: usize,
    /// Fixed layout, or a uniform draw among all three.
    pub layout: Option<Layout>,
    /// Peak lateral deviation from the lane center, meters.
    pub lateral_noise: f64,
    /// Desired-speed changes per agent per second.
    pub stop_and_go_rate: f64,
    pub points_per_polyline: usize,
    pub max_attempts: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            frames: 60,
            min_agents: 2,
            max_agents: 8,
            layout: None,
            lateral_noise: 0.15,
            stop_and_go_rate: 0.15,
            points_per_polyline: 10,
            max_attempts: 50,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::config("synth needs at least two frames"));
        }
        if self.min_agents == 0 || self.min_agents > self.max_agents {
            return Err(Error::config("need 1 <= min_agents <= max_agents"));
        }
        if self.max_agents > 32 {
            return Err(Error::config("at most 32 agents per scene"));
        }
        if !(self.lateral_noise >= 0.0 && self.stop_and_go_rate >= 0.0) {
            return Err(Error::config("noise parameters must be non-negative"));
        }
        if self.points_per_polyline < 2 || self.max_attempts == 0 {
            return Err(Error::config("points_per_polyline >= 2 and max_attempts >= 1"));
        }
        Ok(())
    }
}

/// Densely sampled lane center.
struct Lane {
    points: Vec<[f64; 2]>,
}

impl Lane {
    fn length(&self) -> f64 {
        (self.points.len() - 1) as f64 * LANE_SPACING
    }

    fn point(&self, s: f64) -> [f64; 2] {
        let s = s.clamp(0.0, self.length());
        let i = ((s / LANE_SPACING) as usize).min(self.points.len() - 2);
        let f = (s - i as f64 * LANE_SPACING) / LANE_SPACING;
        let (a, b) = (self.points[i], self.points[i + 1]);
        [a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])]
    }

    fn heading(&self, s: f64) -> f64 {
        let a = self.point(s - LANE_SPACING);
        let b = self.point(s + LANE_SPACING);
        atan2(b[1] - a[1], b[0] - a[0])
    }

    fn straight(start: [f64; 2], heading: f64, length: f64) -> Lane {
        let n = (length / LANE_SPACING) as usize + 1;
        let (c, s) = (cos(heading), sin(heading));
        let points = (0..n)
            .map(|i| {
                let d = i as f64 * LANE_SPACING;
                [start[0] + d * c, start[1] + d * s]
            })
            .collect();
        Lane { points }
    }

    /// Arc of `radius` around `center`, from angle `start` sweeping `sign`-wise.
    fn arc(center: [f64; 2], radius: f64, start: f64, sign: f64, length: f64) -> Lane {
        let n = (length / LANE_SPACING) as usize + 1;
        let points = (0..n)
            .map(|i| {
                let ang = start + sign * i as f64 * LANE_SPACING / radius;
                [center[0] + radius * cos(ang), center[1] + radius * sin(ang)]
            })
            .collect();
        Lane { points }
    }
}

fn build_lanes<R: Rng + ?Sized>(layout: Layout, travel: f64, rng: &mut R) -> Vec<Lane> {
    let origin = [rng.gen_range(-100.0..100.0), rng.gen_range(-100.0..100.0)];
    let theta = rng.gen_range(-PI..PI);
    let (c, s) = (cos(theta), sin(theta));
    let rot = |p: [f64; 2]| [origin[0] + p[0] * c - p[1] * s, origin[1] + p[0] * s + p[1] * c];
    let length = travel + 120.0;
    match layout {
        Layout::Straight => {
            let count = rng.gen_range(2..=3usize);
            let two_way = rng.gen_bool(0.5);
            (0..count)
                .map(|k| {
                    let off = (k as f64 - (count as f64 - 1.0) / 2.0) * LANE_WIDTH;
                    if two_way && k == 0 {
                        Lane::straight(rot([length / 2.0, off]), theta + PI, length)
                    } else {
                        Lane::straight(rot([-length / 2.0, off]), theta, length)
                    }
                })
                .collect()
        }
        Layout::Arc => {
            let radius = rng.gen_range(40.0..90.0);
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let sweep_len = length.min(1.5 * PI * radius);
            (0..2)
                .map(|k| {
                    let r = radius + k as f64 * LANE_WIDTH;
                    // Equal sweep angle keeps both lanes spanning the same sector.
                    let len = sweep_len * r / radius;
                    Lane::arc(origin, r, theta, sign, len)
                })
                .collect()
        }
        Layout::Intersection => {
            let half = length / 2.0;
            let o = LANE_WIDTH / 2.0;
            [
                ([-half, -o], 0.0),
                ([half, o], PI),
                ([o, -half], PI / 2.0),
                ([-o, half], -PI / 2.0),
            ]
            .into_iter()
            .map(|(p, h)| Lane::straight(rot(p), theta + h, length))
            .collect()
        }
    }
}

struct Agent {
    lane: usize,
    s: f64,
    v: f64,
    desired: Vec<f64>,
    dims: AgentDims,
    lat_amp: f64,
    lat_freq: f64,
    lat_phase: f64,
}

/// Arc-length positions and speeds of every agent at every frame.
fn simulate(agents: &[Agent], frames: usize, lane_len: &[f64]) -> Vec<Vec<f64>> {
    let mut s: Vec<f64> = agents.iter().map(|a| a.s).collect();
    let mut v: Vec<f64> = agents.iter().map(|a| a.v).collect();
    let mut out = vec![Vec::with_capacity(frames); agents.len()];
    let h = DT / SUBSTEPS as f64;
    for t in 0..frames {
        for (i, si) in s.iter().enumerate() {
            out[i].push(*si);
        }
        for _ in 0..SUBSTEPS {
            let mut acc = vec![0.0; agents.len()];
            for (i, a) in agents.iter().enumerate() {
                let v0 = a.desired[t].max(0.5);
                let mut free = 1.0 - powf(v[i] / v0, 4.0);
                let leader = agents
                    .iter()
                    .enumerate()
                    .filter(|(j, b)| *j != i && b.lane == a.lane && s[*j] > s[i])
                    .min_by(|x, y| s[x.0].total_cmp(&s[y.0]));
                if let Some((j, b)) = leader {
                    let gap = (s[j] - s[i] - (a.dims.length + b.dims.length) / 2.0).max(0.1);
                    let dv = v[i] - v[j];
                    let want = IDM_MIN_GAP + (v[i] * IDM_HEADWAY + v[i] * dv / (2.0 * sqrt(IDM_ACCEL * IDM_DECEL))).max(0.0);
                    free -= (want / gap) * (want / gap);
                }
                acc[i] = (IDM_ACCEL * free).clamp(-MAX_BRAKE, IDM_ACCEL);
            }
            for i in 0..agents.len() {
                v[i] = (v[i] + acc[i] * h).clamp(0.0, MAX_SPEED);
                s[i] = (s[i] + v[i] * h).min(lane_len[agents[i].lane]);
            }
        }
    }
    out
}

fn unwrap(h: &mut [f64]) {
    for i in 1..h.len() {
        while h[i] - h[i - 1] > PI {
            h[i] -= 2.0 * PI;
        }
        while h[i] - h[i - 1] < -PI {
            h[i] += 2.0 * PI;
        }
    }
}

fn spawn<R: Rng + ?Sized>(cfg: &SynthConfig, lanes: &[Lane], travel: f64, rng: &mut R) -> Vec<Agent> {
    let count = rng.gen_range(cfg.min_agents..=cfg.max_agents);
    let mut per_lane: Vec<Vec<usize>> = vec![Vec::new(); lanes.len()];
    let mut agents = Vec::with_capacity(count);
    for idx in 0..count {
        let lane = rng.gen_range(0..lanes.len());
        per_lane[lane].push(idx);
        let dims = AgentDims::new(rng.gen_range(4.0..5.0), rng.gen_range(1.7..2.0));
        let v = rng.gen_range(4.0..12.0);
        let mut desired = Vec::with_capacity(cfg.frames);
        let mut cur = rng.gen_range(6.0..13.0);
        for _ in 0..cfg.frames {
            if rng.gen_bool((cfg.stop_and_go_rate * DT).min(1.0)) {
                cur = rng.gen_range(1.0..13.0);
            }
            desired.push(cur);
        }
        let lat_amp = if cfg.lateral_noise > 0.0 { rng.gen_range(0.0..cfg.lateral_noise) } else { 0.0 };
        agents.push(Agent {
            lane,
            s: 0.0,
            v,
            desired,
            dims,
            lat_amp,
            lat_freq: rng.gen_range(0.05..0.2),
            lat_phase: rng.gen_range(0.0..2.0 * PI),
        });
    }
    // Platoons: the head of each lane starts well inside the lane, followers
    // queue behind it with short, speed-safe gaps.
    for members in &per_lane {
        let shortest = lanes.iter().map(Lane::length).fold(f64::INFINITY, f64::min);
        let room = (shortest - travel - 10.0).max(20.0);
        let mut front = rng.gen_range(60.0f64.min(room)..room);
        let mut prev_len = 0.0;
        for (k, &i) in members.iter().enumerate() {
            let a = &mut agents[i];
            if k > 0 {
                let safe = IDM_MIN_GAP + a.v * IDM_HEADWAY;
                front -= (prev_len + a.dims.length) / 2.0 + safe + rng.gen_range(0.0..15.0);
            }
            a.s = front;
            prev_len = a.dims.length;
        }
    }
    agents.retain(|a| a.s > 0.0);
    agents
}

fn render(agents: &[Agent], lanes: &[Lane], arc: &[Vec<f64>], frames: usize) -> StateTensor {
    let mut tracks = StateTensor::zeros(agents.len(), frames);
    for (i, a) in agents.iter().enumerate() {
        let lane = &lanes[a.lane];
        let mut headings: Vec<f64> = (0..frames).map(|t| lane.heading(arc[i][t])).collect();
        unwrap(&mut headings);
        for t in 0..frames {
            let p = lane.point(arc[i][t]);
            let h = headings[t];
            let off = a.lat_amp * sin(2.0 * PI * a.lat_freq * t as f64 * DT + a.lat_phase);
            tracks.set(i, t, [p[0] - off * sin(h), p[1] + off * cos(h), h]);
        }
    }
    tracks
}

fn first_collision(agents: &[Agent], tracks: &StateTensor) -> Option<(usize, usize)> {
    for t in 0..tracks.slots() {
        for i in 0..agents.len() {
            for j in (i + 1)..agents.len() {
                if collision_check(tracks.get(i, t), agents[i].dims, tracks.get(j, t), agents[j].dims) {
                    return Some((i, j));
                }
            }
        }
    }
    None
}

/// Generates one collision-free scenario.
pub fn synth_generate<R: Rng + ?Sized>(cfg: &SynthConfig, rng: &mut R) -> Result<Scenario> {
    cfg.validate()?;
    let travel = MAX_SPEED * DT * cfg.frames as f64;
    for _ in 0..cfg.max_attempts {
        let layout = cfg.layout.unwrap_or_else(|| match rng.gen_range(0..3) {
            0 => Layout::Straight,
            1 => Layout::Arc,
            _ => Layout::Intersection,
        });
        let lanes = build_lanes(layout, travel, rng);
        let lane_len: Vec<f64> = lanes.iter().map(Lane::length).collect();
        let mut agents = spawn(cfg, &lanes, travel, rng);
        let tracks = loop {
            if agents.len() < cfg.min_agents {
                break None;
            }
            let arc = simulate(&agents, cfg.frames, &lane_len);
            let tracks = render(&agents, &lanes, &arc, cfg.frames);
            match first_collision(&agents, &tracks) {
                None => break Some(tracks),
                Some((_, j)) => {
                    agents.remove(j);
                }
            }
        };
        let Some(tracks) = tracks else { continue };
        let raw: Vec<Vec<[f64; 2]>> = lanes.iter().map(|l| l.points.clone()).collect();
        let (map, _) = normalize_map(&raw, cfg.points_per_polyline, &SceneFrame::IDENTITY)?;
        let n = agents.len();
        return Ok(Scenario {
            id: String::from("synth"),
            location: layout.name().to_string(),
            track_ids: (1..=n as u64).collect(),
            agent_types: vec![String::from("car"); n],
            dims: agents.iter().map(|a| a.dims).collect(),
            tracks,
            valid: vec![true; n * cfg.frames],
            map,
        });
    }
    Err(Error::input(format!("no feasible spawn after {} attempts", cfg.max_attempts)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn single_agent_straight_lane() {
        let cfg = SynthConfig {
            min_agents: 1,
            max_agents: 1,
            layout: Some(Layout::Straight),
            lateral_noise: 0.0,
            stop_and_go_rate: 0.0,
            ..SynthConfig::default()
        };
        let sc = synth_generate(&cfg, &mut seeded(3)).unwrap();
        assert_eq!(sc.agents(), 1);
        let h0 = sc.tracks.get(0, 0)[2];
        let p0 = sc.tracks.get(0, 0);
        for t in 0..sc.frames() {
            let s = sc.tracks.get(0, t);
            assert!((s[2] - h0).abs() < 1e-9);
            // Displacement stays on the lane line through p0 with heading h0.
            let cross = (s[0] - p0[0]) * sin(h0) - (s[1] - p0[1]) * cos(h0);
            assert!(cross.abs() < 1e-6);
        }
    }

    #[test]
    fn generated_scenes_are_collision_free() {
        let cfg = SynthConfig::default();
        let mut rng = seeded(11);
        for _ in 0..40 {
            let sc = synth_generate(&cfg, &mut rng).unwrap();
            sc.validate().unwrap();
            for t in 0..sc.frames() {
                for i in 0..sc.agents() {
                    for j in (i + 1)..sc.agents() {
                        assert!(!collision_check(sc.tracks.get(i, t), sc.dims[i], sc.tracks.get(j, t), sc.dims[j]));
                    }
                }
            }
            assert_eq!(sc.step_bound_violations(), 0);
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let cfg = SynthConfig::default();
        let a = synth_generate(&cfg, &mut seeded(5)).unwrap();
        let b = synth_generate(&cfg, &mut seeded(5)).unwrap();
        assert_eq!(a, b);
    }
}
