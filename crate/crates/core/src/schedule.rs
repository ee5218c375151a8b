//! Noise-schedule algebra.
//!
//! Global diffusion time `τ ∈ [0, 1]` drives every slot of a window through a
//! per-slot *local* time `τ_w`; a slot's noise scale is a monotone function of
//! its local time. Local time 0 means the slot is clean, 1 means pure noise.

use alloc::vec::Vec;
use core::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::math::powf;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
    pub sigma_data: f64,
    /// Slots in the window, observations included.
    pub window: usize,
    /// Leading observation slots.
    pub obs_count: usize,
    /// Probability of drawing a warm-up task when building a training batch.
    pub task_ratio: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            sigma_min: 0.002,
            sigma_max: 80.0,
            rho: 7.0,
            sigma_data: 0.5,
            window: 15,
            obs_count: 10,
            task_ratio: 0.1,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min > 0.0 && self.sigma_min < self.sigma_max && self.sigma_max.is_finite()) {
            return Err(Error::config("need 0 < sigma_min < sigma_max < inf"));
        }
        if !(self.rho > 0.0) {
            return Err(Error::config("rho must be positive"));
        }
        if !(self.sigma_data > 0.0) {
            return Err(Error::config("sigma_data must be positive"));
        }
        if self.obs_count >= self.window {
            return Err(Error::config("window must exceed obs_count"));
        }
        if !(0.0..=1.0).contains(&self.task_ratio) {
            return Err(Error::config("task_ratio must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Same noise curve, different window geometry.
    pub fn with_window(&self, window: usize, obs_count: usize) -> Self {
        Self { window, obs_count, ..*self }
    }

    /// Number of slots that are predicted rather than observed.
    pub fn future_slots(&self) -> usize {
        self.window - self.obs_count
    }
}

/// Which local-time map drives a window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Boundary stage: from white noise to the rolling staircase.
    Warmup,
    /// Steady stage: one slot becomes clean per unit of global time.
    Rolling,
    /// Ordinary joint diffusion: every future slot shares the global time.
    Full,
}

/// Per-slot local diffusion times, each in `[0, 1]`, non-decreasing in slot index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LocalTimeVector(Vec<f64>);

impl LocalTimeVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain { what: "local time", value: *bad });
        }
        if values.windows(2).any(|p| p[1] < p[0]) {
            return Err(Error::input("local times must be non-decreasing"));
        }
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        Self(alloc::vec![0.0; len])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Drops slot 0 and appends a pure-noise slot.
    pub(crate) fn shifted(&self) -> Self {
        let mut v: Vec<f64> = self.0[1..].to_vec();
        v.push(1.0);
        Self(v)
    }
}

impl Deref for LocalTimeVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for LocalTimeVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<LocalTimeVector> for Vec<f64> {
    fn from(v: LocalTimeVector) -> Self {
        v.0
    }
}

fn check_unit(what: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::Domain { what, value })
    }
}

#[inline]
fn clip01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Continuous EDM sampling curve: `σ_max` at `u = 0`, `σ_min` at `u = 1`.
pub fn edm_sigma(u: f64, cfg: &ScheduleConfig) -> Result<f64> {
    check_unit("progress u", u)?;
    let inv = 1.0 / cfg.rho;
    let hi = powf(cfg.sigma_max, inv);
    let lo = powf(cfg.sigma_min, inv);
    Ok(powf(hi + u * (lo - hi), cfg.rho))
}

/// Noise scale of a slot at local time `tau_w`. Exactly zero at `tau_w = 0`.
pub fn sigma_of_local_time(tau_w: f64, cfg: &ScheduleConfig) -> Result<f64> {
    check_unit("local time", tau_w)?;
    if tau_w == 0.0 {
        return Ok(0.0);
    }
    edm_sigma(1.0 - tau_w, cfg)
}

/// `α²/σ²` with `α = 1`; `+∞` for clean data.
pub fn snr(sigma: f64) -> Result<f64> {
    if !(sigma >= 0.0) {
        return Err(Error::Domain { what: "sigma", value: sigma });
    }
    if sigma == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(1.0 / (sigma * sigma))
    }
}

/// Warm-up map over a full window: `clip(w/W + τ, 0, 1)`.
pub fn local_times_warmup(tau: f64, cfg: &ScheduleConfig) -> Result<LocalTimeVector> {
    check_unit("global time", tau)?;
    let w_len = cfg.window as f64;
    Ok(LocalTimeVector((0..cfg.window).map(|w| clip01(w as f64 / w_len + tau)).collect()))
}

/// Rolling map: `clip((w + τ − n)/(W − n), 0, 1)`.
pub fn local_times_rolling(tau: f64, cfg: &ScheduleConfig) -> Result<LocalTimeVector> {
    check_unit("global time", tau)?;
    if cfg.window <= cfg.obs_count {
        return Err(Error::config("rolling map needs window > obs_count"));
    }
    let n = cfg.obs_count as f64;
    let span = (cfg.window - cfg.obs_count) as f64;
    Ok(LocalTimeVector(
        (0..cfg.window).map(|w| clip01((w as f64 + tau - n) / span)).collect(),
    ))
}

/// Local times of a window with `obs_count` observation slots under `stage`.
///
/// Observation slots are always at local time 0. For the warm-up stage the
/// future sub-window follows the warm-up map shifted by one slot, so that at
/// `τ = 0` it coincides with the rolling map at `τ = 1`; the hand-off to the
/// rolling stage is then seamless and no frame is emitted by the warm-up itself.
pub fn window_local_times(stage: Stage, tau: f64, cfg: &ScheduleConfig) -> Result<LocalTimeVector> {
    check_unit("global time", tau)?;
    if cfg.window <= cfg.obs_count {
        return Err(Error::config("window must exceed obs_count"));
    }
    let n = cfg.obs_count;
    let span = (cfg.window - n) as f64;
    let values = (0..cfg.window)
        .map(|w| {
            if w < n {
                return 0.0;
            }
            let k = (w - n) as f64;
            match stage {
                Stage::Warmup => clip01((k + 1.0) / span + tau),
                Stage::Rolling => clip01((k + tau) / span),
                Stage::Full => tau,
            }
        })
        .collect();
    Ok(LocalTimeVector(values))
}

/// Slot noise scales for a vector of local times.
pub fn sigmas_of(times: &[f64], cfg: &ScheduleConfig) -> Result<Vec<f64>> {
    times.iter().map(|t| sigma_of_local_time(*t, cfg)).collect()
}

/// EDM loss weighting `(σ² + σ_d²)/(σ σ_d)²`; zero for clean slots.
pub fn loss_weight(sigma: f64, cfg: &ScheduleConfig) -> f64 {
    if !(sigma > 0.0) {
        return 0.0;
    }
    let sd = cfg.sigma_data;
    (sigma * sigma + sd * sd) / (sigma * sd * sigma * sd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> ScheduleConfig {
        ScheduleConfig::default()
    }

    // 30-digit reference: (80^(1/7) + 0.5 (0.002^(1/7) - 80^(1/7)))^7
    const EDM_HALF: f64 = 2.515_218_976_147_158_6;

    #[test]
    fn edm_endpoints_and_midpoint() {
        let c = cfg();
        assert!((edm_sigma(0.0, &c).unwrap() - 80.0).abs() < 1e-12);
        assert!((edm_sigma(1.0, &c).unwrap() - 0.002).abs() < 1e-15);
        assert!((edm_sigma(0.5, &c).unwrap() - EDM_HALF).abs() < 1e-12);
        assert!(matches!(edm_sigma(1.5, &c), Err(Error::Domain { .. })));
        assert!(edm_sigma(-0.1, &c).is_err());
    }

    #[test]
    fn local_time_sigma() {
        let c = cfg();
        assert_eq!(sigma_of_local_time(0.0, &c).unwrap(), 0.0);
        assert!((sigma_of_local_time(1.0, &c).unwrap() - 80.0).abs() < 1e-12);
        assert!((sigma_of_local_time(0.5, &c).unwrap() - EDM_HALF).abs() < 1e-12);
        assert!(sigma_of_local_time(1.01, &c).is_err());
    }

    #[test]
    fn snr_values() {
        assert_eq!(snr(1.0).unwrap(), 1.0);
        assert_eq!(snr(2.0).unwrap(), 0.25);
        assert_eq!(snr(0.0).unwrap(), f64::INFINITY);
        assert!(snr(-1.0).is_err());
    }

    #[test]
    fn warmup_examples() {
        let c = cfg().with_window(10, 0);
        let v = local_times_warmup(0.3, &c).unwrap();
        assert!((v[5] - 0.8).abs() < 1e-15);
        assert_eq!(v[9], 1.0);
        assert_eq!(local_times_warmup(0.0, &c).unwrap()[0], 0.0);
        assert!(local_times_warmup(2.0, &c).is_err());
    }

    #[test]
    fn rolling_examples() {
        let c = cfg().with_window(15, 10);
        assert!((local_times_rolling(0.5, &c).unwrap()[12] - 0.5).abs() < 1e-15);
        for tau in [0.0, 0.37, 1.0] {
            assert_eq!(local_times_rolling(tau, &c).unwrap()[3], 0.0);
        }
        assert_eq!(local_times_rolling(0.0, &c).unwrap()[10], 0.0);
        let bad = ScheduleConfig { window: 10, obs_count: 10, ..cfg() };
        assert!(matches!(local_times_rolling(0.5, &bad), Err(Error::Config(_))));
    }

    #[test]
    fn one_shift_advances_by_one_interval() {
        let c = cfg().with_window(15, 10);
        assert_eq!(local_times_rolling(0.0, &c).unwrap()[10], 0.0);
        assert!((local_times_rolling(1.0, &c).unwrap()[10] - 0.2).abs() < 1e-15);
        // Shifting the τ=0 pattern reproduces the τ=1 pattern exactly.
        let end = window_local_times(Stage::Rolling, 0.0, &c).unwrap();
        let start = window_local_times(Stage::Rolling, 1.0, &c).unwrap();
        assert_eq!(end.shifted(), start);
    }

    #[test]
    fn warmup_lands_on_rolling_start() {
        for (w, n) in [(15, 10), (20, 10), (6, 0), (3, 2)] {
            let c = cfg().with_window(w, n);
            let warm_end = window_local_times(Stage::Warmup, 0.0, &c).unwrap();
            let roll_start = window_local_times(Stage::Rolling, 1.0, &c).unwrap();
            for (a, b) in warm_end.iter().zip(roll_start.iter()) {
                assert!((a - b).abs() < 1e-15);
            }
            let warm_start = window_local_times(Stage::Warmup, 1.0, &c).unwrap();
            assert!(warm_start[n..].iter().all(|v| *v == 1.0));
            assert!(warm_start[..n].iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn loss_weight_convention() {
        let c = cfg();
        assert!((loss_weight(0.5, &c) - 8.0).abs() < 1e-12);
        assert_eq!(loss_weight(0.0, &c), 0.0);
        let far = loss_weight(1e6, &c);
        assert!((far - 4.0).abs() < 1e-9);
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        assert!(ScheduleConfig { sigma_min: 100.0, ..cfg() }.validate().is_err());
        assert!(ScheduleConfig { rho: 0.0, ..cfg() }.validate().is_err());
        assert!(ScheduleConfig { task_ratio: 1.5, ..cfg() }.validate().is_err());
        assert!(ScheduleConfig { obs_count: 15, ..cfg() }.validate().is_err());
        assert!(LocalTimeVector::new(alloc::vec![0.2, 0.1]).is_err());
        assert!(LocalTimeVector::new(alloc::vec![0.2, 1.1]).is_err());
    }

    proptest! {
        #[test]
        fn sigma_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let c = cfg();
            prop_assume!(a < b);
            prop_assert!(edm_sigma(a, &c).unwrap() > edm_sigma(b, &c).unwrap());
            prop_assert!(sigma_of_local_time(a, &c).unwrap() < sigma_of_local_time(b, &c).unwrap());
        }

        #[test]
        fn stage_maps_are_ordered(tau in 0.0f64..=1.0, w in 2usize..40, n_frac in 0.0f64..1.0) {
            let n = ((w as f64) * n_frac) as usize;
            prop_assume!(n < w);
            let c = cfg().with_window(w, n);
            for stage in [Stage::Warmup, Stage::Rolling, Stage::Full] {
                let v = window_local_times(stage, tau, &c).unwrap();
                prop_assert!(LocalTimeVector::new(v.to_vec()).is_ok());
            }
        }
    }
}
