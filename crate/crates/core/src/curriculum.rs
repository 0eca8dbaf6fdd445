//! Difficulty schedule for pretraining on pseudo episodes.
//!
//! Two knobs move with the step index `n ∈ [0, Np)`:
//!
//! - the RGB-mean distance bands. `[a, b]` (foreground vs. background inside
//!   one image) slides down until `a` reaches 0, and `[c, d]` (support vs.
//!   query foreground) slides up from `c = 0`. Both bands keep their width.
//! - `M`, the number of ground-truth vertices given away as hints. It starts
//!   at 15, drops by one every `Np / 30` steps, and stays at 0 for the second
//!   half of pretraining.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::POLYGON_VERTICES;
use crate::{Error, Result};

/// Largest Euclidean distance between two points of the RGB cube, `√3 · 255`,
/// rounded up.
pub const MAX_RGB_DISTANCE: f64 = 441.68;
pub const MAX_HINTS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub a0: f64,
    pub b0: f64,
    pub c_final: f64,
    pub d_final: f64,
    pub total_steps: u64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig { a0: 100.0, b0: 150.0, c_final: 50.0, d_final: 100.0, total_steps: 60_000 }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        let band = |lo: f64, hi: f64, name: &str| {
            if !(0.0 <= lo && lo <= hi && hi <= MAX_RGB_DISTANCE) {
                return Err(Error::parameter(format!(
                    "{name} band [{lo}, {hi}] must satisfy 0 <= lo <= hi <= {MAX_RGB_DISTANCE}"
                )));
            }
            Ok(())
        };
        band(self.a0, self.b0, "initial (a0, b0)")?;
        band(self.c_final, self.d_final, "final (c, d)")?;
        if self.total_steps == 0 || !self.total_steps.is_multiple_of(60) {
            return Err(Error::parameter(format!(
                "total steps {} must be a positive multiple of 60",
                self.total_steps
            )));
        }
        Ok(())
    }

    /// Steps between two decrements of `M`.
    pub fn hint_period(&self) -> u64 {
        self.total_steps / 30
    }
}

/// Distance bands `(a, b, c, d)` at step `n`, for `0 <= n <= Np`.
pub fn image_schedule(n: u64, cfg: &ScheduleConfig) -> Result<(f64, f64, f64, f64)> {
    cfg.validate()?;
    if n > cfg.total_steps {
        return Err(Error::parameter(format!("step {n} outside [0, {}]", cfg.total_steps)));
    }
    let (nf, np) = (n as f64, cfg.total_steps as f64);
    let a = cfg.a0 - nf * cfg.a0 / np;
    let b = a + cfg.b0 - cfg.a0;
    let c = nf * cfg.c_final / np;
    let d = c + cfg.d_final - cfg.c_final;
    Ok((a, b, c, d))
}

/// Number of hinted vertices at step `n`, for `0 <= n < Np`.
pub fn mask_schedule(n: u64, cfg: &ScheduleConfig) -> Result<usize> {
    cfg.validate()?;
    if n >= cfg.total_steps {
        return Err(Error::parameter(format!("step {n} outside [0, {})", cfg.total_steps)));
    }
    if n >= cfg.total_steps / 2 {
        return Ok(0);
    }
    let dropped = n / cfg.hint_period();
    Ok((MAX_HINTS as u64).saturating_sub(dropped) as usize)
}

/// Curriculum values for one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepParams {
    pub n: u64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    /// Hinted vertex count.
    pub m: usize,
}

impl StepParams {
    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 <= self.a
            && self.a <= self.b
            && self.b <= MAX_RGB_DISTANCE
            && 0.0 <= self.c
            && self.c <= self.d
            && self.d <= MAX_RGB_DISTANCE
            && self.m <= MAX_HINTS;
        if !ok {
            return Err(Error::parameter(format!("inconsistent step parameters {self:?}")));
        }
        Ok(())
    }
}

pub fn step_params(n: u64, cfg: &ScheduleConfig) -> Result<StepParams> {
    let m = mask_schedule(n, cfg)?;
    let (a, b, c, d) = image_schedule(n, cfg)?;
    Ok(StepParams { n, a, b, c, d, m })
}

/// Pick `m` distinct vertex indices uniformly from `[0, 16)`, sorted.
pub fn sample_hints<R: Rng + ?Sized>(rng: &mut R, m: usize) -> Result<Vec<usize>> {
    if m > MAX_HINTS {
        return Err(Error::parameter(format!("at most {MAX_HINTS} hints, got {m}")));
    }
    let mut picked = index::sample(rng, POLYGON_VERTICES, m).into_vec();
    picked.sort_unstable();
    Ok(picked)
}
