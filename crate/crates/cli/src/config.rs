//! Flat TOML configuration for `gen`.
//!
//! Every key is optional; the defaults are the pretraining hyperparameters.
//!
//! ```toml
//! seed = 7
//! count = 1000
//! size = 384
//! a0 = 100.0
//! b0 = 150.0
//! c_final = 50.0
//! d_final = 100.0
//! total_steps = 60000
//! sigma = 20.0
//! min_area = 16
//! step_policy = "sequential"   # or "fixed"
//! n = 0                        # fixed step, or first step of the sequence
//! ```

use std::path::Path;

use anyhow::{bail, Context};
use polyseg_core::curriculum::{step_params, ScheduleConfig, StepParams};
use polyseg_core::geometry::DEFAULT_MIN_AREA;
use polyseg_core::instruction::COORD_VOCAB_SIZE;
use polyseg_core::synthesis::{SynthesisConfig, DEFAULT_SIGMA, MIN_IMAGE_SIDE};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepPolicy {
    /// Pair `i` uses step `(n + i) mod total_steps`.
    Sequential,
    /// Every pair uses step `n`.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub seed: u64,
    pub count: u64,
    pub size: u32,
    pub a0: f64,
    pub b0: f64,
    pub c_final: f64,
    pub d_final: f64,
    pub total_steps: u64,
    pub sigma: f64,
    pub min_area: usize,
    pub step_policy: StepPolicy,
    pub n: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        let s = ScheduleConfig::default();
        GenConfig {
            seed: 0,
            count: 0,
            size: COORD_VOCAB_SIZE,
            a0: s.a0,
            b0: s.b0,
            c_final: s.c_final,
            d_final: s.d_final,
            total_steps: s.total_steps,
            sigma: DEFAULT_SIGMA,
            min_area: DEFAULT_MIN_AREA,
            step_policy: StepPolicy::Sequential,
            n: 0,
        }
    }
}

impl GenConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let cfg: GenConfig = toml::from_str(text).context("invalid config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn schedule(&self) -> ScheduleConfig {
        ScheduleConfig {
            a0: self.a0,
            b0: self.b0,
            c_final: self.c_final,
            d_final: self.d_final,
            total_steps: self.total_steps,
        }
    }

    pub fn synthesis(&self) -> SynthesisConfig {
        SynthesisConfig { sigma: self.sigma, min_area: self.min_area }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if !(MIN_IMAGE_SIDE..=COORD_VOCAB_SIZE).contains(&self.size) {
            bail!("size = {} outside [{MIN_IMAGE_SIDE}, {COORD_VOCAB_SIZE}] (coordinate vocabulary bound)", self.size);
        }
        self.schedule().validate()?;
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            bail!("sigma = {} must be positive", self.sigma);
        }
        if self.n >= self.total_steps {
            bail!("n = {} outside [0, {})", self.n, self.total_steps);
        }
        Ok(())
    }

    /// Curriculum step used for pair `index`.
    pub fn step_for(&self, index: u64) -> polyseg_core::Result<StepParams> {
        let n = match self.step_policy {
            StepPolicy::Fixed => self.n,
            StepPolicy::Sequential => (self.n + index % self.total_steps) % self.total_steps,
        };
        step_params(n, &self.schedule())
    }
}
