use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::TrainingError;
use crate::curriculum::ScheduleParams;
use crate::model::{InjectionMode, ModelConfig};
use crate::numerics::AdamConfig;

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.json";
pub const METRICS_FILE: &str = "metrics.csv";

/// Everything one training run depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub schedule: ScheduleParams,
    #[serde(default)]
    pub optimizer: AdamConfig,
    pub steps: u64,
    pub batch_size: usize,
    pub data_dir: PathBuf,
    pub seed: u64,
    pub eval_every: u64,
    pub out_dir: PathBuf,
    /// Label-slot mode used at inference (and throughout training when the
    /// schedule is `none`).
    #[serde(default = "default_injection")]
    pub injection: InjectionMode,
    /// Multiplies `steps` for schedules that inject labels; 1 keeps budgets
    /// matched.
    #[serde(default = "default_multiplier")]
    pub step_multiplier: f64,
    /// Parameters whose name starts with any of these are not trained.
    #[serde(default)]
    pub frozen_prefixes: Vec<String>,
    /// Evaluate on at most this many validation samples.
    #[serde(default)]
    pub eval_limit: Option<usize>,
}

fn default_injection() -> InjectionMode {
    InjectionMode::Pad
}

fn default_multiplier() -> f64 {
    1.0
}

impl RunConfig {
    pub fn new(model: ModelConfig, schedule: ScheduleParams, data_dir: &Path, out_dir: &Path) -> Self {
        Self {
            model,
            schedule,
            optimizer: AdamConfig::default(),
            steps: 2000,
            batch_size: 32,
            data_dir: data_dir.to_path_buf(),
            seed: 0,
            eval_every: 500,
            out_dir: out_dir.to_path_buf(),
            injection: InjectionMode::Pad,
            step_multiplier: 1.0,
            frozen_prefixes: Vec::new(),
            eval_limit: None,
        }
    }

    /// Optimizer steps actually taken.
    pub fn effective_steps(&self) -> u64 {
        if self.schedule.injects() {
            (self.steps as f64 * self.step_multiplier).round() as u64
        } else {
            self.steps
        }
    }

    pub fn validate(&self) -> Result<(), TrainingError> {
        let bad = |m: String| Err(TrainingError::Config(m));
        self.model.validate()?;
        self.schedule.validate()?;
        if self.eval_every == 0 {
            return bad("eval_every must be >= 1".into());
        }
        if self.steps > 0 && self.eval_every > self.steps {
            return bad(format!(
                "eval_every ({}) must not exceed steps ({})",
                self.eval_every, self.steps
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.step_multiplier > 0.0 && self.step_multiplier.is_finite()) {
            return bad(format!("step_multiplier must be positive, got {}", self.step_multiplier));
        }
        if self.injection == InjectionMode::None && self.schedule.injects() {
            return bad(format!(
                "schedule `{}` injects labels but injection mode is `none`",
                self.schedule.kind
            ));
        }
        if self.injection == InjectionMode::None && self.model.decoder_kind == crate::model::DecoderKind::LinearHead {
            return bad("injection mode `none` requires the ar_decoder".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run config serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, TrainingError> {
        serde_json::from_str(text).map_err(|e| TrainingError::Config(format!("run config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, TrainingError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
