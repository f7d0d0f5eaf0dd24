use serde::{Deserialize, Serialize};

use super::mask::{MaskGranularity, MaskPattern};
use super::CurriculumError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// `r = clamp(α·(L − β), 0, 1)` from the previous batch's loss.
    LossAware,
    /// `r = max(0, 1 − step / total_mask_steps)`.
    Linear,
    /// `r = constant_r` at every step.
    Constant,
    /// Label injection switched off: the decoder only ever sees pad slots.
    None,
}

impl ScheduleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::LossAware => "loss_aware",
            Self::Linear => "linear",
            Self::Constant => "constant",
            Self::None => "none",
        }
    }
}

impl std::str::FromStr for ScheduleKind {
    type Err = CurriculumError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "loss_aware" => Ok(Self::LossAware),
            "linear" => Ok(Self::Linear),
            "constant" => Ok(Self::Constant),
            "none" => Ok(Self::None),
            _ => Err(CurriculumError::Contract(format!(
                "unknown schedule `{s}` (expected loss_aware, linear, constant or none)"
            ))),
        }
    }
}

impl std::fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleParams {
    pub kind: ScheduleKind,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_total_mask_steps")]
    pub total_mask_steps: u64,
    #[serde(default)]
    pub constant_r: f64,
    /// EMA coefficient applied to the observed loss; 0 uses the raw loss.
    #[serde(default)]
    pub loss_smoothing: f64,
    #[serde(default)]
    pub pattern: MaskPattern,
    #[serde(default)]
    pub granularity: MaskGranularity,
}

fn default_alpha() -> f64 {
    2.0
}

fn default_beta() -> f64 {
    0.1
}

fn default_total_mask_steps() -> u64 {
    1000
}

impl ScheduleParams {
    pub fn of_kind(kind: ScheduleKind) -> Self {
        Self {
            kind,
            alpha: default_alpha(),
            beta: default_beta(),
            total_mask_steps: default_total_mask_steps(),
            constant_r: 0.0,
            loss_smoothing: 0.0,
            pattern: MaskPattern::default(),
            granularity: MaskGranularity::default(),
        }
    }

    pub fn loss_aware(alpha: f64, beta: f64) -> Self {
        Self {
            alpha,
            beta,
            ..Self::of_kind(ScheduleKind::LossAware)
        }
    }

    pub fn linear(total_mask_steps: u64) -> Self {
        Self {
            total_mask_steps,
            ..Self::of_kind(ScheduleKind::Linear)
        }
    }

    pub fn constant(r: f64) -> Self {
        Self {
            constant_r: r,
            ..Self::of_kind(ScheduleKind::Constant)
        }
    }

    /// Checks the fields the active kind reads; the others are ignored.
    pub fn validate(&self) -> Result<(), CurriculumError> {
        let bad = |m: String| Err(CurriculumError::Contract(m));
        match self.kind {
            ScheduleKind::LossAware => {
                if !(self.alpha > 0.0 && self.alpha.is_finite()) {
                    return bad(format!("alpha must be positive, got {}", self.alpha));
                }
                if !(self.beta >= 0.0 && self.beta.is_finite()) {
                    return bad(format!("beta must be non-negative, got {}", self.beta));
                }
                if !(0.0..1.0).contains(&self.loss_smoothing) {
                    return bad(format!(
                        "loss_smoothing must be in [0, 1), got {}",
                        self.loss_smoothing
                    ));
                }
            }
            ScheduleKind::Linear if self.total_mask_steps == 0 => {
                return bad("total_mask_steps must be positive".into());
            }
            ScheduleKind::Constant if !(0.0..=1.0).contains(&self.constant_r) => {
                return bad(format!("constant_r must be in [0, 1], got {}", self.constant_r));
            }
            _ => {}
        }
        Ok(())
    }

    /// Whether label embeddings ever reach the decoder.
    pub fn injects(&self) -> bool {
        self.kind != ScheduleKind::None
    }
}

/// Keep ratio for `step`, given the (possibly smoothed) loss of the previous
/// batch. `loss` is `None` before the first observation.
pub fn compute_keep_ratio(params: &ScheduleParams, step: u64, loss: Option<f64>) -> Result<f64, CurriculumError> {
    let r = match params.kind {
        ScheduleKind::LossAware => match loss {
            None => 1.0,
            Some(l) if l < 0.0 || l.is_nan() => {
                return Err(CurriculumError::Contract(format!("observed loss must be >= 0, got {l}")));
            }
            Some(l) => (params.alpha * (l - params.beta)).clamp(0.0, 1.0),
        },
        ScheduleKind::Linear => (1.0 - step as f64 / params.total_mask_steps as f64).max(0.0),
        ScheduleKind::Constant => params.constant_r,
        ScheduleKind::None => 0.0,
    };
    Ok(r)
}

/// Mutable scheduler state, advanced once per training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub step: u64,
    pub last_loss: Option<f64>,
    pub smoothed_loss: Option<f64>,
    pub keep_ratio: f64,
}

impl Default for ScheduleState {
    fn default() -> Self {
        Self {
            step: 0,
            last_loss: None,
            smoothed_loss: None,
            keep_ratio: 1.0,
        }
    }
}

impl ScheduleState {
    /// Keep ratio for the current step; stores it in `keep_ratio`.
    pub fn next_keep_ratio(&mut self, params: &ScheduleParams) -> Result<f64, CurriculumError> {
        let loss = if params.loss_smoothing > 0.0 {
            self.smoothed_loss
        } else {
            self.last_loss
        };
        self.keep_ratio = compute_keep_ratio(params, self.step, loss)?;
        Ok(self.keep_ratio)
    }

    /// Records this step's loss for the next step and advances the counter.
    pub fn observe(&mut self, params: &ScheduleParams, loss: f64) -> Result<(), CurriculumError> {
        if !(loss >= 0.0 && loss.is_finite()) {
            return Err(CurriculumError::Contract(format!("observed loss must be finite and >= 0, got {loss}")));
        }
        let lambda = params.loss_smoothing;
        self.smoothed_loss = Some(match self.smoothed_loss {
            Some(s) => lambda * s + (1.0 - lambda) * loss,
            None => loss,
        });
        self.last_loss = Some(loss);
        self.step += 1;
        Ok(())
    }
}

/// Threshold just under a converged baseline loss: `0.9 ×` the mean of the
/// last 10% (at least one) of `losses`.
pub fn select_beta(losses: &[f64]) -> Result<f64, CurriculumError> {
    if losses.is_empty() {
        return Err(CurriculumError::Contract("no losses to select beta from".into()));
    }
    let tail = losses.len().div_ceil(10);
    let window = &losses[losses.len() - tail..];
    Ok(0.9 * window.iter().sum::<f64>() / tail as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn la(alpha: f64, beta: f64, loss: f64) -> f64 {
        compute_keep_ratio(&ScheduleParams::loss_aware(alpha, beta), 5, Some(loss)).unwrap()
    }

    #[test]
    fn loss_aware_examples() {
        assert_eq!(la(2.0, 0.1, 0.1), 0.0);
        assert_eq!(la(2.0, 0.1, 0.6), 1.0);
        assert!((la(2.0, 0.1, 0.35) - 0.5).abs() < 1e-12);
        assert!((la(0.5, 0.01, 1.0) - 0.495).abs() < 1e-12);
    }

    #[test]
    fn first_step_keeps_everything() {
        let p = ScheduleParams::loss_aware(2.0, 0.1);
        let mut s = ScheduleState::default();
        assert_eq!(s.next_keep_ratio(&p).unwrap(), 1.0);
    }

    #[test]
    fn linear_and_constant() {
        let p = ScheduleParams::linear(1000);
        assert_eq!(compute_keep_ratio(&p, 250, None).unwrap(), 0.75);
        assert_eq!(compute_keep_ratio(&p, 5000, None).unwrap(), 0.0);
        let c = ScheduleParams::constant(0.3);
        assert_eq!(compute_keep_ratio(&c, 9, Some(4.0)).unwrap(), 0.3);
        let n = ScheduleParams::of_kind(ScheduleKind::None);
        assert_eq!(compute_keep_ratio(&n, 0, None).unwrap(), 0.0);
    }

    #[test]
    fn negative_loss_is_a_contract_error() {
        let p = ScheduleParams::loss_aware(2.0, 0.1);
        assert!(compute_keep_ratio(&p, 1, Some(-0.5)).is_err());
        let mut s = ScheduleState::default();
        assert!(s.observe(&p, -1.0).is_err());
        assert!(s.observe(&p, f64::NAN).is_err());
    }

    #[test]
    fn validation_reads_only_the_active_kind() {
        let mut p = ScheduleParams::linear(10);
        p.alpha = -1.0;
        p.validate().unwrap();
        p.total_mask_steps = 0;
        assert!(p.validate().is_err());
        assert!(ScheduleParams::loss_aware(0.0, 0.1).validate().is_err());
        assert!(ScheduleParams::constant(1.5).validate().is_err());
    }

    #[test]
    fn smoothing_uses_the_moving_average() {
        let p = ScheduleParams {
            loss_smoothing: 0.5,
            ..ScheduleParams::loss_aware(1.0, 0.0)
        };
        let mut s = ScheduleState::default();
        s.observe(&p, 0.8).unwrap();
        s.observe(&p, 0.2).unwrap();
        assert!((s.next_keep_ratio(&p).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn schedule_params_json() {
        let p: ScheduleParams = serde_json::from_str(r#"{"kind":"loss_aware","alpha":0.5}"#).unwrap();
        assert_eq!(p.alpha, 0.5);
        assert_eq!(p.beta, 0.1);
        assert!(serde_json::from_str::<ScheduleParams>(r#"{"kind":"linear","speed":1}"#).is_err());
        assert_eq!("constant".parse::<ScheduleKind>().unwrap(), ScheduleKind::Constant);
        assert!("exp".parse::<ScheduleKind>().is_err());
    }

    #[test]
    fn beta_from_tail_mean() {
        let losses: Vec<f64> = (0..20).map(|i| if i < 18 { 5.0 } else { 1.0 }).collect();
        assert!((select_beta(&losses).unwrap() - 0.9).abs() < 1e-15);
        assert!((select_beta(&[2.0]).unwrap() - 1.8).abs() < 1e-15);
        assert!(select_beta(&[]).is_err());
    }

    proptest! {
        #[test]
        fn keep_ratio_is_monotone_and_bounded(
            alpha in 0.01f64..10.0,
            beta in 0.0f64..2.0,
            a in 0.0f64..5.0,
            b in 0.0f64..5.0,
        ) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let rl = la(alpha, beta, lo);
            let rh = la(alpha, beta, hi);
            prop_assert!((0.0..=1.0).contains(&rl) && (0.0..=1.0).contains(&rh));
            prop_assert!(rl <= rh);
        }

        #[test]
        fn loss_spike_above_beta_relaxes_masking(
            alpha in 0.1f64..10.0,
            beta in 0.05f64..1.0,
            low in 0.0f64..1.0,
            spike in 0.001f64..1.0,
        ) {
            let p = ScheduleParams::loss_aware(alpha, beta);
            let mut s = ScheduleState::default();
            let below = beta * low;
            s.observe(&p, below).unwrap();
            prop_assert_eq!(s.next_keep_ratio(&p).unwrap(), 0.0);
            s.observe(&p, beta + spike).unwrap();
            prop_assert!(s.next_keep_ratio(&p).unwrap() > 0.0);
        }
    }
}
