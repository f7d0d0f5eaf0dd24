use serde::Serialize;

use super::config::RunConfig;
use super::data::Dataset;
use super::run::{train_on, TrainOptions};
use super::TrainingError;
use crate::curriculum::ScheduleParams;

/// Steps averaged for the "final loss" figures.
pub const FINAL_WINDOW: usize = 100;

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    /// Output subdirectory name: the schedule kind, suffixed on repeats.
    pub label: String,
    pub schedule: ScheduleParams,
    pub seed: u64,
    pub val_word_acc: Option<f64>,
    pub val_char_acc: Option<f64>,
    pub final_loss: f64,
    /// Training loss per step.
    pub losses: Vec<f64>,
}

/// Trains one model per schedule with the same seed, initialization and
/// batch order. Runs land in `config.out_dir/<label>`.
pub fn matched_pair_run(
    config: &RunConfig,
    data: &Dataset,
    schedules: &[ScheduleParams],
    opts: TrainOptions,
) -> Result<Vec<ComparisonRow>, TrainingError> {
    if schedules.is_empty() {
        return Err(TrainingError::Config("no schedules to compare".into()));
    }
    let mut rows: Vec<ComparisonRow> = Vec::with_capacity(schedules.len());
    for sched in schedules {
        let base = sched.kind.as_str();
        let repeats = rows.iter().filter(|r| r.schedule.kind == sched.kind).count();
        let label = if repeats == 0 {
            base.to_string()
        } else {
            format!("{base}_{}", repeats + 1)
        };
        let run = RunConfig {
            schedule: sched.clone(),
            out_dir: config.out_dir.join(&label),
            ..config.clone()
        };
        let outcome = train_on(&run, data, opts)?;
        rows.push(ComparisonRow {
            label,
            schedule: sched.clone(),
            seed: config.seed,
            val_word_acc: outcome.final_eval.as_ref().map(|e| e.overall.word_acc),
            val_char_acc: outcome.final_eval.as_ref().map(|e| e.overall.char_acc),
            final_loss: outcome.tail_loss(FINAL_WINDOW),
            losses: outcome.train_losses(),
        });
    }
    Ok(rows)
}
