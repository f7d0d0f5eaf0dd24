use std::path::Path;
use std::time::Instant;

use super::config::{RunConfig, METRICS_FILE, RESOLVED_CONFIG_FILE};
use super::data::{DataLoader, Dataset};
use super::metrics::{save_metrics, RecordSplit, RunRecord};
use super::TrainingError;
use crate::curriculum::{training_step_injection, CurriculumError, ScheduleState};
use crate::datagen::{Sample, PAD_ID};
use crate::harness::eval::{char_accuracy, evaluate_samples, EvalReport, MatchPolicy};
use crate::model::{Batch, InjectionMode, ModelBundle, ModelError};
use crate::numerics::{adam_step, AdamState, Graph, NumericsError};

/// Environment variable that selects strict determinism.
pub const THREADS_ENV: &str = "TEACHLAB_THREADS";

/// True when `TEACHLAB_THREADS=1`. Training is single-threaded either way;
/// strict mode additionally writes `wall_ms = 0` so metrics files are
/// byte-reproducible.
pub fn strict_mode() -> bool {
    std::env::var(THREADS_ENV).is_ok_and(|v| v.trim() == "1")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainOptions {
    /// Record elapsed milliseconds in `wall_ms`.
    pub wall_clock: bool,
    /// Print validation rows to stderr.
    pub verbose: bool,
}

impl TrainOptions {
    pub fn from_env() -> Self {
        Self {
            wall_clock: !strict_mode(),
            verbose: false,
        }
    }

    pub fn quiet_deterministic() -> Self {
        Self {
            wall_clock: false,
            verbose: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelBundle,
    pub records: Vec<RunRecord>,
    pub final_eval: Option<EvalReport>,
}

impl TrainOutcome {
    pub fn train_losses(&self) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.split == RecordSplit::Train)
            .map(|r| r.loss)
            .collect()
    }

    /// Mean training loss of the last `n` steps (all steps if fewer).
    pub fn tail_loss(&self, n: usize) -> f64 {
        let l = self.train_losses();
        let tail = &l[l.len().saturating_sub(n)..];
        tail.iter().sum::<f64>() / tail.len().max(1) as f64
    }
}

fn is_non_finite(e: &TrainingError) -> bool {
    let n = match e {
        TrainingError::Numerics(n)
        | TrainingError::Model(ModelError::Numerics(n))
        | TrainingError::Curriculum(CurriculumError::Numerics(n))
        | TrainingError::Curriculum(CurriculumError::Model(ModelError::Numerics(n))) => n,
        _ => return false,
    };
    matches!(n, NumericsError::NonFinite { .. } | NumericsError::NonFiniteGrad { .. })
}

/// Loads the dataset named in `config` and trains on it.
pub fn train(config: &RunConfig, opts: TrainOptions) -> Result<TrainOutcome, TrainingError> {
    config.validate()?;
    let data = Dataset::load(&config.data_dir)?;
    train_on(config, &data, opts)
}

/// Mean next-token cross-entropy on `samples` without label input.
pub fn validation_loss(
    model: &ModelBundle,
    data: &Dataset,
    samples: &[Sample],
    mode: InjectionMode,
    batch_size: usize,
) -> Result<f64, TrainingError> {
    let (mut total, mut count) = (0.0, 0usize);
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let batch = Batch::from_samples(&refs, &data.alphabet, data.max_seq_len)?;
        let targets = batch.targets(model.config.decoder_kind);
        let n = targets.iter().filter(|&&t| t != PAD_ID).count();
        let mut g = Graph::new();
        // The autoregressive decoder reads the true prefix (teacher forcing);
        // the label slots stay empty.
        let logits = model.inference_logits(&mut g, &batch.images, mode, &batch.labels)?;
        let loss = g.cross_entropy(logits, &targets, Some(PAD_ID))?;
        total += g.value(loss)[0] * n as f64;
        count += n;
    }
    Ok(total / count.max(1) as f64)
}

/// Trains on in-memory data and writes checkpoint, model config, metrics
/// and resolved config into `config.out_dir`.
pub fn train_on(config: &RunConfig, data: &Dataset, opts: TrainOptions) -> Result<TrainOutcome, TrainingError> {
    config.validate()?;
    data.check_model(&config.model)?;
    let out = &config.out_dir;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join(RESOLVED_CONFIG_FILE), config.to_json())?;

    let mut model = ModelBundle::new(config.model.clone())?;
    for prefix in &config.frozen_prefixes {
        model.params.set_trainable_prefix(prefix, false);
    }
    model.save(out)?;
    let steps = config.effective_steps();
    let mut records = Vec::new();
    let val_len = config.eval_limit.map_or(data.val.len(), |n| n.min(data.val.len()));
    let val = &data.val[..val_len];
    let started = Instant::now();
    let wall = |opts: &TrainOptions| if opts.wall_clock { started.elapsed().as_millis() as u64 } else { 0 };

    let mut final_eval = None;
    if steps > 0 {
        let mut loader = DataLoader::new(data.train.len(), config.batch_size, config.seed)?;
        let mut sched = ScheduleState::default();
        let mut adam = AdamState::new();
        for step in 0..steps {
            let batch = loader.next_batch(data)?;
            let result = training_step_injection(
                &mut model,
                &batch,
                &config.schedule,
                &mut sched,
                config.injection,
                config.seed,
            )
            .map_err(TrainingError::from)
            .and_then(|o| {
                adam_step(&mut model.params, &mut adam, &config.optimizer)?;
                Ok(o)
            });
            let outcome = match result {
                Ok(o) => o,
                Err(e) if is_non_finite(&e) => {
                    // The checkpoint on disk is the last one written at an
                    // evaluation point (or the initialization); keep it.
                    save_metrics(&out.join(METRICS_FILE), &records)?;
                    return Err(TrainingError::NonFinite {
                        step,
                        detail: e.to_string(),
                    });
                }
                Err(e) => return Err(e),
            };
            let s = data.max_seq_len;
            let (mut word, mut chars) = (0.0, 0.0);
            for (i, text) in batch.texts.iter().enumerate() {
                let pred = data.alphabet.decode(&outcome.argmax[i * s..(i + 1) * s]);
                word += f64::from(u8::from(&pred == text));
                chars += char_accuracy(&pred, text);
            }
            let n = batch.len() as f64;
            records.push(RunRecord {
                step,
                split: RecordSplit::Train,
                loss: outcome.loss,
                keep_ratio: outcome.keep_ratio,
                word_acc: word / n,
                char_acc: chars / n,
                seed: config.seed,
                wall_ms: wall(&opts),
            });

            let last = step + 1 == steps;
            if (step + 1) % config.eval_every == 0 || last {
                if !val.is_empty() {
                    let report = evaluate_samples(
                        &model,
                        val,
                        &data.alphabet,
                        config.injection,
                        MatchPolicy::CaseSensitive,
                        config.batch_size,
                    )?;
                    let loss = validation_loss(&model, data, val, config.injection, config.batch_size)?;
                    let rec = RunRecord {
                        step,
                        split: RecordSplit::Val,
                        loss,
                        keep_ratio: 0.0,
                        word_acc: report.overall.word_acc,
                        char_acc: report.overall.char_acc,
                        seed: config.seed,
                        wall_ms: wall(&opts),
                    };
                    if opts.verbose {
                        eprintln!(
                            "step {:>6}  train loss {:.4}  r {:.3}  val loss {:.4}  word {:.4}  char {:.4}",
                            step, outcome.loss, outcome.keep_ratio, rec.loss, rec.word_acc, rec.char_acc
                        );
                    }
                    records.push(rec);
                    final_eval = Some(report);
                }
                model.save(out)?;
            }
        }
    }
    model.save(out)?;
    save_metrics(&out.join(METRICS_FILE), &records)?;
    if let Some(r) = &mut final_eval {
        r.checkpoint = out.join(crate::model::CHECKPOINT_FILE).display().to_string();
        r.seeds = vec![config.seed];
    }
    Ok(TrainOutcome {
        model,
        records,
        final_eval,
    })
}

/// Convenience for callers that only need the output directory.
pub fn output_files(dir: &Path) -> [std::path::PathBuf; 4] {
    [
        dir.join(crate::model::CHECKPOINT_FILE),
        dir.join(crate::model::MODEL_CONFIG_FILE),
        dir.join(METRICS_FILE),
        dir.join(RESOLVED_CONFIG_FILE),
    ]
}
