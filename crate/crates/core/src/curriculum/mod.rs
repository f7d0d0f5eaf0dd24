//! Label-injection curriculum: keep-ratio schedules, slot masking, and the
//! per-step training forward/backward that ties them to the model.

mod mask;
mod schedule;

use thiserror::Error;

pub use mask::{apply_mask, kept_count, sample_mask, MaskGranularity, MaskPattern, TokenMask};
pub use schedule::{compute_keep_ratio, select_beta, ScheduleKind, ScheduleParams, ScheduleState};

use crate::datagen::PAD_ID;
use crate::model::{Batch, InjectionMode, ModelBundle, ModelError};
use crate::numerics::{Graph, NumericsError};

#[derive(Debug, Error)]
pub enum CurriculumError {
    #[error("{0}")]
    Contract(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// What one training step did.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    pub keep_ratio: f64,
    /// `None` when injection is disabled.
    pub mask: Option<TokenMask>,
    /// Per-slot argmax of the training logits, row-major `B × S`.
    pub argmax: Vec<usize>,
}

/// One forward/backward pass with label injection.
///
/// The keep ratio comes from the loss stored by the previous call; this
/// step's loss is stored for the next one. Gradients are left in
/// `model.params`; the optimizer update is the caller's.
pub fn training_step_injection(
    model: &mut ModelBundle,
    batch: &Batch,
    params: &ScheduleParams,
    state: &mut ScheduleState,
    injection: InjectionMode,
    seed: u64,
) -> Result<StepOutcome, CurriculumError> {
    if injection == InjectionMode::None && params.injects() {
        return Err(CurriculumError::Contract(format!(
            "schedule `{}` needs label slots; injection mode `none` has none",
            params.kind
        )));
    }
    let r = state.next_keep_ratio(params)?;
    model.params.zero_grads();
    let mut g = Graph::new();
    let visual = model.encode_image(&mut g, &batch.images)?;
    let (slots, mask) = match injection {
        InjectionMode::None => (None, None),
        InjectionMode::Pad if params.injects() => {
            let mask = sample_mask(
                r,
                &batch.ids,
                model.config.max_seq_len,
                seed,
                state.step,
                params.pattern,
                params.granularity,
            )?;
            let slots = model.label_slots(&mut g, &batch.labels, &mask.bits)?;
            (Some(slots), Some(mask))
        }
        InjectionMode::Pad => (Some(model.pad_block(&mut g, batch.len())?), None),
    };
    let logits = model.decode(&mut g, visual, slots, &batch.labels)?;
    let loss = g.cross_entropy(logits, &batch.targets(model.config.decoder_kind), Some(PAD_ID))?;
    g.backward(loss)?;
    g.accumulate_param_grads(&mut model.params);
    let loss = g.value(loss)[0];
    state.observe(params, loss)?;
    let v = model.config.vocab_size;
    let argmax = g
        .value(logits)
        .chunks(v)
        .map(|row| (0..v).fold(0, |best, i| if row[i] > row[best] { i } else { best }))
        .collect();
    Ok(StepOutcome {
        loss,
        keep_ratio: r,
        mask,
        argmax,
    })
}
