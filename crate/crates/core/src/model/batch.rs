use crate::datagen::{Alphabet, LabelSequence, Sample, Tier};
use crate::numerics::Tensor;

use super::{DecoderKind, ModelError};

/// A training or evaluation batch: images `[B, H, W]` in `[0, 1]` plus the
/// tokenized labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub ids: Vec<String>,
    pub images: Tensor,
    pub labels: Vec<LabelSequence>,
    pub texts: Vec<String>,
    pub tiers: Vec<Tier>,
}

impl Batch {
    pub fn from_samples(
        samples: &[&Sample],
        alphabet: &Alphabet,
        max_seq_len: usize,
    ) -> Result<Self, ModelError> {
        let first = samples
            .first()
            .ok_or_else(|| ModelError::Config("empty batch".into()))?;
        let (h, w) = (first.image.height, first.image.width);
        let mut pixels = Vec::with_capacity(samples.len() * h * w);
        let mut labels = Vec::with_capacity(samples.len());
        for s in samples {
            if (s.image.height, s.image.width) != (h, w) {
                return Err(ModelError::Config(format!(
                    "sample {} is {}x{}, batch is {w}x{h}",
                    s.entry.id, s.image.width, s.image.height
                )));
            }
            pixels.extend(s.image.normalized());
            labels.push(alphabet.encode(&s.entry.label, max_seq_len)?);
        }
        Ok(Self {
            ids: samples.iter().map(|s| s.entry.id.clone()).collect(),
            images: Tensor::new(vec![samples.len(), h, w], pixels)?,
            labels,
            texts: samples.iter().map(|s| s.entry.label.clone()).collect(),
            tiers: samples.iter().map(|s| s.entry.tier).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Flattened targets, `[B·S]`. The linear head predicts each slot's own
    /// token; the autoregressive decoder predicts the next one.
    pub fn targets(&self, kind: DecoderKind) -> Vec<usize> {
        match kind {
            DecoderKind::LinearHead => self.labels.iter().flat_map(|l| l.ids().iter().copied()).collect(),
            DecoderKind::ArDecoder => self.labels.iter().flat_map(|l| l.shifted_targets()).collect(),
        }
    }
}
