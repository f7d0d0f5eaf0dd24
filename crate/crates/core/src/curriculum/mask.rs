use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::CurriculumError;
use crate::numerics::{Graph, Var};
use crate::seeding;

/// Which slots survive when `k` of `S` are kept.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskPattern {
    /// `k` positions drawn uniformly without replacement.
    #[default]
    Random,
    /// The first `k` positions.
    Prefix,
}

/// Whether each sample draws its own mask or the batch shares one.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskGranularity {
    #[default]
    PerSample,
    Shared,
}

/// Row-major `B × S` keep bits.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMask {
    pub bits: Vec<bool>,
    pub batch: usize,
    pub seq_len: usize,
    pub keep_ratio_used: f64,
    pub rng_seed_used: u64,
}

impl TokenMask {
    pub fn row(&self, i: usize) -> &[bool] {
        &self.bits[i * self.seq_len..(i + 1) * self.seq_len]
    }

    pub fn full(batch: usize, seq_len: usize) -> Self {
        Self {
            bits: vec![true; batch * seq_len],
            batch,
            seq_len,
            keep_ratio_used: 1.0,
            rng_seed_used: 0,
        }
    }
}

/// `round(r·S)` with halves rounded away from zero.
pub fn kept_count(r: f64, seq_len: usize) -> usize {
    ((r * seq_len as f64).round() as usize).min(seq_len)
}

fn row_bits(k: usize, seq_len: usize, pattern: MaskPattern, seed: u64) -> Vec<bool> {
    let mut bits = vec![false; seq_len];
    match pattern {
        MaskPattern::Prefix => bits[..k].fill(true),
        MaskPattern::Random => {
            let mut rng = seeding::rng(seed);
            for i in index::sample(&mut rng, seq_len, k) {
                bits[i] = true;
            }
        }
    }
    bits
}

/// Draws the keep mask for one step. The result depends only on
/// `(seed, step, sample_ids)` and the pattern settings.
pub fn sample_mask(
    r: f64,
    sample_ids: &[String],
    seq_len: usize,
    seed: u64,
    step: u64,
    pattern: MaskPattern,
    granularity: MaskGranularity,
) -> Result<TokenMask, CurriculumError> {
    if !(0.0..=1.0).contains(&r) {
        return Err(CurriculumError::Contract(format!("keep ratio {r} outside [0, 1]")));
    }
    let k = kept_count(r, seq_len);
    let step_seed = seeding::derive2(seed, "mask", step);
    let bits = match granularity {
        MaskGranularity::Shared => row_bits(k, seq_len, pattern, step_seed).repeat(sample_ids.len()),
        MaskGranularity::PerSample => sample_ids
            .iter()
            .flat_map(|id| row_bits(k, seq_len, pattern, seeding::derive(step_seed, id)))
            .collect(),
    };
    Ok(TokenMask {
        bits,
        batch: sample_ids.len(),
        seq_len,
        keep_ratio_used: r,
        rng_seed_used: step_seed,
    })
}

/// Replaces every masked row of `labels` (`[B, S, E]`) by `pad` (`[E]`).
/// Kept rows are copied bit for bit.
pub fn apply_mask(g: &mut Graph, labels: Var, pad: Var, mask: &TokenMask) -> Result<Var, CurriculumError> {
    let shape = g.shape(labels);
    if shape.len() != 3 || shape[0] != mask.batch || shape[1] != mask.seq_len {
        return Err(CurriculumError::Contract(format!(
            "mask {}x{} does not fit label embeddings {shape:?}",
            mask.batch, mask.seq_len
        )));
    }
    Ok(g.select_rows(labels, pad, &mask.bits)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i:06}")).collect()
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(kept_count(0.5, 4), 2);
        assert_eq!(kept_count(0.25, 10), 3);
        assert_eq!(kept_count(0.35, 10), 4);
        assert_eq!(kept_count(0.05, 10), 1);
        assert_eq!(kept_count(0.04, 10), 0);
        assert_eq!(kept_count(1.0, 10), 10);
    }

    #[test]
    fn half_keep_of_four() {
        let m = sample_mask(0.5, &ids(50), 4, 1, 0, MaskPattern::Random, MaskGranularity::PerSample).unwrap();
        assert!((0..50).all(|i| m.row(i).iter().filter(|&&b| b).count() == 2));
    }

    #[test]
    fn prefix_and_shared_variants() {
        let m = sample_mask(0.3, &ids(3), 10, 1, 0, MaskPattern::Prefix, MaskGranularity::PerSample).unwrap();
        for i in 0..3 {
            assert_eq!(m.row(i), &[true, true, true, false, false, false, false, false, false, false]);
        }
        let s = sample_mask(0.5, &ids(4), 10, 1, 3, MaskPattern::Random, MaskGranularity::Shared).unwrap();
        assert!((1..4).all(|i| s.row(i) == s.row(0)));
    }

    #[test]
    fn masks_differ_across_steps_and_samples() {
        let a = sample_mask(0.5, &ids(8), 10, 1, 0, MaskPattern::Random, MaskGranularity::PerSample).unwrap();
        let b = sample_mask(0.5, &ids(8), 10, 1, 1, MaskPattern::Random, MaskGranularity::PerSample).unwrap();
        assert_ne!(a.bits, b.bits);
        assert!((1..8).any(|i| a.row(i) != a.row(0)));
    }

    #[test]
    fn out_of_range_ratio_is_rejected() {
        assert!(sample_mask(1.2, &ids(1), 10, 0, 0, MaskPattern::Random, MaskGranularity::PerSample).is_err());
    }

    #[test]
    fn apply_mask_extremes() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(&[2, 3, 4], |i| (i as f64).sin()));
        let pad = g.constant(Tensor::from_fn(&[4], |i| -(i as f64)));
        let full = TokenMask::full(2, 3);
        let y = apply_mask(&mut g, x, pad, &full).unwrap();
        assert_eq!(g.value(y), g.value(x));
        let none = sample_mask(0.0, &ids(2), 3, 0, 0, MaskPattern::Random, MaskGranularity::PerSample).unwrap();
        let z = apply_mask(&mut g, x, pad, &none).unwrap();
        for row in g.value(z).chunks(4) {
            assert_eq!(row, g.value(pad));
        }
        let wrong = TokenMask::full(3, 3);
        assert!(apply_mask(&mut g, x, pad, &wrong).is_err());
    }

    #[test]
    fn gradient_reaches_kept_rows_and_pad() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::zeros(&[1, 3, 2]));
        let pad = g.variable(Tensor::zeros(&[2]));
        let mut mask = TokenMask::full(1, 3);
        mask.bits[1] = false;
        let y = apply_mask(&mut g, x, pad, &mask).unwrap();
        let loss = g.sum(y).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 0.0, 0.0, 1.0, 1.0]);
        assert_eq!(g.grad(pad).unwrap(), &[1.0, 1.0]);
    }

    proptest! {
        #[test]
        fn popcount_is_exact(r in 0.0f64..=1.0, s in 1usize..30, seed in any::<u64>(), step in 0u64..1000) {
            let m = sample_mask(r, &ids(5), s, seed, step, MaskPattern::Random, MaskGranularity::PerSample).unwrap();
            let k = kept_count(r, s);
            for i in 0..5 {
                prop_assert_eq!(m.row(i).iter().filter(|&&b| b).count(), k);
            }
        }

        #[test]
        fn masks_are_reproducible(r in 0.0f64..=1.0, seed in any::<u64>(), step in 0u64..1000) {
            let a = sample_mask(r, &ids(4), 10, seed, step, MaskPattern::Random, MaskGranularity::PerSample).unwrap();
            let b = sample_mask(r, &ids(4), 10, seed, step, MaskPattern::Random, MaskGranularity::PerSample).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
