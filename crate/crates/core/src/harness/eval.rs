use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datagen::{Alphabet, Sample, Tier};
use crate::model::{Batch, InjectionMode, ModelBundle, ModelError};

/// How predictions are compared with labels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchPolicy {
    #[default]
    CaseSensitive,
    CaseInsensitive,
}

impl MatchPolicy {
    fn normalize(self, s: &str) -> String {
        match self {
            Self::CaseSensitive => s.to_string(),
            Self::CaseInsensitive => s.to_lowercase(),
        }
    }
}

/// `1 − levenshtein / max(len)`; two empty strings score 1.
pub fn char_accuracy(pred: &str, truth: &str) -> f64 {
    let longest = pred.chars().count().max(truth.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - strsim::levenshtein(pred, truth) as f64 / longest as f64
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TierStats {
    pub count: usize,
    pub word_acc: f64,
    pub char_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub checkpoint: String,
    pub seeds: Vec<u64>,
    pub tiers: BTreeMap<Tier, TierStats>,
    pub overall: TierStats,
}

impl EvalReport {
    /// Scores `(tier, prediction, label)` triples.
    pub fn from_predictions<'a>(
        items: impl IntoIterator<Item = (Tier, &'a str, &'a str)>,
        policy: MatchPolicy,
    ) -> Self {
        let mut sums: BTreeMap<Tier, (usize, f64, f64)> = BTreeMap::new();
        for (tier, pred, truth) in items {
            let (p, t) = (policy.normalize(pred), policy.normalize(truth));
            let e = sums.entry(tier).or_default();
            e.0 += 1;
            e.1 += f64::from(u8::from(p == t));
            e.2 += char_accuracy(&p, &t);
        }
        let (mut n, mut w, mut c) = (0, 0.0, 0.0);
        let tiers = sums
            .into_iter()
            .map(|(tier, (count, word, chars))| {
                n += count;
                w += word;
                c += chars;
                (
                    tier,
                    TierStats {
                        count,
                        word_acc: word / count as f64,
                        char_acc: chars / count as f64,
                    },
                )
            })
            .collect();
        let overall = if n == 0 {
            TierStats::default()
        } else {
            TierStats {
                count: n,
                word_acc: w / n as f64,
                char_acc: c / n as f64,
            }
        };
        Self {
            checkpoint: String::new(),
            seeds: Vec::new(),
            tiers,
            overall,
        }
    }
}

/// Predicted strings for `samples`, in order, computed in batches.
pub fn predict_strings(
    model: &ModelBundle,
    samples: &[Sample],
    alphabet: &Alphabet,
    mode: InjectionMode,
    batch_size: usize,
) -> Result<Vec<String>, ModelError> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let batch = Batch::from_samples(&refs, alphabet, model.config.max_seq_len)?;
        for ids in model.predict(&batch.images, mode)? {
            out.push(alphabet.decode(&ids));
        }
    }
    Ok(out)
}

/// Word and character accuracy of `model` on `samples`, per tier.
pub fn evaluate_samples(
    model: &ModelBundle,
    samples: &[Sample],
    alphabet: &Alphabet,
    mode: InjectionMode,
    policy: MatchPolicy,
    batch_size: usize,
) -> Result<EvalReport, ModelError> {
    if samples.is_empty() {
        return Err(ModelError::Config("cannot evaluate an empty split".into()));
    }
    let preds = predict_strings(model, samples, alphabet, mode, batch_size)?;
    Ok(EvalReport::from_predictions(
        samples
            .iter()
            .zip(&preds)
            .map(|(s, p)| (s.entry.tier, p.as_str(), s.entry.label.as_str())),
        policy,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_predictions_score_one() {
        let r = EvalReport::from_predictions(
            [(Tier::Clean, "ab", "ab"), (Tier::Noisy, "c", "c")],
            MatchPolicy::CaseSensitive,
        );
        assert_eq!(r.overall.word_acc, 1.0);
        assert_eq!(r.overall.char_acc, 1.0);
    }

    #[test]
    fn one_wrong_char_of_four() {
        let r = EvalReport::from_predictions([(Tier::Clean, "cbt2", "cat2")], MatchPolicy::CaseSensitive);
        assert_eq!(r.overall.word_acc, 0.0);
        assert!((r.overall.char_acc - 0.75).abs() < 1e-15);
    }

    #[test]
    fn empty_prediction_and_case_policy() {
        assert_eq!(char_accuracy("", ""), 1.0);
        assert_eq!(char_accuracy("", "abc"), 0.0);
        let sens = EvalReport::from_predictions([(Tier::Clean, "AB", "ab")], MatchPolicy::CaseSensitive);
        let insens = EvalReport::from_predictions([(Tier::Clean, "AB", "ab")], MatchPolicy::CaseInsensitive);
        assert_eq!((sens.overall.word_acc, insens.overall.word_acc), (0.0, 1.0));
    }

    fn levenshtein_oracle(a: &str, b: &str) -> usize {
        let (a, b): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
        let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for (i, row) in d.iter_mut().enumerate() {
            row[0] = i;
        }
        for j in 0..=b.len() {
            d[0][j] = j;
        }
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
                d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
            }
        }
        d[a.len()][b.len()]
    }

    proptest! {
        #[test]
        fn report_matches_recount_and_tier_weighting(
            items in prop::collection::vec((0usize..4, "[ab]{0,4}", "[ab]{1,4}"), 1..40)
        ) {
            let triples: Vec<(Tier, String, String)> =
                items.iter().map(|(t, p, g)| (Tier::ALL[*t], p.clone(), g.clone())).collect();
            let r = EvalReport::from_predictions(
                triples.iter().map(|(t, p, g)| (*t, p.as_str(), g.as_str())),
                MatchPolicy::CaseSensitive,
            );
            let n = triples.len() as f64;
            let word = triples.iter().filter(|(_, p, g)| p == g).count() as f64 / n;
            let chars = triples
                .iter()
                .map(|(_, p, g)| 1.0 - levenshtein_oracle(p, g) as f64 / p.len().max(g.len()) as f64)
                .sum::<f64>() / n;
            prop_assert!((r.overall.word_acc - word).abs() < 1e-12);
            prop_assert!((r.overall.char_acc - chars).abs() < 1e-12);
            let weighted: f64 = r.tiers.values().map(|s| s.word_acc * s.count as f64).sum::<f64>() / n;
            prop_assert!((weighted - r.overall.word_acc).abs() < 1e-12);
            prop_assert_eq!(r.tiers.values().map(|s| s.count).sum::<usize>(), triples.len());
        }
    }
}
