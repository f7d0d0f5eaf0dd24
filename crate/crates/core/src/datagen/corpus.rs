use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::RngExt;
use serde::{Deserialize, Serialize};

use super::alphabet::Alphabet;
use super::pgm;
use super::render::{render, GlyphImage, SampleSpec, Tier};
use super::DatagenError;
use crate::seeding;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const CORPUS_FILE: &str = "corpus.json";
pub const IMAGE_DIR: &str = "images";

/// Proportions of each tier; must be non-negative and sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TierMix {
    pub clean: f64,
    pub noisy: f64,
    pub occluded: f64,
    pub perspective: f64,
}

impl TierMix {
    pub fn only(tier: Tier) -> Self {
        let mut m = Self::default();
        *m.weight_mut(tier) = 1.0;
        m
    }

    pub fn uniform() -> Self {
        Self {
            clean: 0.25,
            noisy: 0.25,
            occluded: 0.25,
            perspective: 0.25,
        }
    }

    pub fn weight(&self, tier: Tier) -> f64 {
        match tier {
            Tier::Clean => self.clean,
            Tier::Noisy => self.noisy,
            Tier::Occluded => self.occluded,
            Tier::Perspective => self.perspective,
        }
    }

    fn weight_mut(&mut self, tier: Tier) -> &mut f64 {
        match tier {
            Tier::Clean => &mut self.clean,
            Tier::Noisy => &mut self.noisy,
            Tier::Occluded => &mut self.occluded,
            Tier::Perspective => &mut self.perspective,
        }
    }

    pub fn validate(&self) -> Result<(), DatagenError> {
        let ws = Tier::ALL.map(|t| self.weight(t));
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) || (ws.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(DatagenError::Spec(format!(
                "tier mix must be non-negative and sum to 1, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Inverse-CDF draw from a uniform `u ∈ [0, 1)`.
    fn pick(&self, u: f64) -> Tier {
        let mut acc = 0.0;
        for t in Tier::ALL {
            acc += self.weight(t);
            if u < acc {
                return t;
            }
        }
        *Tier::ALL
            .iter()
            .rev()
            .find(|&&t| self.weight(t) > 0.0)
            .expect("validated mix has positive mass")
    }
}

/// Label lengths drawn uniformly from `min..=max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LengthDist {
    pub min: usize,
    pub max: usize,
}

/// Everything that determines a generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub count: usize,
    pub alphabet: Alphabet,
    pub tier_mix: TierMix,
    pub length: LengthDist,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub max_seq_len: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            count: 1000,
            alphabet: Alphabet::default(),
            tier_mix: TierMix::uniform(),
            length: LengthDist { min: 1, max: 8 },
            seed: 0,
            height: 32,
            width: 128,
            max_seq_len: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    /// 80/10/10 assignment from a hash of the sample id.
    pub fn of_id(id: &str) -> Split {
        match seeding::fnv1a(id.as_bytes()) % 10 {
            0..=7 => Split::Train,
            8 => Split::Val,
            _ => Split::Test,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = DatagenError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(DatagenError::Spec(format!("unknown split `{s}`"))),
        }
    }
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub label: String,
    pub tier: Tier,
    pub split: Split,
    pub path: String,
}

fn sample_id(i: usize) -> String {
    format!("s{i:06}")
}

/// Draws the sample specs of a corpus without rendering anything.
pub fn plan_corpus(spec: &CorpusSpec) -> Result<Vec<SampleSpec>, DatagenError> {
    if spec.count == 0 {
        return Err(DatagenError::Spec("count must be positive".into()));
    }
    spec.tier_mix.validate()?;
    let LengthDist { min, max } = spec.length;
    if min == 0 || min > max || max + 2 > spec.max_seq_len {
        return Err(DatagenError::Spec(format!(
            "label lengths {min}..={max} invalid for sequence length {}",
            spec.max_seq_len
        )));
    }
    let mut rng = seeding::rng(seeding::derive(spec.seed, "corpus"));
    let chars = spec.alphabet.chars();
    (0..spec.count)
        .map(|i| {
            let id = sample_id(i);
            let tier = spec.tier_mix.pick(rng.random::<f64>());
            let len = rng.random_range(min..=max);
            let label: String = (0..len)
                .map(|_| chars[rng.random_range(0..chars.len())])
                .collect();
            let seed = seeding::derive(spec.seed, &id);
            SampleSpec::new(id, label, tier, seed, spec.max_seq_len)
        })
        .collect()
}

/// Renders every sample of `spec` in memory, in manifest order.
pub fn render_corpus(spec: &CorpusSpec) -> Result<Vec<Sample>, DatagenError> {
    plan_corpus(spec)?
        .iter()
        .map(|s| {
            Ok(Sample {
                image: render(s, &spec.alphabet, spec.height, spec.width)?,
                entry: ManifestEntry {
                    id: s.id.clone(),
                    label: s.label.clone(),
                    tier: s.tier,
                    split: Split::of_id(&s.id),
                    path: format!("{IMAGE_DIR}/{}.pgm", s.id),
                },
            })
        })
        .collect()
}

/// Renders `spec.count` samples into `out_dir` and writes the manifest.
///
/// Output bytes are a pure function of `spec`.
pub fn generate_corpus(spec: &CorpusSpec, out_dir: &Path) -> Result<Vec<ManifestEntry>, DatagenError> {
    let samples = render_corpus(spec)?;
    std::fs::create_dir_all(out_dir.join(IMAGE_DIR))?;
    for s in &samples {
        pgm::write(&out_dir.join(&s.entry.path), &s.image)?;
    }
    let manifest: Vec<ManifestEntry> = samples.into_iter().map(|s| s.entry).collect();
    let mut f = std::io::BufWriter::new(std::fs::File::create(out_dir.join(MANIFEST_FILE))?);
    for e in &manifest {
        serde_json::to_writer(&mut f, e).map_err(|e| DatagenError::Format(e.to_string()))?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    let spec_json =
        serde_json::to_string_pretty(spec).map_err(|e| DatagenError::Format(e.to_string()))?;
    std::fs::write(out_dir.join(CORPUS_FILE), spec_json + "\n")?;
    Ok(manifest)
}

/// A loaded sample: manifest entry plus decoded image.
#[derive(Debug, Clone)]
pub struct Sample {
    pub entry: ManifestEntry,
    pub image: GlyphImage,
}

/// An on-disk corpus: its spec and manifest.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub dir: PathBuf,
    pub spec: CorpusSpec,
    pub entries: Vec<ManifestEntry>,
}

impl Corpus {
    pub fn open(dir: &Path) -> Result<Self, DatagenError> {
        let read = |name: &str| {
            let p = dir.join(name);
            std::fs::read_to_string(&p).map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", p.display())))
        };
        let spec_text = read(CORPUS_FILE)?;
        let spec: CorpusSpec = serde_json::from_str(&spec_text)
            .map_err(|e| DatagenError::Format(format!("{CORPUS_FILE}: {e}")))?;
        let text = read(MANIFEST_FILE)?;
        let entries = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.is_empty())
            .map(|(n, l)| {
                serde_json::from_str(l)
                    .map_err(|e| DatagenError::Format(format!("{MANIFEST_FILE}:{}: {e}", n + 1)))
            })
            .collect::<Result<Vec<ManifestEntry>, _>>()?;
        Ok(Self {
            dir: dir.to_path_buf(),
            spec,
            entries,
        })
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<Sample>, DatagenError> {
        self.entries
            .iter()
            .filter(|e| e.split == split)
            .map(|e| {
                let image = pgm::read(&self.dir.join(&e.path))?;
                if image.height != self.spec.height || image.width != self.spec.width {
                    return Err(DatagenError::Format(format!(
                        "{}: expected {}x{} image",
                        e.path, self.spec.width, self.spec.height
                    )));
                }
                Ok(Sample {
                    entry: e.clone(),
                    image,
                })
            })
            .collect()
    }

    pub fn split_counts(&self) -> BTreeMap<Split, usize> {
        let mut m = BTreeMap::new();
        for e in &self.entries {
            *m.entry(e.split).or_default() += 1;
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tier_mix_must_sum_to_one() {
        assert!(TierMix::uniform().validate().is_ok());
        let bad = TierMix {
            clean: 0.5,
            noisy: 0.4,
            ..TierMix::default()
        };
        assert!(bad.validate().is_err());
        let neg = TierMix {
            clean: 1.5,
            noisy: -0.5,
            ..TierMix::default()
        };
        assert!(neg.validate().is_err());
    }

    #[test]
    fn split_assignment_is_roughly_80_10_10() {
        let mut counts = [0usize; 3];
        for i in 0..10_000 {
            counts[Split::of_id(&sample_id(i)) as usize] += 1;
        }
        assert!((7_700..=8_300).contains(&counts[0]), "{counts:?}");
        assert!((800..=1_200).contains(&counts[1]), "{counts:?}");
        assert!((800..=1_200).contains(&counts[2]), "{counts:?}");
    }

    #[test]
    fn planned_tier_fractions_follow_the_mix() {
        let spec = CorpusSpec {
            count: 10_000,
            tier_mix: TierMix {
                clean: 0.5,
                noisy: 0.5,
                ..TierMix::default()
            },
            seed: 11,
            ..CorpusSpec::default()
        };
        let plan = plan_corpus(&spec).unwrap();
        let clean = plan.iter().filter(|s| s.tier == Tier::Clean).count() as f64 / 10_000.0;
        assert!((0.48..=0.52).contains(&clean), "{clean}");
        assert!(plan.iter().all(|s| matches!(s.tier, Tier::Clean | Tier::Noisy)));
    }

    #[test]
    fn zero_count_is_rejected() {
        let spec = CorpusSpec {
            count: 0,
            ..CorpusSpec::default()
        };
        assert!(plan_corpus(&spec).is_err());
    }
}
