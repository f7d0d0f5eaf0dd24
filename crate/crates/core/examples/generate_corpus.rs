//! Renders a small word-image corpus to disk and prints one sample per tier
//! as ASCII art.
//!
//!     cargo run --example generate_corpus -- /tmp/words

use std::path::PathBuf;

use teachlab::datagen::{generate_corpus, Alphabet, Corpus, CorpusSpec, LengthDist, Split, Tier, TierMix};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("teachlab_corpus"));
    let spec = CorpusSpec {
        count: 400,
        alphabet: Alphabet::default_prefix(16)?,
        tier_mix: TierMix::uniform(),
        length: LengthDist { min: 2, max: 6 },
        seed: 7,
        height: 16,
        width: 64,
        max_seq_len: 8,
    };
    let manifest = generate_corpus(&spec, &out)?;
    println!("{} samples in {}", manifest.len(), out.display());

    let corpus = Corpus::open(&out)?;
    for (split, n) in corpus.split_counts() {
        println!("  {:<5} {n}", split.as_str());
    }
    let train = corpus.load_split(Split::Train)?;
    for tier in Tier::ALL {
        let Some(s) = train.iter().find(|s| s.entry.tier == tier) else { continue };
        println!("\n{} `{}`", tier.as_str(), s.entry.label);
        for row in s.image.pixels.chunks(s.image.width) {
            let line: String = row
                .iter()
                .map(|&p| match p {
                    0..=80 => '#',
                    81..=150 => '+',
                    151..=200 => '.',
                    _ => ' ',
                })
                .collect();
            println!("  |{line}|");
        }
    }
    Ok(())
}
