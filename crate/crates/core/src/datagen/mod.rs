//! Procedural word-image corpus: alphabet and tokenizer, a baked 5×7 font,
//! tiered rendering, PGM I/O and manifest-backed corpora.

pub mod alphabet;
pub mod corpus;
pub mod font;
pub mod pgm;
pub mod render;

use thiserror::Error;

pub use alphabet::{Alphabet, LabelSequence, END_ID, FIRST_CHAR_ID, PAD_ID, START_ID};
pub use corpus::{
    generate_corpus, render_corpus, plan_corpus, Corpus, CorpusSpec, LengthDist, ManifestEntry, Sample, Split,
    TierMix,
};
pub use render::{render, render_detailed, GlyphImage, Rendered, SampleSpec, Tier};

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("invalid sample spec: {0}")]
    Spec(String),
    #[error("malformed data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
