#![allow(dead_code)]

use std::path::Path;

use teachlab::curriculum::ScheduleParams;
use teachlab::datagen::{generate_corpus, render_corpus, Alphabet, CorpusSpec, LengthDist, TierMix};
use teachlab::model::ModelConfig;
use teachlab::training::{Dataset, RunConfig};

pub fn tiny_spec(count: usize, seed: u64) -> CorpusSpec {
    CorpusSpec {
        count,
        alphabet: Alphabet::default_prefix(8).unwrap(),
        tier_mix: TierMix::uniform(),
        length: LengthDist { min: 1, max: 4 },
        seed,
        height: 16,
        width: 32,
        max_seq_len: 6,
    }
}

pub fn tiny_data(count: usize, seed: u64) -> Dataset {
    let spec = tiny_spec(count, seed);
    Dataset::from_samples(render_corpus(&spec).unwrap(), spec.alphabet.clone(), 16, 32, 6)
}

pub fn write_tiny_corpus(dir: &Path, count: usize, seed: u64) -> CorpusSpec {
    let spec = tiny_spec(count, seed);
    generate_corpus(&spec, dir).unwrap();
    spec
}

pub fn tiny_model(seed: u64) -> ModelConfig {
    ModelConfig {
        height: 16,
        width: 32,
        patch_height: 8,
        patch_width: 8,
        embed_dim: 8,
        encoder_depth: 1,
        encoder_heads: 2,
        decoder_depth: 1,
        decoder_heads: 2,
        max_seq_len: 6,
        vocab_size: 11,
        seed,
        mlp_ratio: 2,
        ..ModelConfig::default()
    }
}

pub fn tiny_run(schedule: ScheduleParams, data_dir: &Path, out: &Path, steps: u64) -> RunConfig {
    let mut cfg = RunConfig::new(tiny_model(0), schedule, data_dir, out);
    cfg.steps = steps;
    cfg.batch_size = 8;
    cfg.eval_every = steps.max(1);
    cfg.optimizer.lr = 3e-3;
    cfg
}
