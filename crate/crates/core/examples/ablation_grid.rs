//! A small alpha x beta grid of loss-aware runs against the injection-free
//! baseline, written as CSV.
//!
//!     cargo run --release --example ablation_grid -- /tmp/grid 400

use std::path::PathBuf;

use teachlab::curriculum::ScheduleParams;
use teachlab::datagen::{render_corpus, Alphabet, CorpusSpec, LengthDist, TierMix};
use teachlab::harness::ablate::{ablate, AblationGrid, GRID_FILE};
use teachlab::model::ModelConfig;
use teachlab::training::{Dataset, RunConfig, TrainOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("teachlab_grid"));
    let steps: u64 = args.next().map_or(Ok(300), |s| s.parse())?;
    let spec = CorpusSpec {
        count: 1500,
        alphabet: Alphabet::default_prefix(16)?,
        tier_mix: TierMix::uniform(),
        length: LengthDist { min: 1, max: 6 },
        seed: 0,
        height: 16,
        width: 64,
        max_seq_len: 8,
    };
    let data = Dataset::from_samples(render_corpus(&spec)?, spec.alphabet.clone(), 16, 64, 8);
    let model = ModelConfig {
        height: 16,
        width: 64,
        embed_dim: 16,
        encoder_depth: 1,
        encoder_heads: 2,
        decoder_depth: 1,
        decoder_heads: 2,
        max_seq_len: 8,
        vocab_size: spec.alphabet.vocab_size(),
        mlp_ratio: 2,
        ..ModelConfig::default()
    };
    let mut base = RunConfig::new(model, ScheduleParams::loss_aware(2.0, 0.1), &out, &out);
    base.steps = steps;
    base.eval_every = steps;
    base.optimizer.lr = 2e-3;
    let grid = AblationGrid {
        alphas: vec![0.5, 2.0],
        betas: vec![0.01, 0.1],
        seeds: vec![0, 1],
        base,
    };
    let report = ablate(&grid, &data, TrainOptions::quiet_deterministic(), true)?;
    println!("baseline word acc {:.4}", report.baseline_word_acc().unwrap_or(0.0));
    for c in &report.cells {
        println!(
            "alpha {:<4} beta {:<5} word {:.4} +- {:.4}{}",
            c.alpha,
            c.beta,
            c.mean_word_acc,
            c.std_word_acc,
            if c.argmax { "  best" } else { "" }
        );
    }
    println!("{}", out.join(GRID_FILE).display());
    Ok(())
}
