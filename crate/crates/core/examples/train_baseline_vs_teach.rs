//! Matched runs of the loss-aware schedule, linear decay and no injection on
//! an in-memory corpus: same seed, same initialization, same batch order.
//!
//!     cargo run --release --example train_baseline_vs_teach -- 1500

use teachlab::curriculum::{ScheduleKind, ScheduleParams};
use teachlab::datagen::{render_corpus, Alphabet, CorpusSpec, LengthDist, TierMix};
use teachlab::model::{DecoderKind, ModelConfig};
use teachlab::training::{matched_pair_run, Dataset, RunConfig, TrainOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps: u64 = std::env::args().nth(1).map_or(Ok(600), |s| s.parse())?;
    let spec = CorpusSpec {
        count: 3000,
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
        embed_dim: 32,
        encoder_depth: 1,
        encoder_heads: 2,
        decoder_kind: DecoderKind::LinearHead,
        decoder_depth: 1,
        decoder_heads: 2,
        max_seq_len: 8,
        vocab_size: spec.alphabet.vocab_size(),
        mlp_ratio: 2,
        ..ModelConfig::default()
    };
    let out = tempfile::tempdir()?;
    let mut cfg = RunConfig::new(model, ScheduleParams::loss_aware(2.0, 0.1), out.path(), out.path());
    cfg.steps = steps;
    cfg.eval_every = steps;
    cfg.optimizer.lr = 2e-3;
    let schedules = [
        ScheduleParams::loss_aware(2.0, 0.1),
        ScheduleParams::linear(steps / 2),
        ScheduleParams::of_kind(ScheduleKind::None),
    ];
    let rows = matched_pair_run(&cfg, &data, &schedules, TrainOptions::quiet_deterministic())?;
    let early = (steps / 2) as usize;
    println!("{:<11} {:>10} {:>10} {:>8} {:>8}", "schedule", "early loss", "final loss", "word", "char");
    for r in &rows {
        let e = r.losses[..early].iter().sum::<f64>() / early as f64;
        println!(
            "{:<11} {:>10.4} {:>10.4} {:>8.4} {:>8.4}",
            r.label,
            e,
            r.final_loss,
            r.val_word_acc.unwrap_or(0.0),
            r.val_char_acc.unwrap_or(0.0)
        );
    }
    Ok(())
}
