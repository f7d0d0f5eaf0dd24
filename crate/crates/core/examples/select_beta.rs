//! Trains an injection-free baseline and derives beta from its converged
//! loss, then shows the keep ratio that beta gives along the baseline curve.

use teachlab::curriculum::{compute_keep_ratio, select_beta, ScheduleKind, ScheduleParams};
use teachlab::datagen::{render_corpus, Alphabet, CorpusSpec, LengthDist, TierMix};
use teachlab::model::ModelConfig;
use teachlab::training::{train_on, Dataset, RunConfig, TrainOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
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
    let dir = tempfile::tempdir()?;
    let mut cfg = RunConfig::new(model, ScheduleParams::of_kind(ScheduleKind::None), dir.path(), dir.path());
    cfg.steps = 500;
    cfg.eval_every = 500;
    cfg.optimizer.lr = 2e-3;
    let losses = train_on(&cfg, &data, TrainOptions::quiet_deterministic())?.train_losses();
    let beta = select_beta(&losses)?;
    println!("baseline tail loss {:.4} -> beta {beta:.4}", losses[losses.len() - 50..].iter().sum::<f64>() / 50.0);
    let params = ScheduleParams::loss_aware(2.0, beta);
    for step in [0, 50, 100, 200, 300, 499] {
        let r = compute_keep_ratio(&params, step as u64, Some(losses[step]))?;
        println!("  step {step:<4} loss {:.4}  r {r:.3}", losses[step]);
    }
    Ok(())
}
