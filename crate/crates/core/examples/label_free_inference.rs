//! Trains briefly with label injection, saves and reloads the checkpoint, and
//! shows that predictions never depend on the labels of the batch.

use teachlab::curriculum::ScheduleParams;
use teachlab::datagen::{render_corpus, Alphabet, CorpusSpec, LengthDist, TierMix, Tier, LabelSequence};
use teachlab::model::{Batch, InjectionMode, ModelBundle, ModelConfig};
use teachlab::training::{train_on, Dataset, RunConfig, TrainOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = CorpusSpec {
        count: 1500,
        alphabet: Alphabet::default_prefix(16)?,
        tier_mix: TierMix::only(Tier::Clean),
        length: LengthDist { min: 1, max: 4 },
        seed: 5,
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
        decoder_depth: 1,
        decoder_heads: 2,
        max_seq_len: 8,
        vocab_size: spec.alphabet.vocab_size(),
        mlp_ratio: 2,
        ..ModelConfig::default()
    };
    let dir = tempfile::tempdir()?;
    let mut cfg = RunConfig::new(model, ScheduleParams::linear(600), dir.path(), dir.path());
    cfg.steps = 1200;
    cfg.eval_every = 1200;
    cfg.optimizer.lr = 2e-3;
    let trained = train_on(&cfg, &data, TrainOptions::quiet_deterministic())?;

    let model = ModelBundle::load(dir.path())?;
    assert_eq!(model.params.scalar_count(), trained.model.params.scalar_count());
    println!("reloaded {} parameters from {}", model.param_count(), dir.path().display());

    let samples: Vec<_> = data.val.iter().take(8).collect();
    let mut batch = Batch::from_samples(&samples, &data.alphabet, 8)?;
    let honest = model.predict_batch(&batch, InjectionMode::Pad)?;
    // Swap in nonsense labels: predictions must not move.
    batch.labels = vec![LabelSequence(vec![1, 3, 3, 3, 3, 3, 2, 0]); batch.len()];
    let scrambled = model.predict_batch(&batch, InjectionMode::Pad)?;
    assert_eq!(honest, scrambled);
    for (s, ids) in samples.iter().zip(&honest) {
        println!("  {:<8} -> {}", s.entry.label, data.alphabet.decode(ids));
    }
    println!("predictions identical with scrambled labels");
    Ok(())
}
