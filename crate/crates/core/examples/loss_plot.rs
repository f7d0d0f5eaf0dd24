//! Trains a baseline and a loss-aware run, then draws their loss curves over
//! the full run and the early window as SVG.

use std::path::PathBuf;

use teachlab::curriculum::{ScheduleKind, ScheduleParams};
use teachlab::datagen::{render_corpus, Alphabet, CorpusSpec, LengthDist, TierMix};
use teachlab::harness::plot::{default_title, load_series, plot_loss_curves, Window};
use teachlab::model::ModelConfig;
use teachlab::training::{matched_pair_run, Dataset, RunConfig, TrainOptions, METRICS_FILE};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("teachlab_plot"));
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
    let mut cfg = RunConfig::new(model, ScheduleParams::loss_aware(2.0, 0.1), &out, &out);
    cfg.steps = 1200;
    cfg.eval_every = 1200;
    cfg.optimizer.lr = 2e-3;
    let schedules = [ScheduleParams::loss_aware(2.0, 0.1), ScheduleParams::of_kind(ScheduleKind::None)];
    let rows = matched_pair_run(&cfg, &data, &schedules, TrainOptions::quiet_deterministic())?;
    let metrics: Vec<PathBuf> = rows.iter().map(|r| out.join(&r.label).join(METRICS_FILE)).collect();
    let paths: Vec<&std::path::Path> = metrics.iter().map(PathBuf::as_path).collect();
    for (window, name) in [(Window::Full, "loss_full.svg"), (Window::Early, "loss_early.svg")] {
        plot_loss_curves(&paths, window, &default_title(window), &out.join(name))?;
        println!("{}", out.join(name).display());
    }
    for p in &paths {
        let s = load_series(p)?;
        println!("  {:<11} early mean {:.4}", s.name, s.mean_loss(Window::Early).unwrap_or(f64::NAN));
    }
    Ok(())
}
