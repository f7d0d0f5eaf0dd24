mod common;

use common::{tiny_data, tiny_run};
use teachlab::curriculum::{ScheduleKind, ScheduleParams};
use teachlab::model::{InjectionMode, ModelBundle};
use teachlab::training::{
    load_metrics, matched_pair_run, train_on, RecordSplit, RunConfig, TrainOptions, TrainingError, METRICS_FILE,
    RESOLVED_CONFIG_FILE,
};

fn clamp_keep(alpha: f64, beta: f64, loss: f64) -> f64 {
    let r = alpha * (loss - beta);
    if r < 0.0 {
        0.0
    } else if r > 1.0 {
        1.0
    } else {
        r
    }
}

#[test]
fn keep_ratio_column_replays_from_loss_column() {
    let data = tiny_data(200, 1);
    let dir = tempfile::tempdir().unwrap();
    let sched = ScheduleParams::loss_aware(1.5, 1.8);
    let cfg = tiny_run(sched, dir.path(), dir.path(), 60);
    train_on(&cfg, &data, TrainOptions::quiet_deterministic()).unwrap();
    let rows = load_metrics(&dir.path().join(METRICS_FILE)).unwrap();
    let train: Vec<_> = rows.iter().filter(|r| r.split == RecordSplit::Train).collect();
    assert_eq!(train.len(), 60);
    assert_eq!(train[0].keep_ratio, 1.0);
    let mut interior = 0;
    for w in train.windows(2) {
        let want = clamp_keep(1.5, 1.8, w[0].loss);
        assert_eq!(w[1].keep_ratio, want, "step {}", w[1].step);
        interior += usize::from(want > 0.0 && want < 1.0);
    }
    assert!(interior > 0, "trace never left the clamp boundaries");
}

#[test]
fn linear_schedule_column_matches_decay() {
    let data = tiny_data(200, 2);
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_run(ScheduleParams::linear(20), dir.path(), dir.path(), 30);
    let out = train_on(&cfg, &data, TrainOptions::quiet_deterministic()).unwrap();
    for r in out.records.iter().filter(|r| r.split == RecordSplit::Train) {
        let want = (1.0 - r.step as f64 / 20.0).max(0.0);
        assert_eq!(r.keep_ratio, want);
    }
}

#[test]
fn resolved_config_round_trips_and_reproduces() {
    let data = tiny_data(200, 3);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = tiny_run(ScheduleParams::loss_aware(2.0, 0.1), a.path(), a.path(), 25);
    train_on(&cfg, &data, TrainOptions::quiet_deterministic()).unwrap();
    let loaded = RunConfig::load(&a.path().join(RESOLVED_CONFIG_FILE)).unwrap();
    assert_eq!(loaded, cfg);
    let again = RunConfig {
        out_dir: b.path().to_path_buf(),
        ..loaded
    };
    train_on(&again, &data, TrainOptions::quiet_deterministic()).unwrap();
    for f in ["checkpoint.tchk", "model_config.json", METRICS_FILE] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn validation_rows_land_on_eval_steps_and_the_end() {
    let data = tiny_data(300, 4);
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_run(ScheduleParams::of_kind(ScheduleKind::None), dir.path(), dir.path(), 25);
    cfg.eval_every = 10;
    let out = train_on(&cfg, &data, TrainOptions::quiet_deterministic()).unwrap();
    let val_steps: Vec<u64> = out.records.iter().filter(|r| r.split == RecordSplit::Val).map(|r| r.step).collect();
    assert_eq!(val_steps, vec![9, 19, 24]);
    assert!(out.final_eval.is_some());
    assert!(out.records.iter().all(|r| r.wall_ms == 0));
}

#[test]
fn checkpoint_reloads_to_the_same_predictions() {
    let data = tiny_data(200, 5);
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_run(ScheduleParams::loss_aware(2.0, 0.1), dir.path(), dir.path(), 15);
    let out = train_on(&cfg, &data, TrainOptions::quiet_deterministic()).unwrap();
    let loaded = ModelBundle::load(dir.path()).unwrap();
    let refs: Vec<_> = data.val.iter().collect();
    let batch = teachlab::model::Batch::from_samples(&refs, &data.alphabet, 6).unwrap();
    assert_eq!(
        out.model.predict(&batch.images, InjectionMode::Pad).unwrap(),
        loaded.predict(&batch.images, InjectionMode::Pad).unwrap()
    );
}

#[test]
fn overflow_aborts_and_keeps_the_last_good_checkpoint() {
    let data = tiny_data(200, 6);
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_run(ScheduleParams::of_kind(ScheduleKind::None), dir.path(), dir.path(), 50);
    cfg.eval_every = 5;
    // The first update lands near 1e300; layer norm then squares it.
    cfg.optimizer.lr = 1e300;
    let fresh = tempfile::tempdir().unwrap();
    ModelBundle::new(cfg.model.clone()).unwrap().save(fresh.path()).unwrap();
    match train_on(&cfg, &data, TrainOptions::quiet_deterministic()) {
        Err(TrainingError::NonFinite { step, detail }) => {
            assert!(step >= 1, "{detail}");
            assert!(step < 5, "overflow expected before the first evaluation, got step {step}");
            let rows = load_metrics(&dir.path().join(METRICS_FILE)).unwrap();
            assert_eq!(rows.len() as u64, step);
            assert_eq!(
                std::fs::read(dir.path().join("checkpoint.tchk")).unwrap(),
                std::fs::read(fresh.path().join("checkpoint.tchk")).unwrap()
            );
        }
        other => panic!("expected a non-finite stop, got {:?}", other.map(|o| o.records.len())),
    }
}

#[test]
fn matched_runs_share_initialization_and_batches() {
    let data = tiny_data(200, 7);
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_run(ScheduleParams::of_kind(ScheduleKind::None), dir.path(), dir.path(), 12);
    let rows = matched_pair_run(
        &cfg,
        &data,
        &[ScheduleParams::constant(0.0), ScheduleParams::of_kind(ScheduleKind::None), ScheduleParams::constant(0.0)],
        TrainOptions::quiet_deterministic(),
    )
    .unwrap();
    let labels: Vec<&str> = rows.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["constant", "none", "constant_2"]);
    // r = 0 and no injection follow the same trajectory.
    assert_eq!(rows[0].losses, rows[1].losses);
    assert_eq!(rows[0].losses, rows[2].losses);
}

#[test]
fn step_multiplier_extends_injecting_runs_only() {
    let data = tiny_data(200, 8);
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_run(ScheduleParams::linear(5), dir.path(), dir.path(), 10);
    cfg.step_multiplier = 1.5;
    assert_eq!(train_on(&cfg, &data, TrainOptions::quiet_deterministic()).unwrap().train_losses().len(), 15);
    cfg.schedule = ScheduleParams::of_kind(ScheduleKind::None);
    assert_eq!(train_on(&cfg, &data, TrainOptions::quiet_deterministic()).unwrap().train_losses().len(), 10);
}

#[test]
fn mismatched_model_is_a_config_error() {
    let data = tiny_data(100, 9);
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_run(ScheduleParams::linear(5), dir.path(), dir.path(), 3);
    cfg.model.vocab_size = 40;
    assert!(matches!(train_on(&cfg, &data, TrainOptions::quiet_deterministic()), Err(TrainingError::Config(_))));
}
