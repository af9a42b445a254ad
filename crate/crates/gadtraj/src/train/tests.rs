use super::*;
use crate::data::{scale_fit_transform, split_dataset, ScalerKind};
use crate::model::{GadformerModel, ModelConfig};
use crate::syngen::{generate_dataset, GenConfig};

fn tiny_bundle(m: usize, seed: u64) -> SplitBundle {
    let gen = GenConfig {
        num_trajectories: m,
        trajectory_len: 8,
        anomaly_fraction: 0.05,
        seed,
        ..GenConfig::default()
    };
    let ds = generate_dataset(&gen).unwrap();
    let mut bundle = split_dataset(&ds, (0.6, 0.2, 0.2), 0.9, Setting::Unsupervised, seed).unwrap();
    let (train_scaled, scaler) = scale_fit_transform(&bundle.train, ScalerKind::Standard).unwrap();
    bundle.train = train_scaled;
    bundle.valid = scaler.transform(&bundle.valid);
    bundle.test = scaler.transform(&bundle.test);
    bundle
}

fn tiny_model(seed: u64) -> GadformerModel {
    let cfg = ModelConfig {
        seq_len: 8,
        input_dim: 2,
        token_dim: 8,
        ffn_hidden: 16,
        heads: 2,
        blocks: 1,
        dropout: 0.0,
        head_hidden: 8,
    };
    GadformerModel::new(cfg, seed).unwrap()
}

fn tiny_train_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        lr: 1e-3,
        weight_decay: 0.0,
        epochs,
        batch_size: 8,
        patience: 10,
        seed: 4,
        ..TrainConfig::default()
    }
}

#[test]
fn single_epoch_run_scores_test_split() {
    let bundle = tiny_bundle(40, 1);
    let mut model = tiny_model(2);
    let cfg = TrainConfig { epochs: 1, patience: 0, ..tiny_train_config(1) };
    let result = train(&mut model, &bundle, &cfg, &mut TrainHooks::default()).unwrap();
    assert_eq!(result.history.len(), 1);
    assert_eq!(result.best_epoch, 0);
    assert_eq!(result.scores.test.p_hat.len(), bundle.test.len());
    assert!(result.loss_test.is_finite());
}

#[test]
fn training_is_deterministic() {
    let bundle = tiny_bundle(40, 3);
    let cfg = tiny_train_config(3);
    let mut m1 = tiny_model(7);
    let mut m2 = tiny_model(7);
    let r1 = train(&mut m1, &bundle, &cfg, &mut TrainHooks::default()).unwrap();
    let r2 = train(&mut m2, &bundle, &cfg, &mut TrainHooks::default()).unwrap();
    for (a, b) in r1.history.iter().zip(&r2.history) {
        assert_eq!(a.loss_train.to_bits(), b.loss_train.to_bits());
        assert_eq!(a.loss_valid.to_bits(), b.loss_valid.to_bits());
    }
    for (a, b) in r1.scores.test.p_hat.iter().zip(&r2.scores.test.p_hat) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn loss_decreases_early_on_separable_corpus() {
    let bundle = tiny_bundle(60, 5);
    let mut model = tiny_model(11);
    let cfg = tiny_train_config(5);
    let result = train(&mut model, &bundle, &cfg, &mut TrainHooks::default()).unwrap();
    // monotone within a tolerance of one non-improving epoch
    let losses: Vec<f64> = result.history.iter().map(|h| h.loss_train).collect();
    let regressions = losses.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(regressions <= 1, "train losses {losses:?}");
    assert!(losses.last().unwrap() < losses.first().unwrap());
}

#[test]
fn best_model_reproduces_min_validation_loss() {
    let bundle = tiny_bundle(40, 9);
    let mut model = tiny_model(13);
    let cfg = tiny_train_config(4);
    let result = train(&mut model, &bundle, &cfg, &mut TrainHooks::default()).unwrap();
    let min_loss = result.history.iter().map(|h| h.loss_valid).fold(f64::INFINITY, f64::min);
    assert_eq!(result.loss_valid, min_loss);
    // the returned model re-scores the validation split to exactly that loss
    let out = score_groups(&model, &bundle.valid.padded_groups(), false).unwrap();
    let loss = bce_loss_value(&out.p_hat);
    assert_eq!(loss.to_bits(), min_loss.to_bits());
}

#[test]
fn checkpoints_written_at_best_events() {
    let bundle = tiny_bundle(40, 11);
    let mut model = tiny_model(17);
    let cfg = tiny_train_config(3);
    let dir = tempfile::tempdir().unwrap();
    let mut hooks = TrainHooks {
        checkpoint_dir: Some(dir.path().to_path_buf()),
        ..TrainHooks::default()
    };
    let result = train(&mut model, &bundle, &cfg, &mut hooks).unwrap();
    let files: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
    let best_events = result
        .history
        .iter()
        .filter(|h| h.loss_valid == result.history[..=h.epoch].iter().map(|x| x.loss_valid).fold(f64::INFINITY, f64::min) && h.earlystop == 0)
        .count();
    assert!(!files.is_empty());
    assert_eq!(files.len(), best_events);
}

#[test]
fn jsonl_log_has_one_line_per_epoch() {
    let bundle = tiny_bundle(40, 13);
    let mut model = tiny_model(19);
    let cfg = tiny_train_config(3);
    let mut buf: Vec<u8> = Vec::new();
    let mut hooks = TrainHooks { log: Some(&mut buf), ..TrainHooks::default() };
    let result = train(&mut model, &bundle, &cfg, &mut hooks).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), result.history.len());
    let first: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    for key in ["epoch", "loss_train", "loss_valid", "lr", "earlystop"] {
        assert!(first.get(key).is_some(), "missing {key}");
    }
}

// ── EpochController state machine ───────────────────────────────────

#[test]
fn strict_improvement_resets_counter() {
    let mut c = EpochController::new(0.1, 2, 1);
    let d = c.observe(1.0);
    assert!(d.new_best);
    assert_eq!(d.earlystop, 0);
    let d = c.observe(0.9);
    assert!(d.new_best);
    assert_eq!(d.earlystop, 0);
}

#[test]
fn equal_loss_counts_as_non_improvement() {
    let mut c = EpochController::new(0.1, 2, 5);
    c.observe(1.0);
    let d = c.observe(1.0);
    assert!(!d.new_best);
    assert_eq!(d.earlystop, 1);
}

#[test]
fn three_non_improvements_with_patience_two_stop() {
    let mut c = EpochController::new(0.1, 2, 99);
    c.observe(1.0);
    assert!(!c.observe(1.0).stop); // counter 1
    assert!(!c.observe(1.0).stop); // counter 2
    assert!(c.observe(1.0).stop); // counter 3 > patience 2
}

#[test]
fn improving_run_never_stops_early() {
    let bundle = tiny_bundle(40, 15);
    let mut model = tiny_model(23);
    let cfg = TrainConfig { patience: 0, ..tiny_train_config(4) };
    let result = train(&mut model, &bundle, &cfg, &mut TrainHooks::default()).unwrap();
    // with patience 0 the run ends at the first non-improving epoch; every
    // recorded epoch before the last must therefore be an improvement
    for h in &result.history[..result.history.len() - 1] {
        assert_eq!(h.earlystop, 0, "epoch {} counter {}", h.epoch, h.earlystop);
    }
}

#[test]
fn rejects_bad_configs() {
    let bundle = tiny_bundle(20, 17);
    let mut model = tiny_model(29);
    for cfg in [
        TrainConfig { lr: 0.0, ..tiny_train_config(1) },
        TrainConfig { epochs: 0, ..tiny_train_config(1) },
        TrainConfig { batch_size: 0, ..tiny_train_config(1) },
        TrainConfig { clip_max_norm: Some(-1.0), ..tiny_train_config(1) },
    ] {
        assert!(train(&mut model, &bundle, &cfg, &mut TrainHooks::default()).is_err());
    }
}
