mod common;

use cappy::corpus::write_regression_dataset;
use cappy::scorer::checkpoint::{decode, encode};
use cappy::scorer::{
    adamw_step, load_checkpoint, save_checkpoint, sidecar_path, train, train_to_checkpoint, OptimizerState, Scorer,
    ScorerModel, Sidecar, TrainConfig,
};
use common::{rng, separable_dataset};
use proptest::prelude::*;
use rand::Rng;

fn random_model(dim: usize, seed: u64) -> ScorerModel {
    let mut r = rng(seed);
    let mut m = ScorerModel::new(dim).unwrap();
    for p in m.params_mut() {
        *p = r.random_range(-3.0..3.0);
    }
    m
}

proptest! {
    #[test]
    fn warmup_reaches_target_and_never_decreases(
        total in 1u64..5000,
        rate in 0.0f64..=1.0,
        lr in 1e-7f64..1.0,
    ) {
        let cfg = TrainConfig { learning_rate: lr, warmup_rate: rate, total_steps: total, ..TrainConfig::pretraining() };
        let warm = cfg.warmup_steps();
        prop_assert_eq!(warm, (rate * total as f64).ceil() as u64);
        if warm > 0 {
            prop_assert_eq!(cfg.lr_at(0), 0.0);
        }
        prop_assert_eq!(cfg.lr_at(warm), lr);
        let mut prev = 0.0;
        for s in 0..=warm.min(200) {
            let cur = cfg.lr_at(s);
            prop_assert!(cur >= prev && cur <= lr);
            prev = cur;
        }
    }

    #[test]
    fn prediction_lies_strictly_inside_unit_interval(
        seed: u64,
        instruction in "[a-z ]{0,40}",
        response in "[a-z ]{0,40}",
    ) {
        let m = random_model(256, seed);
        let s = m.score(&instruction, &response).unwrap().value();
        prop_assert!(s > 0.0 && s < 1.0);
        prop_assert_eq!(s, m.score(&instruction, &response).unwrap().value());
    }

    #[test]
    fn checkpoint_bytes_round_trip(seed: u64, with_state: bool) {
        let m = random_model(64, seed);
        let mut state = OptimizerState::new(m.params().len());
        state.step = seed % 1000;
        state.m.iter_mut().enumerate().for_each(|(i, x)| *x = i as f32 * 0.5);
        let bytes = encode(&m, with_state.then_some(&state));
        let back = decode(&bytes).unwrap();
        prop_assert_eq!(&back.model, &m);
        prop_assert_eq!(back.optimizer.as_ref(), with_state.then_some(&state));
        prop_assert!(!back.featurizer_mismatch);
    }

    #[test]
    fn adamw_keeps_second_moment_nonnegative(seed: u64, steps in 1usize..20) {
        let mut r = rng(seed);
        let cfg = TrainConfig { learning_rate: 1e-2, warmup_rate: 0.0, ..TrainConfig::pretraining() };
        let mut params = vec![0.5f32; 16];
        let mut state = OptimizerState::new(16);
        for k in 0..steps {
            let grad: Vec<f64> = (0..16).map(|_| r.random_range(-5.0..5.0)).collect();
            adamw_step(&mut params, &mut state, &grad, &cfg).unwrap();
            prop_assert_eq!(state.step, k as u64 + 1);
            prop_assert!(state.v.iter().all(|v| *v >= 0.0));
            prop_assert!(params.iter().all(|p| p.is_finite()));
        }
    }
}

#[test]
fn non_finite_gradient_leaves_state_untouched() {
    let cfg = TrainConfig::pretraining();
    let mut params = vec![1.0f32; 4];
    let mut state = OptimizerState::new(4);
    let before = (params.clone(), state.clone());
    assert!(adamw_step(&mut params, &mut state, &[0.0, f64::NAN, 0.0, 0.0], &cfg).is_err());
    assert_eq!((params, state), before);
}

#[test]
fn training_to_file_then_resuming() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.jsonl");
    write_regression_dataset(&separable_dataset(64, 3), &data).unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        batch_size: 16,
        total_steps: 50,
        ..TrainConfig::pretraining()
    };
    let first = dir.path().join("a.capy");
    let (outcome, sidecar) = train_to_checkpoint(&data, &cfg, None, 1 << 12, &first).unwrap();
    assert_eq!(sidecar.init, "fresh");
    assert_eq!(sidecar.dataset_size, Some(64));
    let on_disk: Sidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path(&first)).unwrap()).unwrap();
    assert_eq!(on_disk, sidecar);

    let loaded = load_checkpoint(&first).unwrap();
    assert_eq!(loaded.model, outcome.model);
    assert_eq!(loaded.optimizer.as_ref().map(|s| s.step), Some(50));

    let second = dir.path().join("b.capy");
    let (resumed, sc) = train_to_checkpoint(&data, &cfg, Some(&first), 1 << 20, &second).unwrap();
    assert!(sc.init.starts_with("checkpoint:"));
    // The checkpoint's width wins over the requested one.
    assert_eq!(resumed.model.feature_dim(), 1 << 12);
    assert!(resumed.losses.last() <= outcome.losses.first());
}

#[test]
fn identical_config_trains_identical_weights() {
    let data = separable_dataset(80, 9);
    let cfg = TrainConfig {
        learning_rate: 5e-3,
        batch_size: 8,
        total_steps: 40,
        micro_batch_size: 3,
        seed: 4,
        ..TrainConfig::pretraining()
    };
    let a = train(ScorerModel::new(1 << 10).unwrap(), &data, &cfg).unwrap();
    let b = train(ScorerModel::new(1 << 10).unwrap(), &data, &cfg).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.losses, b.losses);
    let other = train(ScorerModel::new(1 << 10).unwrap(), &data, &TrainConfig { seed: 5, ..cfg }).unwrap();
    assert_ne!(a.losses, other.losses);
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.capy");
    let m = random_model(128, 21);
    save_checkpoint(&m, None, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"CAPY");
    assert_eq!(load_checkpoint(&path).unwrap().model, m);
}
