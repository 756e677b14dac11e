use std::ops::ControlFlow;

use decloss::toy::train::window_means;
use decloss::toy::{
    load_checkpoint, save_checkpoint, synthetic_dataset, train, ToyModelParams, TrainConfig,
    TrainingSet,
};
use decloss::{ContrastConfig, Error, Tensor};

fn tiny_config() -> TrainConfig {
    TrainConfig {
        phase1_epochs: 1,
        phase2_epochs: 1,
        steps_per_epoch: 6,
        batch_size: 2,
        lr_crop: 4,
        scale: 2,
        contrast: ContrastConfig {
            patch_size: 4,
            ..Default::default()
        },
        seed: 3,
        ..Default::default()
    }
}

#[test]
fn zero_learning_rate_freezes_everything() {
    // One image and a crop covering all of it: every batch is identical.
    let set = TrainingSet::from_hr(&synthetic_dataset(1, 8, 1), 2).unwrap();
    let cfg = TrainConfig {
        lr_phase1: 0.0,
        lr_phase2: 0.0,
        batch_size: 1,
        ..tiny_config()
    };
    let out = train(&set, &cfg, None).unwrap();
    assert_eq!(out.params, ToyModelParams::init(2, cfg.seed).unwrap());
    for phase in [1, 2] {
        let rows = out.phase(phase);
        assert!(rows.iter().all(|r| r.total == rows[0].total));
    }
}

#[test]
fn same_seed_same_trace() {
    let set = TrainingSet::from_hr(&synthetic_dataset(4, 16, 2), 2).unwrap();
    let cfg = tiny_config();
    let mut seen = Vec::new();
    let mut record = |r: &decloss::toy::TraceRow| {
        seen.push(r.step);
        ControlFlow::Continue(())
    };
    let a = train(&set, &cfg, Some(&mut record)).unwrap();
    let b = train(&set, &cfg, None).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.params, b.params);
    assert_eq!(seen, (0..12).collect::<Vec<_>>());
    assert!(a.phase(1).iter().all(|r| r.ld.is_none()));
    // Batches whose HR patches are all mutually similar fall back to L1.
    for r in a.phase(2) {
        if r.ld.is_none() {
            assert_eq!(r.total, cfg.weights.w1 * r.l1);
        }
    }
}

#[test]
fn phase_one_l1_decreases_early() {
    let set = TrainingSet::from_hr(&synthetic_dataset(50, 96, 0), 4).unwrap();
    let mut stop = |r: &decloss::toy::TraceRow| {
        if r.step + 1 == 50 {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    };
    let out = train(&set, &TrainConfig::desk(), Some(&mut stop)).unwrap();
    let l1: Vec<f64> = out.trace.iter().map(|r| r.l1).collect();
    let w = window_means(&l1, 10);
    assert_eq!(w.len(), 5);
    assert!(w.windows(2).all(|p| p[1] < p[0]), "{w:?}");
}

#[test]
fn crops_must_fit() {
    let set = TrainingSet::from_hr(&synthetic_dataset(2, 16, 2), 2).unwrap();
    let cfg = TrainConfig {
        lr_crop: 12,
        ..tiny_config()
    };
    assert!(matches!(train(&set, &cfg, None), Err(Error::Contract(_))));
    assert!(TrainingSet::from_hr(&[], 2).is_err());
    let odd = TrainingSet::from_hr(&[Tensor::zeros(&[3, 9, 11])], 2).unwrap();
    assert_eq!(odd.hr[0].shape(), &[3, 8, 10]);
    assert_eq!(odd.lr[0].shape(), &[3, 4, 5]);
}

#[test]
fn exploding_rate_is_reported_with_step() {
    let set = TrainingSet::from_hr(&synthetic_dataset(2, 16, 2), 2).unwrap();
    let cfg = TrainConfig {
        lr_phase1: 1e300,
        ..tiny_config()
    };
    match train(&set, &cfg, None) {
        Err(Error::NonFiniteLoss { step }) => assert!(step < 12),
        other => panic!("expected a non-finite loss, got {other:?}"),
    }
}

#[test]
fn checkpoint_file_round_trip() {
    let params = ToyModelParams::init(4, 21).unwrap();
    let path = std::env::temp_dir().join(format!("decl-{}.ckpt", std::process::id()));
    save_checkpoint(&path, &params, serde_json::json!({"note": "x"})).unwrap();
    let (back, meta) = load_checkpoint(&path).unwrap();
    std::fs::remove_file(&path).ok();
    assert_eq!(back, params);
    assert_eq!(meta["note"], "x");
}
