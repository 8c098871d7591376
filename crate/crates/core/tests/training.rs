mod common;

use std::path::Path;

use tvnet::data::synth::generate_samples;
use tvnet::data::{io, Sample, Split};
use tvnet::training::{
    ablation_suite, predict_directory, train, Checkpoint, OptimizerKind, TrainConfig, Trainer,
};
use tvnet::{ErrorKind, TvnetError};

fn samples(n: usize, seed: u64) -> (Vec<Sample>, Vec<Sample>) {
    let (all, _) = generate_samples(&common::tiny_synth(n), seed).unwrap();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (split, s) in all {
        match split {
            Split::Train => train.push(s),
            Split::Test => test.push(s),
        }
    }
    (train, test)
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

#[test]
fn checkpoint_round_trips_through_bytes_and_disk() {
    let (train_set, _) = samples(6, 1);
    let out = train(&common::tiny_train(), &train_set, &[], None, None).unwrap();
    let ckpt = out.checkpoint;
    assert_eq!(Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap(), ckpt);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    ckpt.save(&path).unwrap();
    assert_eq!(Checkpoint::load(&path).unwrap(), ckpt);
    let (net, params) = ckpt.model().unwrap();
    assert_eq!(net.config(), &ckpt.config.model_config());
    assert_eq!(params.num_scalars(), ckpt.params.num_scalars());
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let (train_set, _) = samples(4, 2);
    let bytes = train(&common::tiny_train(), &train_set, &[], None, None)
        .unwrap()
        .checkpoint
        .to_bytes();
    for broken in [
        &bytes[..bytes.len() - 8],
        &bytes[..20],
        b"not a checkpoint at all".as_slice(),
    ] {
        let err = Checkpoint::from_bytes(broken).unwrap_err();
        assert_eq!(err.kind(), ErrorKind::Runtime, "{err}");
    }
    let mut wrong_magic = bytes.clone();
    wrong_magic[0] ^= 0xff;
    assert!(Checkpoint::from_bytes(&wrong_magic).is_err());
}

#[test]
fn resuming_matches_an_uninterrupted_run() {
    let (train_set, _) = samples(8, 3);
    let cfg = TrainConfig {
        epochs: 3,
        hflip_prob: 0.5,
        ..common::tiny_train()
    };
    let full = train(&cfg, &train_set, &[], None, None).unwrap();

    let first = train(
        &TrainConfig {
            epochs: 1,
            ..cfg.clone()
        },
        &train_set,
        &[],
        None,
        None,
    )
    .unwrap();
    let restored = Checkpoint::from_bytes(&first.checkpoint.to_bytes()).unwrap();
    let second = train(&cfg, &train_set, &[], None, Some(restored)).unwrap();

    let stitched: Vec<_> = first.log.iter().chain(&second.log).cloned().collect();
    assert_eq!(stitched, full.log);
    assert_eq!(second.checkpoint.to_bytes(), full.checkpoint.to_bytes());
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let (train_set, _) = samples(6, 4);
    for optimizer in [OptimizerKind::Sgd, OptimizerKind::Adam] {
        let cfg = TrainConfig {
            lr: 0.0,
            optimizer,
            ..common::tiny_train()
        };
        let initial = Trainer::new(&cfg).unwrap().params().clone();
        let out = train(&cfg, &train_set, &[], None, None).unwrap();
        assert!(!out.log.is_empty());
        assert_eq!(out.checkpoint.params, initial, "{optimizer}");
    }
}

#[test]
fn runs_with_the_same_seed_write_identical_artifacts() {
    let (train_set, test_set) = samples(8, 5);
    let cfg = TrainConfig {
        eval_every: 1,
        ..common::tiny_train()
    };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        train(&cfg, &train_set, &test_set, Some(d.path()), None).unwrap();
    }
    for file in [
        "train_log.csv",
        "eval_log.csv",
        "config.txt",
        "summary.txt",
        "checkpoints/epoch_001.ckpt",
        "checkpoints/final.ckpt",
    ] {
        assert_eq!(
            read(&dirs[0].path().join(file)),
            read(&dirs[1].path().join(file)),
            "{file}"
        );
    }
    let log = std::fs::read_to_string(dirs[0].path().join("train_log.csv")).unwrap();
    let iterations = 2 * train_set.len().div_ceil(cfg.batch_size);
    assert_eq!(log.lines().count(), 1 + iterations);

    let other = TrainConfig { seed: 1, ..cfg };
    let d = tempfile::tempdir().unwrap();
    train(&other, &train_set, &test_set, Some(d.path()), None).unwrap();
    assert_ne!(
        read(&dirs[0].path().join("train_log.csv")),
        read(&d.path().join("train_log.csv"))
    );
}

#[test]
fn iteration_budget_stops_mid_epoch() {
    let (train_set, _) = samples(10, 6);
    let cfg = TrainConfig {
        epochs: 50,
        max_iters: 3,
        ..common::tiny_train()
    };
    let out = train(&cfg, &train_set, &[], None, None).unwrap();
    assert_eq!(out.log.len(), 3);
    assert_eq!(out.checkpoint.iteration, 3);
}

#[test]
fn exploding_updates_trip_the_divergence_guard() {
    let (train_set, _) = samples(6, 7);
    let cfg = TrainConfig {
        lr: 1e300,
        clip_norm: 0.0,
        momentum: 0.0,
        epochs: 20,
        ..common::tiny_train()
    };
    match train(&cfg, &train_set, &[], None, None) {
        Err(e @ TvnetError::Divergence { .. }) => assert_eq!(e.kind(), ErrorKind::Runtime),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.log.len())),
    }
}

#[test]
fn invalid_configurations_are_usage_errors() {
    let (train_set, _) = samples(4, 8);
    for cfg in [
        TrainConfig {
            batch_size: 0,
            ..common::tiny_train()
        },
        TrainConfig {
            input_size: 48,
            ..common::tiny_train()
        },
        TrainConfig {
            lr: -1.0,
            ..common::tiny_train()
        },
        TrainConfig {
            cascades: 9,
            ..common::tiny_train()
        },
    ] {
        let err = train(&cfg, &train_set, &[], None, None)
            .err()
            .expect("must fail");
        assert_eq!(err.kind(), ErrorKind::Usage, "{err}");
    }
}

#[test]
fn config_text_round_trips() {
    let cfg = TrainConfig {
        optimizer: OptimizerKind::Adam,
        lr: 3e-3,
        use_fba: false,
        ..common::tiny_train()
    };
    let text = cfg.to_config().to_string();
    let parsed = TrainConfig::from_config(&tvnet::config::Config::parse(&text).unwrap()).unwrap();
    assert_eq!(parsed, cfg);
}

#[test]
fn predictions_are_reproducible_and_sized_like_the_input() {
    let (train_set, _) = samples(6, 9);
    let ckpt = train(&common::tiny_train(), &train_set, &[], None, None)
        .unwrap()
        .checkpoint;
    let (net, params) = ckpt.model().unwrap();

    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("images");
    std::fs::create_dir_all(&images).unwrap();
    for (i, s) in train_set.iter().take(3).enumerate() {
        let resized = tvnet::data::augment::resize_sample(s, 48 + 16 * i, 80).unwrap();
        io::write_rgb(&images.join(format!("{}.png", s.name)), &resized.image).unwrap();
    }
    let a = predict_directory(&net, &params, 64, &images, &dir.path().join("a")).unwrap();
    let b = predict_directory(&net, &params, 64, &images, &dir.path().join("b")).unwrap();
    assert_eq!(a.len(), 3);
    for (i, (pa, pb)) in a.iter().zip(&b).enumerate() {
        assert_eq!(read(pa), read(pb));
        let map = io::read_gray(pa).unwrap();
        assert_eq!((map.height(), map.width()), (48 + 16 * i, 80));
    }
}

#[test]
fn ablation_grid_has_four_rows_with_exact_module_deltas() {
    let (train_set, test_set) = samples(10, 10);
    let cfg = TrainConfig {
        epochs: 1,
        ..common::tiny_train()
    };
    let dir = tempfile::tempdir().unwrap();
    let report = ablation_suite(&cfg, &train_set, &test_set, Some(dir.path())).unwrap();
    let flags: Vec<_> = report.rows.iter().map(|r| (r.use_hrf, r.use_fba)).collect();
    assert_eq!(
        flags,
        [(false, false), (true, false), (false, true), (true, true)]
    );
    let row = |h, f| &report.row(h, f).unwrap().modules;
    common::check_toggle_delta(row(false, false), row(true, false), common::HRF_MODULES).unwrap();
    common::check_toggle_delta(row(false, true), row(true, true), common::HRF_MODULES).unwrap();
    common::check_toggle_delta(row(false, false), row(false, true), common::FBA_MODULES).unwrap();
    common::check_toggle_delta(row(true, false), row(true, true), common::FBA_MODULES).unwrap();
    for r in &report.rows {
        assert_eq!(r.parameters, r.modules.values().sum::<usize>());
    }
    let md = std::fs::read_to_string(dir.path().join("ablation.md")).unwrap();
    assert_eq!(md.lines().count(), 6);
    assert!(dir.path().join("row_d/checkpoints/final.ckpt").is_file());
    assert!(ablation_suite(&cfg, &train_set, &[], None).is_err());
}
