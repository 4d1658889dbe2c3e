use mimalloc::MiMalloc;
use ssanet_core::arch::{
    build_variant, forward, init_parameters, ArchConfig, ArchError, VariantId,
};
use ssanet_core::data::{generate_dataset, make_split, DatasetSplit, SampleRecord, SynthConfig};
use ssanet_core::engine::Mode;
use ssanet_core::metrics::default_thresholds;
use ssanet_core::rng;
use ssanet_core::train::*;

#[global_allocator]
static GLOBAL: MiMalloc = MiMalloc;

fn small_arch() -> ArchConfig {
    ArchConfig {
        base_channels: 4,
        blocks_per_stage: vec![1, 1],
        ..ArchConfig::desk()
    }
}

/// Three stages make dec need a divisor of 4.
fn three_stage_arch() -> ArchConfig {
    ArchConfig {
        blocks_per_stage: vec![1, 1, 1],
        ..small_arch()
    }
}

fn small_split(size: usize, n: usize, n_train: usize, seed: u64) -> DatasetSplit {
    let cfg = SynthConfig {
        image_size: size,
        n_vessels: (2, 4),
        radius_range: (0.7, 1.5),
        seed,
        ..SynthConfig::default()
    };
    make_split(generate_dataset(&cfg, n).unwrap(), n_train).unwrap()
}

/// Top-left `size x size` window of every record.
fn cropped(records: &[SampleRecord], size: usize) -> Vec<SampleRecord> {
    records
        .iter()
        .map(|r| SampleRecord {
            id: r.id.clone(),
            image: r.image.crop(0, 0, size, size),
            vessel_mask: r.vessel_mask.crop(0, 0, size, size),
            fov_mask: r.fov_mask.crop(0, 0, size, size),
        })
        .collect()
}

fn small_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        arch: small_arch(),
        epochs,
        batch: 2,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_epochs_returns_the_initialization() {
    let split = small_split(32, 4, 2, 0);
    let cfg = small_cfg(0);
    let (ckpt, history) = train(&cfg, &split).unwrap();
    assert!(history.is_empty());
    assert_eq!(ckpt.step, 0);
    let spec = build_variant(cfg.variant, &cfg.arch).unwrap();
    let init = initial_parameters(&cfg, &spec, &split.train).unwrap();
    assert_eq!(ckpt.params, init);
    // Weights come straight from the seeded initializer; only the input
    // normalization buffers are fitted to the data.
    let raw = init_parameters(&spec, rng::derive_seed(cfg.seed, 0));
    for (name, p) in ckpt.params.iter() {
        if !name.starts_with("input_norm") {
            assert_eq!(p.value, raw.value(name).unwrap().clone(), "{name}");
        }
    }
}

#[test]
fn zero_epochs_allows_an_empty_training_set() {
    let split = DatasetSplit {
        train: Vec::new(),
        test: Vec::new(),
    };
    let (_, history) = train(&small_cfg(0), &split).unwrap();
    assert!(history.is_empty());
    assert!(matches!(
        train(&small_cfg(1), &split),
        Err(TrainError::EmptyTrainingSet)
    ));
}

#[test]
fn training_is_bitwise_deterministic() {
    let split = small_split(32, 6, 4, 1);
    let cfg = small_cfg(2);
    let (a, ha) = train(&cfg, &split).unwrap();
    let (b, hb) = train(&cfg, &split).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
    assert_eq!(ha.loss, hb.loss);
    assert_eq!(ha.len(), 2);
    assert_eq!(a.step, 4);
    let other = TrainConfig { seed: 4, ..cfg };
    assert_ne!(train(&other, &split).unwrap().0.to_bytes(), a.to_bytes());
}

#[test]
fn history_csv_layout() {
    let h = History {
        loss: vec![0.5, 0.25],
        seconds: vec![1.0, 2.0],
    };
    let mut buf = Vec::new();
    h.write_csv(&mut buf).unwrap();
    assert_eq!(
        String::from_utf8(buf).unwrap(),
        "epoch,loss,seconds\n1,0.5,1\n2,0.25,2\n"
    );
}

#[test]
fn invalid_configs_are_rejected() {
    let split = small_split(32, 4, 2, 0);
    for cfg in [
        TrainConfig {
            lr: 0.0,
            ..small_cfg(1)
        },
        TrainConfig {
            lr: f64::NAN,
            ..small_cfg(1)
        },
        TrainConfig {
            momentum: 1.0,
            ..small_cfg(1)
        },
        TrainConfig {
            batch: 0,
            ..small_cfg(1)
        },
        TrainConfig {
            crop: Some(0),
            ..small_cfg(1)
        },
    ] {
        assert!(
            matches!(train(&cfg, &split), Err(TrainError::InvalidConfig(_))),
            "{cfg:?}"
        );
    }
}

#[test]
fn indivisible_images_are_rejected_before_training() {
    let base = small_split(32, 4, 2, 0);
    let split = DatasetSplit {
        train: cropped(&base.train, 30),
        test: Vec::new(),
    };
    let cfg = TrainConfig {
        variant: VariantId::MsresnetDec,
        arch: three_stage_arch(),
        ..small_cfg(1)
    };
    match train(&cfg, &split) {
        Err(TrainError::Arch(ArchError::IndivisibleInput { divisor, .. })) => {
            assert_eq!(divisor, 4)
        }
        other => panic!("expected IndivisibleInput, got {other:?}"),
    }
}

#[test]
fn mixed_shapes_are_rejected_without_cropping() {
    let mut split = small_split(32, 4, 2, 0);
    split.train[1] = small_split(40, 4, 2, 0).train.remove(0);
    assert!(matches!(
        train(&small_cfg(1), &split),
        Err(TrainError::ShapeMismatch { .. })
    ));
}

#[test]
fn cropping_trains_on_larger_and_mixed_images() {
    let mut split = small_split(40, 4, 2, 2);
    split.train.push(small_split(48, 4, 2, 5).train.remove(0));
    let cfg = TrainConfig {
        crop: Some(24),
        ..small_cfg(2)
    };
    let (a, h) = train(&cfg, &split).unwrap();
    assert!(h.loss.iter().all(|l| l.is_finite()));
    assert_eq!(a.to_bytes(), train(&cfg, &split).unwrap().0.to_bytes());
    let too_big = TrainConfig {
        crop: Some(44),
        ..cfg
    };
    assert!(matches!(
        train(&too_big, &split),
        Err(TrainError::ShapeMismatch { .. })
    ));
}

#[test]
fn loss_stays_finite_across_seeds() {
    // Default optimizer settings on a reduced network and image size.
    for seed in 0..5 {
        let split = small_split(64, 6, 4, seed);
        let cfg = TrainConfig {
            arch: small_arch(),
            epochs: 3,
            seed,
            ..TrainConfig::default()
        };
        let (_, history) = train(&cfg, &split).unwrap();
        assert_eq!(history.len(), 3);
        assert!(
            history.loss.iter().all(|l| l.is_finite() && *l > 0.0),
            "seed {seed}: {:?}",
            history.loss
        );
    }
}

#[test]
fn divergence_reports_the_epoch() {
    let split = small_split(32, 5, 4, 0);
    let cfg = TrainConfig {
        lr: 1e300,
        ..small_cfg(5)
    };
    match train(&cfg, &split) {
        Err(TrainError::NonFiniteLoss { epoch, .. }) => assert!(epoch < 5),
        other => panic!("expected NonFiniteLoss, got {other:?}"),
    }
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let split = small_split(32, 6, 4, 1);
    let (ckpt, _) = train(&small_cfg(1), &split).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ssan");
    save_checkpoint(&ckpt, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.blobs(), ckpt.blobs());
    assert_eq!(back.to_bytes(), ckpt.to_bytes());
    assert_eq!(
        (back.variant, back.step, back.seed),
        (ckpt.variant, ckpt.step, ckpt.seed)
    );

    let spec = ckpt.spec().unwrap();
    let image = split.test[0].image.clone();
    let (ta, a) = forward(&spec, &ckpt.params, &image, Mode::Eval).unwrap();
    let (tb, b) = forward(&spec, &back.params, &image, Mode::Eval).unwrap();
    assert_eq!(ta.value(a.prob).data(), tb.value(b.prob).data());
    assert_eq!(
        evaluate(&ckpt, &split.test).unwrap(),
        evaluate(&back, &split.test).unwrap()
    );
}

#[test]
fn checkpoint_header_layout() {
    let split = small_split(32, 4, 2, 0);
    let (ckpt, _) = train(&small_cfg(0), &split).unwrap();
    let bytes = ckpt.to_bytes();
    assert_eq!(&bytes[..4], MAGIC);
    assert_eq!(
        u32::from_le_bytes(bytes[4..8].try_into().unwrap()),
        FORMAT_VERSION
    );
    assert_eq!(bytes[8], VariantId::MsresnetSsa2.code());
    let seed = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
    assert_eq!(seed, 3);
}

#[test]
fn corrupt_checkpoints_fail_distinctly() {
    let split = small_split(32, 4, 2, 0);
    let (ckpt, _) = train(&small_cfg(0), &split).unwrap();
    let bytes = ckpt.to_bytes();

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(
        Checkpoint::from_bytes(&bad),
        Err(CheckpointError::BadMagic(_))
    ));

    let mut bad = bytes.clone();
    bad[4..8].copy_from_slice(&7u32.to_le_bytes());
    assert!(matches!(
        Checkpoint::from_bytes(&bad),
        Err(CheckpointError::VersionMismatch {
            found: 7,
            expected: 1
        })
    ));

    for cut in (0..bytes.len()).step_by(97).chain([bytes.len() - 1]) {
        assert!(
            matches!(
                Checkpoint::from_bytes(&bytes[..cut]),
                Err(CheckpointError::Truncated(_))
            ),
            "cut at {cut}"
        );
    }

    let mut long = bytes.clone();
    long.push(0);
    assert!(matches!(
        Checkpoint::from_bytes(&long),
        Err(CheckpointError::Malformed(_))
    ));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("missing.ssan");
    assert!(matches!(
        load_checkpoint(&path),
        Err(CheckpointError::Io { .. })
    ));
}

#[test]
fn resnet34_checkpoint_into_desk_evaluation_is_a_config_mismatch() {
    let cfg = TrainConfig {
        arch: ArchConfig::resnet34().with_input_channels(1),
        epochs: 0,
        ..TrainConfig::default()
    };
    let empty = DatasetSplit {
        train: Vec::new(),
        test: Vec::new(),
    };
    let (ckpt, _) = train(&cfg, &empty).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r34.ssan");
    save_checkpoint(&ckpt, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.config, ArchConfig::resnet34().with_input_channels(1));
    match loaded.ensure_config(&ArchConfig::desk()) {
        Err(CheckpointError::ConfigMismatch { .. }) => {}
        other => panic!("expected ConfigMismatch, got {other:?}"),
    }
    assert!(loaded.ensure_config(&loaded.config.clone()).is_ok());
}

#[test]
fn evaluation_contract() {
    let split = small_split(32, 6, 3, 4);
    let (ckpt, _) = train(&small_cfg(1), &split).unwrap();
    assert!(matches!(
        evaluate(&ckpt, &[]),
        Err(TrainError::EmptyTestSet)
    ));

    let a = evaluate(&ckpt, &split.test).unwrap();
    let b = evaluate(&ckpt, &split.test).unwrap();
    assert_eq!(a, b);
    let ids: Vec<&str> = a.per_image.iter().map(|(id, _)| id.as_str()).collect();
    let expected: Vec<&str> = split.test.iter().map(|r| r.id.as_str()).collect();
    assert_eq!(ids, expected);

    let threaded = evaluate_with(
        &ckpt,
        &split.test,
        &EvalOptions {
            thresholds: default_thresholds(),
            threads: 3,
        },
    )
    .unwrap();
    assert_eq!(threaded, a);

    let s = a.pooled.summary();
    for v in [s.pr_auc, s.roc_auc, s.best_dice] {
        assert!((0.0..=1.0).contains(&v));
    }

    let dir = tempfile::tempdir().unwrap();
    a.write_dir(dir.path()).unwrap();
    for f in ["curve.csv", "summary.json", "per_image.json"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    for id in ids {
        assert!(dir
            .path()
            .join("per_image")
            .join(format!("{id}.csv"))
            .is_file());
    }
}

#[test]
fn evaluation_rejects_wrong_shapes() {
    let split = small_split(32, 4, 2, 0);
    let (ckpt, _) = train(&small_cfg(0), &split).unwrap();
    assert!(matches!(
        evaluate(&ckpt, &cropped(&split.test, 31)),
        Err(TrainError::Arch(ArchError::IndivisibleInput { .. }))
    ));
}

#[test]
fn ablation_rows() {
    let split = small_split(32, 6, 4, 0);
    let template = TrainConfig {
        arch: three_stage_arch(),
        ..small_cfg(1)
    };
    let eval = EvalOptions::default();

    let one = ablation_sweep(&[VariantId::MsresnetSsa2], &template, &split, &eval);
    assert_eq!(one.len(), 1);
    assert!(one[0].error.is_none() && one[0].roc_auc.is_some());

    let rows = ablation_sweep(
        &[VariantId::MsresnetSsa2, VariantId::MsresnetDec],
        &template,
        &split,
        &eval,
    );
    assert_eq!(rows[0].params, rows[1].params);
    assert!(rows[1].receptive_field > rows[0].receptive_field);

    let mut buf = Vec::new();
    write_ablation_csv(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "variant,pr_auc,roc_auc,best_dice,params,receptive_field,train_seconds"
    );
    assert_eq!(lines.count(), 2);
}

#[test]
fn ablation_marks_failed_rows_and_continues() {
    // 30 is even, as ssa2 needs, but not a multiple of the 4 dec needs.
    let base = small_split(32, 4, 2, 0);
    let split = DatasetSplit {
        train: cropped(&base.train, 30),
        test: cropped(&base.test, 30),
    };
    let template = TrainConfig {
        arch: three_stage_arch(),
        ..small_cfg(1)
    };
    let rows = ablation_sweep(
        &[VariantId::MsresnetDec, VariantId::MsresnetSsa2],
        &template,
        &split,
        &EvalOptions::default(),
    );
    assert!(rows[0].error.is_some() && rows[0].roc_auc.is_none());
    assert!(rows[1].error.is_none() && rows[1].roc_auc.is_some());
    let mut buf = Vec::new();
    write_ablation_csv(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("dec,failed,failed,failed,"));
}
