use std::collections::BTreeMap;

use gazezone::nnet::checkpoint::{from_bytes, to_bytes};
use gazezone::nnet::train::fit;
use gazezone::nnet::{
    adapt_fine_tune, adapt_linear_probe, build_izenet, knn_probe, set_data_parallel, AdaptConfig,
    Augment, CapsuleSpec, Dataset, GazeVector, IzeNetConfig, NnetError, Split, Targets, Task,
    Tensor, TrainConfig, TrainLog,
};
use gazezone::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config() -> IzeNetConfig {
    IzeNetConfig {
        input_size: 32,
        widths: vec![4, 4, 4, 8, 8],
        capsules: CapsuleSpec { count: 4, dim: 4 },
        fc: vec![32, 16],
        ..IzeNetConfig::toy()
    }
}

/// Images whose brightness ramps left-to-right, right-to-left or stays flat,
/// labeled by the ramp direction so a flip swaps classes 0 and 1.
fn ramp_dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = 32;
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let class = i % 3;
        let mut data = Vec::with_capacity(size * size * 3);
        for _y in 0..size {
            for x in 0..size {
                let ramp = match class {
                    0 => x * 8,
                    1 => (size - 1 - x) * 8,
                    _ => 90,
                };
                let v = (ramp as i32 + rng.random_range(-10..=10)).clamp(0, 255) as u8;
                data.extend([v, v, v]);
            }
        }
        images.push(RgbImage::new(size, size, data).unwrap());
        labels.push(class);
    }
    Dataset::new(&images, Targets::Classes { labels, classes: 3 }, size).unwrap()
}

fn quick_train(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        lr: 0.01,
        momentum: 0.9,
        batch_size: 8,
        ..TrainConfig::default()
    }
}

#[test]
fn full_and_toy_presets_build() {
    let full = build_izenet(&IzeNetConfig::full()).unwrap();
    assert_eq!(full.input_shape(2), vec![2, 3, 128, 128]);
    assert_eq!(full.output_dim(), 3);
    assert!(full.outputs_probabilities());
    let toy = build_izenet(&IzeNetConfig::toy()).unwrap();
    assert!(toy.param_count() < full.param_count());
    let x = Tensor::zeros(toy.input_shape(2));
    let (probs, latent) = toy.forward(&x).unwrap();
    assert_eq!(probs.shape(), &[2, 3]);
    assert_eq!(latent.shape()[0], 2);
    for i in 0..2 {
        assert!((probs.item(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let bad_widths = IzeNetConfig {
        widths: vec![4, 4],
        ..small_config()
    };
    assert!(matches!(
        build_izenet(&bad_widths),
        Err(NnetError::Config(_))
    ));
    let bad_size = IzeNetConfig {
        input_size: 20,
        ..small_config()
    };
    assert!(build_izenet(&bad_size).is_err());
}

#[test]
fn zero_epochs_reports_initial_metrics_and_keeps_weights() {
    let (train, val) = (ramp_dataset(24, 1), ramp_dataset(12, 2));
    let mut net = build_izenet(&small_config()).unwrap();
    let before = net.clone();
    let log = fit(&mut net, &train, &val, &quick_train(0)).unwrap();
    assert_eq!(net, before);
    assert_eq!(log.records.len(), 2);
    assert!(log.records.iter().all(|r| r.epoch == 0));
    assert_eq!(log.epochs_run(), 0);
}

#[test]
fn training_learns_a_separable_task_and_logs_round_trip() {
    let (train, val) = (ramp_dataset(60, 3), ramp_dataset(30, 4));
    let mut net = build_izenet(&small_config()).unwrap();
    let log = fit(
        &mut net,
        &train,
        &val,
        &TrainConfig {
            target_metric: Some(0.99),
            ..quick_train(30)
        },
    )
    .unwrap();
    let best = log.best().unwrap();
    assert!(best.metric >= 0.99, "best val accuracy {}", best.metric);
    assert_eq!(log.target_epoch, Some(log.epochs_run()));
    assert_eq!(
        TrainLog::parse_csv(&log.to_csv()).unwrap().records,
        log.records
    );
    assert!(log.last(Split::Train).unwrap().loss < log.records[0].loss);
}

#[test]
fn data_parallel_training_is_bit_identical() {
    let (train, val) = (ramp_dataset(24, 5), ramp_dataset(9, 6));
    let run = |parallel: bool| {
        set_data_parallel(parallel);
        let mut net = build_izenet(&small_config()).unwrap();
        fit(&mut net, &train, &val, &quick_train(2)).unwrap();
        net
    };
    let (serial, parallel) = (run(false), run(true));
    set_data_parallel(false);
    assert_eq!(serial, parallel);
}

#[test]
fn linear_probe_freezes_and_fine_tune_with_no_epochs_keeps_backbone() {
    let (train, val) = (ramp_dataset(24, 7), ramp_dataset(9, 8));
    let net = build_izenet(&small_config()).unwrap();
    let snapshot = net.backbone_snapshot();
    let lp_cfg = AdaptConfig {
        train: quick_train(2),
        head_width: 8,
        head_seed: 1,
    };
    let (lp, _) = adapt_linear_probe(&net, &train, &val, Task::Zone, &lp_cfg).unwrap();
    assert_eq!(lp.backbone_snapshot(), snapshot);
    assert_ne!(lp.head(), net.head());

    let ft_cfg = AdaptConfig {
        train: quick_train(0),
        ..lp_cfg.clone()
    };
    let (ft, _) = adapt_fine_tune(&net, &train, &val, Task::Zone, &ft_cfg).unwrap();
    assert_eq!(ft.backbone_snapshot(), snapshot);

    assert!(lp
        .backbone()
        .iter()
        .all(|l| !l.has_params() || l.is_frozen()));
    assert!(ft.layers().iter().all(|l| !l.is_frozen()));
}

#[test]
fn gaze_head_outputs_three_unnormalized_values() {
    let train = ramp_dataset(12, 9);
    let gaze: Vec<GazeVector> = (0..12)
        .map(|i| GazeVector::new(0.1 * i as f64 - 0.5, 0.1, 1.0))
        .collect();
    let gaze_data = Dataset::new(train.images(), Targets::Gaze(gaze), 32).unwrap();
    let net = build_izenet(&small_config()).unwrap();
    let cfg = AdaptConfig {
        train: quick_train(1),
        head_width: 8,
        head_seed: 2,
    };
    let (adapted, log) = adapt_fine_tune(&net, &gaze_data, &gaze_data, Task::Gaze3d, &cfg).unwrap();
    assert!(!adapted.outputs_probabilities());
    assert_eq!(adapted.output_dim(), 3);
    assert!(log
        .records
        .iter()
        .all(|r| r.metric.is_finite() && r.metric >= 0.0 && r.metric <= 180.0));
    assert!(adapt_fine_tune(&net, &train, &gaze_data, Task::Gaze3d, &cfg).is_err());
}

#[test]
fn knn_separates_clusters() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let centers = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let mut latents = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..20 {
        for (c, center) in centers.iter().enumerate() {
            latents.push(
                center
                    .iter()
                    .map(|v| v + rng.random_range(-0.2..0.2))
                    .collect::<Vec<f64>>(),
            );
            labels.push(c);
        }
    }
    for (c, center) in centers.iter().enumerate() {
        assert_eq!(knn_probe(&latents, &labels, 3, center, 14).unwrap(), c);
    }
    assert!(knn_probe(&latents, &labels, 3, &centers[0], 0).is_err());
    assert!(knn_probe(&latents, &labels, 3, &centers[0], 61).is_err());
}

#[test]
fn checkpoints_round_trip_bit_exactly() {
    let (train, val) = (ramp_dataset(12, 11), ramp_dataset(6, 12));
    let mut net = build_izenet(&small_config()).unwrap();
    fit(&mut net, &train, &val, &quick_train(1)).unwrap();
    let meta = BTreeMap::from([("note".to_string(), "after one epoch".to_string())]);
    let bytes = to_bytes(&net, &meta).unwrap();
    let (back, back_meta) = from_bytes(&bytes).unwrap();
    assert_eq!(back, net);
    assert_eq!(back_meta, meta);
    assert_eq!(back.backbone_snapshot(), net.backbone_snapshot());
    assert_eq!(to_bytes(&back, &back_meta).unwrap(), bytes);

    assert!(matches!(
        from_bytes(&bytes[..bytes.len() - 3]),
        Err(NnetError::Checkpoint(_))
    ));
    let mut corrupt = bytes.clone();
    corrupt[0] ^= 0xff;
    assert!(matches!(
        from_bytes(&corrupt),
        Err(NnetError::Checkpoint(_))
    ));
}

#[test]
fn flip_augmentation_swaps_classes_and_is_an_involution() {
    let data = ramp_dataset(6, 13);
    let flip = Augment {
        max_scale: 1.0,
        flip_probability: 1.0,
        flip_class_map: vec![1, 0, 2],
    };
    let idx: Vec<usize> = (0..6).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (_, flipped_targets) = data.augmented_batch(&idx, &flip, &mut rng).unwrap();
    assert_eq!(
        flipped_targets,
        Targets::Classes {
            labels: vec![1, 0, 2, 1, 0, 2],
            classes: 3
        }
    );

    let mirrored: Vec<RgbImage> = data.images().iter().map(RgbImage::mirrored).collect();
    let mirrored = Dataset::new(&mirrored, flipped_targets, 32).unwrap();
    let (twice, twice_targets) = mirrored.augmented_batch(&idx, &flip, &mut rng).unwrap();
    let (orig, orig_targets) = data.batch(&idx).unwrap();
    assert_eq!(twice, orig);
    assert_eq!(twice_targets, orig_targets);

    let g = GazeVector::new(0.3, -0.1, 0.9);
    assert_eq!(g.flipped().flipped(), g);
    assert_eq!(g.flipped().x, -0.3);
}

#[test]
fn non_finite_inputs_raise_a_numeric_fault() {
    let net = build_izenet(&small_config()).unwrap();
    let mut x = Tensor::zeros(net.input_shape(1));
    x.data_mut()[5] = f64::NAN;
    assert!(matches!(
        net.forward(&x),
        Err(NnetError::NumericFault { .. })
    ));
}
