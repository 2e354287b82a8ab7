use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scribbleseg::dataio::generate_blob_dataset;
use scribbleseg::trainer::{
    alignment_step, ap_step, lg_step, sc_step, select_alignment, train, Alignment, AlignmentPlan, TrainConfig,
};
use scribbleseg::{Error, Model32, Model64, Tensor64};

fn small_config() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn selection_frequencies_within_three_sigma() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut counts = [0usize; 3];
    for _ in 0..30_000 {
        counts[select_alignment(&mut rng, &[1.0, 1.0, 1.0]).unwrap() as usize] += 1;
    }
    for c in counts {
        let f = c as f64 / 30_000.0;
        assert!((0.323..=0.343).contains(&f), "{counts:?}");
    }
}

#[test]
fn selection_sequence_is_seeded() {
    let draw = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..200)
            .map(|_| select_alignment(&mut rng, &[1.0, 2.0, 0.5]).unwrap())
            .collect::<Vec<_>>()
    };
    assert_eq!(draw(5), draw(5));
    assert_ne!(draw(5), draw(6));
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let data = generate_blob_dataset(5, 32, 32, 1).unwrap();
    let model = Model32::init(4, 3, 0).unwrap();
    let cfg = TrainConfig {
        lr: 0.0,
        ..small_config()
    };
    let (trained, log) = train(model.clone(), &data, None, &cfg).unwrap();
    assert_eq!(trained, model);
    assert_eq!(log.steps.len(), 4);
}

#[test]
fn baseline_log_has_no_alignment_term() {
    let data = generate_blob_dataset(5, 32, 32, 2).unwrap();
    let cfg = small_config().baseline();
    let (_, log) = train(Model32::init(4, 3, 0).unwrap(), &data, None, &cfg).unwrap();
    assert!(log.steps.iter().all(|r| r.l_align == 0.0 && r.alignment == "none"));
    assert!(log.steps.iter().all(|r| r.l_tot == r.l_pce));
}

#[test]
fn log_records_are_consistent() {
    let data = generate_blob_dataset(6, 32, 32, 3).unwrap();
    let (val, train_set) = data.split_at(2);
    let (_, log) = train(Model32::init(4, 3, 0).unwrap(), train_set, Some(val), &small_config()).unwrap();
    assert_eq!(log.steps.len(), 4);
    assert_eq!(log.epochs.len(), 2);
    for (i, r) in log.steps.iter().enumerate() {
        assert_eq!(r.step, i + 1);
        assert!((r.l_tot - (r.l_pce + r.l_align)).abs() <= 1e-9);
        assert!(["sc", "lg", "ap"].contains(&r.alignment));
    }
    assert!(log.epochs.iter().all(|e| e.validation.is_some()));
    assert_eq!(log.steps_jsonl().lines().count(), 4);
    let csv = log.epochs_csv();
    assert!(csv.starts_with("epoch,dice,iou,precision,recall"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn divergence_aborts_with_named_term() {
    let data = generate_blob_dataset(4, 32, 32, 4).unwrap();
    let cfg = TrainConfig {
        lr: 1e30,
        epochs: 5,
        ..small_config().baseline()
    };
    match train(Model32::init(4, 3, 0).unwrap(), &data, None, &cfg) {
        Err(Error::NonFinite { step, term }) => {
            assert!(step >= 2);
            assert!(["pce", "gradient"].contains(&term), "{term}");
        }
        other => panic!("expected a non-finite abort, got {other:?}"),
    }
}

#[test]
fn unit_scale_and_full_crop_give_zero_loss() {
    let data = generate_blob_dataset(2, 32, 32, 5).unwrap();
    let batch: Vec<Tensor64> = data.iter().map(|s| s.image.to_tensor()).collect();
    let model = Model64::init(4, 3, 9).unwrap();
    let cfg = TrainConfig::default();
    let sc = alignment_step(&model, &batch, AlignmentPlan::Sc { height: 32, width: 32 }, &cfg).unwrap();
    assert_eq!(sc.value, 0.0);
    let full = AlignmentPlan::Lg {
        y0: 0,
        x0: 0,
        height: 32,
        width: 32,
    };
    assert_eq!(alignment_step(&model, &batch, full, &cfg).unwrap().value, 0.0);
}

#[test]
fn constant_predictor_has_zero_alignment_losses() {
    let data = generate_blob_dataset(2, 32, 32, 6).unwrap();
    let batch: Vec<Tensor64> = data.iter().map(|s| s.image.to_tensor()).collect();
    let mut model = Model64::init(4, 3, 0).unwrap();
    for p in model.params_mut() {
        p.data_mut().fill(0.0);
    }
    let pred = model.predict(&batch[0]).unwrap();
    assert!(pred.probs().data().iter().all(|&v| v == 0.5));

    let cfg = TrainConfig {
        scale_set: vec![0.5, 1.5],
        ..TrainConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..4 {
        assert_eq!(sc_step(&model, &batch, &mut rng, &cfg).unwrap().value, 0.0);
        assert_eq!(lg_step(&model, &batch, &mut rng, &cfg).unwrap().value, 0.0);
    }
    assert!(ap_step(&model, &batch, &cfg).unwrap().value.abs() < 1e-30);
}

#[test]
fn mode_subset_restricts_selection() {
    let data = generate_blob_dataset(4, 32, 32, 7).unwrap();
    let cfg = TrainConfig {
        alignment_modes: vec![Alignment::Lg],
        ..small_config()
    };
    let (_, log) = train(Model32::init(4, 3, 0).unwrap(), &data, None, &cfg).unwrap();
    assert!(log.steps.iter().all(|r| r.alignment == "lg"));
}
