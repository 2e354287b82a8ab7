//! Values recorded from single runs; a change here means generation,
//! initialization or a loss changed behavior.

use scribbleseg::dataio::generate_blob_dataset;
use scribbleseg::trainer::{alignment_step, AlignmentPlan, TrainConfig};
use scribbleseg::{Model32, Model64, Tensor64};

fn close(got: f64, want: f64) {
    assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "got {got:e}, recorded {want:e}");
}

#[test]
fn blob_benchmark_statistics() {
    let data = generate_blob_dataset(200, 64, 64, 0).unwrap();
    let fg: f64 = data.iter().map(|s| s.full_mask.foreground_fraction()).sum::<f64>() / 200.0;
    let labeled: f64 = data.iter().map(|s| s.scribble.labeled_fraction()).sum::<f64>() / 200.0;
    close(fg, 0.155_654_296_875);
    close(labeled, 0.023_854_980_468_75);
}

#[test]
fn initialization_hashes() {
    assert_eq!(
        Model64::init(8, 3, 0).unwrap().checkpoint_hash(),
        "e6fec76cc0dec7ffea2d7392cc58fac19faaec59357c35d357891ee506ac5626"
    );
    assert_eq!(
        Model32::init(8, 3, 0).unwrap().checkpoint_hash(),
        "c33e56472a0ae2f3db24cc8b1da716578dd5b01f4c4286e46b6ff676d649c5ca"
    );
}

#[test]
fn alignment_loss_values() {
    let batch: Vec<Tensor64> = generate_blob_dataset(2, 32, 32, 21)
        .unwrap()
        .iter()
        .map(|s| s.image.to_tensor())
        .collect();
    let model = Model64::init(4, 3, 1).unwrap();
    let cfg = TrainConfig::default();
    let value = |plan| alignment_step(&model, &batch, plan, &cfg).unwrap().value;
    close(value(AlignmentPlan::Sc { height: 48, width: 48 }), 1.181_217_733_478_215_17e-2);
    close(
        value(AlignmentPlan::Lg {
            y0: 16,
            x0: 0,
            height: 16,
            width: 32,
        }),
        9.732_560_817_087_877_74e-3,
    );
    close(value(AlignmentPlan::Ap), 8.050_224_908_294_404_89e-3);
}
