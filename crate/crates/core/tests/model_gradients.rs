//! End-to-end parameter gradients of the model under every loss, checked
//! against central differences at f64 on 16×16 (32×32 for lg) inputs.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scribbleseg::autograd::Graph;
use scribbleseg::dataio::generate_blob_dataset;
use scribbleseg::trainer::{alignment_step, AlignmentPlan, TrainConfig};
use scribbleseg::{Model64, Tensor64};

const H: f64 = 1e-6;

fn image(size: usize, seed: u64) -> (Tensor64, Arc<[u8]>) {
    let s = generate_blob_dataset(1, size, size, seed).unwrap().remove(0);
    (s.image.to_tensor(), Arc::from(s.scribble.labels()))
}

/// Compares analytic and numeric derivatives at `n` random parameter
/// coordinates; returns the relative error of the two vectors.
fn check(model: &Model64, analytic: &[Tensor64], n: usize, seed: u64, loss: impl Fn(&Model64) -> f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut a, mut num) = (Vec::new(), Vec::new());
    for _ in 0..n {
        let t = rng.random_range(0..model.params().len());
        let i = rng.random_range(0..model.params()[t].len());
        let mut probe = model.clone();
        let x = probe.params()[t].data()[i];
        probe.params_mut()[t].data_mut()[i] = x + H;
        let up = loss(&probe);
        probe.params_mut()[t].data_mut()[i] = x - H;
        let down = loss(&probe);
        a.push(analytic[t].data()[i]);
        num.push((up - down) / (2.0 * H));
    }
    scribbleseg::gradcheck::relative_error(&a, &num, 1e-10)
}

fn pce(model: &Model64, img: &Tensor64, labels: &Arc<[u8]>) -> (f64, Vec<Tensor64>) {
    let mut g = Graph::new();
    let params = model.bind(&mut g);
    let x = g.constant(img.clone());
    let fwd = model.forward_graph(&mut g, &params, x).unwrap();
    let loss = g.partial_bce(fwd.probs, labels.clone()).unwrap();
    let mut grads = g.backward(loss);
    let value = g.value(loss).data()[0];
    let grads = params
        .iter()
        .zip(model.params())
        .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor64::zeros(p.shape())))
        .collect();
    (value, grads)
}

#[test]
fn partial_bce_parameter_gradients() {
    let model = Model64::init(4, 3, 1).unwrap();
    let (img, labels) = image(16, 3);
    let (_, grads) = pce(&model, &img, &labels);
    let err = check(&model, &grads, 60, 10, |m| pce(m, &img, &labels).0);
    assert!(err < 1e-4, "relative error {err}");
}

fn alignment_check(plan: AlignmentPlan, size: usize, seed: u64) {
    let model = Model64::init(4, 3, seed).unwrap();
    let (img, _) = image(size, seed + 100);
    let cfg = TrainConfig::default();
    let batch = [img];
    let step = alignment_step(&model, &batch, plan, &cfg).unwrap();
    assert!(step.value > 0.0);
    let err = check(&model, &step.param_grads, 60, seed, |m| {
        alignment_step(m, &batch, plan, &cfg).unwrap().value
    });
    assert!(err < 1e-4, "{plan:?}: relative error {err}");
}

#[test]
fn scale_consistency_parameter_gradients() {
    alignment_check(AlignmentPlan::Sc { height: 32, width: 32 }, 16, 2);
}

#[test]
fn local_global_parameter_gradients() {
    alignment_check(
        AlignmentPlan::Lg {
            y0: 16,
            x0: 0,
            height: 16,
            width: 16,
        },
        32,
        3,
    );
}

#[test]
fn affinity_parameter_gradients() {
    alignment_check(AlignmentPlan::Ap, 16, 4);
}
