//! Acceptance suite: one PASS/FAIL line per criterion on stderr, non-zero
//! exit if any criterion fails.
//!
//! Expected values come from code written here (finite differences, a dense
//! affinity chain, integer arithmetic for metrics, a hand-rolled BCE/SGD
//! loop), not from the library paths under test.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scribbleseg::affinity::{self, AffinityConfig, AffinityResolution};
use scribbleseg::autograd::Graph;
use scribbleseg::dataio::{self, ScribbleMask, BACKGROUND, FOREGROUND, UNLABELED};
use scribbleseg::losses;
use scribbleseg::metrics::{exact_scores, Confusion};
use scribbleseg::model::{EncoderFeatures, Prediction};
use scribbleseg::trainer::{train_items, TrainConfig, TrainingItem};
use scribbleseg::{Model64, Tensor64};

const BIN: &str = env!("CARGO_BIN_EXE_scribbleseg");

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: u32, name: &str, elapsed: Duration, outcome: &Outcome) {
    let tag = if outcome.pass { "PASS" } else { "FAIL" };
    let line = format!(
        "[{tag}] criterion {id} {name}: {} ({:.1} s)\n",
        outcome.detail,
        elapsed.as_secs_f64()
    );
    // Written straight to the handle so it shows up without --nocapture.
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
}

/// `cargo test --test acceptance -- 1 3` runs only the listed criteria;
/// without ids every criterion runs.
fn main() {
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let selected = |id: u32| only.is_empty() || only.contains(&id);
    let criteria: [(u32, &str, fn() -> Outcome); 6] = [
        (1, "gradient correctness", gradients),
        (2, "affinity properties", affinity_properties),
        (3, "partial-BCE masking", bce_masking),
        (6, "metrics exactness", metrics_exactness),
        (7, "reduction oracle", reduction_oracle),
        (8, "determinism", determinism),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria.into_iter().filter(|c| selected(c.0)) {
        let t = Instant::now();
        let o = run();
        report(id, name, t.elapsed(), &o);
        failed += usize::from(!o.pass);
    }
    // Criteria 4 and 5 share one training pipeline.
    if selected(4) || selected(5) {
        failed += efficacy_and_selftrain();
    }
    if failed > 0 {
        let _ = writeln!(std::io::stderr(), "{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- helpers

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor64 {
    Tensor64::from_vec(shape, data).unwrap()
}

fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-12)
}

// ------------------------------------------------------------ criterion 1

/// Builds a scalar loss from leaf tensors on a fresh graph and returns the
/// value and the gradient of every leaf, concatenated.
type LossBuilder<'a> = dyn Fn(&mut Graph<f64>, &[scribbleseg::autograd::Var]) -> scribbleseg::autograd::Var + 'a;

fn check_leaves(shapes: &[Vec<usize>], values: &[f64], build: &LossBuilder<'_>) -> f64 {
    let split = |flat: &[f64]| {
        let mut off = 0;
        shapes
            .iter()
            .map(|s| {
                let n: usize = s.iter().product();
                let t = tensor(s, flat[off..off + n].to_vec());
                off += n;
                t
            })
            .collect::<Vec<_>>()
    };
    let eval = |flat: &[f64]| {
        let mut g = Graph::new();
        let leaves: Vec<_> = split(flat).into_iter().map(|t| g.leaf(t)).collect();
        let out = build(&mut g, &leaves);
        g.value(out).data()[0]
    };
    let mut g = Graph::new();
    let leaves: Vec<_> = split(values).into_iter().map(|t| g.leaf(t)).collect();
    let out = build(&mut g, &leaves);
    let grads = g.backward(out);
    let analytic: Vec<f64> = leaves
        .iter()
        .zip(shapes)
        .flat_map(|(&v, s)| match grads.get(v) {
            Some(t) => t.data().to_vec(),
            None => vec![0.0; s.iter().product()],
        })
        .collect();
    let numeric = central_diff(values, 1e-6, eval);
    rel_err(&analytic, &numeric)
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let seeds = 20;
    let mut worst = [0.0f64; 4];
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);

        // L_pce on 8×8 with random scribbles.
        let mut labels: Vec<u8> = (0..64)
            .map(|_| match rng.random_range(0..10) {
                0..=2 => FOREGROUND,
                3..=5 => BACKGROUND,
                _ => UNLABELED,
            })
            .collect();
        labels[rng.random_range(0..64)] = FOREGROUND;
        let labels: Arc<[u8]> = Arc::from(labels);
        let p = uniform(&mut rng, 64, 0.02, 0.98);
        let l = labels.clone();
        worst[0] = worst[0].max(check_leaves(&[vec![8, 8]], &p, &move |g, v| {
            g.partial_bce(v[0], l.clone()).unwrap()
        }));

        // L_sc: prediction on a rescaled input, resized back to 8×8.
        let s = [4, 6, 12, 16][seed as usize % 4];
        let vals = uniform(&mut rng, 64 + s * s, 0.0, 1.0);
        worst[1] = worst[1].max(check_leaves(&[vec![8, 8], vec![s, s]], &vals, &|g, v| {
            let back = g.resize(v[1], 8, 8).unwrap();
            g.mse(v[0], back).unwrap()
        }));

        // L_lg: local prediction against the matching crop of the global one.
        let (ch, cw) = (rng.random_range(2..=6), rng.random_range(2..=6));
        let (y0, x0) = (rng.random_range(0..=8 - ch), rng.random_range(0..=8 - cw));
        let vals = uniform(&mut rng, 64 + ch * cw, 0.0, 1.0);
        worst[2] = worst[2].max(check_leaves(&[vec![8, 8], vec![ch, cw]], &vals, &|g, v| {
            let crop = g.crop(v[0], y0, x0, ch, cw).unwrap();
            g.mse(v[1], crop).unwrap()
        }));

        // L_ap on a 4×4 affinity grid with four feature levels.
        let mut shapes = vec![vec![4, 4]];
        for _ in 0..4 {
            shapes.push(vec![rng.random_range(2..=5), rng.random_range(2..=6), rng.random_range(2..=6)]);
        }
        let n: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
        let mut vals = uniform(&mut rng, n, -1.5, 1.5);
        for v in &mut vals[..16] {
            *v = (*v + 1.5) / 3.0;
        }
        let cfg = AffinityConfig {
            resolution: AffinityResolution::Full,
            ..AffinityConfig::default()
        };
        worst[3] = worst[3].max(check_leaves(&shapes, &vals, &|g, v| {
            let soft = affinity::propagate_multilevel_graph(g, &v[1..], v[0], &[1, 2, 3, 4], &cfg).unwrap();
            g.mse(v[0], soft).unwrap()
        }));
    }
    let elapsed = start.elapsed();
    let pass = worst.iter().all(|&e| e < 1e-4) && elapsed < Duration::from_secs(60);
    Outcome {
        pass,
        detail: format!(
            "max relative error over {seeds} seeds: pce {:.1e}, sc {:.1e}, lg {:.1e}, ap {:.1e} (limit 1e-4, < 60 s)",
            worst[0], worst[1], worst[2], worst[3]
        ),
    }
}

// ------------------------------------------------------------ criterion 2

/// Bilinear resize with half-pixel centers, one output pixel at a time.
fn oracle_resize(src: &[f64], (h, w): (usize, usize), (oh, ow): (usize, usize)) -> Vec<f64> {
    let coord = |o: usize, n_in: usize, n_out: usize| {
        let s = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).max(0.0);
        let i0 = (s.floor() as usize).min(n_in - 1);
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, if i0 == i1 { 0.0 } else { s - i0 as f64 })
    };
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        let (y0, y1, fy) = coord(y, h, oh);
        for x in 0..ow {
            let (x0, x1, fx) = coord(x, w, ow);
            let at = |yy: usize, xx: usize| src[yy * w + xx];
            out[y * ow + x] = (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x1))
                + fy * ((1.0 - fx) * at(y1, x0) + fx * at(y1, x1));
        }
    }
    out
}

/// Dense affinity softmax(E·Eᵀ/√C) of one feature level on an `ah × aw` grid.
fn oracle_affinity(f: &Tensor64, (ah, aw): (usize, usize)) -> Vec<Vec<f64>> {
    let (c, h, w) = (f.shape()[0], f.shape()[1], f.shape()[2]);
    let planes: Vec<Vec<f64>> = (0..c)
        .map(|k| oracle_resize(&f.data()[k * h * w..(k + 1) * h * w], (h, w), (ah, aw)))
        .collect();
    let l = ah * aw;
    (0..l)
        .map(|i| {
            let s: Vec<f64> = (0..l)
                .map(|j| (0..c).map(|k| planes[k][i] * planes[k][j]).sum::<f64>() / (c as f64).sqrt())
                .collect();
            let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
            let z: f64 = e.iter().sum();
            e.into_iter().map(|v| v / z).collect()
        })
        .collect()
}

fn affinity_properties() -> Outcome {
    let mut worst_row = 0.0f64;
    let mut worst_bound = 0.0f64;
    let mut worst_oracle = 0.0f64;
    for inst in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + inst);
        // (prediction size, resolution): every grid has at most 16 pixels.
        let ((h, w), resolution) = match inst % 4 {
            0 => ((4, 4), AffinityResolution::Full),
            1 => ((16, 16), AffinityResolution::Stride(4)),
            2 => ((8, 8), AffinityResolution::Stride(2)),
            _ => ((rng.random_range(2..=4), rng.random_range(2..=4)), AffinityResolution::Full),
        };
        let cfg = AffinityConfig {
            resolution,
            ..AffinityConfig::default()
        };
        let (ah, aw) = cfg.grid(h, w).unwrap();
        assert!(ah * aw <= 16);
        let levels: Vec<Tensor64> = (0..4)
            .map(|_| {
                let s = [rng.random_range(1..=6), rng.random_range(1..=8), rng.random_range(1..=8)];
                tensor(&s, uniform(&mut rng, s.iter().product(), -2.0, 2.0))
            })
            .collect();
        let p = uniform(&mut rng, h * w, 0.0, 1.0);
        let (pmin, pmax) = p.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));

        // Rows sum to one, single-level propagation stays in range.
        let pg = oracle_resize(&p, (h, w), (ah, aw));
        let (gmin, gmax) = pg.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        for f in &levels {
            let a = affinity::build_affinity(f, ah, aw, &cfg).unwrap();
            for row in a.matrix().data().chunks(ah * aw) {
                worst_row = worst_row.max((row.iter().sum::<f64>() - 1.0).abs());
            }
            let soft = affinity::propagate(&a, &pg).unwrap();
            for &v in soft.probs().data() {
                worst_bound = worst_bound.max(gmin - v).max(v - gmax);
            }
        }

        // Multi-level chain against the dense oracle.
        let pred = Prediction::new(tensor(&[h, w], p.clone())).unwrap();
        let feats = EncoderFeatures { levels: levels.clone() };
        let soft = affinity::propagate_multilevel(&feats, &pred, &[1, 2, 3, 4], &cfg).unwrap();
        let mut chain = pg.clone();
        for f in &levels {
            let a = oracle_affinity(f, (ah, aw));
            chain = a.iter().map(|row| row.iter().zip(&chain).map(|(x, y)| x * y).sum()).collect();
        }
        let expected = oracle_resize(&chain, (ah, aw), (h, w));
        for (&got, &want) in soft.probs().data().iter().zip(&expected) {
            worst_oracle = worst_oracle.max((got - want).abs());
            worst_bound = worst_bound.max(pmin - got).max(got - pmax);
        }
    }
    Outcome {
        pass: worst_row <= 1e-6 && worst_bound <= 0.0 && worst_oracle <= 1e-6,
        detail: format!(
            "100 instances: max |row sum - 1| {worst_row:.1e}, max range excess {worst_bound:.1e}, max oracle deviation {worst_oracle:.1e}"
        ),
    }
}

// ------------------------------------------------------------ criterion 3

fn bce_masking() -> Outcome {
    let mut violations = 0;
    let mut labeled_total = 0;
    for inst in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + inst);
        let (h, w) = (rng.random_range(2..=12), rng.random_range(2..=12));
        let mut labels: Vec<u8> = (0..h * w).map(|_| rng.random_range(0..=2u8)).collect();
        labels[0] = BACKGROUND;
        labels[h * w - 1] = UNLABELED;
        let scribble = ScribbleMask::new(h, w, labels.clone()).unwrap();
        let p = uniform(&mut rng, h * w, 0.0, 1.0);
        let mut q = p.clone();
        for (v, &l) in q.iter_mut().zip(&labels) {
            if l == UNLABELED {
                *v = rng.random_range(0.0..1.0);
            }
        }
        let a = losses::partial_bce(&Prediction::new(tensor(&[h, w], p)).unwrap(), &scribble).unwrap();
        let b = losses::partial_bce(&Prediction::new(tensor(&[h, w], q)).unwrap(), &scribble).unwrap();
        if a.value != b.value {
            violations += 1;
        }
        for ((&ga, &gb), &l) in a.grads[0].data().iter().zip(b.grads[0].data()).zip(&labels) {
            if l != UNLABELED {
                labeled_total += 1;
                if ga != gb {
                    violations += 1;
                }
            }
        }
    }
    Outcome {
        pass: violations == 0,
        detail: format!("50 instances, {labeled_total} labeled gradients compared, {violations} mismatches"),
    }
}

// ------------------------------------------------------------ criterion 6

/// `a/b == c/d` for non-negative integers by cross multiplication.
fn same_fraction((a, b): (u64, u64), (c, d): (u64, u64)) -> bool {
    a as u128 * d as u128 == c as u128 * b as u128
}

fn oracle_scores(c: &Confusion) -> [(u64, u64); 4] {
    let (tp, fp, fne) = (c.tp, c.fp, c.fn_);
    let nothing = tp + fp + fne == 0;
    let frac = |n: u64, d: u64, empty: (u64, u64)| if d == 0 { empty } else { (n, d) };
    let side = if nothing { (1, 1) } else { (0, 1) };
    [
        frac(2 * tp, 2 * tp + fp + fne, (1, 1)),
        frac(tp, tp + fp + fne, (1, 1)),
        frac(tp, tp + fp, side),
        frac(tp, tp + fne, side),
    ]
}

fn metrics_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6000);
    let mut mismatches = Vec::new();
    let mut identity_failures = 0;
    for i in 0..200 {
        let mut draw = || if rng.random_bool(0.1) { 0 } else { rng.random_range(0..5000u64) };
        let c = Confusion {
            tp: draw(),
            fp: draw(),
            fn_: draw(),
            tn: draw(),
        };
        let got = exact_scores(c);
        let want = oracle_scores(&c);
        let got = [got.dice, got.iou, got.precision, got.recall];
        if got.iter().zip(&want).any(|(g, &w)| !same_fraction((*g.numer(), *g.denom()), w)) {
            mismatches.push(i);
        }
        // iou = dice / (2 - dice), exactly: with dice = n/d, iou = n / (2d - n).
        let (n, d) = (*got[0].numer(), *got[0].denom());
        if !same_fraction((*got[1].numer(), *got[1].denom()), (n, 2 * d - n)) {
            identity_failures += 1;
        }
    }
    let hand = exact_scores(Confusion {
        tp: 2,
        fp: 1,
        fn_: 2,
        tn: 0,
    });
    let hand_ok = (*hand.dice.numer(), *hand.dice.denom()) == (4, 7) && (*hand.iou.numer(), *hand.iou.denom()) == (2, 5);
    Outcome {
        pass: mismatches.is_empty() && identity_failures == 0 && hand_ok,
        detail: format!(
            "200 tuples: {} oracle mismatches, {identity_failures} identity failures; (2,1,2) -> dice {}, iou {}",
            mismatches.len(),
            hand.dice,
            hand.iou
        ),
    }
}

// ------------------------------------------------------------ criterion 7

fn reduction_oracle() -> Outcome {
    let data = dataio::generate_blob_dataset(3, 32, 32, 70).unwrap();
    let items: Vec<TrainingItem> = data
        .iter()
        .map(|s| TrainingItem {
            id: s.id.clone(),
            image: s.image.clone(),
            target: s.full_mask.as_scribble(),
        })
        .collect();
    let init = Model64::init(4, 3, 7).unwrap();
    let (lr, mu) = (0.05, 0.9);
    let cfg = |epochs| TrainConfig {
        epochs,
        batch_size: items.len(),
        lr,
        momentum: mu,
        augment: false,
        seed: 7,
        ..TrainConfig::default()
    }
    .baseline();

    // Supervised BCE + momentum SGD written out directly.
    let mut oracle = init.clone();
    let mut velocity: Vec<Vec<f64>> = init.params().iter().map(|p| vec![0.0; p.len()]).collect();
    let mut worst = 0.0f64;
    for step in 1..=3 {
        let mut grad: Vec<Vec<f64>> = velocity.iter().map(|v| vec![0.0; v.len()]).collect();
        for s in &data {
            let mut g = Graph::new();
            let params = oracle.bind(&mut g);
            let x = g.constant(s.image.to_tensor());
            let fwd = oracle.forward_graph(&mut g, &params, x).unwrap();
            let p = g.value(fwd.probs).data().to_vec();
            let n = (p.len() * data.len()) as f64;
            let seed: Vec<f64> = p
                .iter()
                .zip(s.full_mask.data())
                .map(|(&p, &y)| (p - y as f64) / (p * (1.0 - p)) / n)
                .collect();
            let grads = g.backward_with(fwd.probs, tensor(&[32, 32], seed));
            for (acc, &v) in grad.iter_mut().zip(&params) {
                for (a, b) in acc.iter_mut().zip(grads.get(v).unwrap().data()) {
                    *a += b;
                }
            }
        }
        for ((p, v), g) in oracle.params_mut().iter_mut().zip(&mut velocity).zip(&grad) {
            for ((pv, vv), gv) in p.data_mut().iter_mut().zip(v.iter_mut()).zip(g) {
                *vv = mu * *vv - lr * gv;
                *pv += *vv;
            }
        }
        let (trained, _) = train_items(init.clone(), &items, None, &cfg(step), &mut |_, _| {}).unwrap();
        for (a, b) in trained.params().iter().zip(oracle.params()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    Outcome {
        pass: worst <= 1e-9,
        detail: format!("max parameter deviation after steps 1..3: {worst:.2e} (limit 1e-9)"),
    }
}

// ------------------------------------------------------------ criterion 8

fn run(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(BIN).args(args).current_dir(cwd).output().expect("binary runs")
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let gen = run(&["gen", "--n", "12", "--size", "32", "--seed", "8", "--out", "data", "--test", "4"], d);
    if !gen.status.success() {
        return Outcome {
            pass: false,
            detail: format!("gen failed: {}", String::from_utf8_lossy(&gen.stderr)),
        };
    }
    for out in ["a", "b"] {
        let args = [
            "--threads", "1", "train", "--data", "data/train", "--val", "data/test", "--out", out, "--epochs", "2",
            "--width", "4", "--seed", "11",
        ];
        let r = run(&args, d);
        if !r.status.success() {
            return Outcome {
                pass: false,
                detail: format!("train failed: {}", String::from_utf8_lossy(&r.stderr)),
            };
        }
    }
    let files = ["model.ckpt", "steps.jsonl", "epochs.csv", "config.toml"];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| std::fs::read(d.join("a").join(f)).unwrap() != std::fs::read(d.join("b").join(f)).unwrap())
        .collect();
    Outcome {
        pass: differing.is_empty(),
        detail: if differing.is_empty() {
            format!("two single-threaded train runs gave identical {}", files.join(", "))
        } else {
            format!("artifacts differ: {}", differing.join(", "))
        },
    }
}

// -------------------------------------------------------- criteria 4 and 5

fn dice_from_report(report: &str, method: &str) -> Option<f64> {
    report
        .lines()
        .find(|l| l.starts_with(&format!("{method},")))
        .and_then(|l| l.split(',').nth(1))
        .and_then(|v| v.parse().ok())
}

/// Full CLI pipeline on 200 train / 50 test blobs: baseline, dual alignment,
/// self-training from the aligned teacher. Returns the number of failures.
fn efficacy_and_selftrain() -> usize {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let steps: [(&str, Vec<&str>); 7] = [
        ("gen", vec!["gen", "--n", "250", "--size", "64", "--seed", "0", "--out", "data", "--test", "50"]),
        ("baseline", vec!["train", "--data", "data/train", "--out", "baseline", "--baseline", "--seed", "0"]),
        ("aligned", vec!["train", "--data", "data/train", "--out", "aligned", "--seed", "0"]),
        ("selftrain", vec!["selftrain", "--teacher", "aligned/model.ckpt", "--data", "data/train", "--out", "student", "--seed", "0"]),
        ("eval", vec!["eval", "--checkpoint", "baseline/model.ckpt", "--data", "data/test", "--report", "report.csv", "--method", "baseline"]),
        ("eval", vec!["eval", "--checkpoint", "aligned/model.ckpt", "--data", "data/test", "--report", "report.csv", "--method", "aligned"]),
        ("eval", vec!["eval", "--checkpoint", "student/model.ckpt", "--data", "data/test", "--report", "report.csv", "--method", "student"]),
    ];
    let mut error = None;
    for (name, args) in &steps {
        let r = run(args, d);
        if !r.status.success() {
            error = Some(format!("{name} failed: {}", String::from_utf8_lossy(&r.stderr).trim()));
            break;
        }
    }
    let elapsed = start.elapsed();
    let within_budget = elapsed < Duration::from_secs(15 * 60);
    let fail = |id, name, detail: String| {
        report(id, name, elapsed, &Outcome { pass: false, detail });
        1
    };
    if let Some(e) = error {
        return fail(4, "method efficacy", e.clone()) + fail(5, "self-training direction", e);
    }
    let csv = std::fs::read_to_string(d.join("report.csv")).unwrap_or_default();
    let (Some(base), Some(aligned), Some(student)) = (
        dice_from_report(&csv, "baseline"),
        dice_from_report(&csv, "aligned"),
        dice_from_report(&csv, "student"),
    ) else {
        let e = format!("report incomplete:\n{csv}");
        return fail(4, "method efficacy", e.clone()) + fail(5, "self-training direction", e);
    };
    let budget = format!("pipeline {:.0} s of 900 s", elapsed.as_secs_f64());
    let c4 = Outcome {
        pass: aligned >= base + 0.01 && within_budget,
        detail: format!("test Dice aligned {aligned:.4} vs baseline {base:.4} (need >= +0.01); {budget}"),
    };
    let c5 = Outcome {
        pass: student >= aligned - 0.02 && within_budget,
        detail: format!("test Dice student {student:.4} vs teacher {aligned:.4} (need >= -0.02); {budget}"),
    };
    report(4, "method efficacy", elapsed, &c4);
    report(5, "self-training direction", elapsed, &c5);
    usize::from(!c4.pass) + usize::from(!c5.pass)
}
