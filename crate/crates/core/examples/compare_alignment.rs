//! Trains the partial-BCE baseline and the dual-alignment model on the same
//! synthetic split and prints test metrics for both.
//!
//! Environment overrides: EPOCHS, LR, WIDTH, BATCH, SEED, MODES (e.g. "sc,lg,ap"),
//! POLY (1 for polynomial lr decay), ONLY (baseline or aligned).

use std::time::Instant;

use scribbleseg::metrics::{evaluate, Aggregation};
use scribbleseg::trainer::{train_items, Alignment, TrainConfig, TrainingItem};
use scribbleseg::{dataio, Model32};

fn env<T: std::str::FromStr>(key: &str, default: T) -> T {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() -> scribbleseg::Result<()> {
    let seed: u64 = env("SEED", 0);
    let width: usize = env("WIDTH", 8);
    let data = dataio::generate_blob_dataset(250, 64, 64, seed)?;
    let (train, test) = data.split_at(200);
    let items: Vec<TrainingItem> = train.iter().map(TrainingItem::from).collect();
    let modes: Vec<Alignment> = std::env::var("MODES")
        .unwrap_or_else(|_| "sc,lg,ap".into())
        .split(',')
        .filter_map(Alignment::parse)
        .collect();
    let cfg = TrainConfig {
        epochs: env("EPOCHS", 30),
        lr: env("LR", 0.01),
        batch_size: env("BATCH", 8),
        poly_decay: env("POLY", 0) == 1,
        seed,
        alignment_modes: modes,
        ..TrainConfig::default()
    };
    let only = std::env::var("ONLY").unwrap_or_default();
    for (name, c) in [("baseline", cfg.clone().baseline()), ("aligned", cfg)] {
        if !only.is_empty() && only != name {
            continue;
        }
        let t = Instant::now();
        let model = Model32::init(width, 3, seed)?;
        let (model, _) = train_items(model, &items, Some(test), &c, &mut |e, r| {
            if let Some(r) = r {
                eprintln!("{name} epoch {e:3} dice {:.4} iou {:.4}", r.dice, r.iou);
            }
        })?;
        let r = evaluate(&model, test, 0.5, Aggregation::PerImageMean)?;
        println!(
            "{name}: dice {:.4} iou {:.4} precision {:.4} recall {:.4} ({:.1}s)",
            r.dice,
            r.iou,
            r.precision,
            r.recall,
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
