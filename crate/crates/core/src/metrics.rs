//! Overlap metrics for binarized predictions.
//!
//! Scores are computed exactly as rationals from the confusion counts and
//! converted to `f64` once, so `iou = dice / (2 − dice)` holds exactly in the
//! rational form.

use num_rational::Ratio;

use crate::dataio::{BinaryMask, ImageSample};
use crate::error::{Error, Result};
use crate::model::{Prediction, SegmentationModel};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl std::ops::Add for Confusion {
    type Output = Confusion;

    fn add(self, o: Confusion) -> Confusion {
        Confusion {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

pub fn confusion(pred: &BinaryMask, gt: &BinaryMask) -> Result<Confusion> {
    if pred.hw() != gt.hw() {
        return Err(Error::Argument(format!(
            "prediction {:?} vs ground truth {:?}",
            pred.hw(),
            gt.hw()
        )));
    }
    let mut c = Confusion::default();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p, g) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExactScores {
    pub dice: Ratio<u64>,
    pub iou: Ratio<u64>,
    pub precision: Ratio<u64>,
    pub recall: Ratio<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub dice: f64,
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
}

/// `num / den`, with `empty` used when the denominator vanishes.
fn ratio(num: u64, den: u64, empty: Ratio<u64>) -> Ratio<u64> {
    if den == 0 {
        empty
    } else {
        Ratio::new(num, den)
    }
}

fn to_f64(r: Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Empty prediction and empty ground truth score 1 everywhere; if only one
/// side is empty the undefined ratio is 0.
pub fn exact_scores(c: Confusion) -> ExactScores {
    let one = Ratio::from_integer(1);
    let zero = Ratio::from_integer(0);
    let both_empty = c.tp + c.fp + c.fn_ == 0;
    let fallback = if both_empty { one } else { zero };
    ExactScores {
        dice: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_, one),
        iou: ratio(c.tp, c.tp + c.fp + c.fn_, one),
        precision: ratio(c.tp, c.tp + c.fp, fallback),
        recall: ratio(c.tp, c.tp + c.fn_, fallback),
    }
}

pub fn scores(c: Confusion) -> Scores {
    let e = exact_scores(c);
    Scores {
        dice: to_f64(e.dice),
        iou: to_f64(e.iou),
        precision: to_f64(e.precision),
        recall: to_f64(e.recall),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    PerImageMean,
    GlobalConfusion,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct MetricsReport {
    pub dice: f64,
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub n_samples: usize,
    pub aggregation: Aggregation,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "method,dice,iou,precision,recall,n";

    pub fn csv_row(&self, method: &str) -> String {
        format!(
            "{method},{:.6},{:.6},{:.6},{:.6},{}",
            self.dice, self.iou, self.precision, self.recall, self.n_samples
        )
    }
}

/// Strict threshold: `p > threshold` is foreground.
pub fn binarize<T: Scalar>(pred: &Prediction<T>, threshold: f64) -> BinaryMask {
    let (h, w) = pred.hw();
    let t = T::of(threshold);
    let data = pred.probs().data().iter().map(|&p| u8::from(p > t)).collect();
    BinaryMask::new(h, w, data).expect("prediction shape")
}

/// Aggregates per-image confusions in input order.
pub fn aggregate(confusions: &[Confusion], mode: Aggregation) -> Result<MetricsReport> {
    if confusions.is_empty() {
        return Err(Error::Argument("cannot evaluate an empty dataset".into()));
    }
    let n = confusions.len();
    let (dice, iou, precision, recall) = match mode {
        Aggregation::PerImageMean => {
            let mut sum = [0.0; 4];
            for &c in confusions {
                let s = scores(c);
                for (a, v) in sum.iter_mut().zip([s.dice, s.iou, s.precision, s.recall]) {
                    *a += v;
                }
            }
            let k = n as f64;
            (sum[0] / k, sum[1] / k, sum[2] / k, sum[3] / k)
        }
        Aggregation::GlobalConfusion => {
            let total = confusions.iter().fold(Confusion::default(), |a, &b| a + b);
            let s = scores(total);
            (s.dice, s.iou, s.precision, s.recall)
        }
    };
    Ok(MetricsReport {
        dice,
        iou,
        precision,
        recall,
        n_samples: n,
        aggregation: mode,
    })
}

/// Runs `model` on every sample and scores the binarized output against
/// the full masks.
pub fn evaluate<T: Scalar>(
    model: &SegmentationModel<T>,
    dataset: &[ImageSample],
    threshold: f64,
    mode: Aggregation,
) -> Result<MetricsReport> {
    evaluate_with(dataset, threshold, mode, |s| model.predict(&s.image.to_tensor()))
}

/// As [`evaluate`], for an arbitrary predictor.
pub fn evaluate_with<T: Scalar>(
    dataset: &[ImageSample],
    threshold: f64,
    mode: Aggregation,
    predict: impl Fn(&ImageSample) -> Result<Prediction<T>> + Sync,
) -> Result<MetricsReport> {
    use rayon::prelude::*;
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Argument(format!("threshold {threshold} outside (0, 1)")));
    }
    if dataset.is_empty() {
        return Err(Error::Argument("cannot evaluate an empty dataset".into()));
    }
    let confusions = dataset
        .par_iter()
        .map(|s| confusion(&binarize(&predict(s)?, threshold), &s.full_mask))
        .collect::<Result<Vec<_>>>()?;
    aggregate(&confusions, mode)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(bits: &[u8]) -> BinaryMask {
        BinaryMask::new(4, 4, bits.to_vec()).unwrap()
    }

    #[test]
    fn hand_counted_confusion() {
        let gt = mask(&[1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
        let pr = mask(&[1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
        let c = confusion(&pr, &gt).unwrap();
        assert_eq!(c, Confusion { tp: 2, fp: 1, fn_: 2, tn: 11 });
        let s = scores(c);
        assert_eq!(s.dice, 4.0 / 7.0);
        assert_eq!(s.iou, 2.0 / 5.0);
        assert_eq!(s.precision, 2.0 / 3.0);
        assert_eq!(s.recall, 0.5);
    }

    #[test]
    fn perfect_and_inverted() {
        let gt = mask(&[1, 0, 1, 0, 0, 1, 1, 0, 0, 0, 1, 0, 1, 1, 0, 0]);
        let c = confusion(&gt, &gt).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        let s = scores(c);
        assert_eq!((s.dice, s.iou, s.precision, s.recall), (1.0, 1.0, 1.0, 1.0));
        let inv = mask(&gt.data().iter().map(|v| 1 - v).collect::<Vec<_>>());
        let c = confusion(&inv, &gt).unwrap();
        assert_eq!((c.tp, c.tn), (0, 0));
    }

    #[test]
    fn empty_conventions() {
        let s = scores(Confusion { tp: 0, fp: 0, fn_: 0, tn: 9 });
        assert_eq!((s.dice, s.iou, s.precision, s.recall), (1.0, 1.0, 1.0, 1.0));
        let s = scores(Confusion { tp: 0, fp: 0, fn_: 3, tn: 9 });
        assert_eq!((s.dice, s.iou, s.precision, s.recall), (0.0, 0.0, 0.0, 0.0));
        let s = scores(Confusion { tp: 0, fp: 4, fn_: 0, tn: 9 });
        assert_eq!((s.dice, s.iou, s.precision, s.recall), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn iou_dice_identity_is_exact() {
        let two = Ratio::from_integer(2u64);
        for tp in 0..6 {
            for fp in 0..6 {
                for fn_ in 0..6 {
                    if tp + fp + fn_ == 0 {
                        continue;
                    }
                    let e = exact_scores(Confusion { tp, fp, fn_, tn: 0 });
                    assert_eq!(e.iou, e.dice / (two - e.dice));
                }
            }
        }
    }

    #[test]
    fn aggregation_modes_differ() {
        let a = Confusion { tp: 1, fp: 0, fn_: 0, tn: 0 };
        let b = Confusion { tp: 1, fp: 3, fn_: 0, tn: 0 };
        let per = aggregate(&[a, b], Aggregation::PerImageMean).unwrap();
        let glob = aggregate(&[a, b], Aggregation::GlobalConfusion).unwrap();
        assert_eq!(per.precision, (1.0 + 0.25) / 2.0);
        assert_eq!(glob.precision, 2.0 / 5.0);
        assert!(aggregate(&[], Aggregation::PerImageMean).is_err());
    }

    #[test]
    fn strict_threshold() {
        let p = Prediction::new(crate::tensor::Tensor::<f64>::full(&[2, 2], 0.5)).unwrap();
        assert_eq!(binarize(&p, 0.5).count(), 0);
    }
}
