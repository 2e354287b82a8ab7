//! Training loop: partial BCE on scribbles plus one randomly selected
//! alignment loss per step, optimized with SGD and momentum.
//!
//! Random draws (shuffles, alignment choice, transform parameters,
//! augmentation) all come from one seeded stream on the calling thread.
//! Samples of a batch are differentiated in parallel and their gradients
//! summed in batch order, so results do not depend on the thread count.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::affinity::{propagate_multilevel_graph, AffinityConfig};
use crate::autograd::{crop_tensor, resize_tensor, Graph, Var};
use crate::dataio::{Image, ImageSample, ScribbleMask};
use crate::error::{Error, Result};
use crate::metrics::{self, Aggregation, MetricsReport};
use crate::model::{SegmentationModel, SIZE_MULTIPLE};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Alignment {
    Sc,
    Lg,
    Ap,
}

impl Alignment {
    pub const ALL: [Alignment; 3] = [Alignment::Sc, Alignment::Lg, Alignment::Ap];

    pub fn name(self) -> &'static str {
        match self {
            Alignment::Sc => "sc",
            Alignment::Lg => "lg",
            Alignment::Ap => "ap",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Polynomial (power 0.9) decay of the learning rate to zero.
    pub poly_decay: bool,
    pub scale_set: Vec<f64>,
    pub crop_fraction_range: (f64, f64),
    /// Selection weights for sc, lg, ap.
    pub alignment_weights: [f64; 3],
    /// Enabled alignments; empty trains with partial BCE alone.
    pub alignment_modes: Vec<Alignment>,
    pub detach_global: bool,
    pub affinity: AffinityConfig,
    /// Random horizontal flip and brightness jitter.
    pub augment: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 8,
            lr: 0.01,
            momentum: 0.9,
            poly_decay: false,
            scale_set: vec![0.5, 0.75, 1.25, 1.5],
            crop_fraction_range: (0.4, 0.8),
            alignment_weights: [1.0, 1.0, 1.0],
            alignment_modes: Alignment::ALL.to_vec(),
            detach_global: false,
            affinity: AffinityConfig::default(),
            augment: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Partial-BCE-only configuration with otherwise identical settings.
    pub fn baseline(mut self) -> Self {
        self.alignment_modes.clear();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be a non-negative number, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.scale_set.is_empty() || self.scale_set.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return bad("scale_set must be non-empty with positive factors".into());
        }
        let (lo, hi) = self.crop_fraction_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return bad(format!("crop_fraction_range ({lo}, {hi}) must satisfy 0 < lo <= hi <= 1"));
        }
        if self.alignment_weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return bad("alignment_weights must be non-negative".into());
        }
        if self.alignment_weights.iter().all(|&w| w == 0.0) {
            return bad("alignment_weights are all zero".into());
        }
        if !self.alignment_modes.is_empty() {
            self.effective_weights()?;
        }
        if self.alignment_modes.contains(&Alignment::Ap) && self.affinity.levels.is_empty() {
            return bad("affinity levels must be non-empty when ap is enabled".into());
        }
        Ok(())
    }

    /// Selection weights restricted to the enabled modes.
    pub fn effective_weights(&self) -> Result<[f64; 3]> {
        let mut w = [0.0; 3];
        for m in &self.alignment_modes {
            w[m.index()] = self.alignment_weights[m.index()];
        }
        if w.iter().all(|&v| v == 0.0) {
            return Err(Error::Config(
                "alignment weights are zero for every enabled alignment mode".into(),
            ));
        }
        Ok(w)
    }
}

/// Categorical draw over (sc, lg, ap) proportional to `weights`.
pub fn select_alignment(rng: &mut impl Rng, weights: &[f64; 3]) -> Result<Alignment> {
    if weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
        return Err(Error::Config(format!("invalid alignment weights {weights:?}")));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::Config("alignment weights are all zero".into()));
    }
    let u = rng.random::<f64>() * total;
    let mut cum = 0.0;
    for (a, &w) in Alignment::ALL.iter().zip(weights) {
        cum += w;
        if u < cum {
            return Ok(*a);
        }
    }
    // u rounded up to total: last alignment with positive weight
    Ok(Alignment::ALL[weights.iter().rposition(|&w| w > 0.0).expect("positive weight")])
}

/// An image with the labels it is trained against.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingItem {
    pub id: String,
    pub image: Image,
    pub target: ScribbleMask,
}

impl From<&ImageSample> for TrainingItem {
    fn from(s: &ImageSample) -> Self {
        TrainingItem {
            id: s.id.clone(),
            image: s.image.clone(),
            target: s.scribble.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub alignment: &'static str,
    pub l_pce: f64,
    pub l_align: f64,
    pub l_tot: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Step losses averaged over the epoch.
    pub l_pce: f64,
    pub l_align: f64,
    pub l_tot: f64,
    /// Validation scores, when a validation set was given.
    pub validation: Option<MetricsReport>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    /// One JSON object per optimizer step.
    pub fn steps_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.steps {
            out.push_str(&serde_json::to_string(r).expect("serializable record"));
            out.push('\n');
        }
        out
    }

    pub fn epochs_csv(&self) -> String {
        let mut out = String::from("epoch,dice,iou,precision,recall,l_pce,l_align,l_tot\n");
        for e in &self.epochs {
            match &e.validation {
                Some(r) => out.push_str(&format!(
                    "{},{:.6},{:.6},{:.6},{:.6}",
                    e.epoch, r.dice, r.iou, r.precision, r.recall
                )),
                None => out.push_str(&format!("{},,,,", e.epoch)),
            }
            out.push_str(&format!(",{:.6},{:.6},{:.6}\n", e.l_pce, e.l_align, e.l_tot));
        }
        out
    }
}

/// Transform parameters shared by all samples of a step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlignmentPlan {
    /// Rescale the input to `height × width`.
    Sc { height: usize, width: usize },
    /// Crop `height × width` at `(y0, x0)`.
    Lg { y0: usize, x0: usize, height: usize, width: usize },
    Ap,
}

impl AlignmentPlan {
    fn name(&self) -> &'static str {
        match self {
            AlignmentPlan::Sc { .. } => "sc",
            AlignmentPlan::Lg { .. } => "lg",
            AlignmentPlan::Ap => "ap",
        }
    }
}

fn round_to_multiple(v: f64, limit: usize) -> usize {
    let m = SIZE_MULTIPLE as f64;
    (((v / m).round() * m) as usize).clamp(SIZE_MULTIPLE, limit.max(SIZE_MULTIPLE))
}

fn plan_sc(rng: &mut impl Rng, cfg: &TrainConfig, (h, w): (usize, usize)) -> AlignmentPlan {
    let s = cfg.scale_set[rng.random_range(0..cfg.scale_set.len())];
    AlignmentPlan::Sc {
        height: round_to_multiple(h as f64 * s, usize::MAX),
        width: round_to_multiple(w as f64 * s, usize::MAX),
    }
}

fn plan_lg(rng: &mut impl Rng, cfg: &TrainConfig, (h, w): (usize, usize)) -> AlignmentPlan {
    let (lo, hi) = cfg.crop_fraction_range;
    let mut frac = || if lo < hi { rng.random_range(lo..hi) } else { lo };
    let (fh, fw) = (frac(), frac());
    let (ch, cw) = (round_to_multiple(h as f64 * fh, h), round_to_multiple(w as f64 * fw, w));
    AlignmentPlan::Lg {
        y0: rng.random_range(0..=h - ch),
        x0: rng.random_range(0..=w - cw),
        height: ch,
        width: cw,
    }
}

fn draw_plan(rng: &mut impl Rng, cfg: &TrainConfig, alignment: Alignment, hw: (usize, usize)) -> AlignmentPlan {
    match alignment {
        Alignment::Sc => plan_sc(rng, cfg, hw),
        Alignment::Lg => plan_lg(rng, cfg, hw),
        Alignment::Ap => AlignmentPlan::Ap,
    }
}

struct SampleOutcome<T> {
    grads: Vec<Tensor<T>>,
    pce: Option<T>,
    align: Option<T>,
}

/// Differentiates partial BCE and/or one alignment loss for a single image.
fn sample_step<T: Scalar>(
    model: &SegmentationModel<T>,
    image: &Tensor<T>,
    labels: Option<Arc<[u8]>>,
    plan: Option<AlignmentPlan>,
    cfg: &TrainConfig,
) -> Result<SampleOutcome<T>> {
    let mut g = Graph::new();
    let params = model.bind(&mut g);
    let x = g.constant(image.clone());
    let fwd = model.forward_graph(&mut g, &params, x)?;
    let (h, w) = image.hw();

    let pce = labels.map(|l| g.partial_bce(fwd.probs, l)).transpose()?;
    let align = match plan {
        None => None,
        Some(AlignmentPlan::Sc { height, width }) => {
            let xs = g.constant(resize_tensor(image, height, width));
            let other = model.forward_graph(&mut g, &params, xs)?;
            let back = g.resize(other.probs, h, w)?;
            Some(g.mse(fwd.probs, back)?)
        }
        Some(AlignmentPlan::Lg { y0, x0, height, width }) => {
            let xl = g.constant(crop_tensor(image, y0, x0, height, width));
            let local = model.forward_graph(&mut g, &params, xl)?;
            let mut global = g.crop(fwd.probs, y0, x0, height, width)?;
            if cfg.detach_global {
                global = g.detach(global);
            }
            Some(g.mse(local.probs, global)?)
        }
        Some(AlignmentPlan::Ap) => {
            let levels = &cfg.affinity.levels;
            let mut soft = propagate_multilevel_graph(&mut g, &fwd.features, fwd.probs, levels, &cfg.affinity)?;
            if cfg.affinity.detach_soft {
                soft = g.detach(soft);
            }
            Some(g.mse(fwd.probs, soft)?)
        }
    };
    let total: Var = match (pce, align) {
        (Some(p), Some(a)) => g.add(p, a)?,
        (Some(p), None) => p,
        (None, Some(a)) => a,
        (None, None) => return Err(Error::Argument("nothing to differentiate".into())),
    };
    let mut grads = g.backward(total);
    let grads = params
        .iter()
        .zip(model.params())
        .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    let value = |v: Option<Var>| v.map(|v| g.value(v).data()[0]);
    Ok(SampleOutcome {
        grads,
        pce: value(pce),
        align: value(align),
    })
}

/// Alignment loss averaged over a batch, with parameter gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLoss<T> {
    pub value: T,
    pub param_grads: Vec<Tensor<T>>,
}

fn batch_alignment<T: Scalar>(
    model: &SegmentationModel<T>,
    batch: &[Tensor<T>],
    plan: AlignmentPlan,
    cfg: &TrainConfig,
) -> Result<StepLoss<T>> {
    if batch.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let outcomes = batch
        .par_iter()
        .map(|img| sample_step(model, img, None, Some(plan), cfg))
        .collect::<Result<Vec<_>>>()?;
    let k = T::of(batch.len() as f64);
    let (value, param_grads) = reduce(model, &outcomes, |o| o.align);
    Ok(StepLoss {
        value: value / k,
        param_grads: param_grads.into_iter().map(|t| t.map(|v| v / k)).collect(),
    })
}

fn reduce<T: Scalar>(
    model: &SegmentationModel<T>,
    outcomes: &[SampleOutcome<T>],
    pick: impl Fn(&SampleOutcome<T>) -> Option<T>,
) -> (T, Vec<Tensor<T>>) {
    let mut grads: Vec<Tensor<T>> = model.params().iter().map(|p| Tensor::zeros(p.shape())).collect();
    let mut value = T::zero();
    for o in outcomes {
        for (acc, g) in grads.iter_mut().zip(&o.grads) {
            acc.add_assign(g);
        }
        value += pick(o).unwrap_or_else(T::zero);
    }
    (value, grads)
}

/// Scale consistency on a batch: the input is rescaled by a factor drawn
/// from `cfg.scale_set` (dims rounded to multiples of 16) and the prediction
/// resized back before comparison.
pub fn sc_step<T: Scalar>(
    model: &SegmentationModel<T>,
    batch: &[Tensor<T>],
    rng: &mut impl Rng,
    cfg: &TrainConfig,
) -> Result<StepLoss<T>> {
    let hw = batch.first().ok_or_else(|| Error::Argument("empty batch".into()))?.hw();
    batch_alignment(model, batch, plan_sc(rng, cfg, hw), cfg)
}

/// Local–global consistency on a batch with one crop rectangle drawn from
/// `cfg.crop_fraction_range`.
pub fn lg_step<T: Scalar>(
    model: &SegmentationModel<T>,
    batch: &[Tensor<T>],
    rng: &mut impl Rng,
    cfg: &TrainConfig,
) -> Result<StepLoss<T>> {
    let hw = batch.first().ok_or_else(|| Error::Argument("empty batch".into()))?.hw();
    batch_alignment(model, batch, plan_lg(rng, cfg, hw), cfg)
}

/// Affinity propagation alignment on a batch.
pub fn ap_step<T: Scalar>(model: &SegmentationModel<T>, batch: &[Tensor<T>], cfg: &TrainConfig) -> Result<StepLoss<T>> {
    batch_alignment(model, batch, AlignmentPlan::Ap, cfg)
}

/// Explicit alignment plan on a batch, for callers that fix the transform.
pub fn alignment_step<T: Scalar>(
    model: &SegmentationModel<T>,
    batch: &[Tensor<T>],
    plan: AlignmentPlan,
    cfg: &TrainConfig,
) -> Result<StepLoss<T>> {
    batch_alignment(model, batch, plan, cfg)
}

fn augment<T: Scalar>(rng: &mut impl Rng, image: &Tensor<T>, target: &ScribbleMask) -> (Tensor<T>, ScribbleMask) {
    let flip = rng.random_bool(0.5);
    let delta = T::of(rng.random_range(-0.1..0.1));
    let (_, w) = image.hw();
    let mut out = image.map(|v| (v + delta).max(T::zero()).min(T::one()));
    let mut target = target.clone();
    if flip {
        for row in out.data_mut().chunks_exact_mut(w) {
            row.reverse();
        }
        target = target.flip_horizontal();
    }
    (out, target)
}

/// Observer invoked after every epoch with the epoch index (1-based) and the
/// validation report when a validation set was given.
pub type EpochObserver<'a> = dyn FnMut(usize, Option<&MetricsReport>) + 'a;

pub fn train<T: Scalar>(
    model: SegmentationModel<T>,
    dataset: &[ImageSample],
    validation: Option<&[ImageSample]>,
    config: &TrainConfig,
) -> Result<(SegmentationModel<T>, TrainLog)> {
    let items: Vec<TrainingItem> = dataset.iter().map(TrainingItem::from).collect();
    train_items(model, &items, validation, config, &mut |_, _| {})
}

/// Training on arbitrary (image, target) items; see [`train`].
pub fn train_items<T: Scalar>(
    mut model: SegmentationModel<T>,
    items: &[TrainingItem],
    validation: Option<&[ImageSample]>,
    config: &TrainConfig,
    observer: &mut EpochObserver<'_>,
) -> Result<(SegmentationModel<T>, TrainLog)> {
    config.validate()?;
    if items.is_empty() {
        return Err(Error::Argument("training set is empty".into()));
    }
    if let Some(bad) = items.iter().find(|it| it.target.labeled_count() == 0) {
        return Err(Error::Argument(format!("sample {} has no labeled pixels", bad.id)));
    }
    for it in items {
        model.check_input(&[it.image.channels(), it.image.hw().0, it.image.hw().1])?;
    }
    let weights = if config.alignment_modes.is_empty() {
        None
    } else {
        Some(config.effective_weights()?)
    };

    let images: Vec<Tensor<T>> = items.iter().map(|it| it.image.to_tensor()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut velocity: Vec<Tensor<T>> = model.params().iter().map(|p| Tensor::zeros(p.shape())).collect();
    let mut order: Vec<usize> = (0..items.len()).collect();
    let steps_per_epoch = items.len().div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.epochs;
    let momentum = T::of(config.momentum);
    let mut log = TrainLog::default();
    let mut step = 0;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            step += 1;
            let hw = images[batch[0]].hw();
            let plan = match &weights {
                Some(w) => {
                    let alignment = select_alignment(&mut rng, w)?;
                    Some(draw_plan(&mut rng, config, alignment, hw))
                }
                None => None,
            };
            if let Some(AlignmentPlan::Lg { .. }) = plan {
                if batch.iter().any(|&i| images[i].hw() != hw) {
                    return Err(Error::Shape("lg alignment needs equally sized images in a batch".into()));
                }
            }
            let inputs: Vec<(Tensor<T>, Arc<[u8]>)> = batch
                .iter()
                .map(|&i| {
                    let (img, target) = if config.augment {
                        augment(&mut rng, &images[i], &items[i].target)
                    } else {
                        (images[i].clone(), items[i].target.clone())
                    };
                    (img, Arc::from(target.labels()))
                })
                .collect();
            let outcomes = inputs
                .par_iter()
                .map(|(img, labels)| sample_step(&model, img, Some(labels.clone()), plan, config))
                .collect::<Result<Vec<_>>>()?;

            let k = T::of(batch.len() as f64);
            let (pce_sum, grads) = reduce(&model, &outcomes, |o| o.pce);
            let align_sum: T = outcomes.iter().map(|o| o.align.unwrap_or_else(T::zero)).sum();
            let (l_pce, l_align) = ((pce_sum / k).to_f64_lossy(), (align_sum / k).to_f64_lossy());
            if !l_pce.is_finite() {
                return Err(Error::NonFinite { step, term: "pce" });
            }
            if !l_align.is_finite() {
                return Err(Error::NonFinite {
                    step,
                    term: plan.map_or("align", |p| p.name()),
                });
            }
            if grads.iter().any(|g| !g.all_finite()) {
                return Err(Error::NonFinite { step, term: "gradient" });
            }

            let lr = if config.poly_decay {
                config.lr * (1.0 - (step - 1) as f64 / total_steps as f64).powf(0.9)
            } else {
                config.lr
            };
            let lr_k = T::of(lr) / k;
            for ((p, v), g) in model.params_mut().iter_mut().zip(&mut velocity).zip(&grads) {
                for ((pv, vv), &gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                    *vv = momentum * *vv - lr_k * gv;
                    *pv += *vv;
                }
            }
            log.steps.push(StepRecord {
                step,
                epoch,
                alignment: plan.map_or("none", |p| p.name()),
                l_pce,
                l_align,
                l_tot: l_pce + l_align,
            });
        }
        let report = match validation {
            Some(val) if !val.is_empty() => Some(metrics::evaluate(&model, val, 0.5, Aggregation::PerImageMean)?),
            _ => None,
        };
        let done = &log.steps[log.steps.len() - steps_per_epoch..];
        let mean = |f: fn(&StepRecord) -> f64| done.iter().map(f).sum::<f64>() / done.len() as f64;
        log.epochs.push(EpochRecord {
            epoch,
            l_pce: mean(|r| r.l_pce),
            l_align: mean(|r| r.l_align),
            l_tot: mean(|r| r.l_tot),
            validation: report,
        });
        observer(epoch, log.epochs[epoch - 1].validation.as_ref());
    }
    Ok((model, log))
}
