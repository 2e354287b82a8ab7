//! Pixel affinity from encoder features and propagation of predictions
//! through it.
//!
//! Features are resized to the affinity grid and flattened to embeddings
//! `E ∈ R^{L×C}`; the affinity is the row-wise softmax of `E·Eᵀ` (optionally
//! scaled by `1/√C`). Propagation multiplies the flattened prediction by one
//! or more such maps, shallow level first by default.

use crate::autograd::{resize_tensor, Graph, Var};
use crate::error::{Error, Result};
use crate::losses::{self, LossValue};
use crate::model::{EncoderFeatures, Prediction};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AffinityScale {
    /// Raw dot products.
    None,
    /// Dot products divided by `√C`.
    InvSqrtC,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AffinityResolution {
    /// Prediction resolution divided by the given stride.
    Stride(usize),
    /// Full prediction resolution.
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffinityConfig {
    pub scale: AffinityScale,
    pub resolution: AffinityResolution,
    /// Largest admissible number of affinity pixels `L`.
    pub cap: usize,
    /// Encoder levels (1-based) in application order.
    pub levels: Vec<usize>,
    /// Stop gradients through the soft prediction in the alignment loss.
    pub detach_soft: bool,
}

impl Default for AffinityConfig {
    fn default() -> Self {
        AffinityConfig {
            scale: AffinityScale::InvSqrtC,
            resolution: AffinityResolution::Stride(4),
            cap: 4096,
            levels: vec![1, 2, 3, 4],
            detach_soft: false,
        }
    }
}

impl AffinityConfig {
    /// Affinity grid for a prediction of size `h × w`.
    pub fn grid(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (ah, aw) = match self.resolution {
            AffinityResolution::Full => (h, w),
            AffinityResolution::Stride(s) if s > 0 => ((h / s).max(1), (w / s).max(1)),
            AffinityResolution::Stride(_) => return Err(Error::Argument("affinity stride must be positive".into())),
        };
        self.check_cap(ah, aw)?;
        Ok((ah, aw))
    }

    fn check_cap(&self, h: usize, w: usize) -> Result<()> {
        if h * w > self.cap {
            return Err(Error::Resource {
                requested: h * w,
                cap: self.cap,
            });
        }
        Ok(())
    }
}

/// Row-stochastic `L × L` matrix over an `h × w` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMap<T> {
    matrix: Tensor<T>,
    height: usize,
    width: usize,
}

impl<T: Scalar> AffinityMap<T> {
    pub fn matrix(&self) -> &Tensor<T> {
        &self.matrix
    }

    pub fn hw(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn size(&self) -> usize {
        self.height * self.width
    }

    /// Wraps an explicit matrix; rows are not re-normalized.
    pub fn from_matrix(height: usize, width: usize, matrix: Tensor<T>) -> Result<Self> {
        let l = height * width;
        if matrix.shape() != [l, l] {
            return Err(Error::Shape(format!("affinity for {height}x{width} must be [{l}, {l}]")));
        }
        Ok(AffinityMap { matrix, height, width })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftPrediction<T> {
    probs: Tensor<T>,
}

impl<T: Scalar> SoftPrediction<T> {
    pub fn probs(&self) -> &Tensor<T> {
        &self.probs
    }

    pub fn hw(&self) -> (usize, usize) {
        self.probs.hw()
    }

    pub fn as_prediction(&self) -> Result<Prediction<T>> {
        Prediction::new(self.probs.map(|v| v.max(T::zero()).min(T::one())))
    }
}

/// Graph version of [`build_affinity`] on a `[C, h, w]` feature node.
pub fn affinity_graph<T: Scalar>(
    g: &mut Graph<T>,
    features: Var,
    target_h: usize,
    target_w: usize,
    cfg: &AffinityConfig,
) -> Result<Var> {
    cfg.check_cap(target_h, target_w)?;
    let shape = g.shape(features).to_vec();
    if shape.len() != 3 {
        return Err(Error::Shape(format!("features must be [C, H, W], got {shape:?}")));
    }
    let c = shape[0];
    let l = target_h * target_w;
    let resized = g.resize(features, target_h, target_w)?;
    let flat = g.reshape(resized, &[c, l])?;
    let emb = g.transpose(flat)?;
    let mut scores = g.matmul_bt(emb, emb)?;
    if cfg.scale == AffinityScale::InvSqrtC {
        scores = g.scale(scores, T::one() / T::of(c as f64).sqrt());
    }
    g.softmax_rows(scores)
}

/// Graph version of [`propagate_multilevel`]: `probs` is `[H, W]`, the
/// result is the soft prediction resized back to `[H, W]`.
pub fn propagate_multilevel_graph<T: Scalar>(
    g: &mut Graph<T>,
    features: &[Var],
    probs: Var,
    levels: &[usize],
    cfg: &AffinityConfig,
) -> Result<Var> {
    if levels.is_empty() {
        return Err(Error::Argument("at least one affinity level is required".into()));
    }
    if let Some(&bad) = levels.iter().find(|&&k| k == 0 || k > features.len()) {
        return Err(Error::Argument(format!(
            "affinity level {bad} outside 1..={}",
            features.len()
        )));
    }
    let (h, w) = match *g.shape(probs) {
        [h, w] => (h, w),
        ref s => return Err(Error::Shape(format!("prediction must be [H, W], got {s:?}"))),
    };
    let (ah, aw) = cfg.grid(h, w)?;
    let small = g.resize(probs, ah, aw)?;
    let mut p = g.reshape(small, &[ah * aw, 1])?;
    for &k in levels {
        let a = affinity_graph(g, features[k - 1], ah, aw, cfg)?;
        p = g.matmul(a, p)?;
    }
    let p = g.reshape(p, &[ah, aw])?;
    g.resize(p, h, w)
}

pub fn build_affinity<T: Scalar>(
    features: &Tensor<T>,
    target_h: usize,
    target_w: usize,
    cfg: &AffinityConfig,
) -> Result<AffinityMap<T>> {
    let mut g = Graph::new();
    let f = g.constant(features.clone());
    let a = affinity_graph(&mut g, f, target_h, target_w, cfg)?;
    Ok(AffinityMap {
        matrix: g.value(a).clone(),
        height: target_h,
        width: target_w,
    })
}

/// `soft = A · vec(pred)` reshaped to the affinity grid.
pub fn propagate<T: Scalar>(affinity: &AffinityMap<T>, pred: &[T]) -> Result<SoftPrediction<T>> {
    let l = affinity.size();
    if pred.len() != l {
        return Err(Error::Argument(format!(
            "prediction has {} entries, affinity expects {l}",
            pred.len()
        )));
    }
    let mut out = vec![T::zero(); l];
    crate::kernels::matmul(affinity.matrix.data(), pred, l, l, 1, &mut out);
    Ok(SoftPrediction {
        probs: Tensor::from_vec(&[affinity.height, affinity.width], out)?,
    })
}

pub fn propagate_multilevel<T: Scalar>(
    features: &EncoderFeatures<T>,
    pred: &Prediction<T>,
    levels: &[usize],
    cfg: &AffinityConfig,
) -> Result<SoftPrediction<T>> {
    let mut g = Graph::new();
    let feats: Vec<Var> = features.levels.iter().map(|t| g.constant(t.clone())).collect();
    let p = g.constant(pred.probs().clone());
    let soft = propagate_multilevel_graph(&mut g, &feats, p, levels, cfg)?;
    Ok(SoftPrediction {
        probs: g.value(soft).clone(),
    })
}

/// Mean squared difference between a prediction and its soft version.
pub fn affinity_loss<T: Scalar>(pred: &Prediction<T>, soft: &SoftPrediction<T>) -> Result<LossValue<T>> {
    if pred.hw() != soft.hw() {
        return Err(Error::Argument(format!(
            "prediction {:?} vs soft prediction {:?}",
            pred.hw(),
            soft.hw()
        )));
    }
    let soft = Prediction::new(soft.probs.clone()).or_else(|_| soft.as_prediction())?;
    losses::scale_consistency(pred, &soft)
}

/// Downsamples a prediction to the affinity grid.
pub fn to_grid<T: Scalar>(pred: &Prediction<T>, cfg: &AffinityConfig) -> Result<Tensor<T>> {
    let (h, w) = pred.hw();
    let (ah, aw) = cfg.grid(h, w)?;
    Ok(resize_tensor(pred.probs(), ah, aw))
}
