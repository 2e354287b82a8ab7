//! Synthetic data, weak-annotation synthesis, dataset persistence and
//! annotation statistics.

mod blobs;
mod morphology;
mod scribble;
pub(crate) mod store;

pub use blobs::generate_blob_dataset;
pub use scribble::{synthesize_scribble, synthesize_weak, ScribbleStyle, WeakKind};
pub use store::{load_dataset, save_dataset, MANIFEST};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const BACKGROUND: u8 = 0;
pub const FOREGROUND: u8 = 1;
pub const UNLABELED: u8 = 2;

/// Channel-major image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "image {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Image {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn hw(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self.data.iter().map(|&v| T::of(v as f64)).collect();
        Tensor::from_vec(&[self.channels, self.height, self.width], data).expect("image shape")
    }
}

/// Binary ground-truth mask, values in `{0, 1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "mask {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::Argument(format!("mask value {v} is not binary")));
        }
        Ok(BinaryMask {
            height,
            width,
            data,
        })
    }

    pub fn hw(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] == 1
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.count() as f64 / self.data.len() as f64
    }

    /// Every pixel labeled by its mask value.
    pub fn as_scribble(&self) -> ScribbleMask {
        ScribbleMask {
            height: self.height,
            width: self.width,
            labels: self.data.clone(),
        }
    }
}

/// Per-pixel weak label: [`BACKGROUND`], [`FOREGROUND`] or [`UNLABELED`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScribbleMask {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl ScribbleMask {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::Shape(format!(
                "scribble {height}x{width} needs {} values, got {}",
                height * width,
                labels.len()
            )));
        }
        if let Some(v) = labels.iter().find(|&&v| v > UNLABELED) {
            return Err(Error::Argument(format!("scribble label {v} outside {{0, 1, 2}}")));
        }
        Ok(ScribbleMask {
            height,
            width,
            labels,
        })
    }

    pub fn unlabeled(height: usize, width: usize) -> Self {
        ScribbleMask {
            height,
            width,
            labels: vec![UNLABELED; height * width],
        }
    }

    pub fn hw(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != UNLABELED).count()
    }

    pub fn labeled_fraction(&self) -> f64 {
        self.labeled_count() as f64 / self.labels.len() as f64
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut labels = self.labels.clone();
        for row in labels.chunks_exact_mut(self.width) {
            row.reverse();
        }
        ScribbleMask { labels, ..*self }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub id: String,
    pub image: Image,
    pub full_mask: BinaryMask,
    pub scribble: ScribbleMask,
}

impl ImageSample {
    pub fn new(id: impl Into<String>, image: Image, full_mask: BinaryMask, scribble: ScribbleMask) -> Result<Self> {
        let id = id.into();
        if image.hw() != full_mask.hw() || full_mask.hw() != scribble.hw() {
            return Err(Error::Shape(format!(
                "sample {id}: image {:?}, mask {:?}, scribble {:?} disagree",
                image.hw(),
                full_mask.hw(),
                scribble.hw()
            )));
        }
        Ok(ImageSample {
            id,
            image,
            full_mask,
            scribble,
        })
    }
}

/// Fractions of pixels whose weak label is correct, wrong, or absent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnotationStats {
    pub accurate_fraction: f64,
    pub noisy_fraction: f64,
    pub unlabeled_fraction: f64,
}

pub fn annotation_stats(full_mask: &BinaryMask, weak: &ScribbleMask) -> Result<AnnotationStats> {
    if full_mask.hw() != weak.hw() {
        return Err(Error::Argument(format!(
            "mask {:?} vs annotation {:?}",
            full_mask.hw(),
            weak.hw()
        )));
    }
    let (mut accurate, mut noisy, mut unlabeled) = (0usize, 0usize, 0usize);
    for (&m, &l) in full_mask.data().iter().zip(weak.labels()) {
        match l {
            UNLABELED => unlabeled += 1,
            _ if l == m => accurate += 1,
            _ => noisy += 1,
        }
    }
    let n = full_mask.data().len() as f64;
    Ok(AnnotationStats {
        accurate_fraction: accurate as f64 / n,
        noisy_fraction: noisy as f64 / n,
        unlabeled_fraction: unlabeled as f64 / n,
    })
}
