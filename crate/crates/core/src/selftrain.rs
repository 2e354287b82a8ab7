//! One-shot pseudo-labelling with a trained teacher and retraining of a
//! fresh student on those labels with plain BCE.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::dataio::{BinaryMask, Image, ImageSample};
use crate::dataio::store::{ensure_dir, read_mask, write_mask};
use crate::error::{Error, Result};
use crate::metrics::binarize;
use crate::model::{Architecture, Prediction, SegmentationModel};
use crate::scalar::Scalar;
use crate::trainer::{train_items, EpochObserver, TrainConfig, TrainLog, TrainingItem};

pub const PSEUDO_DIR: &str = "pseudo";
pub const PSEUDO_MANIFEST: &str = "pseudo_manifest.txt";
/// Probabilities strictly above this become foreground.
pub const PSEUDO_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelSet {
    /// Hex SHA-256 of the teacher checkpoint.
    pub teacher_hash: String,
    pub labels: Vec<(String, BinaryMask)>,
}

impl PseudoLabelSet {
    pub fn get(&self, id: &str) -> Option<&BinaryMask> {
        self.labels.iter().find(|(i, _)| i == id).map(|(_, m)| m)
    }

    pub fn matches_teacher<T: Scalar>(&self, teacher: &SegmentationModel<T>) -> bool {
        self.teacher_hash == teacher.checkpoint_hash()
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        let dir = ensure_dir(&root.join(PSEUDO_DIR))?;
        let mut manifest = format!("teacher {}\n", self.teacher_hash);
        for (id, mask) in &self.labels {
            write_mask(&dir.join(format!("{id}.png")), mask)?;
            manifest.push_str(id);
            manifest.push('\n');
        }
        let path = root.join(PSEUDO_MANIFEST);
        fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
    }

    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(PSEUDO_MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let teacher_hash = lines
            .next()
            .and_then(|l| l.strip_prefix("teacher "))
            .ok_or_else(|| Error::format(&path, "first line must be `teacher <hash>`"))?
            .to_owned();
        let labels = lines
            .map(|id| {
                let mask = read_mask(&root.join(PSEUDO_DIR).join(format!("{id}.png")))?;
                Ok((id.to_owned(), mask))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PseudoLabelSet { teacher_hash, labels })
    }
}

/// Single inference pass of `teacher` over the dataset images, thresholded
/// at [`PSEUDO_THRESHOLD`].
pub fn generate_pseudo_labels<T: Scalar>(
    teacher: &SegmentationModel<T>,
    dataset: &[ImageSample],
) -> Result<PseudoLabelSet> {
    let images: Vec<(String, Image)> = dataset.iter().map(|s| (s.id.clone(), s.image.clone())).collect();
    generate_pseudo_labels_with(&images, teacher.checkpoint_hash(), |img| teacher.predict(&img.to_tensor()))
}

/// As [`generate_pseudo_labels`], for an arbitrary predictor.
pub fn generate_pseudo_labels_with<T: Scalar>(
    images: &[(String, Image)],
    teacher_hash: String,
    predict: impl Fn(&Image) -> Result<Prediction<T>> + Sync,
) -> Result<PseudoLabelSet> {
    if images.is_empty() {
        return Err(Error::Argument("cannot pseudo-label an empty dataset".into()));
    }
    let labels = images
        .par_iter()
        .map(|(id, img)| Ok((id.clone(), binarize(&predict(img)?, PSEUDO_THRESHOLD))))
        .collect::<Result<Vec<_>>>()?;
    Ok(PseudoLabelSet { teacher_hash, labels })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfTrainConfig {
    /// Optimizer and schedule; alignment modes are ignored.
    pub train: TrainConfig,
    pub architecture: Architecture,
}

/// Trains a freshly initialized model on full-image BCE against the pseudo
/// labels. Only images and pseudo labels are consulted.
pub fn self_train<T: Scalar>(
    pseudo: &PseudoLabelSet,
    images: &[(String, Image)],
    validation: Option<&[ImageSample]>,
    config: &SelfTrainConfig,
    observer: &mut EpochObserver<'_>,
) -> Result<(SegmentationModel<T>, TrainLog)> {
    let by_id: HashMap<&str, &BinaryMask> = pseudo.labels.iter().map(|(i, m)| (i.as_str(), m)).collect();
    let missing: Vec<&str> = images
        .iter()
        .map(|(id, _)| id.as_str())
        .filter(|id| !by_id.contains_key(id))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Argument(format!("no pseudo labels for: {}", missing.join(", "))));
    }
    let items: Vec<TrainingItem> = images
        .iter()
        .map(|(id, image)| TrainingItem {
            id: id.clone(),
            image: image.clone(),
            target: by_id[id.as_str()].as_scribble(),
        })
        .collect();
    let arch = config.architecture;
    let student = SegmentationModel::init(arch.width_base, arch.in_channels, arch.seed)?;
    let train_cfg = config.train.clone().baseline();
    train_items(student, &items, validation, &train_cfg, observer)
}
