//! Nearest-neighbor pseudo-labeling and the cumulative labeled pool.
//!
//! The pool holds, per ladder rung, the images of that rung together with
//! their current (pseudo-)labels and the model that produced them. Rung 0 is
//! the ground rung and carries ground truth.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::{Image, LabelMap};
use crate::error::{invalid, Error, Result};
use crate::pixelmodel::{predict_map, ModelParams};

/// Who produced a label map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Producer {
    GroundTruth,
    /// Model `N_stage`, 1-based as in `N_1` (the ground model).
    Model { stage: usize },
}

impl fmt::Display for Producer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Producer::GroundTruth => write!(f, "gt"),
            Producer::Model { stage } => write!(f, "N{stage:02}"),
        }
    }
}

/// Images of one rung without labels.
#[derive(Debug, Clone)]
pub struct UnlabeledSet {
    pub rung: usize,
    pub height_m: f64,
    pub images: Vec<(u32, Arc<Image>)>,
}

impl UnlabeledSet {
    pub fn new(rung: usize, height_m: f64, images: impl IntoIterator<Item = Image>) -> Self {
        let images = images.into_iter().enumerate().map(|(i, img)| (i as u32, Arc::new(img))).collect();
        Self { rung, height_m, images }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub sample_id: u32,
    pub image: Arc<Image>,
    pub label: LabelMap,
    pub mean_confidence: f64,
    /// Pixels excluded from training, set only under a confidence threshold.
    pub ignore: Option<Vec<bool>>,
}

impl LabeledImage {
    pub fn is_ignored(&self, p: usize) -> bool {
        self.ignore.as_ref().is_some_and(|m| m[p])
    }
}

/// Labels for one rung together with their producer.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabeledSet {
    pub rung: usize,
    pub producer: Producer,
    pub items: Vec<LabeledImage>,
}

impl PseudoLabeledSet {
    /// Ground-truth set, treated exactly like a pseudo-labeled one downstream.
    pub fn ground_truth(rung: usize, pairs: impl IntoIterator<Item = (Image, LabelMap)>) -> Result<Self> {
        let items = pairs
            .into_iter()
            .enumerate()
            .map(|(i, (image, label))| {
                if !image.same_dims(&label) {
                    return Err(invalid(format!("sample {i}: image and label dimensions differ")));
                }
                Ok(LabeledImage { sample_id: i as u32, image: Arc::new(image), label, mean_confidence: 1.0, ignore: None })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rung, producer: Producer::GroundTruth, items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Optional confidence filter; pixels below the threshold are left out of
/// pseudo-label pools. Off by default.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PseudoLabelOptions {
    pub min_confidence: Option<f64>,
}

impl PseudoLabelOptions {
    fn label(&self, model: &ModelParams, sample_id: u32, image: &Arc<Image>) -> Result<LabeledImage> {
        let pred = predict_map(model, image)?;
        let ignore = self.min_confidence.map(|t| pred.confidence.iter().map(|&c| c < t).collect());
        Ok(LabeledImage {
            sample_id,
            image: Arc::clone(image),
            mean_confidence: pred.mean_confidence(),
            label: pred.labels,
            ignore,
        })
    }
}

/// Labels every image of `unlabeled` with `model` (hard argmax).
pub fn pseudo_label_set(model: &ModelParams, unlabeled: &UnlabeledSet, producer: Producer) -> Result<PseudoLabeledSet> {
    pseudo_label_set_with(model, unlabeled, producer, PseudoLabelOptions::default())
}

pub fn pseudo_label_set_with(
    model: &ModelParams,
    unlabeled: &UnlabeledSet,
    producer: Producer,
    options: PseudoLabelOptions,
) -> Result<PseudoLabeledSet> {
    if unlabeled.is_empty() {
        return Err(invalid(format!("rung {} has no images to label", unlabeled.rung)));
    }
    let items = unlabeled
        .images
        .iter()
        .map(|(id, image)| options.label(model, *id, image))
        .collect::<Result<Vec<_>>>()?;
    Ok(PseudoLabeledSet { rung: unlabeled.rung, producer, items })
}

/// One element of the pool.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry {
    pub rung: usize,
    pub producer: Producer,
    pub item: LabeledImage,
}

/// Cumulative (pseudo-)labeled pool over rungs `1..=i`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledPool {
    entries: Vec<PoolEntry>,
}

impl LabeledPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_set(set: PseudoLabeledSet) -> Result<Self> {
        union_stage(Self::new(), set)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    pub fn get(&self, i: usize) -> &PoolEntry {
        &self.entries[i]
    }

    pub fn rungs(&self) -> BTreeSet<usize> {
        self.entries.iter().map(|e| e.rung).collect()
    }

    /// Entry count per rung, `(rung, count)` ascending.
    pub fn provenance(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = Vec::new();
        for rung in self.rungs() {
            out.push((rung, self.entries.iter().filter(|e| e.rung == rung).count()));
        }
        out
    }

    pub fn rung_entries(&self, rung: usize) -> impl Iterator<Item = &PoolEntry> {
        self.entries.iter().filter(move |e| e.rung == rung)
    }
}

/// `prior ∪ new`, keyed by `(rung, sample_id)`.
pub fn union_stage(prior: LabeledPool, new: PseudoLabeledSet) -> Result<LabeledPool> {
    let mut keys: BTreeSet<(usize, u32)> = prior.entries.iter().map(|e| (e.rung, e.item.sample_id)).collect();
    let mut entries = prior.entries;
    entries.reserve(new.items.len());
    for item in new.items {
        if !keys.insert((new.rung, item.sample_id)) {
            return Err(Error::DataCorruption(format!(
                "sample {} of rung {} already in the pool",
                item.sample_id, new.rung
            )));
        }
        entries.push(PoolEntry { rung: new.rung, producer: new.producer, item });
    }
    Ok(LabeledPool { entries })
}

/// Outcome of refreshing one rung's labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelabelReport {
    pub rung: usize,
    pub changed_pixels: u64,
    pub total_pixels: u64,
}

impl RelabelReport {
    pub fn changed_fraction(&self) -> f64 {
        if self.total_pixels == 0 {
            0.0
        } else {
            self.changed_pixels as f64 / self.total_pixels as f64
        }
    }
}

/// Replaces the labels of `rung` inside the pool by `model`'s predictions.
pub fn relabel_stage(pool: &mut LabeledPool, model: &ModelParams, rung: usize, producer: Producer) -> Result<RelabelReport> {
    relabel_stage_with(pool, model, rung, producer, PseudoLabelOptions::default())
}

pub fn relabel_stage_with(
    pool: &mut LabeledPool,
    model: &ModelParams,
    rung: usize,
    producer: Producer,
    options: PseudoLabelOptions,
) -> Result<RelabelReport> {
    if !pool.entries.iter().any(|e| e.rung == rung) {
        return Err(invalid(format!("rung {rung} is not part of the pool")));
    }
    let mut report = RelabelReport { rung, changed_pixels: 0, total_pixels: 0 };
    for entry in pool.entries.iter_mut().filter(|e| e.rung == rung) {
        let fresh = options.label(model, entry.item.sample_id, &entry.item.image)?;
        report.total_pixels += fresh.label.len() as u64;
        report.changed_pixels += fresh
            .label
            .labels()
            .iter()
            .zip(entry.item.label.labels())
            .filter(|(a, b)| a != b)
            .count() as u64;
        entry.item = fresh;
        entry.producer = producer;
    }
    Ok(report)
}
