//! Shared rasters, class palette and the flight-height ladder.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Dense class index, `0..C`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClassId(pub u8);

impl ClassId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Ordered class names; position in the list is the class id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Palette {
    names: Vec<String>,
}

impl Palette {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() < 2 {
            return Err(invalid(format!("palette needs at least 2 classes, got {}", names.len())));
        }
        if names.len() > 255 {
            return Err(invalid("palette exceeds 255 classes"));
        }
        let unique: BTreeSet<&str> = names.iter().map(String::as_str).collect();
        if unique.len() != names.len() {
            return Err(invalid("palette class names must be unique"));
        }
        Ok(Self { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: ClassId) -> Option<&str> {
        self.names.get(id.index()).map(String::as_str)
    }

    pub fn id_of(&self, name: &str) -> Option<ClassId> {
        self.names.iter().position(|n| n == name).map(|i| ClassId(i as u8))
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn ids(&self) -> impl Iterator<Item = ClassId> + '_ {
        (0..self.names.len()).map(|i| ClassId(i as u8))
    }
}

/// Row-major 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(invalid(format!("image dimensions must be positive, got {width}x{height}")));
        }
        if pixels.len() != 3 * width * height {
            return Err(invalid(format!(
                "pixel buffer has {} bytes, expected {} for {width}x{height}",
                pixels.len(),
                3 * width * height
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let pixels = rgb.iter().copied().cycle().take(3 * width * height).collect();
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn get(&self, u: usize, v: usize) -> [u8; 3] {
        let i = 3 * (v * self.width + u);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, u: usize, v: usize, rgb: [u8; 3]) {
        let i = 3 * (v * self.width + u);
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_dims(&self, labels: &LabelMap) -> bool {
        self.width == labels.width() && self.height == labels.height()
    }

    pub fn mean_intensity(&self) -> f64 {
        self.pixels.iter().map(|&p| p as f64).sum::<f64>() / self.pixels.len() as f64
    }
}

/// Row-major raster of class ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(invalid(format!("label map dimensions must be positive, got {width}x{height}")));
        }
        if labels.len() != width * height {
            return Err(invalid(format!(
                "label buffer has {} entries, expected {}",
                labels.len(),
                width * height
            )));
        }
        Ok(Self { width, height, labels })
    }

    pub fn filled(width: usize, height: usize, class: ClassId) -> Result<Self> {
        Self::new(width, height, vec![class.0; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u8] {
        &mut self.labels
    }

    pub fn get(&self, u: usize, v: usize) -> ClassId {
        ClassId(self.labels[v * self.width + u])
    }

    pub fn set(&mut self, u: usize, v: usize, class: ClassId) {
        self.labels[v * self.width + u] = class.0;
    }

    pub fn same_dims(&self, other: &LabelMap) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Checks every label is below `classes`.
    pub fn validate(&self, classes: usize) -> Result<()> {
        match self.labels.iter().find(|&&l| l as usize >= classes) {
            Some(&label) => Err(Error::InvalidLabel { label, classes }),
            None => Ok(()),
        }
    }

    /// Pixel count per class id.
    pub fn histogram(&self, classes: usize) -> Vec<u64> {
        let mut counts = vec![0u64; classes.max(256)];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts.truncate(classes);
        counts
    }
}

/// Distinct class ids occurring in `label`.
pub fn classes_present(label: &LabelMap) -> BTreeSet<ClassId> {
    let mut seen = [false; 256];
    for &l in label.labels() {
        seen[l as usize] = true;
    }
    seen.iter()
        .enumerate()
        .filter(|(_, &s)| s)
        .map(|(i, _)| ClassId(i as u8))
        .collect()
}

/// Per-pixel one-hot encoding, pixel-major: `data[p * classes + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OneHot {
    pub width: usize,
    pub height: usize,
    pub classes: usize,
    pub data: Vec<f64>,
}

impl OneHot {
    pub fn pixel(&self, p: usize) -> &[f64] {
        &self.data[p * self.classes..(p + 1) * self.classes]
    }

    /// Per-pixel argmax; ties go to the lowest class id.
    pub fn argmax(&self) -> LabelMap {
        let labels = (0..self.width * self.height)
            .map(|p| argmax(self.pixel(p)) as u8)
            .collect();
        LabelMap { width: self.width, height: self.height, labels }
    }
}

pub fn one_hot(label: &LabelMap, classes: usize) -> Result<OneHot> {
    label.validate(classes)?;
    let mut data = vec![0.0; label.len() * classes];
    for (p, &l) in label.labels().iter().enumerate() {
        data[p * classes + l as usize] = 1.0;
    }
    Ok(OneHot { width: label.width(), height: label.height(), classes, data })
}

/// Index of the largest entry, lowest index on ties.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Ascending flight heights `h_1 < ... < h_n` in meters; index 0 is the ground rung.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewLadder {
    heights_m: Vec<f64>,
    max_height_m: f64,
}

impl ViewLadder {
    /// Builds a ladder from explicit heights, which must be positive and strictly ascending.
    pub fn from_heights(heights_m: Vec<f64>) -> Result<Self> {
        if heights_m.is_empty() {
            return Err(invalid("ladder needs at least one rung"));
        }
        if heights_m.iter().any(|h| !h.is_finite() || *h <= 0.0) {
            return Err(invalid("ladder heights must be positive and finite"));
        }
        if heights_m.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("ladder heights must be strictly ascending"));
        }
        let max_height_m = *heights_m.last().unwrap();
        Ok(Self { heights_m, max_height_m })
    }

    pub fn heights_m(&self) -> &[f64] {
        &self.heights_m
    }

    pub fn max_height_m(&self) -> f64 {
        self.max_height_m
    }

    pub fn rung_count(&self) -> usize {
        self.heights_m.len()
    }

    pub fn ground_height_m(&self) -> f64 {
        self.heights_m[0]
    }

    /// Keeps the rungs at the given indices (sorted, deduplicated).
    pub fn select(&self, rungs: &[usize]) -> Result<Self> {
        let mut idx: Vec<usize> = rungs.to_vec();
        idx.sort_unstable();
        idx.dedup();
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.heights_m.len()) {
            return Err(invalid(format!("rung {bad} outside ladder of {}", self.heights_m.len())));
        }
        Self::from_heights(idx.iter().map(|&i| self.heights_m[i]).collect())
    }
}

/// Uniform-interval ladder: `h_i = (max_height_m / n) * i` for `i = 1..=n`.
pub fn sample_ladder(max_height_m: f64, n: usize) -> Result<ViewLadder> {
    if !(max_height_m.is_finite() && max_height_m > 0.0) {
        return Err(invalid(format!("max height must be positive, got {max_height_m}")));
    }
    if n == 0 {
        return Err(invalid("rung count must be at least 1"));
    }
    let step = max_height_m / n as f64;
    let mut heights: Vec<f64> = (1..=n).map(|i| step * i as f64).collect();
    // pin the top rung exactly
    heights[n - 1] = max_height_m;
    ViewLadder::from_heights(heights)
}

/// One frame of a sequence. `label` is present only for labeled data.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub label: Option<LabelMap>,
    pub height_m: f64,
    pub sequence_id: String,
    pub sample_id: u32,
}

impl Sample {
    pub fn is_labeled(&self) -> bool {
        self.label.is_some()
    }
}
