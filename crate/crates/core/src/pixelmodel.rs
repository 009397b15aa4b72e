//! Per-pixel segmentation model: a one-hidden-layer tanh network over local
//! RGB patches plus normalized image coordinates, trained with softmax
//! cross-entropy and plain SGD under polynomial learning-rate decay.
//!
//! Weight layout in the flat vector (all row-major):
//! `W1 [D x Hd] | b1 [Hd] | W2 [Hd x C] | b2 [C]`.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::curriculum::LambdaSchedule;
use crate::domain::{argmax, ClassId, Image, LabelMap};
use crate::error::{invalid, Error, Result};
use crate::linalg::{gemm, View};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
}

/// Architecture descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub patch: usize,
    pub hidden: usize,
    pub classes: usize,
    pub activation: Activation,
}

impl Arch {
    pub fn new(patch: usize, hidden: usize, classes: usize) -> Result<Self> {
        let arch = Self { patch, hidden, classes, activation: Activation::Tanh };
        arch.validate()?;
        Ok(arch)
    }

    /// 5x5 patches, 48 hidden units.
    pub fn desk_default(classes: usize) -> Self {
        Self { patch: 5, hidden: 48, classes, activation: Activation::Tanh }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.patch.is_multiple_of(2) {
            return Err(invalid(format!("patch size must be odd, got {}", self.patch)));
        }
        if self.hidden == 0 {
            return Err(invalid("hidden width must be positive"));
        }
        if !(2..=255).contains(&self.classes) {
            return Err(invalid(format!("class count must be in 2..=255, got {}", self.classes)));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        3 * self.patch * self.patch + 2
    }

    pub fn param_count(&self) -> usize {
        let (d, h, c) = (self.feature_dim(), self.hidden, self.classes);
        d * h + h + h * c + c
    }

    fn offsets(&self) -> Offsets {
        let (d, h, c) = (self.feature_dim(), self.hidden, self.classes);
        let b1 = d * h;
        let w2 = b1 + h;
        let b2 = w2 + h * c;
        Offsets { b1, w2, b2, end: b2 + c }
    }
}

struct Offsets {
    b1: usize,
    w2: usize,
    b2: usize,
    end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    arch: Arch,
    weights: Vec<f64>,
    /// Seed the weights were initialized from.
    seed: u64,
    /// SGD steps applied since initialization.
    step: u64,
}

impl ModelParams {
    pub fn from_weights(arch: Arch, weights: Vec<f64>, seed: u64, step: u64) -> Result<Self> {
        arch.validate()?;
        if weights.len() != arch.param_count() {
            return Err(invalid(format!(
                "weight vector has {} entries, architecture needs {}",
                weights.len(),
                arch.param_count()
            )));
        }
        Ok(Self { arch, weights, seed, step })
    }

    pub fn zeros(arch: Arch) -> Result<Self> {
        Self::from_weights(arch, vec![0.0; arch.param_count()], 0, 0)
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }

    fn ensure_finite(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NumericFailure("model weights contain non-finite values".into()))
        }
    }

    fn parts(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        let o = self.arch.offsets();
        let w = &self.weights;
        (&w[..o.b1], &w[o.b1..o.w2], &w[o.w2..o.b2], &w[o.b2..o.end])
    }
}

/// Uniform Glorot initialization per layer, zero biases.
pub fn init_params(arch: Arch, seed: u64) -> Result<ModelParams> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, h, c) = (arch.feature_dim(), arch.hidden, arch.classes);
    let o = arch.offsets();
    let mut weights = vec![0.0; arch.param_count()];
    let a1 = glorot_bound(d, h);
    for w in &mut weights[..o.b1] {
        *w = rng.random_range(-a1..a1);
    }
    let a2 = glorot_bound(h, c);
    for w in &mut weights[o.w2..o.b2] {
        *w = rng.random_range(-a2..a2);
    }
    ModelParams::from_weights(arch, weights, seed, 0)
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Writes the `3k^2 + 2` features of pixel `(u, v)` into `out`.
///
/// Patch values are ordered patch-row, patch-column, channel, scaled to
/// `[0, 1]`, zero outside the image. The last two entries are `u / W`, `v / H`.
pub fn extract_features_into(image: &Image, u: usize, v: usize, k: usize, out: &mut [f64]) {
    let r = (k / 2) as isize;
    let (w, h) = (image.width() as isize, image.height() as isize);
    let px = image.pixels();
    let mut i = 0;
    for dy in -r..=r {
        let y = v as isize + dy;
        for dx in -r..=r {
            let x = u as isize + dx;
            if (0..h).contains(&y) && (0..w).contains(&x) {
                let base = 3 * (y * w + x) as usize;
                out[i] = px[base] as f64 / 255.0;
                out[i + 1] = px[base + 1] as f64 / 255.0;
                out[i + 2] = px[base + 2] as f64 / 255.0;
            } else {
                out[i..i + 3].fill(0.0);
            }
            i += 3;
        }
    }
    out[i] = u as f64 / image.width() as f64;
    out[i + 1] = v as f64 / image.height() as f64;
}

pub fn extract_features(image: &Image, u: usize, v: usize, k: usize) -> Result<Vec<f64>> {
    if k == 0 || k.is_multiple_of(2) {
        return Err(invalid(format!("patch size must be odd, got {k}")));
    }
    if u >= image.width() || v >= image.height() {
        return Err(invalid(format!("pixel ({u},{v}) outside {}x{} image", image.width(), image.height())));
    }
    let mut out = vec![0.0; 3 * k * k + 2];
    extract_features_into(image, u, v, k, &mut out);
    Ok(out)
}

/// Softmax of `logits` in place, max-shifted.
pub(crate) fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for z in logits.iter_mut() {
        *z = (*z - max).exp();
        sum += *z;
    }
    for z in logits.iter_mut() {
        *z /= sum;
    }
}

/// Class probabilities for one feature vector.
pub fn forward(params: &ModelParams, features: &[f64]) -> Result<Vec<f64>> {
    let arch = params.arch;
    if features.len() != arch.feature_dim() {
        return Err(invalid(format!(
            "feature length {} does not match architecture ({})",
            features.len(),
            arch.feature_dim()
        )));
    }
    params.ensure_finite()?;
    let (w1, b1, w2, b2) = params.parts();
    let (h, c) = (arch.hidden, arch.classes);
    let mut hidden = b1.to_vec();
    for (d, &f) in features.iter().enumerate() {
        for (hj, &w) in hidden.iter_mut().zip(&w1[d * h..(d + 1) * h]) {
            *hj += w * f;
        }
    }
    hidden.iter_mut().for_each(|x| *x = x.tanh());
    let mut logits = b2.to_vec();
    for (j, &hj) in hidden.iter().enumerate() {
        for (z, &w) in logits.iter_mut().zip(&w2[j * c..(j + 1) * c]) {
            *z += w * hj;
        }
    }
    softmax_in_place(&mut logits);
    Ok(logits)
}

/// Row-major feature matrix with one target class per row.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelBatch {
    dim: usize,
    features: Vec<f64>,
    targets: Vec<u8>,
}

impl PixelBatch {
    pub fn new(dim: usize) -> Self {
        Self { dim, features: Vec::new(), targets: Vec::new() }
    }

    pub fn with_capacity(dim: usize, rows: usize) -> Self {
        Self { dim, features: Vec::with_capacity(rows * dim), targets: Vec::with_capacity(rows) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn clear(&mut self) {
        self.features.clear();
        self.targets.clear();
    }

    pub fn push(&mut self, features: &[f64], target: ClassId) {
        assert_eq!(features.len(), self.dim, "feature length mismatch");
        self.features.extend_from_slice(features);
        self.targets.push(target.0);
    }

    /// Appends pixel `(u, v)` of `image` with patch size `k`.
    pub fn push_pixel(&mut self, image: &Image, u: usize, v: usize, k: usize, target: ClassId) {
        let start = self.features.len();
        self.features.resize(start + self.dim, 0.0);
        extract_features_into(image, u, v, k, &mut self.features[start..]);
        self.targets.push(target.0);
    }

    pub fn row(&self, i: usize) -> (&[f64], ClassId) {
        (&self.features[i * self.dim..(i + 1) * self.dim], ClassId(self.targets[i]))
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn targets(&self) -> &[u8] {
        &self.targets
    }
}

/// Mean cross-entropy of `batch`; adds `scale * d(mean CE)/dw` into `grad`.
///
/// No weight-decay term. Returns the unscaled mean data loss.
pub(crate) fn accumulate_data_grad(
    params: &ModelParams,
    batch: &PixelBatch,
    scale: f64,
    grad: &mut [f64],
) -> Result<f64> {
    let arch = params.arch;
    let (d, h, c) = (arch.feature_dim(), arch.hidden, arch.classes);
    let n = batch.len();
    if n == 0 {
        return Err(invalid("empty batch"));
    }
    if batch.dim != d {
        return Err(invalid(format!("batch feature dim {} != {d}", batch.dim)));
    }
    if let Some(&t) = batch.targets.iter().find(|&&t| t as usize >= c) {
        return Err(Error::InvalidLabel { label: t, classes: c });
    }
    let (w1, b1, w2, b2) = params.parts();
    let f = View::row_major(&batch.features, n, d);

    let mut act = vec![0.0; n * h];
    gemm(1.0, f, View::row_major(w1, d, h), 0.0, &mut act);
    for row in act.chunks_exact_mut(h) {
        for (x, b) in row.iter_mut().zip(b1) {
            *x = (*x + b).tanh();
        }
    }
    let mut logits = vec![0.0; n * c];
    gemm(1.0, View::row_major(&act, n, h), View::row_major(w2, h, c), 0.0, &mut logits);

    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    // logits -> d loss / d logits, scaled
    for (row, &t) in logits.chunks_exact_mut(c).zip(&batch.targets) {
        for (z, b) in row.iter_mut().zip(b2) {
            *z += b;
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|z| (z - max).exp()).sum();
        let log_norm = max + sum.ln();
        loss += log_norm - row[t as usize];
        for z in row.iter_mut() {
            *z = (*z - log_norm).exp();
        }
        row[t as usize] -= 1.0;
        row.iter_mut().for_each(|z| *z *= scale * inv_n);
    }
    let dlogits = logits;
    let o = arch.offsets();

    // W2, b2
    gemm(1.0, View::row_major(&act, n, h).t(), View::row_major(&dlogits, n, c), 1.0, &mut grad[o.w2..o.b2]);
    for row in dlogits.chunks_exact(c) {
        for (g, z) in grad[o.b2..o.end].iter_mut().zip(row) {
            *g += z;
        }
    }
    // back through the hidden layer
    let mut dact = vec![0.0; n * h];
    gemm(1.0, View::row_major(&dlogits, n, c), View::row_major(w2, h, c).t(), 0.0, &mut dact);
    for (da, a) in dact.iter_mut().zip(&act) {
        *da *= 1.0 - a * a;
    }
    gemm(1.0, f.t(), View::row_major(&dact, n, h), 1.0, &mut grad[..o.b1]);
    for row in dact.chunks_exact(h) {
        for (g, z) in grad[o.b1..o.w2].iter_mut().zip(row) {
            *g += z;
        }
    }
    Ok(loss * inv_n)
}

/// Adds the weight-decay gradient and returns its loss contribution.
pub(crate) fn accumulate_decay(params: &ModelParams, weight_decay: f64, grad: &mut [f64]) -> f64 {
    let mut sq = 0.0;
    for (g, w) in grad.iter_mut().zip(&params.weights) {
        *g += weight_decay * w;
        sq += w * w;
    }
    0.5 * weight_decay * sq
}

/// Mean cross-entropy plus `(weight_decay / 2) * |w|^2`, and its gradient.
pub fn loss_and_grad(params: &ModelParams, batch: &PixelBatch, weight_decay: f64) -> Result<(f64, Vec<f64>)> {
    params.ensure_finite()?;
    let mut grad = vec![0.0; params.weights.len()];
    let data = accumulate_data_grad(params, batch, 1.0, &mut grad)?;
    let loss = data + accumulate_decay(params, weight_decay, &mut grad);
    if !loss.is_finite() {
        return Err(Error::NumericFailure(format!("loss evaluated to {loss}")));
    }
    Ok((loss, grad))
}

/// `lr0 * (1 - iter / max_iter)^power`.
pub fn poly_lr(lr0: f64, iter: usize, max_iter: usize, power: f64) -> Result<f64> {
    if max_iter == 0 {
        return Err(invalid("max_iter must be positive"));
    }
    if iter > max_iter {
        return Err(invalid(format!("iteration {iter} beyond schedule end {max_iter}")));
    }
    Ok(lr0 * (1.0 - iter as f64 / max_iter as f64).powf(power))
}

/// `w <- w - lr * grad`.
pub fn sgd_step(params: &mut ModelParams, grad: &[f64], lr: f64) -> Result<()> {
    if grad.len() != params.weights.len() {
        return Err(invalid(format!("gradient length {} != {}", grad.len(), params.weights.len())));
    }
    for (w, g) in params.weights.iter_mut().zip(grad) {
        *w -= lr * g;
    }
    params.step += 1;
    Ok(())
}

/// Per-pixel prediction for a whole image.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: LabelMap,
    /// Max class probability per pixel.
    pub confidence: Vec<f64>,
}

impl Prediction {
    pub fn mean_confidence(&self) -> f64 {
        self.confidence.iter().sum::<f64>() / self.confidence.len() as f64
    }
}

const PREDICT_CHUNK: usize = 2048;

/// Argmax class (ties to the lowest id) and its probability for every pixel.
pub fn predict_map(params: &ModelParams, image: &Image) -> Result<Prediction> {
    let arch = params.arch;
    if image.width() < arch.patch || image.height() < arch.patch {
        return Err(invalid("image smaller than the model patch"));
    }
    params.ensure_finite()?;
    let (w1, b1, w2, b2) = params.parts();
    let (d, h, c) = (arch.feature_dim(), arch.hidden, arch.classes);
    let (width, height) = (image.width(), image.height());
    let total = width * height;
    let mut labels = vec![0u8; total];
    let mut confidence = vec![0.0; total];

    let mut feats = vec![0.0; PREDICT_CHUNK * d];
    let mut act = vec![0.0; PREDICT_CHUNK * h];
    let mut logits = vec![0.0; PREDICT_CHUNK * c];
    let mut start = 0;
    while start < total {
        let n = PREDICT_CHUNK.min(total - start);
        for (i, row) in feats.chunks_exact_mut(d).take(n).enumerate() {
            let p = start + i;
            extract_features_into(image, p % width, p / width, arch.patch, row);
        }
        gemm(1.0, View::row_major(&feats, n, d), View::row_major(w1, d, h), 0.0, &mut act);
        for row in act.chunks_exact_mut(h).take(n) {
            for (x, b) in row.iter_mut().zip(b1) {
                *x = (*x + b).tanh();
            }
        }
        gemm(1.0, View::row_major(&act, n, h), View::row_major(w2, h, c), 0.0, &mut logits);
        for (i, row) in logits.chunks_exact_mut(c).take(n).enumerate() {
            for (z, b) in row.iter_mut().zip(b2) {
                *z += b;
            }
            softmax_in_place(row);
            let k = argmax(row);
            labels[start + i] = k as u8;
            confidence[start + i] = row[k];
        }
        start += n;
    }
    Ok(Prediction { labels: LabelMap::new(width, height, labels)?, confidence })
}

/// Optimizer and schedule settings for one training phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr0: f64,
    pub weight_decay: f64,
    pub poly_power: f64,
    /// SGD steps per phase.
    pub iterations: usize,
    pub batch_pixels: usize,
    pub lambda: LambdaSchedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 0.01,
            weight_decay: 1e-4,
            poly_power: 0.9,
            iterations: 3000,
            batch_pixels: 256,
            lambda: LambdaSchedule::Linear,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(invalid("lr0 must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(invalid("weight decay must be non-negative"));
        }
        if !(self.poly_power >= 0.0 && self.poly_power.is_finite()) {
            return Err(invalid("poly power must be non-negative"));
        }
        if self.iterations == 0 {
            return Err(invalid("iterations must be at least 1"));
        }
        if self.batch_pixels == 0 {
            return Err(invalid("batch must hold at least one pixel"));
        }
        self.lambda.validate()
    }
}

const CHECKPOINT_MAGIC: &str = "VDST1";

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    arch: Arch,
    seed: u64,
    step: u64,
}

/// `VDST1 {json}\n` followed by the little-endian f64 weights.
pub fn encode_checkpoint(params: &ModelParams) -> Vec<u8> {
    let header = CheckpointHeader { arch: params.arch, seed: params.seed, step: params.step };
    let json = serde_json::to_string(&header).expect("header serializes");
    let mut out = format!("{CHECKPOINT_MAGIC} {json}\n").into_bytes();
    out.reserve(params.weights.len() * 8);
    for w in &params.weights {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    let bad = |detail: String| Error::Format { what: "checkpoint", detail };
    let mut reader = BufReader::new(bytes);
    let mut line = String::new();
    reader.read_line(&mut line).map_err(|e| bad(e.to_string()))?;
    let json = line
        .strip_suffix('\n')
        .and_then(|l| l.strip_prefix(CHECKPOINT_MAGIC))
        .and_then(|l| l.strip_prefix(' '))
        .ok_or_else(|| bad("missing VDST1 header line".into()))?;
    let header: CheckpointHeader = serde_json::from_str(json).map_err(|e| bad(e.to_string()))?;
    header.arch.validate()?;
    let mut raw = Vec::new();
    reader.read_to_end(&mut raw)?;
    let expected = header.arch.param_count() * 8;
    if raw.len() != expected {
        return Err(bad(format!("weight block has {} bytes, architecture needs {expected}", raw.len())));
    }
    let weights = raw
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    ModelParams::from_weights(header.arch, weights, header.seed, header.step)
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &ModelParams) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_checkpoint(params))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    decode_checkpoint(&fs::read(path)?)
}
