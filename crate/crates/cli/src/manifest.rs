use std::fs;
use std::path::{Path, PathBuf};

use aerodistill::pnm::{read_pgm, read_ppm, write_pgm, write_ppm};
use aerodistill::scenegen::{CameraSpec, GeneratedSequence, Preset};
use aerodistill::{Error, Palette};
use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaletteEntry {
    pub id: u8,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceEntry {
    pub id: String,
    pub height_m: f64,
    pub frame_heights_m: Vec<f64>,
    /// Whether training may use the labels. Labels are always on disk for evaluation.
    pub labeled: bool,
    /// Held out from training entirely.
    pub test_only: bool,
    pub count: usize,
    pub images: Vec<String>,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub preset: Preset,
    pub seed: u64,
    pub camera: CameraSpec,
    pub palette: Vec<PaletteEntry>,
    pub sequences: Vec<SequenceEntry>,
}

impl Manifest {
    pub fn palette(&self) -> Result<Palette> {
        Ok(Palette::new(self.palette.iter().map(|p| p.name.clone()))?)
    }

    pub fn class_count(&self) -> usize {
        self.palette.len()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.palette.iter().enumerate() {
            if p.id as usize != i {
                return Err(Error::InvalidArgument(format!("palette ids must be 0..{}", self.palette.len())).into());
            }
        }
        let train: Vec<&SequenceEntry> = self.sequences.iter().filter(|s| !s.test_only).collect();
        if train.first().map(|s| s.labeled) != Some(true) || train.iter().skip(1).any(|s| s.labeled) {
            return Err(Error::InvalidArgument("exactly the first training sequence must be labeled".into()).into());
        }
        for s in &self.sequences {
            if s.images.len() != s.count || s.labels.len() != s.count || s.frame_heights_m.len() != s.count {
                return Err(Error::DataCorruption(format!("sequence {}: counts disagree", s.id)).into());
            }
        }
        Ok(())
    }

    pub fn training_sequences(&self) -> impl Iterator<Item = &SequenceEntry> {
        self.sequences.iter().filter(|s| !s.test_only)
    }
}

/// Loaded manifest plus the directory its paths are relative to.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Accepts either the manifest file or the directory holding it.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    let bytes = fs::read(&file).map_err(Error::from).with_context(|| format!("reading {}", file.display()))?;
    let manifest: Manifest = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Format { what: "manifest", detail: e.to_string() })
        .with_context(|| format!("parsing {}", file.display()))?;
    manifest.validate()?;
    let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Dataset { root, manifest, sha256: sha256_hex(&bytes) })
}

impl Dataset {
    pub fn read_sequence(&self, entry: &SequenceEntry) -> Result<GeneratedSequence> {
        let classes = self.manifest.class_count();
        let frames = entry
            .images
            .iter()
            .zip(&entry.labels)
            .map(|(img, lab)| {
                let image = read_ppm(self.root.join(img)).with_context(|| format!("reading {img}"))?;
                let label = read_pgm(self.root.join(lab)).with_context(|| format!("reading {lab}"))?;
                label.validate(classes)?;
                if !image.same_dims(&label) {
                    return Err(Error::DataCorruption(format!("{img} and {lab} differ in size")).into());
                }
                Ok((image, label))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GeneratedSequence {
            id: entry.id.clone(),
            height_m: entry.height_m,
            frame_heights_m: entry.frame_heights_m.clone(),
            labeled: entry.labeled,
            frames,
        })
    }

    /// Training ladder in manifest order, ground rung first.
    pub fn ladder_sequences(&self) -> Result<Vec<GeneratedSequence>> {
        self.manifest.training_sequences().map(|s| self.read_sequence(s)).collect()
    }

    pub fn sequences_named(&self, ids: &[String]) -> Result<Vec<GeneratedSequence>> {
        ids.iter()
            .map(|id| {
                let entry = self
                    .manifest
                    .sequences
                    .iter()
                    .find(|s| &s.id == id)
                    .ok_or_else(|| Error::InvalidArgument(format!("no sequence named {id}")))?;
                self.read_sequence(entry)
            })
            .collect()
    }
}

/// Writes frames as `images/<seq>/NNNN.ppm` and `labels/<seq>/NNNN.pgm`.
pub fn write_sequence(root: &Path, seq: &GeneratedSequence, test_only: bool) -> Result<SequenceEntry> {
    let mut images = Vec::with_capacity(seq.frames.len());
    let mut labels = Vec::with_capacity(seq.frames.len());
    for dir in ["images", "labels"] {
        fs::create_dir_all(root.join(dir).join(&seq.id)).map_err(Error::from)?;
    }
    for (f, (image, label)) in seq.frames.iter().enumerate() {
        let img = format!("images/{}/{f:04}.ppm", seq.id);
        let lab = format!("labels/{}/{f:04}.pgm", seq.id);
        write_ppm(root.join(&img), image)?;
        write_pgm(root.join(&lab), label)?;
        images.push(img);
        labels.push(lab);
    }
    Ok(SequenceEntry {
        id: seq.id.clone(),
        height_m: seq.height_m,
        frame_heights_m: seq.frame_heights_m.clone(),
        labeled: seq.labeled,
        test_only,
        count: seq.frames.len(),
        images,
        labels,
    })
}

pub fn palette_entries(palette: &Palette) -> Vec<PaletteEntry> {
    palette.names().iter().enumerate().map(|(i, n)| PaletteEntry { id: i as u8, name: n.clone() }).collect()
}
