//! Class-mask mixing between a labeled (or pseudo-labeled) view and an
//! unlabeled view of another height.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;

use crate::domain::{classes_present, ClassId, Image, LabelMap};
use crate::error::{invalid, Error, Result};
use crate::pnm::write_ppm;

/// Binary mask `M`: `true` where the unlabeled view is kept.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MixMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
    selected: BTreeSet<ClassId>,
}

impl MixMask {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, u: usize, v: usize) -> bool {
        self.bits[v * self.width + u]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Classes whose pixels are set.
    pub fn selected(&self) -> &BTreeSet<ClassId> {
        &self.selected
    }

    pub fn coverage(&self) -> f64 {
        self.bits.iter().filter(|&&b| b).count() as f64 / self.bits.len() as f64
    }

    /// Mask of the pixels of `labels` whose class is in `selected`.
    pub fn for_classes(labels: &LabelMap, selected: BTreeSet<ClassId>) -> Self {
        let bits = labels.labels().iter().map(|&l| selected.contains(&ClassId(l))).collect();
        Self { width: labels.width(), height: labels.height(), bits, selected }
    }
}

/// Picks `ceil(k / 2)` of the `k` classes present in `tilde_y`, uniformly
/// without replacement, and masks their pixels.
pub fn make_mask<R: Rng + ?Sized>(tilde_y: &LabelMap, rng: &mut R) -> Result<MixMask> {
    let present: Vec<ClassId> = classes_present(tilde_y).into_iter().collect();
    let k = present.len();
    if k <= 1 {
        return Err(Error::DegenerateInput(format!("{k} class(es) present; nothing to mix")));
    }
    let selected = sample(rng, k, k.div_ceil(2)).into_iter().map(|i| present[i]).collect();
    Ok(MixMask::for_classes(tilde_y, selected))
}

/// Mixed view `x' = M*x_i + (1-M)*x` with labels `y' = M*tilde_y + (1-M)*hat_y`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedView {
    pub image: Image,
    pub labels: LabelMap,
}

/// Pixel-wise composition of a labeled view `(x, hat_y)` and an unlabeled
/// view `x_i` with current predictions `tilde_y`.
pub fn mix_view(x: &Image, hat_y: &LabelMap, x_i: &Image, tilde_y: &LabelMap, mask: &MixMask) -> Result<MixedView> {
    let (w, h) = (x.width(), x.height());
    let dims_ok = x_i.width() == w
        && x_i.height() == h
        && x.same_dims(hat_y)
        && x_i.same_dims(tilde_y)
        && mask.width == w
        && mask.height == h;
    if !dims_ok {
        return Err(invalid("mix inputs must share dimensions"));
    }
    let mut pixels = x.pixels().to_vec();
    let mut labels = hat_y.labels().to_vec();
    for (p, &keep) in mask.bits.iter().enumerate() {
        if keep {
            pixels[p * 3..p * 3 + 3].copy_from_slice(&x_i.pixels()[p * 3..p * 3 + 3]);
            labels[p] = tilde_y.labels()[p];
        }
    }
    Ok(MixedView { image: Image::new(w, h, pixels)?, labels: LabelMap::new(w, h, labels)? })
}

/// Mixed view, or `(x_i, tilde_y)` unchanged when `tilde_y` holds a single class.
pub fn mix_or_passthrough<R: Rng + ?Sized>(
    x: &Image,
    hat_y: &LabelMap,
    x_i: &Image,
    tilde_y: &LabelMap,
    rng: &mut R,
) -> Result<MixedView> {
    match make_mask(tilde_y, rng) {
        Ok(mask) => mix_view(x, hat_y, x_i, tilde_y, &mask),
        Err(Error::DegenerateInput(_)) => Ok(MixedView { image: x_i.clone(), labels: tilde_y.clone() }),
        Err(e) => Err(e),
    }
}

/// ClassMix between two unlabeled images, both labeled by the current model.
pub fn class_mix<R: Rng + ?Sized>(
    a: &Image,
    pred_a: &LabelMap,
    b: &Image,
    pred_b: &LabelMap,
    rng: &mut R,
) -> Result<MixedView> {
    mix_or_passthrough(b, pred_b, a, pred_a, rng)
}

/// How the mixing families differ.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MixFamily {
    pub name: &'static str,
    pub partners: &'static str,
    pub mask: &'static str,
    pub label_source: &'static str,
}

pub const MIX_FAMILIES: [MixFamily; 3] = [
    MixFamily {
        name: "MixUp",
        partners: "two labeled images",
        mask: "global convex weight",
        label_source: "ground truth, blended",
    },
    MixFamily {
        name: "ClassMix",
        partners: "two unlabeled images",
        mask: "half the predicted classes of one image",
        label_source: "current model on both",
    },
    MixFamily {
        name: "MixView",
        partners: "labeled pool view and unlabeled view of the next height",
        mask: "half the predicted classes of the unlabeled view",
        label_source: "pseudo-labels for the pool view, current model for the new view",
    },
];

/// Writes `x | x_i | x'` side by side, plus the mask as a grey strip below.
pub fn write_debug_panel(path: impl AsRef<Path>, x: &Image, x_i: &Image, mixed: &MixedView, mask: &MixMask) -> Result<()> {
    let (w, h) = (x.width(), x.height());
    let mut panel = Image::filled(w * 3, h * 2, [0, 0, 0])?;
    for v in 0..h {
        for u in 0..w {
            panel.set(u, v, x.get(u, v));
            panel.set(w + u, v, x_i.get(u, v));
            panel.set(2 * w + u, v, mixed.image.get(u, v));
            let m = if mask.get(u, v) { 255 } else { 0 };
            panel.set(w + u, h + v, [m, m, m]);
        }
    }
    write_ppm(path, &panel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn labels(w: usize, l: &[u8]) -> LabelMap {
        LabelMap::new(w, l.len() / w, l.to_vec()).unwrap()
    }

    #[test]
    fn hand_case_two_by_two() {
        let x = Image::new(2, 2, vec![10; 12]).unwrap();
        let x_i = Image::new(2, 2, vec![200; 12]).unwrap();
        let hat_y = labels(2, &[0, 0, 0, 0]);
        let tilde_y = labels(2, &[1, 2, 1, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mask = make_mask(&tilde_y, &mut rng).unwrap();
        assert_eq!(mask.selected().len(), 1);
        let mixed = mix_view(&x, &hat_y, &x_i, &tilde_y, &mask).unwrap();
        let chosen = *mask.selected().iter().next().unwrap();
        for p in 0..4 {
            let (u, v) = (p % 2, p / 2);
            if tilde_y.get(u, v) == chosen {
                assert_eq!(mixed.image.get(u, v), [200; 3]);
                assert_eq!(mixed.labels.get(u, v), chosen);
            } else {
                assert_eq!(mixed.image.get(u, v), [10; 3]);
                assert_eq!(mixed.labels.get(u, v), ClassId(0));
            }
        }
        assert_eq!(mask.coverage(), 0.5);
    }

    #[test]
    fn odd_class_count_rounds_up() {
        let tilde_y = labels(3, &[0, 1, 2, 0, 1, 2]);
        let mask = make_mask(&tilde_y, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(mask.selected().len(), 2);
    }

    #[test]
    fn single_class_is_degenerate() {
        let tilde_y = labels(2, &[3, 3, 3, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(make_mask(&tilde_y, &mut rng), Err(Error::DegenerateInput(_))));
        let x = Image::filled(2, 2, [1, 2, 3]).unwrap();
        let x_i = Image::filled(2, 2, [9, 9, 9]).unwrap();
        let out = mix_or_passthrough(&x, &labels(2, &[0; 4]), &x_i, &tilde_y, &mut rng).unwrap();
        assert_eq!(out.image, x_i);
        assert_eq!(out.labels, tilde_y);
    }

    #[test]
    fn dimension_mismatch() {
        let x = Image::filled(2, 2, [0; 3]).unwrap();
        let x_i = Image::filled(3, 2, [0; 3]).unwrap();
        let tilde_y = labels(3, &[0, 1, 0, 1, 0, 1]);
        let mask = make_mask(&tilde_y, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(mix_view(&x, &labels(2, &[0; 4]), &x_i, &tilde_y, &mask).is_err());
    }

    #[test]
    fn family_table_names() {
        let names: Vec<_> = MIX_FAMILIES.iter().map(|f| f.name).collect();
        assert_eq!(names, ["MixUp", "ClassMix", "MixView"]);
    }
}
