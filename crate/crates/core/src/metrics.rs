//! Segmentation metrics: confusion counts, per-class and mean IoU,
//! cross-height aggregates, relative improvement and relative drop.

use serde::{Deserialize, Serialize};

use crate::domain::{Image, LabelMap, Palette};
use crate::error::{invalid, Error, Result};
use crate::pixelmodel::{predict_map, ModelParams};

/// `counts[truth * classes + pred]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionCounts {
    pub fn new(classes: usize) -> Self {
        Self { classes, counts: vec![0; classes * classes] }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Row sums: pixels per true class.
    pub fn truth_histogram(&self) -> Vec<u64> {
        self.counts.chunks_exact(self.classes).map(|r| r.iter().sum()).collect()
    }

    /// Column sums: pixels per predicted class.
    pub fn pred_histogram(&self) -> Vec<u64> {
        (0..self.classes).map(|p| (0..self.classes).map(|t| self.get(t, p)).sum()).collect()
    }

    /// Adds `pred` vs `truth` pixel pairs.
    pub fn accumulate(&mut self, pred: &LabelMap, truth: &LabelMap) -> Result<()> {
        if !pred.same_dims(truth) {
            return Err(invalid(format!(
                "prediction {}x{} vs truth {}x{}",
                pred.width(),
                pred.height(),
                truth.width(),
                truth.height()
            )));
        }
        pred.validate(self.classes)?;
        truth.validate(self.classes)?;
        for (&p, &t) in pred.labels().iter().zip(truth.labels()) {
            self.counts[t as usize * self.classes + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionCounts) -> Result<()> {
        if other.classes != self.classes {
            return Err(invalid("class counts differ"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

pub fn confusion(pred: &LabelMap, truth: &LabelMap, classes: usize) -> Result<ConfusionCounts> {
    let mut counts = ConfusionCounts::new(classes);
    counts.accumulate(pred, truth)?;
    Ok(counts)
}

/// Per-class IoU (`None` where truth and prediction are both empty) and their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IouReport {
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
}

/// `TP / (TP + FP + FN)` per class, averaged over classes with non-zero union.
pub fn iou(counts: &ConfusionCounts) -> Result<IouReport> {
    if counts.total() == 0 {
        return Err(Error::UndefinedMetric("no evaluated pixels".into()));
    }
    let truth = counts.truth_histogram();
    let pred = counts.pred_histogram();
    let per_class: Vec<Option<f64>> = (0..counts.classes)
        .map(|k| {
            let tp = counts.get(k, k);
            let union = truth[k] + pred[k] - tp;
            (union > 0).then(|| tp as f64 / union as f64)
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean = present.iter().sum::<f64>() / present.len() as f64;
    Ok(IouReport { per_class, mean })
}

/// Arithmetic mean and sample standard deviation (`n - 1`; zero for one row).
pub fn aggregate(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(invalid("cannot aggregate zero rows"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

/// Relative accuracy improvement in percent: `100 * (ours - baseline) / baseline`.
pub fn rai(acc_ours: f64, acc_baseline: f64) -> Result<f64> {
    if acc_baseline <= 0.0 {
        return Err(Error::UndefinedMetric(format!("baseline accuracy {acc_baseline} is not positive")));
    }
    Ok(100.0 * (acc_ours - acc_baseline) / acc_baseline)
}

/// Relative drop in percent from the lower rung to the higher one.
pub fn relative_drop(acc_low_rung: f64, acc_high_rung: f64) -> Result<f64> {
    if acc_low_rung <= 0.0 {
        return Err(Error::UndefinedMetric(format!("reference accuracy {acc_low_rung} is not positive")));
    }
    Ok(100.0 * (acc_low_rung - acc_high_rung) / acc_low_rung)
}

/// One evaluated sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub sequence: String,
    pub height_m: f64,
    pub per_class: Vec<Option<f64>>,
    pub miou: f64,
}

/// Confusion of `model` over labeled frames.
pub fn evaluate_frames<'a>(
    model: &ModelParams,
    frames: impl IntoIterator<Item = (&'a Image, &'a LabelMap)>,
) -> Result<ConfusionCounts> {
    let mut counts = ConfusionCounts::new(model.arch().classes);
    for (image, truth) in frames {
        let pred = predict_map(model, image)?;
        counts.accumulate(&pred.labels, truth)?;
    }
    Ok(counts)
}

pub fn metrics_row(sequence: &str, height_m: f64, counts: &ConfusionCounts) -> Result<MetricsRow> {
    let report = iou(counts)?;
    Ok(MetricsRow { sequence: sequence.to_string(), height_m, per_class: report.per_class, miou: report.mean })
}

/// One class line of a per-category table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryLine {
    pub class: String,
    /// Fraction of all evaluated ground-truth pixels.
    pub share: f64,
    /// IoU per method, in the order methods were given.
    pub iou: Vec<Option<f64>>,
}

/// Per-class pixel share and IoU per method, sorted by descending share.
///
/// `counts` holds one confusion per method over the same evaluation data.
pub fn per_category_table(palette: &Palette, counts: &[ConfusionCounts]) -> Result<Vec<CategoryLine>> {
    let first = counts.first().ok_or_else(|| invalid("need at least one method"))?;
    if counts.iter().any(|c| c.classes() != palette.len() || c.total() != first.total()) {
        return Err(invalid("confusions disagree with the palette or with each other"));
    }
    let truth = first.truth_histogram();
    let total = first.total() as f64;
    let reports = counts.iter().map(iou).collect::<Result<Vec<_>>>()?;
    let mut lines: Vec<CategoryLine> = palette
        .names()
        .iter()
        .enumerate()
        .map(|(k, name)| CategoryLine {
            class: name.clone(),
            share: truth[k] as f64 / total,
            iou: reports.iter().map(|r| r.per_class[k]).collect(),
        })
        .collect();
    lines.sort_by(|a, b| b.share.total_cmp(&a.share));
    Ok(lines)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(w: usize, labels: &[u8]) -> LabelMap {
        LabelMap::new(w, labels.len() / w, labels.to_vec()).unwrap()
    }

    #[test]
    fn confusion_two_by_two() {
        let truth = map(2, &[0, 0, 1, 1]);
        let pred = map(2, &[0, 1, 1, 1]);
        let c = confusion(&pred, &truth, 2).unwrap();
        assert_eq!((c.get(0, 0), c.get(0, 1), c.get(1, 0), c.get(1, 1)), (1, 1, 0, 2));
        assert_eq!(c.total(), 4);
        let r = iou(&c).unwrap();
        assert_eq!(r.per_class, vec![Some(0.5), Some(2.0 / 3.0)]);
        assert!((r.mean - 7.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn identical_maps_are_diagonal() {
        let m = map(3, &[0, 2, 2, 1, 0, 2]);
        let c = confusion(&m, &m, 4).unwrap();
        for t in 0..4 {
            for p in 0..4 {
                if t != p {
                    assert_eq!(c.get(t, p), 0);
                }
            }
        }
        let r = iou(&c).unwrap();
        assert_eq!(r.mean, 1.0);
        assert_eq!(r.per_class[3], None);
    }

    #[test]
    fn disjoint_constant_maps() {
        let truth = map(2, &[0; 4]);
        let pred = map(2, &[1; 4]);
        let r = iou(&confusion(&pred, &truth, 2).unwrap()).unwrap();
        assert_eq!(r.per_class, vec![Some(0.0), Some(0.0)]);
        assert_eq!(r.mean, 0.0);
    }

    #[test]
    fn errors() {
        assert!(confusion(&map(2, &[0, 0]), &map(1, &[0, 0]), 2).is_err());
        assert!(matches!(iou(&ConfusionCounts::new(3)), Err(Error::UndefinedMetric(_))));
        assert!(aggregate(&[]).is_err());
        assert!(matches!(rai(0.5, 0.0), Err(Error::UndefinedMetric(_))));
        assert!(matches!(relative_drop(0.0, 0.3), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn aggregate_conventions() {
        assert_eq!(aggregate(&[0.4]).unwrap(), (0.4, 0.0));
        let (m, s) = aggregate(&[0.3, 0.3, 0.3]).unwrap();
        assert!((m - 0.3).abs() < 1e-15 && s.abs() < 1e-15);
        let (m, s) = aggregate(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn relative_measures_identity() {
        assert_eq!(rai(0.61, 0.61).unwrap(), 0.0);
        assert_eq!(relative_drop(0.61, 0.61).unwrap(), 0.0);
    }

    #[test]
    fn per_category_shares() {
        let palette = Palette::new(["a", "b", "c"]).unwrap();
        let truth = map(3, &[0, 0, 0, 1, 1, 2]);
        let pred_a = map(3, &[0, 0, 1, 1, 1, 2]);
        let pred_b = map(3, &[0, 0, 0, 0, 1, 1]);
        let lines = per_category_table(
            &palette,
            &[confusion(&pred_a, &truth, 3).unwrap(), confusion(&pred_b, &truth, 3).unwrap()],
        )
        .unwrap();
        assert_eq!(lines[0].class, "a");
        assert!((lines[0].share - 0.5).abs() < 1e-15);
        assert!((lines.iter().map(|l| l.share).sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(lines[2].iou, vec![Some(1.0), Some(0.0)]);
    }
}
