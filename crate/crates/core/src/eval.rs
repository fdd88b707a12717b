//! Grounding and 3D semantic segmentation metrics.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use crate::geometry::{distance_sq, Aabb3, Point3};
use crate::spatial::GridIndex;
use crate::{Error, Result};

/// Intersection over union of two axis-aligned boxes.
pub fn iou_aabb(a: &Aabb3, b: &Aabb3) -> f64 {
    let inter = a.intersection_volume(b);
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        // two degenerate boxes
        return if a == b { 1.0 } else { 0.0 };
    }
    inter / union
}

/// One grounding query with its ground-truth box and annotation tags.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundingCase {
    pub query: String,
    pub gt_box: Aabb3,
    pub tags: BTreeSet<String>,
}

pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.1, 0.25, 0.5];

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyTable {
    pub thresholds: Vec<f64>,
    pub overall: Vec<f64>,
    pub count: usize,
    /// Per tag: accuracy at each threshold and number of cases.
    pub per_tag: BTreeMap<String, (Vec<f64>, usize)>,
}

/// Fraction of cases whose predicted box has IoU strictly above each
/// threshold, overall and per tag. A missing prediction counts as a miss.
pub fn grounding_accuracy(predictions: &[Option<Aabb3>], cases: &[GroundingCase], thresholds: &[f64]) -> Result<AccuracyTable> {
    if predictions.len() != cases.len() {
        return Err(Error::LengthMismatch { expected: cases.len(), found: predictions.len() });
    }
    let ious: Vec<f64> = predictions.iter().zip(cases).map(|(p, c)| p.as_ref().map_or(0.0, |b| iou_aabb(b, &c.gt_box))).collect();
    let rate = |idx: &[usize], t: f64| -> f64 {
        if idx.is_empty() {
            return 0.0;
        }
        idx.iter().filter(|&&i| ious[i] > t).count() as f64 / idx.len() as f64
    };
    let all: Vec<usize> = (0..cases.len()).collect();
    let mut by_tag: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, c) in cases.iter().enumerate() {
        for t in &c.tags {
            by_tag.entry(t.clone()).or_default().push(i);
        }
    }
    Ok(AccuracyTable {
        thresholds: thresholds.to_vec(),
        overall: thresholds.iter().map(|t| rate(&all, *t)).collect(),
        count: cases.len(),
        per_tag: by_tag
            .into_iter()
            .map(|(tag, idx)| {
                let accs = thresholds.iter().map(|t| rate(&idx, *t)).collect();
                (tag, (accs, idx.len()))
            })
            .collect(),
    })
}

/// Fraction of exact id matches; a missing prediction never matches.
pub fn recall_at_1(predicted: &[Option<u64>], gt: &[u64]) -> Result<f64> {
    if predicted.len() != gt.len() {
        return Err(Error::LengthMismatch { expected: gt.len(), found: predicted.len() });
    }
    if gt.is_empty() {
        return Ok(0.0);
    }
    let hits = predicted.iter().zip(gt).filter(|(p, g)| **p == Some(**g)).count();
    Ok(hits as f64 / gt.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemsegScores {
    pub m_acc: f64,
    pub m_iou: f64,
    pub fm_iou: f64,
    /// Per class present in the ground truth: (accuracy, IoU, GT frequency).
    pub per_class: BTreeMap<u32, (f64, f64, f64)>,
}

/// Mean accuracy, mean IoU and frequency-weighted IoU over the classes of
/// `class_set` present in the ground truth. Points whose GT label is outside
/// `class_set` are ignored; `None` predictions count as errors.
pub fn semseg_metrics(pred: &[Option<u32>], gt: &[u32], class_set: &[u32]) -> Result<SemsegScores> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch { expected: gt.len(), found: pred.len() });
    }
    let classes: BTreeSet<u32> = class_set.iter().copied().collect();
    let mut gt_count: BTreeMap<u32, usize> = BTreeMap::new();
    let mut pred_count: BTreeMap<u32, usize> = BTreeMap::new();
    let mut tp: BTreeMap<u32, usize> = BTreeMap::new();
    let mut total = 0usize;
    for (p, g) in pred.iter().zip(gt) {
        if !classes.contains(g) {
            continue;
        }
        total += 1;
        *gt_count.entry(*g).or_default() += 1;
        if let Some(p) = p {
            *pred_count.entry(*p).or_default() += 1;
            if p == g {
                *tp.entry(*g).or_default() += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::EmptyGt);
    }
    let mut per_class = BTreeMap::new();
    let (mut acc_sum, mut iou_sum, mut fw) = (0.0, 0.0, 0.0);
    for (&c, &n_gt) in &gt_count {
        let t = tp.get(&c).copied().unwrap_or(0) as f64;
        let n_pred = pred_count.get(&c).copied().unwrap_or(0) as f64;
        let acc = t / n_gt as f64;
        let iou = t / (n_gt as f64 + n_pred - t);
        let freq = n_gt as f64 / total as f64;
        acc_sum += acc;
        iou_sum += iou;
        fw += freq * iou;
        per_class.insert(c, (acc, iou, freq));
    }
    let k = gt_count.len() as f64;
    Ok(SemsegScores { m_acc: acc_sum / k, m_iou: iou_sum / k, fm_iou: fw, per_class })
}

/// Nearest-neighbor label transfer from a predicted cloud onto GT points,
/// leaving points without a prediction within `cap` unlabeled.
pub fn transfer_labels(pred_points: &[Point3], pred_labels: &[Option<u32>], gt_points: &[Point3], cap: f64) -> Result<Vec<Option<u32>>> {
    if pred_points.len() != pred_labels.len() {
        return Err(Error::LengthMismatch { expected: pred_points.len(), found: pred_labels.len() });
    }
    let index = GridIndex::build(pred_points, cap.max(1e-9));
    Ok(gt_points
        .iter()
        .map(|q| {
            let mut best: Option<(f64, usize)> = None;
            index.for_each_within(pred_points, *q, cap, |i| {
                let d = distance_sq(pred_points[i], *q);
                if best.is_none_or(|(bd, bi)| d < bd || (d == bd && i < bi)) {
                    best = Some((d, i));
                }
            });
            best.and_then(|(_, i)| pred_labels[i])
        })
        .collect())
}
