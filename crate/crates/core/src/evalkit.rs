//! Rotated NMS and VOC2007 11-point AP/mAP evaluation for oriented-box
//! detections. Matching and suppression use the exact clipping IoU, never
//! the pixel-based approximation.

use thiserror::Error;

use crate::geom::Obb;
use crate::polyclip::iou_exact;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("unknown class id {class_id}, class universe has {num_classes} classes")]
    UnknownClass { class_id: usize, num_classes: usize },
}

/// Scored, class-labeled oriented-box detection.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub image_id: String,
    pub class_id: usize,
    pub score: f64,
    pub obb: Obb,
}

/// Annotated ground-truth box with the VOC/DOTA difficulty flag.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub image_id: String,
    pub class_id: usize,
    pub obb: Obb,
    pub difficult: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchLabel {
    TruePositive,
    FalsePositive,
    /// Matched a difficult ground truth; excluded from both TP and FP counts.
    Ignored,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassReport {
    pub class_id: usize,
    pub ap: f64,
    pub tp: usize,
    pub fp: usize,
    pub npos: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_class: Vec<ClassReport>,
    /// Mean AP over classes with at least one non-difficult ground truth.
    pub map: f64,
    pub iou_threshold: f64,
}

/// Greedy rotated NMS: sort by score descending (stable on ties), keep a
/// detection iff its IoU with every already-kept detection is below `tau`.
///
/// Class-wise application is the caller's contract; all detections are
/// assumed to share one image.
pub fn rotated_nms(dets: &[Detection], tau: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        if kept.iter().all(|&j| iou_exact(&dets[i].obb, &dets[j].obb) < tau) {
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| dets[i].clone()).collect()
}

/// Stable processing key: score descending, then image id, then input index.
fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[a]
            .score
            .total_cmp(&dets[b].score)
            .reverse()
            .then_with(|| dets[a].image_id.cmp(&dets[b].image_id))
            .then(a.cmp(&b))
    });
    order
}

/// VOC-style matching at one IoU threshold.
///
/// Detections are processed in descending score; each matches the unmatched
/// same-class ground truth in its image with the highest IoU at or above the
/// threshold. Difficult ground truths absorb detections without producing
/// either a TP or an FP. Returned labels are parallel to the input slice.
pub fn match_detections(
    dets: &[Detection],
    gts: &[GroundTruth],
    num_classes: usize,
    iou_thr: f64,
) -> Result<Vec<MatchLabel>, EvalError> {
    for d in dets {
        if d.class_id >= num_classes {
            return Err(EvalError::UnknownClass { class_id: d.class_id, num_classes });
        }
    }
    for g in gts {
        if g.class_id >= num_classes {
            return Err(EvalError::UnknownClass { class_id: g.class_id, num_classes });
        }
    }
    let mut matched = vec![false; gts.len()];
    let mut labels = vec![MatchLabel::FalsePositive; dets.len()];
    for &i in &score_order(dets) {
        let d = &dets[i];
        let mut best: Option<(f64, usize)> = None;
        for (j, g) in gts.iter().enumerate() {
            if g.class_id != d.class_id || g.image_id != d.image_id {
                continue;
            }
            // Matched non-difficult ground truths are out of play.
            if matched[j] && !g.difficult {
                continue;
            }
            let iou = iou_exact(&d.obb, &g.obb);
            if iou >= iou_thr && best.map_or(true, |(b, _)| iou > b) {
                best = Some((iou, j));
            }
        }
        labels[i] = match best {
            Some((_, j)) if gts[j].difficult => MatchLabel::Ignored,
            Some((_, j)) => {
                matched[j] = true;
                MatchLabel::TruePositive
            }
            None => MatchLabel::FalsePositive,
        };
    }
    Ok(labels)
}

/// VOC2007 11-point interpolated AP from a score-ordered TP/FP sequence.
pub fn voc07_ap(tp_sequence: &[bool], npos: usize) -> f64 {
    if npos == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut prec_rec: Vec<(f64, f64)> = Vec::with_capacity(tp_sequence.len());
    for &is_tp in tp_sequence {
        if is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / npos as f64;
        prec_rec.push((precision, recall));
    }
    let mut sum = 0.0;
    for i in 0..=10 {
        let r = i as f64 / 10.0;
        sum += prec_rec
            .iter()
            .filter(|(_, rec)| *rec >= r - 1e-12)
            .map(|(p, _)| *p)
            .fold(0.0f64, f64::max);
    }
    sum / 11.0
}

/// Full per-class AP and mAP report.
pub fn evaluate(
    dets: &[Detection],
    gts: &[GroundTruth],
    num_classes: usize,
    iou_thr: f64,
) -> Result<EvalReport, EvalError> {
    let labels = match_detections(dets, gts, num_classes, iou_thr)?;
    let order = score_order(dets);
    let mut per_class = Vec::with_capacity(num_classes);
    let mut map_sum = 0.0;
    let mut map_classes = 0usize;
    for class_id in 0..num_classes {
        let seq: Vec<bool> = order
            .iter()
            .filter(|&&i| dets[i].class_id == class_id && labels[i] != MatchLabel::Ignored)
            .map(|&i| labels[i] == MatchLabel::TruePositive)
            .collect();
        let npos = gts
            .iter()
            .filter(|g| g.class_id == class_id && !g.difficult)
            .count();
        let ap = voc07_ap(&seq, npos);
        let tp = seq.iter().filter(|&&t| t).count();
        let fp = seq.len() - tp;
        if npos > 0 {
            map_sum += ap;
            map_classes += 1;
        }
        per_class.push(ClassReport { class_id, ap, tp, fp, npos });
    }
    let map = if map_classes > 0 { map_sum / map_classes as f64 } else { 0.0 };
    Ok(EvalReport { per_class, map, iou_threshold: iou_thr })
}
