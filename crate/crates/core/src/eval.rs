//! CorLoc, average precision, score-group diagnostics and error breakdown.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, ImageId};
use crate::error::{Error, Result};
use crate::features::{ChannelMode, Histogram};
use crate::geometry::{classify_error, iou, max_iou, ErrorMode, Window, CORRECT_IOU};
use crate::svm::LinearModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: ImageId,
    pub window: Window,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Protocol {
    /// Mean interpolated precision at recall 0, 0.1, ..., 1.
    #[default]
    ElevenPoint,
    /// Area under the interpolated precision/recall curve.
    Continuous,
}

pub type Selections = BTreeMap<ImageId, Window>;
pub type GroundTruth = BTreeMap<ImageId, Vec<Window>>;

fn gts_for<'a>(id: &ImageId, gts: &'a GroundTruth) -> Result<&'a [Window]> {
    match gts.get(id) {
        Some(g) if !g.is_empty() => Ok(g),
        _ => Err(Error::EmptyGroundTruth(id.to_string())),
    }
}

/// Fraction of images whose selection overlaps some ground-truth box by at least 50%.
pub fn corloc(selections: &Selections, gts: &GroundTruth) -> Result<f64> {
    if selections.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for (id, w) in selections {
        if max_iou(w, gts_for(id, gts)?) >= CORRECT_IOU {
            hits += 1;
        }
    }
    Ok(hits as f64 / selections.len() as f64)
}

/// Normalized frequencies of the five error modes, indexed by [`ErrorMode::index`].
pub fn error_breakdown(selections: &Selections, gts: &GroundTruth) -> Result<[f64; 5]> {
    let mut counts = [0usize; 5];
    for (id, w) in selections {
        counts[classify_error(w, gts_for(id, gts)?)?.index()] += 1;
    }
    let n = selections.len().max(1) as f64;
    Ok(counts.map(|c| c as f64 / n))
}

fn lexical(a: &Detection, b: &Detection) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then_with(|| a.image_id.cmp(&b.image_id))
        .then_with(|| {
            let (x, y) = (a.window.to_array(), b.window.to_array());
            x.iter().zip(&y).map(|(p, q)| p.total_cmp(q)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
        })
}

/// Ranks detections and marks each as true or false positive.
///
/// Detections are visited by decreasing confidence (ties by image id then
/// box coordinates); each takes the still unmatched ground truth of its
/// image with highest IoU if that IoU is at least 0.5.
pub fn match_detections(dets: &[Detection], gts: &GroundTruth) -> Vec<bool> {
    let mut order: Vec<&Detection> = dets.iter().collect();
    order.sort_by(|a, b| lexical(a, b));
    let mut used: BTreeMap<&ImageId, Vec<bool>> = gts.iter().map(|(k, v)| (k, vec![false; v.len()])).collect();
    order
        .into_iter()
        .map(|d| {
            let Some(boxes) = gts.get(&d.image_id) else { return false };
            let flags = used.get_mut(&d.image_id).expect("same keys");
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in boxes.iter().enumerate() {
                if flags[j] {
                    continue;
                }
                let o = iou(&d.window, g);
                if best.map_or(true, |(_, b)| o > b) {
                    best = Some((j, o));
                }
            }
            match best {
                Some((j, o)) if o >= CORRECT_IOU => {
                    flags[j] = true;
                    true
                }
                _ => false,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

pub fn precision_recall(dets: &[Detection], gts: &GroundTruth) -> Vec<PrPoint> {
    let n_gt: usize = gts.values().map(Vec::len).sum();
    let tp_flags = match_detections(dets, gts);
    let mut tp = 0usize;
    tp_flags
        .iter()
        .enumerate()
        .map(|(k, &hit)| {
            tp += hit as usize;
            PrPoint { recall: tp as f64 / n_gt.max(1) as f64, precision: tp as f64 / (k + 1) as f64 }
        })
        .collect()
}

pub fn average_precision(dets: &[Detection], gts: &GroundTruth, protocol: Protocol) -> f64 {
    let n_gt: usize = gts.values().map(Vec::len).sum();
    if n_gt == 0 {
        return 0.0;
    }
    let curve = precision_recall(dets, gts);
    ap_from_curve(&curve, protocol)
}

/// AP of a precision/recall curve ordered by rank.
pub fn ap_from_curve(curve: &[PrPoint], protocol: Protocol) -> f64 {
    match protocol {
        Protocol::ElevenPoint => {
            // running maximum of precision from the tail gives the envelope
            let mut envelope = vec![0.0; curve.len()];
            let mut best = 0.0f64;
            for k in (0..curve.len()).rev() {
                best = best.max(curve[k].precision);
                envelope[k] = best;
            }
            let mut sum = 0.0;
            for t in 0..=10 {
                let r = t as f64 / 10.0;
                let k = curve.partition_point(|p| p.recall < r);
                if k < curve.len() {
                    sum += envelope[k];
                }
            }
            sum / 11.0
        }
        Protocol::Continuous => {
            let mut rec = Vec::with_capacity(curve.len() + 2);
            let mut pre = Vec::with_capacity(curve.len() + 2);
            rec.push(0.0);
            pre.push(0.0);
            for p in curve {
                rec.push(p.recall);
                pre.push(p.precision);
            }
            rec.push(1.0);
            pre.push(0.0);
            for k in (0..pre.len() - 1).rev() {
                pre[k] = pre[k].max(pre[k + 1]);
            }
            let mut ap = 0.0;
            for k in 1..rec.len() {
                if rec[k] != rec[k - 1] {
                    ap += (rec[k] - rec[k - 1]) * pre[k];
                }
            }
            ap
        }
    }
}

/// Greedy non-maximum suppression, keeping the highest-scoring boxes.
pub fn nms(windows: &[Window], scores: &[f64], threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..windows.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut keep: Vec<usize> = Vec::new();
    for i in order {
        if keep.iter().all(|&k| iou(&windows[k], &windows[i]) <= threshold) {
            keep.push(i);
        }
    }
    keep
}

/// Scores every candidate of every image and keeps the survivors of NMS.
pub fn detect(model: &LinearModel, dataset: &Dataset, mode: ChannelMode, nms_iou: f64) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (i, bag) in dataset.bags().iter().enumerate() {
        let scores = (0..bag.windows.len())
            .map(|w| model.score_checked(&dataset.composed(i, w, mode)?))
            .collect::<Result<Vec<_>>>()?;
        for k in nms(&bag.windows, &scores, nms_iou) {
            out.push(Detection { image_id: bag.id.clone(), window: bag.windows[k], confidence: scores[k] });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub histogram: Histogram,
}

/// Score distributions of the three window groups in positive images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreGroups {
    /// The training selections themselves.
    pub selected: GroupStats,
    /// Other windows overlapping a selection by more than 50%.
    pub overlapping: GroupStats,
    /// Windows overlapping the selection by at most 50%.
    pub rest: GroupStats,
}

/// Group index (0, 1, 2) of window `w` of an image whose selection is `sel`.
pub fn score_group(windows: &[Window], sel: usize, w: usize) -> usize {
    if w == sel {
        0
    } else if iou(&windows[w], &windows[sel]) > 0.5 {
        1
    } else {
        2
    }
}

fn stats(values: &[f64], lo: f64, hi: f64, bins: usize) -> GroupStats {
    let n = values.len();
    let mean = if n > 0 { values.iter().sum::<f64>() / n as f64 } else { 0.0 };
    let var = if n > 0 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64 } else { 0.0 };
    let mut histogram = Histogram::new(lo, hi, bins);
    for &v in values {
        histogram.add(v);
    }
    GroupStats { count: n, mean, std: var.sqrt(), histogram }
}

/// Splits the windows of each selected image into the three groups and
/// summarizes their scores; `selections` maps image index to window index.
pub fn score_histogram(
    model: &LinearModel,
    dataset: &Dataset,
    selections: &[(usize, usize)],
    mode: ChannelMode,
    bins: usize,
) -> Result<ScoreGroups> {
    let mut groups: [Vec<f64>; 3] = Default::default();
    for &(image, sel) in selections {
        let windows = &dataset.bag(image).windows;
        for w in 0..windows.len() {
            let s = model.score_checked(&dataset.composed(image, w, mode)?)?;
            groups[score_group(windows, sel, w)].push(s);
        }
    }
    Ok(summarize_groups(&groups, bins))
}

pub fn summarize_groups(groups: &[Vec<f64>; 3], bins: usize) -> ScoreGroups {
    let all = groups.iter().flatten();
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 0.0) };
    ScoreGroups {
        selected: stats(&groups[0], lo, hi, bins),
        overlapping: stats(&groups[1], lo, hi, bins),
        rest: stats(&groups[2], lo, hi, bins),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorModeFreqs {
    pub correct: f64,
    pub hyp_in_gt: f64,
    pub gt_in_hyp: f64,
    pub partial_overlap: f64,
    pub no_overlap: f64,
}

impl From<[f64; 5]> for ErrorModeFreqs {
    fn from(f: [f64; 5]) -> Self {
        ErrorModeFreqs { correct: f[0], hyp_in_gt: f[1], gt_in_hyp: f[2], partial_overlap: f[3], no_overlap: f[4] }
    }
}

impl ErrorModeFreqs {
    pub fn get(&self, mode: ErrorMode) -> f64 {
        match mode {
            ErrorMode::CorrectLoc => self.correct,
            ErrorMode::HypInGt => self.hyp_in_gt,
            ErrorMode::GtInHyp => self.gt_in_hyp,
            ErrorMode::PartialOverlap => self.partial_overlap,
            ErrorMode::NoOverlap => self.no_overlap,
        }
    }

    pub fn sum(&self) -> f64 {
        self.correct + self.hyp_in_gt + self.gt_in_hyp + self.partial_overlap + self.no_overlap
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub corloc: f64,
    pub ap: f64,
    pub protocol: Protocol,
    pub error_mode_freqs: ErrorModeFreqs,
    pub corloc_trajectory: Vec<f64>,
    /// How equal-confidence detections are ordered.
    pub tie_break: String,
}

pub const TIE_BREAK_RULE: &str = "confidence desc, then image_id asc, then box (x0,y0,x1,y1) asc";
