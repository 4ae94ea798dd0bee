//! Edge-driven objectness, greedy window search and score fusion.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::features::ChannelMode;
use crate::geometry::Window;
use crate::svm::LinearModel;

/// Penalty applied to the strength of edge groups straddling a window.
pub const STRADDLE_PENALTY: f64 = 0.5;
pub const DEFAULT_KAPPA: f64 = 1.5;

/// A chain of edge points belonging to one contour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeGroup {
    #[serde(default)]
    pub contour_id: usize,
    pub strength: f64,
    pub points: Vec<[f64; 2]>,
}

impl EdgeGroup {
    pub fn validate(&self) -> Result<()> {
        if self.points.len() < 2 {
            return Err(Error::Format(format!("edge group of contour {} has fewer than 2 points", self.contour_id)));
        }
        if !(self.strength >= 0.0 && self.strength.is_finite()) {
            return Err(Error::Format(format!("edge group strength {} must be non-negative", self.strength)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub top_n: usize,
    pub w_cls: f64,
    pub w_obj: f64,
    pub kappa: f64,
    pub initial_step: f64,
    pub min_step: f64,
    /// Run the greedy local search; when false windows keep their coordinates.
    pub local_search: bool,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig { top_n: 10, w_cls: 0.5, w_obj: 0.5, kappa: DEFAULT_KAPPA, initial_step: 0.05, min_step: 0.004, local_search: true }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_n == 0 {
            return Err(Error::InvalidParameter("top_n must be at least 1".into()));
        }
        if self.w_cls < 0.0 || self.w_obj < 0.0 || self.w_cls + self.w_obj <= 0.0 {
            return Err(Error::InvalidParameter("fusion weights must be non-negative with positive sum".into()));
        }
        if !(self.min_step > 0.0 && self.initial_step >= self.min_step) {
            return Err(Error::InvalidParameter("need 0 < min_step <= initial_step".into()));
        }
        Ok(())
    }
}

pub fn objectness(w: &Window, edges: &[EdgeGroup]) -> f64 {
    objectness_with(w, edges, DEFAULT_KAPPA)
}

/// Strength of groups fully inside `w` minus the straddling penalty,
/// clamped at zero and divided by `perimeter^kappa`.
pub fn objectness_with(w: &Window, edges: &[EdgeGroup], kappa: f64) -> f64 {
    let mut inside = 0.0;
    let mut straddling = 0.0;
    for g in edges {
        let n_in = g.points.iter().filter(|p| w.contains_point(p[0], p[1])).count();
        if n_in == g.points.len() {
            inside += g.strength;
        } else if n_in > 0 {
            straddling += g.strength;
        }
    }
    let raw = (inside - STRADDLE_PENALTY * straddling).max(0.0);
    if raw == 0.0 {
        return 0.0;
    }
    raw / (2.0 * (w.width() + w.height())).powf(kappa)
}

const MIN_SIDE: f64 = 1e-3;
const MAX_MOVES: usize = 100_000;

fn moved(w: &Window, coord: usize, delta: f64) -> Option<Window> {
    let mut c = w.to_array();
    c[coord] = (c[coord] + delta).clamp(0.0, 1.0);
    if c == w.to_array() {
        return None;
    }
    let cand = Window { x0: c[0], y0: c[1], x1: c[2], y1: c[3] };
    (cand.width() >= MIN_SIDE && cand.height() >= MIN_SIDE).then_some(cand)
}

/// Hill climbing on the four coordinates: take the best strictly improving
/// `±step` move, halve the step when none improves, stop below `min_step`.
pub fn greedy_refine(w: &Window, edges: &[EdgeGroup], cfg: &RefineConfig) -> Window {
    let mut cur = *w;
    let mut cur_h = objectness_with(&cur, edges, cfg.kappa);
    let mut step = cfg.initial_step;
    let mut moves = 0;
    while step >= cfg.min_step && moves < MAX_MOVES {
        let mut best: Option<(Window, f64)> = None;
        for coord in 0..4 {
            for delta in [-step, step] {
                if let Some(cand) = moved(&cur, coord, delta) {
                    let h = objectness_with(&cand, edges, cfg.kappa);
                    if h > best.map_or(cur_h, |b| b.1) {
                        best = Some((cand, h));
                    }
                }
            }
        }
        match best {
            Some((cand, h)) => {
                cur = cand;
                cur_h = h;
                moves += 1;
            }
            None => step *= 0.5,
        }
    }
    cur
}

/// Affine map of `values` onto `[0, 1]`; constant inputs map to 0.5.
pub fn scale_unit(values: &[f64]) -> Vec<f64> {
    let (lo, hi) = min_max(values);
    values.iter().map(|&v| scale_with(v, lo, hi)).collect()
}

fn min_max(values: &[f64]) -> (f64, f64) {
    values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

fn scale_with(v: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        (v - lo) / (hi - lo)
    } else {
        0.5
    }
}

/// One window considered during refinement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub window_index: usize,
    pub original: Window,
    pub refined: Window,
    pub classification: f64,
    pub objectness: f64,
    pub combined: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedImage {
    pub image: usize,
    /// Winner among `candidates`.
    pub chosen: usize,
    pub candidates: Vec<Candidate>,
}

impl RefinedImage {
    pub fn window(&self) -> Window {
        self.candidates[self.chosen].refined
    }

    pub fn source_window(&self) -> usize {
        self.candidates[self.chosen].window_index
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineOutcome {
    pub images: Vec<RefinedImage>,
    /// Global range used to scale the classification channel.
    pub classification_range: (f64, f64),
    /// Global range used to scale the objectness channel.
    pub objectness_range: (f64, f64),
}

/// Scores every candidate of each listed image with `model` and refines.
pub fn refine_selection(
    model: &LinearModel,
    dataset: &Dataset,
    images: &[usize],
    mode: ChannelMode,
    cfg: &RefineConfig,
) -> Result<RefineOutcome> {
    let mut scored = Vec::with_capacity(images.len());
    for &i in images {
        let n = dataset.bag(i).windows.len();
        let s = (0..n)
            .map(|w| model.score_checked(&dataset.composed(i, w, mode)?))
            .collect::<Result<Vec<_>>>()?;
        scored.push((i, s));
    }
    refine_with_scores(dataset, &scored, cfg)
}

/// Refinement driven by precomputed per-window classification scores.
///
/// For each image the top-N windows by score (lowest index on ties) are
/// moved by the greedy search; both channels are scaled to `[0, 1]` over all
/// considered windows of all images and fused linearly.
pub fn refine_with_scores(dataset: &Dataset, scores: &[(usize, Vec<f64>)], cfg: &RefineConfig) -> Result<RefineOutcome> {
    cfg.validate()?;
    let mut images = Vec::with_capacity(scores.len());
    for (image, s) in scores {
        let bag = dataset.bag(*image);
        if s.len() != bag.windows.len() {
            return Err(Error::DimensionMismatch { expected: bag.windows.len(), got: s.len() });
        }
        let mut order: Vec<usize> = (0..s.len()).collect();
        order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
        order.truncate(cfg.top_n);
        let candidates = order
            .into_iter()
            .map(|wi| {
                let original = bag.windows[wi];
                let refined = if cfg.local_search { greedy_refine(&original, &bag.edge_groups, cfg) } else { original };
                Candidate {
                    window_index: wi,
                    original,
                    refined,
                    classification: s[wi],
                    objectness: objectness_with(&refined, &bag.edge_groups, cfg.kappa),
                    combined: 0.0,
                }
            })
            .collect();
        images.push(RefinedImage { image: *image, chosen: 0, candidates });
    }

    let all = || images.iter().flat_map(|im| im.candidates.iter());
    let cls: Vec<f64> = all().map(|c| c.classification).collect();
    let obj: Vec<f64> = all().map(|c| c.objectness).collect();
    let classification_range = min_max(&cls);
    let objectness_range = min_max(&obj);
    for im in &mut images {
        for c in &mut im.candidates {
            let sc = scale_with(c.classification, classification_range.0, classification_range.1);
            let so = scale_with(c.objectness, objectness_range.0, objectness_range.1);
            c.combined = cfg.w_cls * sc + cfg.w_obj * so;
        }
        let mut best = 0;
        for k in 1..im.candidates.len() {
            if im.candidates[k].combined > im.candidates[best].combined {
                best = k;
            }
        }
        im.chosen = best;
    }
    Ok(RefineOutcome { images, classification_range, objectness_range })
}

/// Edge groups tracing the outline of `b`, split into segments of at most
/// `segment` length so partial containment is rewarded gradually.
pub fn rectangle_contour(b: &Window, contour_id: usize, segment: f64, points_per_segment: usize) -> Vec<EdgeGroup> {
    let corners = [[b.x0, b.y0], [b.x1, b.y0], [b.x1, b.y1], [b.x0, b.y1]];
    let mut groups = Vec::new();
    for k in 0..4 {
        let a = corners[k];
        let c = corners[(k + 1) % 4];
        let len = ((c[0] - a[0]).powi(2) + (c[1] - a[1]).powi(2)).sqrt();
        let pieces = (len / segment).ceil().max(1.0) as usize;
        for p in 0..pieces {
            let t0 = p as f64 / pieces as f64;
            let t1 = (p + 1) as f64 / pieces as f64;
            let pts = (0..points_per_segment.max(2))
                .map(|j| {
                    let t = t0 + (t1 - t0) * j as f64 / (points_per_segment.max(2) - 1) as f64;
                    [a[0] + (c[0] - a[0]) * t, a[1] + (c[1] - a[1]) * t]
                })
                .collect();
            groups.push(EdgeGroup { contour_id, strength: len / pieces as f64, points: pts });
        }
    }
    groups
}
