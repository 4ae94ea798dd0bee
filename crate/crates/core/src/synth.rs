//! Deterministic synthetic weakly supervised localization datasets.
//!
//! Positive images carry one or two planted boxes. The foreground descriptor
//! of a window is `signal * q(w) * u + noise`, where `q(w)` is its best IoU
//! with a planted box and `u` a fixed unit direction. Noise has unit expected
//! norm times `noise_sigma`. On the first `shared_dims` coordinates a
//! `shared_noise` fraction of its energy is pooled from per-image grid cells
//! weighted by overlap, so overlapping windows of one image have correlated
//! coarse statistics; the remaining coordinates are independent per window,
//! which makes high-dimensional descriptors near orthogonal even within an
//! image.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{Bag, Dataset, FeatureStore, ImageId, Label, Supervision, WindowFeatures};
use crate::error::{Error, Result};
use crate::geometry::{initial_window, max_iou, Window};
use crate::refine::{rectangle_contour, EdgeGroup};

/// Region described by the background descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContextMode {
    /// The image minus the window; depends on the window location.
    WindowComplement,
    /// The whole image; identical for every window of an image.
    FullImage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_pos: usize,
    pub n_neg: usize,
    pub dim: usize,
    pub signal_strength: f64,
    pub noise_sigma: f64,
    pub candidates_per_image: usize,
    /// Std of jittered-copy coordinates, as a fraction of the box side.
    pub jitter: f64,
    pub jittered_per_object: usize,
    pub clutter_contours: usize,
    /// Strength of the scene-context direction in positive backgrounds.
    pub context_signal: f64,
    pub context: ContextMode,
    /// Fraction of noise energy shared through the image cell grid.
    pub shared_noise: f64,
    /// Number of leading coordinates that carry shared cell noise.
    pub shared_dims: usize,
    /// Noise variance of coordinate `k` is proportional to `(k + 1)^-decay`;
    /// 0 gives isotropic noise.
    pub spectrum_decay: f64,
    pub grid: usize,
    pub margin: f64,
    pub min_object: f64,
    pub max_object: f64,
    pub two_object_prob: f64,
    pub edge_segment: f64,
    pub clutter_strength: f64,
    /// Interior texture strokes per unit of object area.
    pub texture_density: f64,
    /// Strength of each texture stroke.
    pub texture_strength: f64,
    pub background: bool,
    pub flips: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_pos: 50,
            n_neg: 50,
            dim: 8192,
            signal_strength: 0.3,
            noise_sigma: 1.0,
            candidates_per_image: 24,
            jitter: 0.05,
            jittered_per_object: 12,
            clutter_contours: 6,
            context_signal: 0.5,
            context: ContextMode::WindowComplement,
            shared_noise: 0.5,
            shared_dims: 64,
            spectrum_decay: 0.0,
            grid: 4,
            margin: 0.04,
            min_object: 0.2,
            max_object: 0.45,
            two_object_prob: 0.25,
            edge_segment: 0.04,
            clutter_strength: 0.5,
            texture_density: 1000.0,
            texture_strength: 0.03,
            background: true,
            flips: false,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.dim < 2 {
            return bad(format!("dim must be at least 2, got {}", self.dim));
        }
        if self.n_pos == 0 || self.n_neg == 0 {
            return bad("need at least one positive and one negative image".into());
        }
        if !(self.signal_strength >= 0.0) || !(self.noise_sigma >= 0.0) {
            return bad("signal and noise must be non-negative".into());
        }
        if self.candidates_per_image < 3 {
            return bad(format!(
                "{} candidates cannot hold two planted boxes and the full-image box",
                self.candidates_per_image
            ));
        }
        if !(self.spectrum_decay >= 0.0 && self.spectrum_decay.is_finite()) {
            return bad(format!("spectrum_decay must be non-negative, got {}", self.spectrum_decay));
        }
        if !(0.0..=1.0).contains(&self.shared_noise) || self.grid == 0 {
            return bad("shared_noise must be in [0,1] and grid positive".into());
        }
        initial_window(self.margin)?;
        let span = 1.0 - 2.0 * (self.margin + 0.05);
        if !(self.min_object > 0.0 && self.min_object <= self.max_object && self.max_object <= span) {
            return bad(format!("object sizes must satisfy 0 < min <= max <= {span}"));
        }
        Ok(())
    }
}

/// What the generator planted in one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedImage {
    pub id: ImageId,
    pub planted_boxes: Vec<Window>,
    /// Candidate indices of the planted boxes themselves.
    pub planted_indices: Vec<usize>,
    pub initial_index: usize,
    /// Overlap quality `q(w)` of every candidate.
    pub quality: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTruth {
    pub config: SynthConfig,
    pub images: Vec<PlantedImage>,
}

pub struct SynthOutput {
    pub dataset: Dataset,
    pub truth: PlantedTruth,
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal) * scale).collect()
}

/// Per-coordinate standard deviations with unit total variance.
fn spectrum(dim: usize, decay: f64) -> Vec<f64> {
    let var: Vec<f64> = (0..dim).map(|k| ((k + 1) as f64).powf(-decay)).collect();
    let total: f64 = var.iter().sum();
    var.into_iter().map(|v| (v / total).sqrt()).collect()
}

fn shaped_noise(rng: &mut ChaCha8Rng, stds: &[f64], scale: f64) -> Vec<f64> {
    stds.iter().map(|s| rng.sample::<f64, _>(StandardNormal) * s * scale).collect()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

fn random_box(rng: &mut ChaCha8Rng, margin: f64) -> Window {
    loop {
        let (a, b): (f64, f64) = (rng.gen(), rng.gen());
        let (c, d): (f64, f64) = (rng.gen(), rng.gen());
        let w = Window { x0: a.min(b), y0: c.min(d), x1: a.max(b), y1: c.max(d) };
        if w.width() >= 0.05 && w.height() >= 0.05 && w.respects_margin(margin) {
            return w;
        }
    }
}

fn jittered(rng: &mut ChaCha8Rng, b: &Window, jitter: f64, margin: f64) -> Window {
    for _ in 0..1000 {
        let (sw, sh) = (b.width() * jitter, b.height() * jitter);
        let n = |rng: &mut ChaCha8Rng| rng.sample::<f64, _>(StandardNormal);
        let w = Window {
            x0: b.x0 + n(rng) * sw,
            y0: b.y0 + n(rng) * sh,
            x1: b.x1 + n(rng) * sw,
            y1: b.y1 + n(rng) * sh,
        };
        if w.is_valid() && w.width() >= 0.02 && w.height() >= 0.02 && w.respects_margin(margin) {
            return w;
        }
    }
    *b
}

fn clutter(rng: &mut ChaCha8Rng, id: usize, strength: f64) -> EdgeGroup {
    let mut p = [rng.gen_range(0.02..0.98), rng.gen_range(0.02..0.98)];
    let mut points = vec![p];
    let mut len = 0.0;
    for _ in 0..rng.gen_range(2..5) {
        let ang: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let l: f64 = rng.gen_range(0.01..0.03);
        let q = [(p[0] + l * ang.cos()).clamp(0.0, 1.0), (p[1] + l * ang.sin()).clamp(0.0, 1.0)];
        len += ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt();
        points.push(q);
        p = q;
    }
    EdgeGroup { contour_id: id, strength: strength * len, points }
}

/// Short strokes strictly inside `b`, one per cell of a grid with
/// `density` cells per unit area, so edge mass grows evenly with area.
fn texture(rng: &mut ChaCha8Rng, b: &Window, density: f64, strength: f64, first_id: usize) -> Vec<EdgeGroup> {
    let pad = 0.005;
    let mut out = Vec::new();
    if density <= 0.0 || b.width() <= 4.0 * pad || b.height() <= 4.0 * pad {
        return out;
    }
    let (w, h) = (b.width() - 2.0 * pad, b.height() - 2.0 * pad);
    let cell = density.sqrt().recip();
    let nx = (w / cell).round().max(1.0) as usize;
    let ny = (h / cell).round().max(1.0) as usize;
    let (cw, ch) = (w / nx as f64, h / ny as f64);
    for gy in 0..ny {
        for gx in 0..nx {
            let (cx0, cy0) = (b.x0 + pad + gx as f64 * cw, b.y0 + pad + gy as f64 * ch);
            let p = [cx0 + rng.gen_range(0.2..0.8) * cw, cy0 + rng.gen_range(0.2..0.8) * ch];
            let ang: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let (dx, dy) = (0.15 * cw * ang.cos(), 0.15 * ch * ang.sin());
            let points = vec![[p[0] - dx, p[1] - dy], p, [p[0] + dx, p[1] + dy]];
            out.push(EdgeGroup { contour_id: first_id + out.len(), strength, points });
        }
    }
    out
}

const PLACEMENT_ATTEMPTS: usize = 20;
const OBJECT_GAP: f64 = 0.03;

fn separated(a: &Window, b: &Window, gap: f64) -> bool {
    a.x1 + gap <= b.x0 || b.x1 + gap <= a.x0 || a.y1 + gap <= b.y0 || b.y1 + gap <= a.y0
}

/// Per-image grid of shared noise vectors.
struct CellNoise {
    grid: usize,
    cells: Vec<Vec<f64>>,
}

impl CellNoise {
    fn draw(rng: &mut ChaCha8Rng, grid: usize, stds: &[f64]) -> Self {
        CellNoise { grid, cells: (0..grid * grid).map(|_| shaped_noise(rng, stds, 1.0)).collect() }
    }

    fn cell(&self, k: usize) -> Window {
        let g = self.grid as f64;
        let (cx, cy) = ((k % self.grid) as f64, (k / self.grid) as f64);
        Window { x0: cx / g, y0: cy / g, x1: (cx + 1.0) / g, y1: (cy + 1.0) / g }
    }

    /// Unit-energy mixture of the cells weighted by `weights`.
    fn pooled(&self, weights: &[f64], out: &mut [f64], scale: f64) {
        let norm = weights.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm <= 0.0 {
            return;
        }
        for (a, z) in weights.iter().zip(&self.cells) {
            if *a > 0.0 {
                let f = scale * a / norm;
                for (o, zi) in out.iter_mut().zip(z) {
                    *o += f * zi;
                }
            }
        }
    }

    fn inside_weights(&self, w: &Window) -> Vec<f64> {
        (0..self.cells.len()).map(|k| self.cell(k).intersection_area(w)).collect()
    }

    fn outside_weights(&self, w: &Window) -> Vec<f64> {
        (0..self.cells.len()).map(|k| {
            let c = self.cell(k);
            (c.area() - c.intersection_area(w)).max(0.0)
        }).collect()
    }
}

/// Fraction of the planted area covered by `w`.
fn coverage(w: &Window, planted: &[Window]) -> f64 {
    let total: f64 = planted.iter().map(Window::area).sum();
    if total <= 0.0 {
        return 0.0;
    }
    planted.iter().map(|b| b.intersection_area(w)).sum::<f64>() / total
}

struct Directions {
    class: Vec<f64>,
    context: Vec<f64>,
}

struct ImageFeatures<'a> {
    cfg: &'a SynthConfig,
    stds: &'a [f64],
    dirs: &'a Directions,
    planted: &'a [Window],
    positive: bool,
}

impl ImageFeatures<'_> {
    fn noise(&self, rng: &mut ChaCha8Rng, cells: &CellNoise, weights: &[f64]) -> Vec<f64> {
        let sigma = self.cfg.noise_sigma;
        let mut v = shaped_noise(rng, self.stds, sigma);
        let s = self.cfg.shared_dims.min(v.len());
        let keep = (1.0 - self.cfg.shared_noise).sqrt();
        v[..s].iter_mut().for_each(|x| *x *= keep);
        cells.pooled(weights, &mut v[..s], sigma * self.cfg.shared_noise.sqrt());
        v
    }

    fn foreground(&self, rng: &mut ChaCha8Rng, cells: &CellNoise, w: &Window) -> Vec<f32> {
        let mut v = self.noise(rng, cells, &cells.inside_weights(w));
        let s = self.cfg.signal_strength * max_iou(w, self.planted);
        if s != 0.0 {
            v.iter_mut().zip(&self.dirs.class).for_each(|(x, u)| *x += s * u);
        }
        v.into_iter().map(|x| x as f32).collect()
    }

    /// Background of `w`, or of the whole image when `w` is `None`.
    fn background(&self, rng: &mut ChaCha8Rng, cells: &CellNoise, w: Option<&Window>) -> Vec<f32> {
        let (weights, leak) = match w {
            Some(w) => (cells.outside_weights(w), 1.0 - coverage(w, self.planted)),
            None => (vec![1.0; cells.cells.len()], 1.0),
        };
        let mut v = self.noise(rng, cells, &weights);
        if self.positive {
            let ctx = self.cfg.context_signal;
            let obj = self.cfg.signal_strength * leak;
            for ((x, u), c) in v.iter_mut().zip(&self.dirs.class).zip(&self.dirs.context) {
                *x += obj * u + ctx * c;
            }
        }
        v.into_iter().map(|x| x as f32).collect()
    }
}

fn image_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream + 1);
    rng
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let d = cfg.dim;
    let mut dir_rng = image_rng(cfg.seed, u64::MAX - 1);
    let class = unit(gaussian_vec(&mut dir_rng, d, 1.0));
    let raw = gaussian_vec(&mut dir_rng, d, 1.0);
    let proj: f64 = raw.iter().zip(&class).map(|(a, b)| a * b).sum();
    let context = unit(raw.iter().zip(&class).map(|(a, b)| a - proj * b).collect());
    let dirs = Directions { class, context };

    let stds = spectrum(d, cfg.spectrum_decay);
    let full = initial_window(cfg.margin)?;
    let lo = cfg.margin + 0.05;
    let hi = 1.0 - cfg.margin - 0.05;
    let mut store = FeatureStore::new(d);
    let mut bags = Vec::with_capacity(cfg.n_pos + cfg.n_neg);
    let mut truth = Vec::new();

    for index in 0..cfg.n_pos + cfg.n_neg {
        let positive = index < cfg.n_pos;
        let mut rng = image_rng(cfg.seed, index as u64);
        let id = if positive { format!("pos_{index:05}") } else { format!("neg_{:05}", index - cfg.n_pos) };

        let mut planted = Vec::new();
        if positive {
            let n_obj = if rng.gen_bool(cfg.two_object_prob) { 2 } else { 1 };
            // Later objects keep a gap from earlier ones; a placement that
            // keeps failing is dropped.
            for _ in 0..n_obj {
                for _ in 0..PLACEMENT_ATTEMPTS {
                    let w = rng.gen_range(cfg.min_object..=cfg.max_object);
                    let h = rng.gen_range(cfg.min_object..=cfg.max_object);
                    let x0 = rng.gen_range(lo..=hi - w);
                    let y0 = rng.gen_range(lo..=hi - h);
                    let b = Window { x0, y0, x1: x0 + w, y1: y0 + h };
                    if planted.iter().all(|p| separated(p, &b, OBJECT_GAP)) {
                        planted.push(b);
                        break;
                    }
                }
            }
        }

        let mut boxes = vec![full];
        boxes.extend(planted.iter().copied());
        if positive {
            'jit: for _ in 0..cfg.jittered_per_object {
                for b in &planted {
                    if boxes.len() >= cfg.candidates_per_image {
                        break 'jit;
                    }
                    boxes.push(jittered(&mut rng, b, cfg.jitter, cfg.margin));
                }
            }
        }
        while boxes.len() < cfg.candidates_per_image {
            boxes.push(random_box(&mut rng, cfg.margin));
        }
        // Planted boxes are placed inside the margin band, so nothing is
        // dropped here; the filter keeps the construction honest.
        let boxes: Vec<Window> = boxes.into_iter().filter(|b| b.respects_margin(cfg.margin)).collect();
        let mut order: Vec<usize> = (0..boxes.len()).collect();
        order.shuffle(&mut rng);
        let windows: Vec<Window> = order.iter().map(|&k| boxes[k]).collect();
        let pos_of = |k: usize| order.iter().position(|&o| o == k).unwrap();

        let mut edges = Vec::new();
        for (k, b) in planted.iter().enumerate() {
            edges.extend(rectangle_contour(b, k, cfg.edge_segment, 4));
        }
        for c in 0..cfg.clutter_contours {
            edges.push(clutter(&mut rng, planted.len() + c, cfg.clutter_strength));
        }
        let mut next_id = planted.len() + cfg.clutter_contours;
        for b in &planted {
            let t = texture(&mut rng, b, cfg.texture_density, cfg.texture_strength, next_id);
            next_id += t.len();
            edges.extend(t);
        }

        let gen = ImageFeatures { cfg, stds: &stds, dirs: &dirs, planted: &planted, positive };
        let shared_stds = &stds[..cfg.shared_dims.min(d)];
        let cells = CellNoise::draw(&mut rng, cfg.grid, shared_stds);
        let flip_cells = if cfg.flips { Some(CellNoise::draw(&mut rng, cfg.grid, shared_stds)) } else { None };
        let image_bg = match (cfg.background, cfg.context) {
            (true, ContextMode::FullImage) => Some(store.push(&gen.background(&mut rng, &cells, None))?),
            _ => None,
        };
        let image_bg_flip = match (&flip_cells, image_bg) {
            (Some(fc), Some(_)) => Some(store.push(&gen.background(&mut rng, fc, None))?),
            _ => None,
        };

        let mut refs = Vec::with_capacity(windows.len());
        for w in &windows {
            let fg = store.push(&gen.foreground(&mut rng, &cells, w))?;
            let bg = match (cfg.background, image_bg) {
                (false, _) => None,
                (true, Some(b)) => Some(b),
                (true, None) => Some(store.push(&gen.background(&mut rng, &cells, Some(w)))?),
            };
            let (fg_flip, bg_flip) = match &flip_cells {
                None => (None, None),
                Some(fc) => {
                    // q is mirror-covariant, so the mirrored window in the
                    // mirrored image has the same overlap with the mirrored
                    // objects; only the noise differs.
                    let f = store.push(&gen.foreground(&mut rng, fc, w))?;
                    let b = match (cfg.background, image_bg_flip) {
                        (false, _) => None,
                        (true, Some(b)) => Some(b),
                        (true, None) => Some(store.push(&gen.background(&mut rng, fc, Some(w)))?),
                    };
                    (Some(f), b)
                }
            };
            refs.push(WindowFeatures { fg, bg, fg_flip, bg_flip });
        }

        if positive {
            truth.push(PlantedImage {
                id: ImageId(id.clone()),
                planted_boxes: planted.clone(),
                planted_indices: (1..=planted.len()).map(pos_of).collect(),
                initial_index: pos_of(0),
                quality: windows.iter().map(|w| max_iou(w, &planted)).collect(),
            });
        }
        let label = if positive { Label::Positive } else { Label::Negative };
        bags.push(Bag::new(ImageId(id), label, Supervision::Weak, windows, refs, planted, edges)?);
    }

    let dataset = Dataset::new(bags, store)?;
    Ok(SynthOutput { dataset, truth: PlantedTruth { config: cfg.clone(), images: truth } })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::iou;

    fn small() -> SynthConfig {
        SynthConfig { n_pos: 6, n_neg: 4, dim: 32, seed: 3, ..Default::default() }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.dataset.content_hash().unwrap(), b.dataset.content_hash().unwrap());
        let c = generate(&SynthConfig { seed: 4, ..small() }).unwrap();
        assert_ne!(a.dataset.content_hash().unwrap(), c.dataset.content_hash().unwrap());
    }

    #[test]
    fn planted_boxes_survive_and_are_recorded() {
        let out = generate(&small()).unwrap();
        for (i, t) in out.truth.images.iter().enumerate() {
            let bag = out.dataset.bag(i);
            assert_eq!(bag.windows.len(), 24);
            assert!(bag.windows.iter().all(|w| w.respects_margin(0.04)));
            for (b, &k) in t.planted_boxes.iter().zip(&t.planted_indices) {
                assert_eq!(bag.windows[k], *b);
            }
            assert_eq!(bag.windows[t.initial_index], initial_window(0.04).unwrap());
            assert!(t.quality.iter().any(|&q| q >= 0.5));
            for (w, &q) in bag.windows.iter().zip(&t.quality) {
                let recomputed = t.planted_boxes.iter().map(|b| iou(w, b)).fold(0.0, f64::max);
                assert_eq!(q, recomputed);
            }
        }
    }

    #[test]
    fn full_image_context_shares_background() {
        let out = generate(&SynthConfig { context: ContextMode::FullImage, ..small() }).unwrap();
        let bag = out.dataset.bag(0);
        assert!(bag.features.iter().all(|f| f.bg == bag.features[0].bg));
        let out = generate(&small()).unwrap();
        let bag = out.dataset.bag(0);
        assert_ne!(bag.features[0].bg, bag.features[1].bg);
    }

    #[test]
    fn flips_are_optional() {
        let out = generate(&SynthConfig { flips: true, ..small() }).unwrap();
        assert!(out.dataset.has_flips());
        assert!(!generate(&small()).unwrap().dataset.has_flips());
    }

    #[test]
    fn rejects_tiny_candidate_sets() {
        assert!(generate(&SynthConfig { candidates_per_image: 2, ..small() }).is_err());
        assert!(generate(&SynthConfig { dim: 1, ..small() }).is_err());
    }

    #[test]
    fn signal_follows_overlap() {
        let cfg = SynthConfig { noise_sigma: 0.0, context_signal: 0.0, ..small() };
        let out = generate(&cfg).unwrap();
        let t = &out.truth.images[0];
        let k = t.planted_indices[0];
        let row = out.dataset.fg_row(0, k);
        let norm = row.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        assert!((norm - cfg.signal_strength).abs() < 1e-6);
    }
}
