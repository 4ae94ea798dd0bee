//! Linear SVM trained by dual coordinate descent, plus hard-negative mining.
//!
//! The solver minimizes
//! `0.5 * (|w|^2 + b^2) + sum_i u_i * max(0, 1 - y_i (w.x_i + b))`
//! where `u_i = C * pos_weight` for positives and `C` for negatives. The bias
//! is learned as the weight of a constant feature of value 1, so it is
//! regularized together with `w`.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, WindowRef};
use crate::error::{Error, Result};
use crate::features::{ChannelMode, FeatureVector};
use crate::geometry::{max_iou, CORRECT_IOU};

/// Anything the solver can take a dot product with and accumulate into `w`.
pub trait Example {
    fn dim(&self) -> usize;
    fn dot(&self, w: &[f64]) -> f64;
    fn add_scaled(&self, a: f64, w: &mut [f64]);
    fn norm_sq(&self) -> f64;
}

impl Example for FeatureVector {
    fn dim(&self) -> usize {
        self.as_slice().len()
    }

    fn dot(&self, w: &[f64]) -> f64 {
        self.as_slice().iter().zip(w).map(|(a, b)| a * b).sum()
    }

    fn add_scaled(&self, a: f64, w: &mut [f64]) {
        for (wi, xi) in w.iter_mut().zip(self.as_slice()) {
            *wi += a * xi;
        }
    }

    fn norm_sq(&self) -> f64 {
        self.as_slice().iter().map(|v| v * v).sum()
    }
}

impl<E: Example + ?Sized> Example for &E {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn dot(&self, w: &[f64]) -> f64 {
        (**self).dot(w)
    }
    fn add_scaled(&self, a: f64, w: &mut [f64]) {
        (**self).add_scaled(a, w)
    }
    fn norm_sq(&self) -> f64 {
        (**self).norm_sq()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub w: Vec<f64>,
    pub b: f64,
}

impl LinearModel {
    pub fn zeros(dim: usize) -> Self {
        LinearModel { w: vec![0.0; dim], b: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    /// `w.x + b` without a dimension check.
    pub fn score<E: Example>(&self, x: &E) -> f64 {
        x.dot(&self.w) + self.b
    }

    pub fn score_checked<E: Example>(&self, x: &E) -> Result<f64> {
        if x.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.dim() });
        }
        Ok(self.score(x))
    }

    pub fn is_finite(&self) -> bool {
        self.b.is_finite() && self.w.iter().all(|v| v.is_finite())
    }
}

pub fn score(model: &LinearModel, v: &FeatureVector) -> Result<f64> {
    model.score_checked(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub c: f64,
    /// Positive class-weight multiplier; `None` picks `|neg| / |pos|`
    /// clamped to `[1, 100]`.
    pub pos_weight: Option<f64>,
    /// Relative duality gap at which training stops.
    pub tol: f64,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams { c: 1.0, pos_weight: None, tol: 1e-4, max_epochs: 1000, seed: 0 }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidParameter(format!("C must be positive, got {}", self.c)));
        }
        if let Some(pw) = self.pos_weight {
            if !(pw > 0.0 && pw.is_finite()) {
                return Err(Error::InvalidParameter(format!("pos_weight must be positive, got {pw}")));
            }
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }

    pub fn effective_pos_weight(&self, n_pos: usize, n_neg: usize) -> f64 {
        self.pos_weight
            .unwrap_or_else(|| (n_neg as f64 / n_pos.max(1) as f64).clamp(1.0, 100.0))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: LinearModel,
    /// Dual multipliers, positives first then negatives.
    pub alphas: Vec<f64>,
    /// Upper bounds `C * weight` matching `alphas`.
    pub bounds: Vec<f64>,
    pub epochs: usize,
    pub primal: f64,
    pub dual: f64,
    pub converged: bool,
}

impl TrainOutput {
    pub fn relative_gap(&self) -> f64 {
        (self.primal - self.dual) / self.primal.abs().max(1e-12)
    }
}

pub fn train<E: Example>(positives: &[E], negatives: &[E], params: &TrainParams) -> Result<TrainOutput> {
    train_warm(positives, negatives, params, None)
}

/// Primal objective of `model` on the given examples.
pub fn objective<E: Example>(model: &LinearModel, positives: &[E], negatives: &[E], params: &TrainParams) -> f64 {
    let pw = params.effective_pos_weight(positives.len(), negatives.len());
    let reg = 0.5 * (model.w.iter().map(|v| v * v).sum::<f64>() + model.b * model.b);
    let hinge = |x: &E, y: f64| (1.0 - y * model.score(x)).max(0.0);
    let lp: f64 = positives.iter().map(|x| hinge(x, 1.0)).sum();
    let ln: f64 = negatives.iter().map(|x| hinge(x, -1.0)).sum();
    reg + params.c * (pw * lp + ln)
}

/// Trains starting from the given multipliers (clipped to the box).
pub fn train_warm<E: Example>(
    positives: &[E],
    negatives: &[E],
    params: &TrainParams,
    init: Option<&[f64]>,
) -> Result<TrainOutput> {
    params.validate()?;
    if positives.is_empty() {
        return Err(Error::EmptyClass("positive"));
    }
    if negatives.is_empty() {
        return Err(Error::EmptyClass("negative"));
    }
    let dim = positives[0].dim();
    for x in positives.iter().chain(negatives) {
        if x.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: x.dim() });
        }
    }
    let n_pos = positives.len();
    let n = n_pos + negatives.len();
    let example = |i: usize| -> &E {
        if i < n_pos {
            &positives[i]
        } else {
            &negatives[i - n_pos]
        }
    };
    let y = |i: usize| if i < n_pos { 1.0 } else { -1.0 };
    let pw = params.effective_pos_weight(n_pos, negatives.len());
    let bounds: Vec<f64> = (0..n).map(|i| if i < n_pos { params.c * pw } else { params.c }).collect();

    let mut qd = Vec::with_capacity(n);
    for i in 0..n {
        let q = example(i).norm_sq() + 1.0;
        if !q.is_finite() {
            return Err(Error::NonFinite("training features"));
        }
        qd.push(q);
    }

    let mut alpha = vec![0.0; n];
    if let Some(init) = init {
        for (i, a) in alpha.iter_mut().enumerate() {
            *a = init.get(i).copied().unwrap_or(0.0).clamp(0.0, bounds[i]);
        }
    }
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    for i in 0..n {
        if alpha[i] > 0.0 {
            example(i).add_scaled(alpha[i] * y(i), &mut w);
            b += alpha[i] * y(i);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut index: Vec<usize> = (0..n).collect();
    let mut active = n;
    let mut pg_max_old = f64::INFINITY;
    let mut pg_min_old = f64::NEG_INFINITY;
    let mut eps = 0.1;
    let mut epochs = 0;
    let mut converged = false;
    let mut last_gap = None;

    while epochs < params.max_epochs {
        epochs += 1;
        index[..active].shuffle(&mut rng);
        let mut pg_max_new = f64::NEG_INFINITY;
        let mut pg_min_new = f64::INFINITY;
        let mut s = 0;
        while s < active {
            let i = index[s];
            let x = example(i);
            let yi = y(i);
            let g = yi * (x.dot(&w) + b) - 1.0;
            let mut pg = 0.0;
            if alpha[i] == 0.0 {
                if g > pg_max_old {
                    active -= 1;
                    index.swap(s, active);
                    continue;
                } else if g < 0.0 {
                    pg = g;
                }
            } else if alpha[i] == bounds[i] {
                if g < pg_min_old {
                    active -= 1;
                    index.swap(s, active);
                    continue;
                } else if g > 0.0 {
                    pg = g;
                }
            } else {
                pg = g;
            }
            pg_max_new = pg_max_new.max(pg);
            pg_min_new = pg_min_new.min(pg);
            if pg.abs() > 1e-12 {
                let old = alpha[i];
                alpha[i] = (old - g / qd[i]).clamp(0.0, bounds[i]);
                let d = (alpha[i] - old) * yi;
                if d != 0.0 {
                    x.add_scaled(d, &mut w);
                    b += d;
                }
            }
            s += 1;
        }
        if !b.is_finite() {
            return Err(Error::NonFinite("svm weights"));
        }

        if pg_max_new - pg_min_new <= eps {
            if active == n {
                let (p, d) = primal_dual(&w, b, &alpha, &bounds, n, &example, &y);
                last_gap = Some((p, d));
                if (p - d) <= params.tol * p.abs().max(1e-12) {
                    converged = true;
                    break;
                }
                eps = (eps * 0.1).max(1e-12);
            }
            active = n;
            pg_max_old = f64::INFINITY;
            pg_min_old = f64::NEG_INFINITY;
            continue;
        }
        pg_max_old = if pg_max_new <= 0.0 { f64::INFINITY } else { pg_max_new };
        pg_min_old = if pg_min_new >= 0.0 { f64::NEG_INFINITY } else { pg_min_new };
    }

    let (primal, dual) = match last_gap {
        Some(pd) if converged => pd,
        _ => primal_dual(&w, b, &alpha, &bounds, n, &example, &y),
    };
    if !primal.is_finite() || w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("svm weights"));
    }
    Ok(TrainOutput { model: LinearModel { w, b }, alphas: alpha, bounds, epochs, primal, dual, converged })
}

fn primal_dual<'a, E: Example + 'a>(
    w: &[f64],
    b: f64,
    alpha: &[f64],
    bounds: &[f64],
    n: usize,
    example: &impl Fn(usize) -> &'a E,
    y: &impl Fn(usize) -> f64,
) -> (f64, f64) {
    let wsq = w.iter().map(|v| v * v).sum::<f64>() + b * b;
    let mut loss = 0.0;
    for i in 0..n {
        let m = y(i) * (example(i).dot(w) + b);
        loss += bounds[i] * (1.0 - m).max(0.0);
    }
    let primal = 0.5 * wsq + loss;
    let dual = alpha.iter().sum::<f64>() - 0.5 * wsq;
    (primal, dual)
}

/// Negative training windows accumulated across mining rounds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NegativeCache {
    entries: Vec<WindowRef>,
    members: HashSet<WindowRef>,
}

impl NegativeCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts `r`, returning false if it was already present.
    pub fn insert(&mut self, r: WindowRef) -> bool {
        if self.members.insert(r) {
            self.entries.push(r);
            true
        } else {
            false
        }
    }

    pub fn contains(&self, r: &WindowRef) -> bool {
        self.members.contains(r)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in insertion order.
    pub fn entries(&self) -> &[WindowRef] {
        &self.entries
    }
}

/// Windows of `image` eligible as negatives: all of them for negative
/// images, those overlapping no ground-truth box by 50% for fully
/// supervised positives.
pub fn negative_candidates(dataset: &Dataset, image: usize) -> Result<Vec<usize>> {
    let bag = dataset.bag(image);
    if bag.is_negative() {
        return Ok((0..bag.windows.len()).collect());
    }
    match dataset.supervised_gt(image) {
        Some(gts) => Ok(bag
            .windows
            .iter()
            .enumerate()
            .filter(|(_, w)| max_iou(w, gts) < CORRECT_IOU)
            .map(|(i, _)| i)
            .collect()),
        None => Err(Error::PositiveInCache(bag.id.to_string())),
    }
}

/// Adds the highest-scoring margin violators (`score > -1`) of the source
/// images to `cache`, at most `max_new` of them. Returns how many were added.
pub fn mine_hard_negatives(
    model: &LinearModel,
    dataset: &Dataset,
    cache: &mut NegativeCache,
    source_ids: &[usize],
    max_new: usize,
    mode: ChannelMode,
) -> Result<usize> {
    let mut violators: Vec<(f64, WindowRef)> = Vec::new();
    for &image in source_ids {
        for window in negative_candidates(dataset, image)? {
            let r = WindowRef { image, window };
            if cache.contains(&r) {
                continue;
            }
            let s = model.score_checked(&dataset.composed(image, window, mode)?)?;
            if !s.is_finite() {
                return Err(Error::NonFinite("window score"));
            }
            if s > -1.0 {
                violators.push((s, r));
            }
        }
    }
    violators.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut added = 0;
    for (_, r) in violators.into_iter().take(max_new) {
        if cache.insert(r) {
            added += 1;
        }
    }
    Ok(added)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector::new(v.to_vec()).unwrap()
    }

    fn tight() -> TrainParams {
        TrainParams { tol: 1e-8, max_epochs: 100_000, ..Default::default() }
    }

    #[test]
    fn separable_toy_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pos: Vec<_> = (0..20).map(|_| fv(&[rng.gen_range(1.0..3.0), rng.gen_range(-1.0..1.0)])).collect();
        let neg: Vec<_> = (0..20).map(|_| fv(&[rng.gen_range(-3.0..-1.0), rng.gen_range(-1.0..1.0)])).collect();
        let out = train(&pos, &neg, &TrainParams { c: 1.0, ..tight() }).unwrap();
        assert!(out.converged);
        for x in &pos {
            assert!(out.model.score(x) >= 1.0 - 1e-3);
        }
        for x in &neg {
            assert!(out.model.score(x) <= -1.0 + 1e-3);
        }
    }

    #[test]
    fn symmetric_pair() {
        let pos = [fv(&[1.0, 0.0])];
        let neg = [fv(&[-1.0, 0.0])];
        let out = train(&pos, &neg, &TrainParams { c: 10.0, pos_weight: Some(1.0), ..tight() }).unwrap();
        assert!(out.model.w[1].abs() < 1e-9);
        assert!(out.model.w[0] > 0.0);
        assert!(out.model.b.abs() < 1e-6);
        let sp = out.model.score(&pos[0]);
        let sn = out.model.score(&neg[0]);
        assert!((sp + sn).abs() < 1e-6);
    }

    #[test]
    fn multipliers_stay_in_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pos: Vec<_> = (0..30).map(|_| fv(&(0..5).map(|_| rng.gen_range(-1.0..1.5)).collect::<Vec<_>>())).collect();
        let neg: Vec<_> = (0..60).map(|_| fv(&(0..5).map(|_| rng.gen_range(-1.5..1.0)).collect::<Vec<_>>())).collect();
        let params = TrainParams { c: 0.7, ..Default::default() };
        let out = train(&pos, &neg, &params).unwrap();
        let pw = params.effective_pos_weight(30, 60);
        assert_eq!(pw, 2.0);
        for (i, a) in out.alphas.iter().enumerate() {
            let ub = if i < 30 { 0.7 * pw } else { 0.7 };
            assert!(*a >= 0.0 && *a <= ub + 1e-15);
        }
        assert!(out.relative_gap() <= params.tol);
    }

    #[test]
    fn deterministic_given_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pos: Vec<_> = (0..25).map(|_| fv(&(0..4).map(|_| rng.gen_range(-1.0..2.0)).collect::<Vec<_>>())).collect();
        let neg: Vec<_> = (0..25).map(|_| fv(&(0..4).map(|_| rng.gen_range(-2.0..1.0)).collect::<Vec<_>>())).collect();
        let p = TrainParams { seed: 17, ..Default::default() };
        let a = train(&pos, &neg, &p).unwrap();
        let b = train(&pos, &neg, &p).unwrap();
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn warm_start_reaches_same_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pos: Vec<_> = (0..40).map(|_| fv(&(0..6).map(|_| rng.gen_range(-1.0..2.0)).collect::<Vec<_>>())).collect();
        let neg: Vec<_> = (0..40).map(|_| fv(&(0..6).map(|_| rng.gen_range(-2.0..1.0)).collect::<Vec<_>>())).collect();
        let p = tight();
        let cold = train(&pos, &neg, &p).unwrap();
        let warm = train_warm(&pos, &neg, &p, Some(&cold.alphas)).unwrap();
        assert!(warm.epochs <= 2);
        let oc = objective(&cold.model, &pos, &neg, &p);
        let ow = objective(&warm.model, &pos, &neg, &p);
        assert!((oc - ow).abs() <= 1e-7 * oc);
    }

    #[test]
    fn homogeneity_under_feature_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let raw_pos: Vec<Vec<f64>> = (0..30).map(|_| (0..3).map(|_| rng.gen_range(-1.0..2.0)).collect()).collect();
        let raw_neg: Vec<Vec<f64>> = (0..30).map(|_| (0..3).map(|_| rng.gen_range(-2.0..1.0)).collect()).collect();
        // Exclude the bias so the objective is exactly homogeneous.
        let k = 3.0;
        let scaled = |v: &Vec<f64>| fv(&v.iter().map(|x| x * k).collect::<Vec<_>>());
        let pos: Vec<_> = raw_pos.iter().map(|v| fv(v)).collect();
        let neg: Vec<_> = raw_neg.iter().map(|v| fv(v)).collect();
        let pos_k: Vec<_> = raw_pos.iter().map(scaled).collect();
        let neg_k: Vec<_> = raw_neg.iter().map(scaled).collect();
        let a = train(&pos, &neg, &TrainParams { c: 1.0, ..tight() }).unwrap();
        let b = train(&pos_k, &neg_k, &TrainParams { c: 1.0 / (k * k), ..tight() }).unwrap();
        let na = a.model.w.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = b.model.w.iter().map(|v| v * v).sum::<f64>().sqrt();
        let cos: f64 = a.model.w.iter().zip(&b.model.w).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
        // The regularized bias breaks exact homogeneity; directions still agree closely.
        assert!(cos > 0.98, "cos = {cos}");
    }

    #[test]
    fn mirrored_data_gives_zero_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pos: Vec<_> = (0..30).map(|_| fv(&(0..4).map(|_| rng.gen_range(-0.5..2.0)).collect::<Vec<_>>())).collect();
        let neg: Vec<_> = pos.iter().map(|p| fv(&p.as_slice().iter().map(|v| -v).collect::<Vec<_>>())).collect();
        let params = TrainParams { pos_weight: Some(1.0), ..tight() };
        let out = train(&pos, &neg, &params).unwrap();
        assert!(out.model.b.abs() < 1e-4);
    }

    #[test]
    fn error_paths() {
        let pos = [fv(&[1.0, 0.0])];
        let empty: [FeatureVector; 0] = [];
        assert!(matches!(train(&pos, &empty, &TrainParams::default()), Err(Error::EmptyClass(_))));
        assert!(matches!(train(&empty, &pos, &TrainParams::default()), Err(Error::EmptyClass(_))));
        let neg = [fv(&[1.0, 0.0, 2.0])];
        assert!(matches!(train(&pos, &neg, &TrainParams::default()), Err(Error::DimensionMismatch { .. })));
        let bad = TrainParams { c: 0.0, ..Default::default() };
        assert!(train(&pos, &[fv(&[0.0, 1.0])], &bad).is_err());
    }

    #[test]
    fn nan_features_rejected() {
        struct Raw(Vec<f64>);
        impl Example for Raw {
            fn dim(&self) -> usize {
                self.0.len()
            }
            fn dot(&self, w: &[f64]) -> f64 {
                self.0.iter().zip(w).map(|(a, b)| a * b).sum()
            }
            fn add_scaled(&self, a: f64, w: &mut [f64]) {
                for (wi, xi) in w.iter_mut().zip(&self.0) {
                    *wi += a * xi;
                }
            }
            fn norm_sq(&self) -> f64 {
                self.0.iter().map(|v| v * v).sum()
            }
        }
        let pos = [Raw(vec![f64::NAN, 1.0])];
        let neg = [Raw(vec![0.0, 1.0])];
        assert!(matches!(train(&pos, &neg, &TrainParams::default()), Err(Error::NonFinite(_))));
    }

    #[test]
    fn score_examples() {
        let zero = LinearModel::zeros(3);
        assert_eq!(score(&zero, &fv(&[1.0, -2.0, 5.0])).unwrap(), 0.0);
        let m = LinearModel { w: vec![1.0, 2.0], b: 0.5 };
        assert_eq!(score(&m, &fv(&[3.0, -1.0])).unwrap(), 1.5);
        assert!(score(&m, &fv(&[3.0])).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(30);
        for _ in 0..20 {
            let w: Vec<f64> = (0..257).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x: Vec<f64> = (0..257).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let m = LinearModel { w: w.clone(), b: 0.25 };
            let mut rev = 0.25;
            for i in (0..257).rev() {
                rev += w[i] * x[i];
            }
            assert!((score(&m, &fv(&x)).unwrap() - rev).abs() < 1e-9);
        }
    }
}
