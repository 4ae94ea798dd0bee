//! Standard MIL, multi-fold MIL and mixed-supervision training loops.
//!
//! All loops share one engine. Iteration 0 selects the near-full-image
//! window in every positive and seeds the negative cache with the same
//! window of every negative. The negative cache only grows.

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{best_match, Dataset, Supervision, WindowRef};
use crate::error::{Error, Result};
use crate::eval::{corloc, summarize_groups, score_group, GroundTruth, Selections};
use crate::features::{ChannelMode, ComposedRef};
use crate::geometry::CORRECT_IOU;
use crate::svm::{mine_hard_negatives, train_warm, LinearModel, NegativeCache, TrainParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MilConfig {
    /// 1 means standard MIL.
    pub k_folds: usize,
    pub iterations: usize,
    pub margin: f64,
    pub channel_mode: ChannelMode,
    pub train_params: TrainParams,
    pub mining_rounds: usize,
    pub mining_max_new: usize,
    pub seed: u64,
}

impl Default for MilConfig {
    fn default() -> Self {
        MilConfig {
            k_folds: 10,
            iterations: 10,
            margin: 0.04,
            channel_mode: ChannelMode::ForegroundOnly,
            train_params: TrainParams::default(),
            mining_rounds: 2,
            mining_max_new: 2000,
            seed: 0,
        }
    }
}

impl MilConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_folds == 0 {
            return Err(Error::InvalidParameter("k_folds must be at least 1".into()));
        }
        crate::geometry::initial_window(self.margin)?;
        self.train_params.validate()
    }
}

/// Splits `ids` into `k` disjoint folds whose sizes differ by at most one.
/// Members of each fold keep their input order.
pub fn partition_folds<T: Clone>(ids: &[T], k: usize, seed: u64) -> Result<Vec<Vec<T>>> {
    if k == 0 || k > ids.len() {
        return Err(Error::TooManyFolds { folds: k, items: ids.len() });
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![0; ids.len()];
    for (rank, &i) in order.iter().enumerate() {
        assignment[i] = rank % k;
    }
    let mut folds = vec![Vec::new(); k];
    for (i, id) in ids.iter().enumerate() {
        folds[assignment[i]].push(id.clone());
    }
    Ok(folds)
}

/// Seed of the fold partition at iteration `t`.
pub fn fold_seed(seed: u64, t: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(t as u64);
    rand::Rng::gen(&mut rng)
}

/// Index of the best-scoring window; the lowest index wins ties.
pub fn relocalize_scores(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

pub fn window_scores(model: &LinearModel, dataset: &Dataset, image: usize, mode: ChannelMode) -> Result<Vec<f64>> {
    let n = dataset.bag(image).windows.len();
    let mut out = Vec::with_capacity(n);
    for w in 0..n {
        let s = model.score_checked(&dataset.composed(image, w, mode)?)?;
        if !s.is_finite() {
            return Err(Error::NonFinite("window score"));
        }
        out.push(s);
    }
    Ok(out)
}

pub fn relocalize(model: &LinearModel, dataset: &Dataset, image: usize, mode: ChannelMode) -> Result<usize> {
    if !dataset.bag(image).is_positive() {
        return Err(Error::InvalidParameter(format!("image {} is not positive", dataset.bag(image).id)));
    }
    Ok(relocalize_scores(&window_scores(model, dataset, image, mode)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Selected window per entry of [`RunTrajectory::positives`].
    pub selections: Vec<usize>,
    /// Filled in after training by [`annotate_corloc`].
    pub corloc: Option<f64>,
    /// Scores of the selected, overlapping and remaining windows under the
    /// iteration's final detector.
    pub groups: [GroupSummary; 3],
    pub cache_size: usize,
}

/// One re-localization step: which positives trained the detector and which
/// it was applied to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub iteration: usize,
    pub fold: usize,
    pub trained_on: Vec<usize>,
    pub relocalized: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrajectory {
    /// Positive image indices, in the order used by the selection vectors.
    pub positives: Vec<usize>,
    /// Subset of `positives` trained on their ground truth.
    pub supervised: Vec<usize>,
    pub iterations: Vec<IterationRecord>,
    pub model: LinearModel,
    pub audit: Vec<AuditEntry>,
    /// Re-localization scores of every window of each weak positive in the
    /// last iteration, from the detector that made the selection.
    pub final_scores: Vec<(usize, Vec<f64>)>,
}

impl RunTrajectory {
    pub fn final_selections(&self) -> &[usize] {
        &self.iterations.last().expect("trajectory always holds iteration 0").selections
    }

    /// Fraction of positives whose selection at iteration `to` equals the
    /// one at iteration `from`.
    pub fn unchanged_fraction(&self, from: usize, to: usize) -> f64 {
        let (a, b) = (&self.iterations[from].selections, &self.iterations[to].selections);
        let same = a.iter().zip(b).filter(|(x, y)| x == y).count();
        same as f64 / a.len().max(1) as f64
    }

    pub fn corloc_trajectory(&self) -> Vec<f64> {
        self.iterations.iter().filter_map(|r| r.corloc).collect()
    }

    /// Audit entries in which a detector was trained on an image it re-localized.
    pub fn audit_violations(&self) -> usize {
        self.audit
            .iter()
            .filter(|e| {
                let trained: BTreeSet<_> = e.trained_on.iter().collect();
                e.relocalized.iter().any(|i| trained.contains(i))
            })
            .count()
    }

    /// Selections of iteration `t` keyed by image id, for evaluation.
    pub fn selections_at(&self, dataset: &Dataset, t: usize) -> Selections {
        self.positives
            .iter()
            .zip(&self.iterations[t].selections)
            .map(|(&i, &w)| (dataset.bag(i).id.clone(), dataset.bag(i).windows[w]))
            .collect()
    }
}

/// Ground truth of all positives, read through the counted accessor.
pub fn ground_truth(dataset: &Dataset) -> GroundTruth {
    dataset
        .positive_ids()
        .into_iter()
        .map(|i| (dataset.bag(i).id.clone(), dataset.gt_boxes(i).to_vec()))
        .collect()
}

/// Fills in per-iteration CorLoc. Runs strictly after training.
pub fn annotate_corloc(traj: &mut RunTrajectory, dataset: &Dataset) -> Result<()> {
    let gts = ground_truth(dataset);
    for t in 0..traj.iterations.len() {
        let c = corloc(&traj.selections_at(dataset, t), &gts)?;
        traj.iterations[t].corloc = Some(c);
    }
    Ok(())
}

/// Identity of a training example, for carrying dual variables across
/// retrainings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum ExampleKey {
    Pos(WindowRef),
    Neg(WindowRef),
}

struct Engine<'a> {
    data: &'a Dataset,
    cfg: &'a MilConfig,
    cache: NegativeCache,
    /// Fixed positives of fully supervised images.
    fixed: Vec<WindowRef>,
    /// Images whose negative windows also feed the miner.
    mining_sources: Vec<usize>,
    alphas: HashMap<ExampleKey, f64>,
}

impl<'a> Engine<'a> {
    fn new(data: &'a Dataset, cfg: &'a MilConfig, supervised: &[usize]) -> Result<Self> {
        let mut cache = NegativeCache::new();
        let negatives = data.negative_ids();
        for &i in &negatives {
            cache.insert(WindowRef { image: i, window: data.initial_window_index(i, cfg.margin)? });
        }
        let mut fixed = Vec::new();
        for &i in supervised {
            let gts = data.supervised_gt(i).ok_or_else(|| Error::InvalidParameter(format!("image {} is not supervised", data.bag(i).id)))?;
            let windows = &data.bag(i).windows;
            let mut picked = BTreeSet::new();
            for g in gts {
                if let Some(w) = best_match(windows, g) {
                    picked.insert(w);
                }
            }
            fixed.extend(picked.into_iter().map(|w| WindowRef { image: i, window: w }));
        }
        let mut mining_sources = negatives;
        mining_sources.extend_from_slice(supervised);
        Ok(Engine { data, cfg, cache, fixed, mining_sources, alphas: HashMap::new() })
    }

    fn view(&self, r: &WindowRef) -> Result<ComposedRef<'a>> {
        self.data.composed(r.image, r.window, self.cfg.channel_mode)
    }

    fn warm_start(&self, pos: &[WindowRef]) -> Vec<f64> {
        let pos = pos.iter().map(|r| ExampleKey::Pos(*r));
        let neg = self.cache.entries().iter().map(|r| ExampleKey::Neg(*r));
        pos.chain(neg).map(|k| self.alphas.get(&k).copied().unwrap_or(0.0)).collect()
    }

    /// Trains on `pos` plus the cache without touching the stored duals.
    fn fit(&self, pos: &[WindowRef]) -> Result<(LinearModel, Vec<f64>)> {
        let p = pos.iter().map(|r| self.view(r)).collect::<Result<Vec<_>>>()?;
        let n = self.cache.entries().iter().map(|r| self.view(r)).collect::<Result<Vec<_>>>()?;
        let out = train_warm(&p, &n, &self.cfg.train_params, Some(&self.warm_start(pos)))?;
        Ok((out.model, out.alphas))
    }

    /// Trains and remembers the duals for the next warm start.
    fn fit_and_keep(&mut self, pos: &[WindowRef]) -> Result<LinearModel> {
        let (model, alphas) = self.fit(pos)?;
        let keys = pos.iter().map(|r| ExampleKey::Pos(*r)).chain(self.cache.entries().iter().map(|r| ExampleKey::Neg(*r)));
        self.alphas = keys.zip(alphas).filter(|(_, a)| *a > 0.0).collect();
        Ok(model)
    }

    /// Training set of weak selections followed by the fixed positives.
    fn positives(&self, weak: &[(usize, usize)]) -> Vec<WindowRef> {
        let mut v: Vec<WindowRef> = weak.iter().map(|&(image, window)| WindowRef { image, window }).collect();
        v.extend_from_slice(&self.fixed);
        v
    }

    fn mine(&mut self, model: &LinearModel) -> Result<usize> {
        mine_hard_negatives(model, self.data, &mut self.cache, &self.mining_sources, self.cfg.mining_max_new, self.cfg.channel_mode)
    }

    /// Trains on `pos`, then alternates mining and retraining.
    fn train_with_mining(&mut self, pos: &[WindowRef]) -> Result<LinearModel> {
        let mut model = self.fit_and_keep(pos)?;
        for _ in 0..self.cfg.mining_rounds {
            self.mine(&model)?;
            model = self.fit_and_keep(pos)?;
        }
        Ok(model)
    }

    fn groups(&self, model: &LinearModel, selections: &[(usize, usize)]) -> Result<[GroupSummary; 3]> {
        let mut groups: [Vec<f64>; 3] = Default::default();
        for &(image, sel) in selections {
            let windows = &self.data.bag(image).windows;
            let scores = window_scores(model, self.data, image, self.cfg.channel_mode)?;
            for (w, s) in scores.into_iter().enumerate() {
                groups[score_group(windows, sel, w)].push(s);
            }
        }
        let g = summarize_groups(&groups, 1);
        let cut = |s: &crate::eval::GroupStats| GroupSummary { count: s.count, mean: s.mean, std: s.std };
        Ok([cut(&g.selected), cut(&g.overlapping), cut(&g.rest)])
    }
}

fn check_dataset(data: &Dataset) -> Result<()> {
    if data.positive_ids().is_empty() {
        return Err(Error::MissingBags("positive"));
    }
    if data.negative_ids().is_empty() {
        return Err(Error::MissingBags("negative"));
    }
    Ok(())
}

fn record(
    engine: &Engine<'_>,
    t: usize,
    model: &LinearModel,
    positives: &[usize],
    sel: &HashMap<usize, usize>,
) -> Result<IterationRecord> {
    let pairs: Vec<(usize, usize)> = positives.iter().map(|i| (*i, sel[i])).collect();
    Ok(IterationRecord {
        iteration: t,
        selections: pairs.iter().map(|p| p.1).collect(),
        corloc: None,
        groups: engine.groups(model, &pairs)?,
        cache_size: engine.cache.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Relocalizer {
    /// The detector trained on all current selections.
    SelfTrained,
    /// One detector per fold, trained without that fold's images.
    HeldOut(usize),
}

fn run(data: &Dataset, cfg: &MilConfig, how: Relocalizer, supervised: &[usize]) -> Result<RunTrajectory> {
    cfg.validate()?;
    check_dataset(data)?;
    let gt_reads = data.gt_read_count();
    let positives = data.positive_ids();
    let sup: BTreeSet<usize> = supervised.iter().copied().collect();
    let weak: Vec<usize> = positives.iter().copied().filter(|i| !sup.contains(i)).collect();
    if let Relocalizer::HeldOut(k) = how {
        if !weak.is_empty() && (k == 0 || k > weak.len()) {
            return Err(Error::TooManyFolds { folds: k, items: weak.len() });
        }
    }
    let mut engine = Engine::new(data, cfg, supervised)?;

    let mut sel: HashMap<usize, usize> = HashMap::new();
    for &i in &positives {
        let w = if sup.contains(&i) {
            engine.fixed.iter().find(|r| r.image == i).map(|r| r.window).unwrap_or(0)
        } else {
            data.initial_window_index(i, cfg.margin)?
        };
        sel.insert(i, w);
    }
    let weak_pairs = |sel: &HashMap<usize, usize>| weak.iter().map(|i| (*i, sel[i])).collect::<Vec<_>>();

    let mut model = engine.fit_and_keep(&engine.positives(&weak_pairs(&sel)))?;
    let mut iterations = vec![record(&engine, 0, &model, &positives, &sel)?];
    let mut audit = Vec::new();
    let mut final_scores = Vec::new();

    for t in 1..=cfg.iterations {
        let mut scores: Vec<(usize, Vec<f64>)> = Vec::with_capacity(weak.len());
        match how {
            Relocalizer::SelfTrained => {
                for &i in &weak {
                    scores.push((i, window_scores(&model, data, i, cfg.channel_mode)?));
                }
                audit.push(AuditEntry { iteration: t, fold: 0, trained_on: weak.clone(), relocalized: weak.clone() });
            }
            Relocalizer::HeldOut(_) if weak.is_empty() => {}
            Relocalizer::HeldOut(k) => {
                let folds = partition_folds(&weak, k, fold_seed(cfg.seed, t))?;
                let engine = &engine;
                let sel = &sel;
                let results: Vec<Result<(Vec<usize>, Vec<(usize, Vec<f64>)>)>> = folds
                    .par_iter()
                    .map(|fold| {
                        let held: BTreeSet<usize> = fold.iter().copied().collect();
                        let trained_on: Vec<usize> = weak.iter().copied().filter(|i| !held.contains(i)).collect();
                        let train_pairs: Vec<(usize, usize)> = trained_on.iter().map(|i| (*i, sel[i])).collect();
                        let (m, _) = engine.fit(&engine.positives(&train_pairs))?;
                        let s = fold
                            .iter()
                            .map(|&i| Ok((i, window_scores(&m, data, i, cfg.channel_mode)?)))
                            .collect::<Result<Vec<_>>>()?;
                        Ok((trained_on, s))
                    })
                    .collect();
                for (fold, (r, members)) in results.into_iter().zip(&folds).enumerate() {
                    let (trained_on, s) = r?;
                    audit.push(AuditEntry { iteration: t, fold, trained_on, relocalized: members.clone() });
                    scores.extend(s);
                }
                scores.sort_by_key(|(i, _)| *i);
            }
        }
        for (i, s) in &scores {
            sel.insert(*i, relocalize_scores(s));
        }
        model = engine.train_with_mining(&engine.positives(&weak_pairs(&sel)))?;
        iterations.push(record(&engine, t, &model, &positives, &sel)?);
        final_scores = scores;
    }

    let leaked = data.gt_read_count() - gt_reads;
    if leaked != 0 {
        return Err(Error::GroundTruthLeak(leaked));
    }
    Ok(RunTrajectory { positives, supervised: sup.into_iter().collect(), iterations, model, audit, final_scores })
}

/// Standard MIL: every positive is re-localized by the detector trained on
/// all current selections.
pub fn run_standard_mil(data: &Dataset, cfg: &MilConfig) -> Result<RunTrajectory> {
    run(data, cfg, Relocalizer::SelfTrained, &[])
}

pub fn run_multifold_mil(data: &Dataset, cfg: &MilConfig) -> Result<RunTrajectory> {
    if cfg.k_folds < 2 {
        return Err(Error::InvalidParameter(format!("multi-fold training needs k >= 2, got {}", cfg.k_folds)));
    }
    run(data, cfg, Relocalizer::HeldOut(cfg.k_folds), &[])
}

/// Number of positives marked supervised for `fraction`; any positive
/// fraction yields at least one image.
pub fn supervised_count(n_pos: usize, fraction: f64) -> usize {
    if fraction <= 0.0 {
        return 0;
    }
    ((fraction * n_pos as f64).round() as usize).clamp(1, n_pos)
}

/// Positive images chosen for full supervision.
pub fn sample_supervised(data: &Dataset, fraction: f64, sup_seed: u64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidParameter(format!("supervised fraction {fraction} outside [0, 1]")));
    }
    let mut pos = data.positive_ids();
    let n = supervised_count(pos.len(), fraction);
    pos.shuffle(&mut ChaCha8Rng::seed_from_u64(sup_seed));
    let mut chosen = pos[..n].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Copy of `data` with `images` flagged fully supervised.
pub fn supervise(data: &Dataset, images: &[usize]) -> Result<Dataset> {
    let flags: Vec<_> = images.iter().map(|&i| (i, Supervision::Full)).collect();
    // Flagging copies the ground truth into the training-visible slot; it is
    // not a training-time read.
    data.with_supervision(&flags)
}

/// Multi-fold MIL where a fraction of the positives is trained on its
/// ground truth. With fewer weak positives than folds the fold count shrinks
/// to the number of weak positives.
pub fn run_mixed(data: &Dataset, cfg: &MilConfig, supervised_fraction: f64, sup_seed: u64) -> Result<RunTrajectory> {
    let chosen = sample_supervised(data, supervised_fraction, sup_seed)?;
    if chosen.is_empty() {
        return run_multifold_mil(data, cfg);
    }
    let mixed = supervise(data, &chosen)?;
    let n_weak = mixed.positive_ids().len() - chosen.len();
    let k = cfg.k_folds.min(n_weak).max(1);
    run(&mixed, cfg, Relocalizer::HeldOut(k), &chosen)
}

/// Detector trained directly on the supervised windows of every positive,
/// mined on negatives and on the supervised positives' non-object windows.
/// Selections are the supervised windows throughout.
pub fn run_fully_supervised(data: &Dataset, cfg: &MilConfig) -> Result<RunTrajectory> {
    cfg.validate()?;
    check_dataset(data)?;
    let positives = data.positive_ids();
    let mut engine = Engine::new(data, cfg, &positives)?;
    let pos = engine.fixed.clone();
    let sel: HashMap<usize, usize> = positives
        .iter()
        .map(|&i| (i, pos.iter().find(|r| r.image == i).map(|r| r.window).unwrap_or(0)))
        .collect();
    let mut model = engine.fit_and_keep(&pos)?;
    let mut iterations = vec![record(&engine, 0, &model, &positives, &sel)?];
    for t in 1..=cfg.iterations {
        model = engine.train_with_mining(&pos)?;
        iterations.push(record(&engine, t, &model, &positives, &sel)?);
    }
    Ok(RunTrajectory { positives: positives.clone(), supervised: positives, iterations, model, audit: Vec::new(), final_scores: Vec::new() })
}

/// Retrains a detector on explicit positive windows (for instance refined
/// selections mapped back to candidates), optionally adding their mirrored
/// descriptors, with the standard mining schedule on the negatives.
pub fn retrain_on_windows(data: &Dataset, cfg: &MilConfig, windows: &[WindowRef], use_flips: bool) -> Result<LinearModel> {
    cfg.validate()?;
    check_dataset(data)?;
    let engine = Engine::new(data, cfg, &[])?;
    let mode = cfg.channel_mode;
    let mut pos = Vec::new();
    for r in windows {
        pos.push(data.composed(r.image, r.window, mode)?);
        if use_flips {
            if let Some(f) = data.composed_flip(r.image, r.window, mode)? {
                pos.push(f);
            }
        }
    }
    let mut cache = engine.cache;
    let negatives = data.negative_ids();
    let fit = |cache: &NegativeCache| -> Result<LinearModel> {
        let n = cache.entries().iter().map(|r| data.composed(r.image, r.window, mode)).collect::<Result<Vec<_>>>()?;
        Ok(train_warm(&pos, &n, &cfg.train_params, None)?.model)
    };
    let mut model = fit(&cache)?;
    for _ in 0..cfg.mining_rounds {
        mine_hard_negatives(&model, data, &mut cache, &negatives, cfg.mining_max_new, mode)?;
        model = fit(&cache)?;
    }
    Ok(model)
}

/// IoU threshold separating object windows from mining candidates in
/// supervised positives.
pub const SUPERVISED_NEGATIVE_IOU: f64 = CORRECT_IOU;
