mod common;

use common::oracles::{random_svm_problem, subgradient_svm_objective};
use mfmil::dataset::WindowRef;
use mfmil::features::{ChannelMode, FeatureVector};
use mfmil::svm::{mine_hard_negatives, negative_candidates, objective, train, LinearModel, NegativeCache, TrainParams};
use mfmil::synth::{generate, SynthConfig};

fn fvs(rows: &[Vec<f64>]) -> Vec<FeatureVector> {
    rows.iter().map(|r| FeatureVector::new(r.clone()).unwrap()).collect()
}

#[test]
fn dual_solver_matches_subgradient_oracle() {
    for seed in 0..3 {
        let p = random_svm_problem(seed, 5, 100);
        let params = TrainParams { c: p.c, pos_weight: Some(1.0), tol: 1e-6, max_epochs: 100_000, seed };
        let (pos, neg) = (fvs(&p.pos), fvs(&p.neg));
        let out = train(&pos, &neg, &params).unwrap();
        let ours = objective(&out.model, &pos, &neg, &params);
        let oracle = subgradient_svm_objective(&p.pos, &p.neg, p.c, 1.0, 1_000_000);
        assert!((ours - oracle).abs() <= 1e-3 * oracle, "seed {seed}: {ours} vs {oracle}");
    }
}

#[test]
fn default_class_weight_follows_imbalance() {
    let p = TrainParams::default();
    assert_eq!(p.effective_pos_weight(10, 50), 5.0);
    assert_eq!(p.effective_pos_weight(50, 10), 1.0);
    assert_eq!(p.effective_pos_weight(1, 1000), 100.0);
}

fn small_dataset() -> mfmil::Dataset {
    generate(&SynthConfig { n_pos: 4, n_neg: 6, dim: 16, seed: 11, ..Default::default() }).unwrap().dataset
}

fn random_model(dim: usize, seed: u64) -> LinearModel {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    LinearModel { w: (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect(), b: rng.gen_range(-1.0..0.5) }
}

#[test]
fn mining_matches_exhaustive_sort() {
    let ds = small_dataset();
    let negs = ds.negative_ids();
    let model = random_model(ds.feature_dim(), 5);
    let mut all = Vec::new();
    for &i in &negs {
        for w in 0..ds.bag(i).windows.len() {
            let s = model.score(&ds.composed(i, w, ChannelMode::ForegroundOnly).unwrap());
            all.push((s, WindowRef { image: i, window: w }));
        }
    }
    all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let expected: Vec<WindowRef> = all.iter().filter(|(s, _)| *s > -1.0).take(15).map(|p| p.1).collect();

    let mut cache = NegativeCache::new();
    let added = mine_hard_negatives(&model, &ds, &mut cache, &negs, 15, ChannelMode::ForegroundOnly).unwrap();
    assert_eq!(added, expected.len());
    assert_eq!(cache.entries(), expected.as_slice());
}

#[test]
fn mining_edge_cases() {
    let ds = small_dataset();
    let negs = ds.negative_ids();
    let mode = ChannelMode::ForegroundOnly;

    let mut cache = NegativeCache::new();
    let added = mine_hard_negatives(&LinearModel::zeros(ds.feature_dim()), &ds, &mut cache, &negs, 7, mode).unwrap();
    assert_eq!(added, 7);

    let low = LinearModel { w: vec![0.0; ds.feature_dim()], b: -2.0 };
    let before = cache.clone();
    assert_eq!(mine_hard_negatives(&low, &ds, &mut cache, &negs, 100, mode).unwrap(), 0);
    assert_eq!(cache, before);

    let model = random_model(ds.feature_dim(), 9);
    let mut c = NegativeCache::new();
    mine_hard_negatives(&model, &ds, &mut c, &negs, usize::MAX, mode).unwrap();
    assert_eq!(mine_hard_negatives(&model, &ds, &mut c, &negs, usize::MAX, mode).unwrap(), 0);
}

#[test]
fn weak_positives_never_enter_the_cache() {
    let ds = small_dataset();
    let pos = ds.positive_ids();
    assert!(negative_candidates(&ds, pos[0]).is_err());
    let mut cache = NegativeCache::new();
    let model = LinearModel::zeros(ds.feature_dim());
    assert!(mine_hard_negatives(&model, &ds, &mut cache, &pos, 10, ChannelMode::ForegroundOnly).is_err());
    assert!(cache.is_empty());
}
