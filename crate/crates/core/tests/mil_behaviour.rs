use std::collections::BTreeSet;

use mfmil::features::ChannelMode;
use mfmil::mil::*;
use mfmil::svm::LinearModel;
use mfmil::synth::{generate, SynthConfig, SynthOutput};
use proptest::prelude::*;

fn synth(seed: u64) -> SynthOutput {
    generate(&SynthConfig { n_pos: 12, n_neg: 8, dim: 96, candidates_per_image: 12, seed, ..Default::default() }).unwrap()
}

fn quick(k: usize, iterations: usize) -> MilConfig {
    MilConfig { k_folds: k, iterations, mining_rounds: 1, mining_max_new: 200, ..Default::default() }
}

#[test]
fn fold_examples() {
    let ids: Vec<usize> = (0..10).collect();
    let folds = partition_folds(&ids, 10, 1).unwrap();
    assert!(folds.iter().all(|f| f.len() == 1));

    let folds = partition_folds(&ids, 3, 1).unwrap();
    let mut sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
    sizes.sort_unstable();
    assert_eq!(sizes, vec![3, 3, 4]);
    let union: BTreeSet<usize> = folds.iter().flatten().copied().collect();
    assert_eq!(union.len(), 10);

    let ids: Vec<usize> = (0..100).collect();
    assert_eq!(partition_folds(&ids, 10, 7).unwrap(), partition_folds(&ids, 10, 7).unwrap());
    assert_ne!(partition_folds(&ids, 10, 7).unwrap(), partition_folds(&ids, 10, 8).unwrap());
    assert!(partition_folds(&ids, 101, 0).is_err());
    assert_ne!(fold_seed(3, 1), fold_seed(3, 2));
}

proptest! {
    #[test]
    fn folds_are_balanced_disjoint_covers(n in 1usize..60, k in 1usize..12, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let ids: Vec<usize> = (0..n).collect();
        let folds = partition_folds(&ids, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let mut all: Vec<usize> = folds.into_iter().flatten().collect();
        all.sort_unstable();
        prop_assert_eq!(all, ids);
    }
}

#[test]
fn relocalize_breaks_ties_low_and_finds_the_argmax() {
    let out = synth(1);
    let ds = &out.dataset;
    let dim = ds.feature_dim();
    let p = ds.positive_ids()[0];
    assert_eq!(relocalize(&LinearModel::zeros(dim), ds, p, ChannelMode::ForegroundOnly).unwrap(), 0);

    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let m = LinearModel { w: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(), b: 0.0 };
        for &i in &ds.positive_ids() {
            let k = relocalize(&m, ds, i, ChannelMode::ForegroundOnly).unwrap();
            for w in 0..ds.bag(i).windows.len() {
                let s = m.score(&ds.composed(i, w, ChannelMode::ForegroundOnly).unwrap());
                let best = m.score(&ds.composed(i, k, ChannelMode::ForegroundOnly).unwrap());
                assert!(s < best || (s == best && w >= k));
            }
        }
    }
    let neg = ds.negative_ids()[0];
    assert!(relocalize(&LinearModel::zeros(dim), ds, neg, ChannelMode::ForegroundOnly).is_err());
}

#[test]
fn signal_aligned_model_selects_the_planted_window() {
    let cfg = SynthConfig { n_pos: 5, n_neg: 3, dim: 32, noise_sigma: 0.0, context_signal: 0.0, seed: 4, ..Default::default() };
    let out = generate(&cfg).unwrap();
    let ds = &out.dataset;
    let t = &out.truth.images[0];
    let w: Vec<f64> = ds.fg_row(0, t.planted_indices[0]).iter().map(|&v| v as f64).collect();
    let model = LinearModel { w, b: 0.0 };
    for (i, truth) in out.truth.images.iter().enumerate() {
        let k = relocalize(&model, ds, i, ChannelMode::ForegroundOnly).unwrap();
        assert!((truth.quality[k] - 1.0).abs() < 1e-12, "image {i}");
    }
}

#[test]
fn zero_iterations_keep_the_initial_windows() {
    let out = synth(2);
    let ds = &out.dataset;
    let traj = run_standard_mil(ds, &quick(1, 0)).unwrap();
    assert_eq!(traj.iterations.len(), 1);
    for (&i, &w) in traj.positives.iter().zip(traj.final_selections()) {
        assert_eq!(ds.bag(i).windows[w].to_array(), [0.04, 0.04, 0.96, 0.96]);
    }
}

#[test]
fn standard_and_multifold_start_alike() {
    let out = synth(3);
    let a = run_standard_mil(&out.dataset, &quick(1, 2)).unwrap();
    let b = run_multifold_mil(&out.dataset, &quick(4, 2)).unwrap();
    assert_eq!(a.iterations[0].selections, b.iterations[0].selections);
}

#[test]
fn runs_are_deterministic_and_thread_independent() {
    let out = synth(4);
    let cfg = quick(4, 3);
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let a = one.install(|| run_multifold_mil(&out.dataset, &cfg)).unwrap();
    let b = three.install(|| run_multifold_mil(&out.dataset, &cfg)).unwrap();
    let c = run_multifold_mil(&out.dataset, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[test]
fn held_out_detectors_never_see_their_images() {
    let out = synth(5);
    let traj = run_multifold_mil(&out.dataset, &quick(6, 3)).unwrap();
    assert_eq!(traj.audit.len(), 18);
    assert_eq!(traj.audit_violations(), 0);
    for e in &traj.audit {
        let trained: BTreeSet<_> = e.trained_on.iter().collect();
        assert!(e.relocalized.iter().all(|i| !trained.contains(i)));
        assert_eq!(e.trained_on.len() + e.relocalized.len(), 12);
    }
    // Standard MIL re-localizes with the detector trained on the same images.
    let std = run_standard_mil(&out.dataset, &quick(1, 2)).unwrap();
    assert_eq!(std.audit_violations(), 2);
}

#[test]
fn training_never_reads_ground_truth() {
    let out = synth(6);
    let ds = &out.dataset;
    let before = ds.gt_read_count();
    run_multifold_mil(ds, &quick(3, 2)).unwrap();
    run_standard_mil(ds, &quick(1, 2)).unwrap();
    assert_eq!(ds.gt_read_count(), before);
    let mut traj = run_standard_mil(ds, &quick(1, 1)).unwrap();
    annotate_corloc(&mut traj, ds).unwrap();
    assert!(ds.gt_read_count() > before);
    assert_eq!(traj.corloc_trajectory().len(), 2);
}

#[test]
fn selections_are_candidate_indices() {
    let out = synth(7);
    let traj = run_multifold_mil(&out.dataset, &quick(3, 2)).unwrap();
    for rec in &traj.iterations {
        for (&i, &w) in traj.positives.iter().zip(&rec.selections) {
            assert!(w < out.dataset.bag(i).windows.len());
        }
    }
}

#[test]
fn mixed_supervision_reductions() {
    let out = synth(8);
    let ds = &out.dataset;
    let cfg = quick(4, 2);
    let none = run_mixed(ds, &cfg, 0.0, 99).unwrap();
    assert_eq!(none, run_multifold_mil(ds, &cfg).unwrap());

    let all = run_mixed(ds, &cfg, 1.0, 99).unwrap();
    let supervised = supervise(ds, &ds.positive_ids()).unwrap();
    let direct = run_fully_supervised(&supervised, &cfg).unwrap();
    assert_eq!(all.model, direct.model);
    assert_eq!(all.iterations, direct.iterations);
    assert!(all.audit.is_empty());
}

#[test]
fn supervised_images_keep_their_ground_truth_windows() {
    let out = synth(9);
    let ds = &out.dataset;
    let traj = run_mixed(ds, &quick(3, 3), 0.5, 5).unwrap();
    assert_eq!(traj.supervised.len(), 6);
    let planted: std::collections::BTreeMap<usize, &Vec<usize>> =
        out.truth.images.iter().enumerate().map(|(i, t)| (i, &t.planted_indices)).collect();
    for rec in &traj.iterations {
        for (&i, &w) in traj.positives.iter().zip(&rec.selections) {
            if traj.supervised.contains(&i) {
                assert!(planted[&i].contains(&w));
            }
        }
    }
    for e in &traj.audit {
        assert!(e.relocalized.iter().all(|i| !traj.supervised.contains(i)));
    }
}

#[test]
fn supervised_count_floors_to_one() {
    assert_eq!(supervised_count(50, 0.0), 0);
    assert_eq!(supervised_count(50, 0.001), 1);
    assert_eq!(supervised_count(50, 0.5), 25);
    assert_eq!(supervised_count(50, 1.0), 50);
}

#[test]
fn rejects_degenerate_inputs() {
    let out = synth(10);
    assert!(run_multifold_mil(&out.dataset, &quick(13, 1)).is_err());
    assert!(run_multifold_mil(&out.dataset, &quick(1, 1)).is_err());
    assert!(run_mixed(&out.dataset, &quick(3, 1), 1.5, 0).is_err());
}
