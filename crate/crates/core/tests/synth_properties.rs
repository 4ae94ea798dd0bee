mod common;

use mfmil::features::{inner_product_histogram, PairMode};
use mfmil::geometry::max_iou;
use mfmil::mil::{annotate_corloc, run_multifold_mil, MilConfig};
use mfmil::synth::{generate, SynthConfig};

#[test]
fn high_dimensional_descriptors_are_near_orthogonal() {
    let hi = generate(&SynthConfig { n_pos: 10, n_neg: 10, dim: 8192, background: false, seed: 1, ..Default::default() }).unwrap();
    let h = inner_product_histogram(&hi.dataset, PairMode::AllPairs, 200, 20, 3).unwrap();
    assert!(h.mass_within(0.1) >= 0.99, "{}", h.mass_within(0.1));
    let h = inner_product_histogram(&hi.dataset, PairMode::WithinImage, 200, 20, 3).unwrap();
    assert!(h.mass_within(0.1) >= 0.95, "within-image {}", h.mass_within(0.1));
    let lo = generate(&SynthConfig { n_pos: 10, n_neg: 10, dim: 64, background: false, seed: 1, ..Default::default() }).unwrap();
    let h = inner_product_histogram(&lo.dataset, PairMode::AllPairs, 200, 20, 3).unwrap();
    assert!(h.mass_within(0.1) < 0.8, "{}", h.mass_within(0.1));
}

#[test]
fn every_positive_has_a_correct_candidate() {
    for seed in 0..5 {
        let out = generate(&SynthConfig { dim: 8, seed, ..Default::default() }).unwrap();
        for (i, t) in out.truth.images.iter().enumerate() {
            let bag = out.dataset.bag(i);
            assert!(bag.windows.iter().any(|w| max_iou(w, &t.planted_boxes) >= 0.5));
            for b in &t.planted_boxes {
                assert!(b.respects_margin(0.04 + 0.05 - 1e-12));
            }
        }
    }
}

#[test]
fn saved_datasets_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig { n_pos: 3, n_neg: 2, dim: 16, flips: true, seed: 8, ..Default::default() };
    for name in ["a", "b"] {
        let sub = dir.path().join(name);
        std::fs::create_dir_all(&sub).unwrap();
        generate(&cfg).unwrap().dataset.save(&sub.join("manifest.json")).unwrap();
    }
    for file in ["manifest.json", "features.milf"] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file}");
    }
}

/// Expected CorLoc of picking a candidate uniformly at random.
fn random_baseline(out: &mfmil::synth::SynthOutput) -> f64 {
    let imgs = &out.truth.images;
    imgs.iter().map(|t| t.quality.iter().filter(|&&q| q >= 0.5).count() as f64 / t.quality.len() as f64).sum::<f64>()
        / imgs.len() as f64
}

#[test]
fn null_signal_localizes_like_chance() {
    let mut gap = 0.0;
    for seed in 0..5 {
        let out = generate(&SynthConfig { signal_strength: 0.0, dim: 256, seed, ..Default::default() }).unwrap();
        let cfg = MilConfig { iterations: 3, seed, ..Default::default() };
        let mut traj = run_multifold_mil(&out.dataset, &cfg).unwrap();
        annotate_corloc(&mut traj, &out.dataset).unwrap();
        gap += traj.corloc_trajectory().last().unwrap() - random_baseline(&out);
    }
    assert!((gap / 5.0).abs() <= 0.05, "mean gap {}", gap / 5.0);
}
