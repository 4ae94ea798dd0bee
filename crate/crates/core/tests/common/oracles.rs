//! Reference implementations used as test oracles. They favour directness
//! over speed and share no code with the library.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Objective `0.5 (|w|^2 + b^2) + sum_i u_i max(0, 1 - y_i (w.x_i + b))`
/// over rows `[x_1, .., x_d, 1]` with `y_i` folded in.
fn objective_aug(v: &[f64], rows: &[(Vec<f64>, f64)]) -> f64 {
    let reg = 0.5 * v.iter().map(|a| a * a).sum::<f64>();
    reg + rows
        .iter()
        .map(|(z, u)| u * (1.0 - z.iter().zip(v).map(|(a, b)| a * b).sum::<f64>()).max(0.0))
        .sum::<f64>()
}

/// Projected subgradient descent on the SVM objective with step `1/t`
/// (the objective is 1-strongly convex), projecting onto the ball that must
/// contain the optimum. Returns the best objective among the iterates and
/// their weighted average.
pub fn subgradient_svm_objective(pos: &[Vec<f64>], neg: &[Vec<f64>], c: f64, pos_weight: f64, steps: usize) -> f64 {
    let d = pos[0].len() + 1;
    let mut rows = Vec::new();
    for x in pos {
        let mut z = x.clone();
        z.push(1.0);
        rows.push((z, c * pos_weight));
    }
    for x in neg {
        let mut z: Vec<f64> = x.iter().map(|v| -v).collect();
        z.push(-1.0);
        rows.push((z, c));
    }
    let f0: f64 = rows.iter().map(|r| r.1).sum();
    let radius = (2.0 * f0).sqrt();
    let mut v = vec![0.0; d];
    let mut avg = vec![0.0; d];
    let mut weight = 0.0;
    let mut best = f0;
    let mut g = vec![0.0; d];
    for t in 1..=steps {
        g.copy_from_slice(&v);
        let mut f = 0.5 * v.iter().map(|a| a * a).sum::<f64>();
        for (z, u) in &rows {
            let m: f64 = z.iter().zip(&v).map(|(a, b)| a * b).sum();
            if m < 1.0 {
                f += u * (1.0 - m);
                for (gi, zi) in g.iter_mut().zip(z) {
                    *gi -= u * zi;
                }
            }
        }
        best = best.min(f);
        let eta = 1.0 / t as f64;
        for (vi, gi) in v.iter_mut().zip(&g) {
            *vi -= eta * gi;
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > radius {
            v.iter_mut().for_each(|a| *a *= radius / n);
        }
        weight += t as f64;
        let r = t as f64 / weight;
        for (a, vi) in avg.iter_mut().zip(&v) {
            *a += r * (vi - *a);
        }
    }
    best.min(objective_aug(&avg, &rows))
}

pub struct SvmProblem {
    pub pos: Vec<Vec<f64>>,
    pub neg: Vec<Vec<f64>>,
    pub c: f64,
}

/// Overlapping Gaussian classes in `dim` dimensions.
pub fn random_svm_problem(seed: u64, dim: usize, max_samples: usize) -> SvmProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(10..=max_samples);
    let n_pos = rng.gen_range(3..n - 2);
    let shift: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut sample = |s: f64| -> Vec<f64> { shift.iter().map(|m| s * m + rng.gen_range(-1.5..1.5)).collect() };
    let pos = (0..n_pos).map(|_| sample(1.0)).collect();
    let neg = (0..n - n_pos).map(|_| sample(-1.0)).collect();
    SvmProblem { pos, neg, c: 0.1 }
}

#[derive(Debug, Clone)]
pub struct RefDet {
    pub image: String,
    pub bx: [f64; 4],
    pub conf: f64,
}

fn ref_iou(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let ua = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
    if ua <= 0.0 {
        0.0
    } else {
        inter / ua
    }
}

/// True-positive flags in rank order.
fn ref_flags(dets: &[RefDet], gts: &[(String, Vec<[f64; 4]>)]) -> Vec<bool> {
    let mut ranked = dets.to_vec();
    ranked.sort_by(|a, b| {
        b.conf
            .partial_cmp(&a.conf)
            .unwrap()
            .then(a.image.cmp(&b.image))
            .then(a.bx.partial_cmp(&b.bx).unwrap())
    });
    let mut taken: Vec<Vec<bool>> = gts.iter().map(|(_, g)| vec![false; g.len()]).collect();
    ranked
        .iter()
        .map(|d| {
            let Some(gi) = gts.iter().position(|(id, _)| *id == d.image) else { return false };
            let mut best = -1.0;
            let mut which = None;
            for (j, g) in gts[gi].1.iter().enumerate() {
                let o = ref_iou(&d.bx, g);
                if !taken[gi][j] && o > best {
                    best = o;
                    which = Some(j);
                }
            }
            match which {
                Some(j) if best >= 0.5 => {
                    taken[gi][j] = true;
                    true
                }
                _ => false,
            }
        })
        .collect()
}

/// Interpolated precision at level `r`: the best precision at any rank whose
/// recall reaches `r`.
fn interpolated(flags: &[bool], n_gt: usize, r: f64) -> f64 {
    let mut tp = 0;
    let mut best: f64 = 0.0;
    for (k, f) in flags.iter().enumerate() {
        tp += *f as usize;
        if tp as f64 / n_gt as f64 >= r {
            best = best.max(tp as f64 / (k + 1) as f64);
        }
    }
    best
}

pub fn ref_ap_11pt(dets: &[RefDet], gts: &[(String, Vec<[f64; 4]>)]) -> f64 {
    let n_gt: usize = gts.iter().map(|g| g.1.len()).sum();
    if n_gt == 0 {
        return 0.0;
    }
    let flags = ref_flags(dets, gts);
    (0..=10).map(|t| interpolated(&flags, n_gt, t as f64 / 10.0)).sum::<f64>() / 11.0
}

/// Area under the interpolated curve: every true positive adds `1/n_gt`
/// recall at the interpolated precision of its recall level.
pub fn ref_ap_continuous(dets: &[RefDet], gts: &[(String, Vec<[f64; 4]>)]) -> f64 {
    let n_gt: usize = gts.iter().map(|g| g.1.len()).sum();
    if n_gt == 0 {
        return 0.0;
    }
    let flags = ref_flags(dets, gts);
    let mut tp = 0;
    let mut area = 0.0;
    for f in &flags {
        if *f {
            tp += 1;
            area += interpolated(&flags, n_gt, tp as f64 / n_gt as f64) / n_gt as f64;
        }
    }
    area
}

fn random_box(rng: &mut ChaCha8Rng) -> [f64; 4] {
    let (a, b): (f64, f64) = (rng.gen(), rng.gen());
    let (c, d): (f64, f64) = (rng.gen(), rng.gen());
    let (x0, y0) = (a.min(b) * 0.98, c.min(d) * 0.98);
    [x0, y0, a.max(b).max(x0 + 0.01), c.max(d).max(y0 + 0.01)]
}

/// Up to 20 detections and 5 ground-truth boxes over three images, with
/// some near-duplicates of the ground truth and some repeated confidences.
pub fn random_ap_instance(seed: u64) -> (Vec<RefDet>, Vec<(String, Vec<[f64; 4]>)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids = ["a", "b", "c"];
    let n_gt = rng.gen_range(0..=5);
    let mut gts: Vec<(String, Vec<[f64; 4]>)> = ids.iter().map(|s| (s.to_string(), Vec::new())).collect();
    for _ in 0..n_gt {
        let k = rng.gen_range(0..3);
        let b = random_box(&mut rng);
        gts[k].1.push(b);
    }
    let n_det = rng.gen_range(0..=20);
    let mut dets = Vec::new();
    for _ in 0..n_det {
        let k = rng.gen_range(0..3);
        let bx = if !gts[k].1.is_empty() && rng.gen_bool(0.5) {
            let g = gts[k].1[rng.gen_range(0..gts[k].1.len())];
            let j = |v: f64, rng: &mut ChaCha8Rng| (v + rng.gen_range(-0.03..0.03)).clamp(0.0, 1.0);
            let mut b = [j(g[0], &mut rng), j(g[1], &mut rng), j(g[2], &mut rng), j(g[3], &mut rng)];
            if b[2] <= b[0] {
                b[2] = (b[0] + 0.01).min(1.0);
                b[0] = b[2] - 0.01;
            }
            if b[3] <= b[1] {
                b[3] = (b[1] + 0.01).min(1.0);
                b[1] = b[3] - 0.01;
            }
            b
        } else {
            random_box(&mut rng)
        };
        let conf = (rng.gen_range(0..8) as f64) / 4.0;
        dets.push(RefDet { image: ids[k].to_string(), bx, conf });
    }
    (dets, gts)
}
