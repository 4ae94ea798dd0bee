use std::io::Write;
use std::path::Path;

use mfmil::eval::{score_histogram, GroupStats};
use mfmil::features::{inner_product_histogram, Histogram, PairMode};
use mfmil::mil::MilConfig;

use super::run_dir::RunDir;
use super::train::train;
use super::{num, with_threads};
use crate::args::{CSweepArgs, DotHistArgs, ScoreHistArgs, TrainMode};
use crate::error::{CliError, CliResult};
use crate::io::{csv_writer, load_dataset, sidecar_manifest, write_json, Invocation};

pub const SCORE_HIST_CSV: &str = "score_hist.csv";
/// Half-width of the band counted as near orthogonal.
pub const ORTHOGONAL_BAND: f64 = 0.1;

fn bins_ok(bins: usize) -> CliResult<()> {
    if bins == 0 {
        return Err(CliError::Usage("--bins must be at least 1".into()));
    }
    Ok(())
}

pub fn score_hist(a: &ScoreHistArgs, inv: &Invocation) -> CliResult<()> {
    bins_ok(a.bins)?;
    let data = load_dataset(&a.data)?;
    let run = RunDir::load(&a.run)?;
    run.check_dataset(&data)?;
    let traj = &run.trajectory;
    let sel: Vec<(usize, usize)> = traj.positives.iter().copied().zip(traj.final_selections().iter().copied()).collect();
    let groups = score_histogram(&traj.model, &data, &sel, run.config.mil.channel_mode, a.bins)?;

    let path = a.out.clone().unwrap_or_else(|| a.run.join(SCORE_HIST_CSV));
    let mut w = csv_writer(&path)?;
    w.write_record(["group", "bin_lo", "bin_hi", "count"])?;
    let named: [(&str, &GroupStats); 3] =
        [("selected", &groups.selected), ("overlapping", &groups.overlapping), ("rest", &groups.rest)];
    for (name, g) in named {
        for (i, c) in g.histogram.counts.iter().enumerate() {
            let (lo, hi) = g.histogram.bin_edges(i);
            w.write_record([name.to_string(), num(lo), num(hi), c.to_string()])?;
        }
    }
    w.flush()?;
    let cfg = serde_json::json!({ "bins": a.bins });
    write_json(&sidecar_manifest(&path), &inv.manifest(&cfg, &[], Some(run.config.dataset_hash.clone()), &[&path])?)?;
    for (name, g) in named {
        println!("{name} count {} mean {} std {}", g.count, g.mean, g.std);
    }
    Ok(())
}

fn write_histogram<W: Write>(w: W, h: &Histogram) -> CliResult<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    w.write_record(["bin_lo", "bin_hi", "count"])?;
    for (i, c) in h.counts.iter().enumerate() {
        let (lo, hi) = h.bin_edges(i);
        w.write_record([num(lo), num(hi), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn dot_hist(a: &DotHistArgs, inv: &Invocation) -> CliResult<()> {
    bins_ok(a.bins)?;
    let data = load_dataset(&a.data)?;
    let mode: PairMode = a.pairs.into();
    let h = inner_product_histogram(&data, mode, a.samples, a.bins, a.seed)?;
    match &a.out {
        Some(path) => {
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir)?;
            }
            write_histogram(std::fs::File::create(path)?, &h)?;
            let cfg = serde_json::json!({ "pairs": mode, "samples": a.samples, "bins": a.bins });
            let rm = inv.manifest(&cfg, &[("seed", a.seed)], Some(data.content_hash()?), &[path.as_path()])?;
            write_json(&sidecar_manifest(path), &rm)?;
            println!("pairs {} mass_within_{ORTHOGONAL_BAND} {}", h.total(), h.mass_within(ORTHOGONAL_BAND));
        }
        None => write_histogram(std::io::stdout().lock(), &h)?,
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SweepRow {
    pub c: f64,
    /// Positives whose selection at the last iteration equals iteration 1's.
    pub unchanged_fraction: f64,
    pub final_corloc: f64,
}

pub fn sweep(data: &mfmil::Dataset, base: &MilConfig, cs: &[f64]) -> CliResult<Vec<SweepRow>> {
    if base.iterations < 1 {
        return Err(CliError::Usage("the C sweep needs at least one iteration".into()));
    }
    let mut rows = Vec::with_capacity(cs.len());
    for &c in cs {
        if !(c > 0.0 && c.is_finite()) {
            return Err(CliError::Usage(format!("C must be positive, got {c}")));
        }
        let mut cfg = base.clone();
        cfg.train_params.c = c;
        let traj = train(data, TrainMode::Standard, &cfg, 0.0, 0)?;
        rows.push(SweepRow {
            c,
            unchanged_fraction: traj.unchanged_fraction(1, cfg.iterations),
            final_corloc: traj.iterations.last().and_then(|r| r.corloc).unwrap_or(0.0),
        });
    }
    Ok(rows)
}

pub fn c_sweep(a: &CSweepArgs, inv: &Invocation) -> CliResult<()> {
    let data = load_dataset(&a.data)?;
    let base = MilConfig { k_folds: 1, iterations: a.iters, channel_mode: a.channels.into(), seed: a.seed, ..MilConfig::default() };
    let rows = with_threads(a.threads, || sweep(&data, &base, &a.cs))??;
    write_sweep(&a.out, &rows)?;
    let rm = inv.manifest(&base, &[("seed", a.seed)], Some(data.content_hash()?), &[a.out.as_path()])?;
    write_json(&sidecar_manifest(&a.out), &rm)?;
    for r in &rows {
        println!("C {} unchanged {} corloc {}", r.c, r.unchanged_fraction, r.final_corloc);
    }
    Ok(())
}

fn write_sweep(path: &Path, rows: &[SweepRow]) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["c", "unchanged_fraction", "final_corloc"])?;
    for r in rows {
        w.write_record([num(r.c), num(r.unchanged_fraction), num(r.final_corloc)])?;
    }
    w.flush()?;
    Ok(())
}
