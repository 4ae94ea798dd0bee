use mfmil::mil::{annotate_corloc, run_mixed, run_multifold_mil, run_standard_mil, MilConfig, RunTrajectory};
use mfmil::{Dataset, TrainParams};

use super::run_dir::{TrainRecord, TrajectoryFile, CONFIG, CORLOC_CSV, MODEL, SELECTIONS_CSV, TRAJECTORY};
use super::{num, with_threads};
use crate::args::{TrainArgs, TrainMode};
use crate::error::{CliError, CliResult};
use crate::io::{csv_writer, load_dataset, write_json, Invocation, RUN_MANIFEST};

fn mil_config(a: &TrainArgs) -> MilConfig {
    let d = MilConfig::default();
    MilConfig {
        k_folds: if a.mode == TrainMode::Standard { 1 } else { a.k },
        iterations: a.iters,
        channel_mode: a.channels.into(),
        train_params: TrainParams { c: a.c, pos_weight: a.pos_weight, ..TrainParams::default() },
        mining_rounds: a.mining_rounds,
        seed: a.seed,
        ..d
    }
}

fn check_args(a: &TrainArgs) -> CliResult<()> {
    if a.mode != TrainMode::Standard && a.k < 2 {
        return Err(CliError::Usage(format!("--k must be at least 2 for {:?} training", a.mode)));
    }
    if !(0.0..=1.0).contains(&a.sup_fraction) {
        return Err(CliError::Usage(format!("--sup-fraction {} outside [0, 1]", a.sup_fraction)));
    }
    if a.mode != TrainMode::Mixed && a.sup_fraction != 0.0 {
        return Err(CliError::Usage("--sup-fraction needs --mode mixed".into()));
    }
    if !(a.c > 0.0 && a.c.is_finite()) {
        return Err(CliError::Usage(format!("--c must be positive, got {}", a.c)));
    }
    Ok(())
}

/// Trains as configured; CorLoc is annotated afterwards and the
/// fold-exclusion audit is enforced for held-out modes.
pub fn train(data: &Dataset, mode: TrainMode, cfg: &MilConfig, sup_fraction: f64, sup_seed: u64) -> CliResult<RunTrajectory> {
    let mut traj = match mode {
        TrainMode::Standard => run_standard_mil(data, cfg)?,
        TrainMode::Multifold => run_multifold_mil(data, cfg)?,
        TrainMode::Mixed => run_mixed(data, cfg, sup_fraction, sup_seed)?,
    };
    if mode != TrainMode::Standard && traj.audit_violations() > 0 {
        return Err(CliError::Data(format!("fold-exclusion audit failed with {} violations", traj.audit_violations())));
    }
    if !traj.model.is_finite() {
        return Err(CliError::Numerical("trained model has non-finite weights".into()));
    }
    annotate_corloc(&mut traj, data)?;
    Ok(traj)
}

pub fn run(a: &TrainArgs, inv: &Invocation) -> CliResult<()> {
    check_args(a)?;
    let data = load_dataset(&a.data)?;
    let cfg = mil_config(a);
    let sup_seed = a.sup_seed.unwrap_or(a.seed);
    let traj = with_threads(a.threads, || train(&data, a.mode, &cfg, a.sup_fraction, sup_seed))??;

    let record = TrainRecord {
        mode: a.mode,
        mil: cfg,
        supervised_fraction: a.sup_fraction,
        supervised_seed: sup_seed,
        dataset_hash: data.content_hash()?,
    };
    let paths = [CONFIG, TRAJECTORY, MODEL, CORLOC_CSV, SELECTIONS_CSV].map(|f| a.out.join(f));
    write_json(&paths[0], &record)?;
    write_json(&paths[1], &TrajectoryFile::new(&traj, &data))?;
    write_json(&paths[2], &traj.model)?;
    write_corloc_csv(&paths[3], &traj)?;
    write_selections_csv(&paths[4], &traj, &data)?;
    let outputs: Vec<&std::path::Path> = paths.iter().map(|p| p.as_path()).collect();
    let rm = inv.manifest(&record, &[("seed", a.seed), ("sup_seed", sup_seed)], Some(record.dataset_hash.clone()), &outputs)?;
    write_json(&a.out.join(RUN_MANIFEST), &rm)?;

    let last = traj.iterations.last().and_then(|r| r.corloc).unwrap_or(0.0);
    println!("final corloc {last}");
    Ok(())
}

fn write_corloc_csv(path: &std::path::Path, traj: &RunTrajectory) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["iteration", "corloc", "unchanged_vs_previous", "unchanged_vs_iteration1", "cache_size"])?;
    for (t, r) in traj.iterations.iter().enumerate() {
        let prev = if t >= 1 { num(traj.unchanged_fraction(t - 1, t)) } else { String::new() };
        let first = if t >= 1 { num(traj.unchanged_fraction(1, t)) } else { String::new() };
        w.write_record([r.iteration.to_string(), r.corloc.map(num).unwrap_or_default(), prev, first, r.cache_size.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn write_selections_csv(path: &std::path::Path, traj: &RunTrajectory, data: &Dataset) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["iteration", "image_id", "window", "x0", "y0", "x1", "y1"])?;
    for r in &traj.iterations {
        for (&image, &sel) in traj.positives.iter().zip(&r.selections) {
            let b = data.bag(image);
            let win = b.windows[sel];
            w.write_record([
                r.iteration.to_string(),
                b.id.to_string(),
                sel.to_string(),
                num(win.x0),
                num(win.y0),
                num(win.x1),
                num(win.y1),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
