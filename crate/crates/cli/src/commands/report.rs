use std::path::Path;

use mfmil::eval::EvalReport;

use super::eval::EVAL_JSON;
use super::num;
use super::refine::{RefineSummary, REFINE_JSON};
use super::run_dir::{TrainRecord, TrajectoryFile, CONFIG, TRAJECTORY};
use crate::args::ReportArgs;
use crate::error::CliResult;
use crate::io::{csv_writer, read_json, sidecar_manifest, write_json, Invocation};

const HEADER: [&str; 13] = [
    "run",
    "mode",
    "channels",
    "k_folds",
    "iterations",
    "c",
    "sup_fraction",
    "seed",
    "final_corloc",
    "unchanged_vs_iteration1",
    "audit_violations",
    "refined_corloc",
    "ap",
];

fn row(dir: &Path) -> CliResult<Vec<String>> {
    let cfg: TrainRecord = read_json(&dir.join(CONFIG))?;
    let traj: TrajectoryFile = read_json(&dir.join(TRAJECTORY))?;
    let last = traj.iterations.last();
    let unchanged = match (traj.iterations.get(1), last) {
        (Some(a), Some(b)) if traj.iterations.len() > 1 => {
            let same = a.selections.iter().zip(&b.selections).filter(|(x, y)| x == y).count();
            num(same as f64 / a.selections.len().max(1) as f64)
        }
        _ => String::new(),
    };
    let refined = dir.join(REFINE_JSON);
    let refined = if refined.exists() { num(read_json::<RefineSummary>(&refined)?.corloc_after) } else { String::new() };
    let eval = dir.join(EVAL_JSON);
    let ap = if eval.exists() { num(read_json::<EvalReport>(&eval)?.ap) } else { String::new() };
    let mode = serde_json::to_value(cfg.mode)?.as_str().unwrap_or_default().to_string();
    Ok(vec![
        dir.display().to_string(),
        mode,
        cfg.mil.channel_mode.short_name().to_string(),
        cfg.mil.k_folds.to_string(),
        cfg.mil.iterations.to_string(),
        num(cfg.mil.train_params.c),
        num(cfg.supervised_fraction),
        cfg.mil.seed.to_string(),
        last.and_then(|r| r.corloc).map(num).unwrap_or_default(),
        unchanged,
        traj.audit_violations.to_string(),
        refined,
        ap,
    ])
}

pub fn run(a: &ReportArgs, inv: &Invocation) -> CliResult<()> {
    let mut w = csv_writer(&a.out)?;
    w.write_record(HEADER)?;
    for dir in &a.runs {
        w.write_record(row(dir)?)?;
    }
    w.flush()?;
    let cfg = serde_json::json!({ "runs": a.runs });
    write_json(&sidecar_manifest(&a.out), &inv.manifest(&cfg, &[], None, &[a.out.as_path()])?)?;
    Ok(())
}
