use mfmil::eval::{
    average_precision, corloc, detect, error_breakdown, precision_recall, EvalReport, Protocol, TIE_BREAK_RULE,
};
use mfmil::mil::ground_truth;

use super::num;
use super::refine::{read_refined_csv, REFINED_CSV};
use super::run_dir::{mil_corloc, RunDir};
use crate::args::EvalArgs;
use crate::error::{CliError, CliResult};
use crate::io::{csv_writer, load_dataset, sidecar_manifest, to_sorted_json, write_json, Invocation};

pub const EVAL_JSON: &str = "eval.json";
pub const PR_CSV: &str = "pr.csv";

pub fn run(a: &EvalArgs, inv: &Invocation) -> CliResult<()> {
    if !(0.0..=1.0).contains(&a.nms) {
        return Err(CliError::Usage(format!("--nms {} outside [0, 1]", a.nms)));
    }
    let data = load_dataset(&a.data)?;
    let run = RunDir::load(&a.run)?;
    run.check_dataset(&data)?;
    let mut selections = run.final_selections(&data);
    if a.refined {
        selections.extend(read_refined_csv(&a.run.join(REFINED_CSV))?);
    }
    let gts = ground_truth(&data);
    let protocol: Protocol = a.protocol.into();

    let test = match &a.test {
        Some(p) => load_dataset(p)?,
        None => data.clone(),
    };
    let dets = detect(&run.trajectory.model, &test, run.config.mil.channel_mode, a.nms)?;
    let test_gts = ground_truth(&test);
    let curve = precision_recall(&dets, &test_gts);

    let report = EvalReport {
        corloc: corloc(&selections, &gts)?,
        ap: average_precision(&dets, &test_gts, protocol),
        protocol,
        error_mode_freqs: error_breakdown(&selections, &gts)?.into(),
        corloc_trajectory: mil_corloc(&run.trajectory),
        tie_break: TIE_BREAK_RULE.to_string(),
    };
    if !report.ap.is_finite() || !report.corloc.is_finite() {
        return Err(CliError::Numerical("evaluation produced a non-finite metric".into()));
    }

    let json_path = a.run.join(EVAL_JSON);
    let pr_path = a.run.join(PR_CSV);
    write_json(&json_path, &report)?;
    let mut w = csv_writer(&pr_path)?;
    w.write_record(["rank", "recall", "precision"])?;
    for (k, p) in curve.iter().enumerate() {
        w.write_record([(k + 1).to_string(), num(p.recall), num(p.precision)])?;
    }
    w.flush()?;
    let cfg = serde_json::json!({ "protocol": protocol, "nms": a.nms, "refined": a.refined });
    let hash = Some(run.config.dataset_hash.clone());
    for p in [&json_path, &pr_path] {
        write_json(&sidecar_manifest(p), &inv.manifest(&cfg, &[], hash.clone(), &[p.as_path()])?)?;
    }
    print!("{}", to_sorted_json(&report)?);
    Ok(())
}
