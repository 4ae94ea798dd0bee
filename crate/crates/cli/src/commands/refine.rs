use std::collections::BTreeMap;
use std::path::Path;

use mfmil::eval::{corloc, Selections};
use mfmil::mil::ground_truth;
use mfmil::refine::{refine_with_scores, RefineConfig, RefineOutcome};
use mfmil::{Dataset, ImageId, Window};
use serde::{Deserialize, Serialize};

use super::num;
use super::run_dir::RunDir;
use crate::args::RefineArgs;
use crate::error::{CliError, CliResult};
use crate::io::{csv_writer, load_dataset, sidecar_manifest, write_json, Invocation};

pub const REFINED_CSV: &str = "refined.csv";
pub const REFINE_JSON: &str = "refine.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineSummary {
    pub config: RefineConfig,
    pub corloc_before: f64,
    pub corloc_after: f64,
    pub refined_images: usize,
    pub classification_range: (f64, f64),
    pub objectness_range: (f64, f64),
}

/// Final selections with every weakly labelled positive replaced by its
/// refined window; supervised positives keep their selection.
pub fn refined_selections(run: &RunDir, data: &Dataset, outcome: &RefineOutcome) -> Selections {
    let mut sel = run.final_selections(data);
    for im in &outcome.images {
        sel.insert(data.bag(im.image).id.clone(), im.window());
    }
    sel
}

/// Refines a loaded run and returns the outcome with CorLoc before and after.
pub fn refine_run(run: &RunDir, data: &Dataset, cfg: &RefineConfig) -> CliResult<(RefineOutcome, RefineSummary)> {
    let scores = &run.trajectory.final_scores;
    let outcome = refine_with_scores(data, scores, cfg)?;
    let gts = ground_truth(data);
    let before = corloc(&run.final_selections(data), &gts)?;
    let after = corloc(&refined_selections(run, data, &outcome), &gts)?;
    let summary = RefineSummary {
        config: cfg.clone(),
        corloc_before: before,
        corloc_after: after,
        refined_images: outcome.images.len(),
        classification_range: outcome.classification_range,
        objectness_range: outcome.objectness_range,
    };
    Ok((outcome, summary))
}

pub fn run(a: &RefineArgs, inv: &Invocation) -> CliResult<()> {
    let cfg = RefineConfig {
        top_n: a.top_n,
        w_cls: a.w_cls,
        w_obj: a.w_obj,
        local_search: !a.no_local_search,
        ..RefineConfig::default()
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let data = load_dataset(&a.data)?;
    let run = RunDir::load(&a.run)?;
    run.check_dataset(&data)?;
    let (outcome, summary) = refine_run(&run, &data, &cfg)?;

    let out = a.out.as_deref().unwrap_or(&a.run);
    let csv_path = out.join(REFINED_CSV);
    let json_path = out.join(REFINE_JSON);
    write_refined_csv(&csv_path, &data, &outcome)?;
    write_json(&json_path, &summary)?;
    let hash = Some(run.config.dataset_hash.clone());
    for p in [&csv_path, &json_path] {
        write_json(&sidecar_manifest(p), &inv.manifest(&cfg, &[], hash.clone(), &[p.as_path()])?)?;
    }
    println!("corloc {} -> {}", summary.corloc_before, summary.corloc_after);
    Ok(())
}

fn write_refined_csv(path: &Path, data: &Dataset, outcome: &RefineOutcome) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["image_id", "source_window", "x0", "y0", "x1", "y1", "classification", "objectness", "combined"])?;
    for im in &outcome.images {
        let c = &im.candidates[im.chosen];
        w.write_record([
            data.bag(im.image).id.to_string(),
            c.window_index.to_string(),
            num(c.refined.x0),
            num(c.refined.y0),
            num(c.refined.x1),
            num(c.refined.y1),
            num(c.classification),
            num(c.objectness),
            num(c.combined),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Refined windows keyed by image id, as written by `refine`.
pub fn read_refined_csv(path: &Path) -> CliResult<BTreeMap<ImageId, Window>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let field = |i: usize| -> CliResult<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| CliError::Data(format!("{}: bad number in column {i}", path.display())))
        };
        let w = Window::new(field(2)?, field(3)?, field(4)?, field(5)?)?;
        out.insert(ImageId(rec.get(0).unwrap_or_default().to_string()), w);
    }
    Ok(out)
}
