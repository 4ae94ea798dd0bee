//! Files of a training run directory and their loading.

use std::path::Path;

use mfmil::eval::Selections;
use mfmil::mil::{AuditEntry, IterationRecord, MilConfig, RunTrajectory};
use mfmil::{Dataset, ImageId, LinearModel};
use serde::{Deserialize, Serialize};

use crate::args::TrainMode;
use crate::error::{CliError, CliResult};
use crate::io::read_json;

pub const CONFIG: &str = "config.json";
pub const TRAJECTORY: &str = "trajectory.json";
pub const MODEL: &str = "model.json";
pub const CORLOC_CSV: &str = "corloc.csv";
pub const SELECTIONS_CSV: &str = "selections.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub mode: TrainMode,
    pub mil: MilConfig,
    pub supervised_fraction: f64,
    pub supervised_seed: u64,
    pub dataset_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScores {
    pub image: usize,
    pub image_id: ImageId,
    pub scores: Vec<f64>,
}

/// A [`RunTrajectory`] without its model, with image ids alongside indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFile {
    pub positives: Vec<usize>,
    pub positive_ids: Vec<ImageId>,
    pub supervised: Vec<usize>,
    pub iterations: Vec<IterationRecord>,
    pub audit: Vec<AuditEntry>,
    pub audit_violations: usize,
    pub final_scores: Vec<ImageScores>,
    /// CorLoc of the initial windows.
    pub initial_corloc: Option<f64>,
    /// CorLoc after each re-localization, iterations 1 to T.
    pub corloc_trajectory: Vec<f64>,
}

impl TrajectoryFile {
    pub fn new(traj: &RunTrajectory, data: &Dataset) -> Self {
        TrajectoryFile {
            positives: traj.positives.clone(),
            positive_ids: traj.positives.iter().map(|&i| data.bag(i).id.clone()).collect(),
            supervised: traj.supervised.clone(),
            iterations: traj.iterations.clone(),
            audit: traj.audit.clone(),
            audit_violations: traj.audit_violations(),
            final_scores: traj
                .final_scores
                .iter()
                .map(|(i, s)| ImageScores { image: *i, image_id: data.bag(*i).id.clone(), scores: s.clone() })
                .collect(),
            initial_corloc: traj.iterations.first().and_then(|r| r.corloc),
            corloc_trajectory: mil_corloc(traj),
        }
    }

    pub fn into_trajectory(self, model: LinearModel) -> RunTrajectory {
        RunTrajectory {
            positives: self.positives,
            supervised: self.supervised,
            iterations: self.iterations,
            model,
            audit: self.audit,
            final_scores: self.final_scores.into_iter().map(|s| (s.image, s.scores)).collect(),
        }
    }
}

/// CorLoc of iterations 1 to T, leaving out the initial windows.
pub fn mil_corloc(traj: &RunTrajectory) -> Vec<f64> {
    traj.iterations.iter().skip(1).filter_map(|r| r.corloc).collect()
}

pub struct RunDir {
    pub config: TrainRecord,
    pub trajectory: RunTrajectory,
}

impl RunDir {
    pub fn load(dir: &Path) -> CliResult<Self> {
        let config: TrainRecord = read_json(&dir.join(CONFIG))?;
        let traj: TrajectoryFile = read_json(&dir.join(TRAJECTORY))?;
        let model: LinearModel = read_json(&dir.join(MODEL))?;
        Ok(RunDir { config, trajectory: traj.into_trajectory(model) })
    }

    /// Fails unless `data` is the dataset the run was trained on.
    pub fn check_dataset(&self, data: &Dataset) -> CliResult<()> {
        let hash = data.content_hash()?;
        if hash != self.config.dataset_hash {
            return Err(CliError::Data(format!(
                "dataset hash {hash} does not match the run's {}",
                self.config.dataset_hash
            )));
        }
        Ok(())
    }

    pub fn final_selections(&self, data: &Dataset) -> Selections {
        self.trajectory.selections_at(data, self.trajectory.iterations.len() - 1)
    }
}
