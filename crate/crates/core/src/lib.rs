//! Multi-fold multiple-instance learning for weakly supervised object
//! localization.
//!
//! The crate trains linear window classifiers from image-level labels only:
//! positive images are bags of candidate windows, one of which is assumed to
//! contain the object. [`mil`] holds the training loops (standard MIL,
//! multi-fold MIL and mixed supervision), [`refine`] the objectness-driven
//! window refinement, [`eval`] the CorLoc/AP measures and [`synth`] a
//! generator of synthetic datasets with known object locations.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod geometry;
pub mod mil;
pub mod refine;
pub mod svm;
pub mod synth;

pub use dataset::{Bag, Dataset, FeatureStore, ImageId, Label, Supervision, WindowRef};
pub use error::{Error, Result};
pub use features::{ChannelMode, FeatureVector};
pub use geometry::{ErrorMode, Window};
pub use mil::{MilConfig, RunTrajectory};
pub use svm::{LinearModel, TrainParams};
