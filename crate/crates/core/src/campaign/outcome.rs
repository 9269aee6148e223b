//! Trial outcome classification.

use serde::{Deserialize, Serialize};

use super::CampaignError;
use crate::graph::{AngleUnit, TaskSpec};
use crate::tensor::{top_k, Tensor};

/// Result of one faulty run relative to its golden run.
///
/// `sdc[i]` is the verdict at the i-th threshold (classification has a single
/// column). A detectable trial is never an SDC.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub detectable: bool,
    pub sdc: Vec<bool>,
}

/// Per-threshold category of a trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutcomeKind {
    Masked,
    Sdc,
    Detectable,
}

impl Outcome {
    pub fn kind(&self, threshold: usize) -> OutcomeKind {
        if self.detectable {
            OutcomeKind::Detectable
        } else if self.sdc[threshold] {
            OutcomeKind::Sdc
        } else {
            OutcomeKind::Masked
        }
    }
}

/// Absolute deviation between two angles, in degrees.
pub fn angle_deviation_degrees(golden: f64, faulty: f64, unit: AngleUnit) -> f64 {
    let d = (golden - faulty).abs();
    match unit {
        AngleUnit::Degrees => d,
        AngleUnit::Radians => d.to_degrees(),
    }
}

pub fn classify_outcome(golden: &Tensor, faulty: &Tensor, task: &TaskSpec) -> Result<Outcome, CampaignError> {
    if golden.shape() != faulty.shape() {
        return Err(CampaignError::ShapeMismatch {
            golden: golden.shape().to_vec(),
            faulty: faulty.shape().to_vec(),
        });
    }
    let columns = task.num_thresholds();
    if !faulty.all_finite() {
        return Ok(Outcome {
            detectable: true,
            sdc: vec![false; columns],
        });
    }
    let sdc = match task {
        TaskSpec::Classification { topk, .. } => {
            let label = golden.argmax();
            let top = top_k(faulty.values(), *topk);
            vec![label.is_some_and(|l| !top.contains(&l))]
        }
        TaskSpec::Regression { sdc_thresholds, unit } => {
            let dev = angle_deviation_degrees(golden.values()[0], faulty.values()[0], *unit);
            sdc_thresholds.iter().map(|&t| dev > t).collect()
        }
    };
    Ok(Outcome { detectable: false, sdc })
}
