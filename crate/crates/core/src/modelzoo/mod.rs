//! Desk-scale models, datasets and a deterministic trainer.
//!
//! The shipped architectures are small enough to train on one core in
//! seconds and to fault-inject thousands of times per minute. MNIST-format
//! data is read from IDX files; synthetic sets are generated from a seed.

mod arch;
mod data;
mod train;

use serde::{Deserialize, Serialize};

use crate::engine::{self, EngineError};
use crate::graph::{AngleUnit, Graph, TaskSpec};
use crate::numerics::NumericFormat;
use crate::tensor::Tensor;

pub use arch::{toy_dataset, Architecture};
pub use data::{
    load_dataset, load_idx_dataset, parse_idx, render_idx, save_rgtn_dataset, separable_dataset, steering_dataset,
    DataError, IdxArray, SYNTHETIC_VERSION,
};
pub use train::{train, TrainError, TrainReport, TrainSpec};

/// Ground truth for one input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Class(usize),
    /// Regression value in the model's output unit.
    Value(f64),
}

/// Parallel lists of input tensors and their targets.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub inputs: Vec<Tensor>,
    pub targets: Vec<Target>,
}

impl Dataset {
    pub fn new(inputs: Vec<Tensor>, targets: Vec<Target>) -> Self {
        assert_eq!(inputs.len(), targets.len(), "one target per input");
        Dataset { inputs, targets }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Splits into `[0, at)` and `[at, len)`.
    pub fn split(&self, at: usize) -> (Dataset, Dataset) {
        let at = at.min(self.len());
        (self.slice(0, at), self.slice(at, self.len()))
    }

    pub fn slice(&self, start: usize, end: usize) -> Dataset {
        Dataset {
            inputs: self.inputs[start..end].to_vec(),
            targets: self.targets[start..end].to_vec(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Tensor, &Target)> {
        self.inputs.iter().zip(&self.targets)
    }

    /// Same samples with regression targets converted from degrees to
    /// radians, rounded to f32 so the set survives an `RGTN` round trip.
    pub fn to_radians(&self) -> Dataset {
        let targets = self
            .targets
            .iter()
            .map(|t| match t {
                Target::Value(v) => Target::Value(f64::from(v.to_radians() as f32)),
                c => *c,
            })
            .collect();
        Dataset {
            inputs: self.inputs.clone(),
            targets,
        }
    }
}

/// Fault-free quality of a model on a labelled set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Metrics {
    Classification {
        accuracy: f64,
        correct: usize,
        total: usize,
    },
    /// Both in degrees.
    Regression { rmse: f64, avg_deviation: f64, total: usize },
}

impl Metrics {
    pub fn accuracy(&self) -> Option<f64> {
        match self {
            Metrics::Classification { accuracy, .. } => Some(*accuracy),
            Metrics::Regression { .. } => None,
        }
    }
}

impl std::fmt::Display for Metrics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Metrics::Classification { accuracy, correct, total } => {
                write!(f, "accuracy {:.4}% ({correct}/{total})", 100.0 * accuracy)
            }
            Metrics::Regression {
                rmse,
                avg_deviation,
                total,
            } => write!(f, "rmse {rmse:.6} deg, avg deviation {avg_deviation:.6} deg over {total}"),
        }
    }
}

/// Per-sample outputs of a model, in dataset order.
pub fn predict(graph: &Graph, data: &Dataset, format: NumericFormat) -> Result<Vec<Tensor>, EngineError> {
    use rayon::prelude::*;
    data.inputs.par_iter().map(|x| engine::infer(graph, x, format)).collect()
}

pub fn evaluate_accuracy(graph: &Graph, data: &Dataset, format: NumericFormat) -> Result<Metrics, EngineError> {
    let outputs = predict(graph, data, format)?;
    Ok(metrics_of(graph.task(), &outputs, &data.targets))
}

pub fn metrics_of(task: &TaskSpec, outputs: &[Tensor], targets: &[Target]) -> Metrics {
    let total = outputs.len();
    match task {
        TaskSpec::Classification { .. } => {
            let correct = outputs
                .iter()
                .zip(targets)
                .filter(|(o, t)| matches!(t, Target::Class(c) if o.argmax() == Some(*c)))
                .count();
            Metrics::Classification {
                accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
                correct,
                total,
            }
        }
        TaskSpec::Regression { unit, .. } => {
            let (mut sq, mut abs) = (0.0, 0.0);
            for (o, t) in outputs.iter().zip(targets) {
                let Target::Value(v) = t else { continue };
                let mut d = o.values()[0] - v;
                if *unit == AngleUnit::Radians {
                    d = d.to_degrees();
                }
                sq += d * d;
                abs += d.abs();
            }
            let n = total.max(1) as f64;
            Metrics::Regression {
                rmse: (sq / n).sqrt(),
                avg_deviation: abs / n,
                total,
            }
        }
    }
}
