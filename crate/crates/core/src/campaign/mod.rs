//! Fault-injection campaigns.
//!
//! A campaign runs the same faults against every graph variant (for example
//! an unprotected model and its instrumented copy) so the variants are
//! compared on paired trials. Faults are drawn uniformly over every scalar
//! output element of every eligible operator, one faulty execution per trial.
//! In exhaustive mode every site is enumerated instead and the reported rate
//! is exact.

mod outcome;
mod report;
mod sampling;
mod stats;

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{self, EngineError, ExecutionTrace, FaultOptions};
use crate::graph::{Graph, TaskSpec};
use crate::modelzoo::{Dataset, Target};
use crate::numerics::NumericFormat;
use crate::tensor::Tensor;

pub use crate::engine::{FaultSpec, MultiBitMode};
pub use outcome::{angle_deviation_degrees, classify_outcome, Outcome, OutcomeKind};
pub use report::{compare_variants, BitStat, Comparison, ComparisonRow, FlopSummary, ThresholdStat, VariantResult};
pub use sampling::{binomial, combinations, SiteUniverse};
pub use stats::{ci95_half_width, intervals_disjoint, Proportion, Z95};

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("no eligible fault sites")]
    NoEligibleSites,
    #[error("invalid campaign config: {0}")]
    Config(String),
    #[error("input {index} is not correctly predicted by the fault-free model")]
    IncorrectInput { index: usize },
    #[error("output shapes differ: golden {golden:?}, faulty {faulty:?}")]
    ShapeMismatch { golden: Vec<usize>, faulty: Vec<usize> },
    #[error("trial {trial} (variant {variant}): {source}")]
    Trial {
        trial: u64,
        variant: String,
        #[source]
        source: EngineError,
    },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("trial log: {0}")]
    Log(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// splitmix64 finalizer over `seed ^ mix(index)`; used for every derived
/// per-trial or per-node generator.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    splitmix(seed ^ splitmix(index))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CampaignMode {
    #[default]
    Sampled,
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub graph: Graph,
}

impl Variant {
    pub fn new(name: impl Into<String>, graph: Graph) -> Self {
        Variant {
            name: name.into(),
            graph,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CampaignConfig {
    /// The first variant defines the fault-site universe; later variants must
    /// keep its node ids.
    pub variants: Vec<Variant>,
    pub inputs: Vec<(Tensor, Target)>,
    pub trials_per_input: usize,
    pub format: NumericFormat,
    pub seed: u64,
    pub exclude_last_fc: bool,
    /// Bits flipped per fault, 1..=5.
    pub bit_count: u32,
    pub multi_bit_mode: MultiBitMode,
    pub mode: CampaignMode,
    pub allow_clip_targets: bool,
    /// JSON-lines trial log; existing entries are reused on restart.
    pub log_path: Option<PathBuf>,
}

impl CampaignConfig {
    pub fn new(variants: Vec<Variant>, inputs: Vec<(Tensor, Target)>) -> Self {
        CampaignConfig {
            variants,
            inputs,
            trials_per_input: 100,
            format: NumericFormat::fixed32(),
            seed: 0,
            exclude_last_fc: true,
            bit_count: 1,
            multi_bit_mode: MultiBitMode::SingleValue,
            mode: CampaignMode::Sampled,
            allow_clip_targets: false,
            log_path: None,
        }
    }

    pub fn task(&self) -> &TaskSpec {
        self.variants[0].graph.task()
    }

    pub fn fault_options(&self) -> FaultOptions {
        let base = &self.variants[0].graph;
        FaultOptions {
            excluded: if self.exclude_last_fc { base.last_fc_layer() } else { Vec::new() },
            allow_clip_targets: self.allow_clip_targets,
        }
    }

    pub fn universe(&self) -> Result<SiteUniverse, CampaignError> {
        SiteUniverse::new(&self.variants[0].graph, &self.fault_options(), self.format.width())
    }

    /// Total trial count: sampled `inputs x trials_per_input`, or every site
    /// for every input in exhaustive mode.
    pub fn total_trials(&self) -> Result<u64, CampaignError> {
        let per_input = match self.mode {
            CampaignMode::Sampled => self.trials_per_input as u64,
            CampaignMode::Exhaustive => self.universe()?.exhaustive_size(self.bit_count),
        };
        Ok(per_input * self.inputs.len() as u64)
    }

    fn validate(&self) -> Result<(), CampaignError> {
        let bad = |m: String| Err(CampaignError::Config(m));
        if self.variants.is_empty() {
            return bad("no graph variants".into());
        }
        if self.inputs.is_empty() {
            return bad("no inputs".into());
        }
        if self.trials_per_input == 0 && self.mode == CampaignMode::Sampled {
            return bad("trials per input must be at least 1".into());
        }
        if !(1..=5).contains(&self.bit_count) || self.bit_count > self.format.width() {
            return bad(format!("bit count {} outside 1..=5", self.bit_count));
        }
        let task = self.task();
        for v in &self.variants[1..] {
            if v.graph.task() != task {
                return bad(format!("variant '{}' has a different task", v.name));
            }
        }
        Ok(())
    }
}

/// Fault-free model prediction agrees with the label. Regression outputs must
/// land within the tightest SDC threshold.
pub fn is_correct(graph: &Graph, output: &Tensor, target: &Target) -> bool {
    match (graph.task(), target) {
        (TaskSpec::Classification { .. }, Target::Class(c)) => output.argmax() == Some(*c),
        (TaskSpec::Regression { sdc_thresholds, unit }, Target::Value(v)) => {
            output.all_finite() && angle_deviation_degrees(*v, output.values()[0], *unit) <= sdc_thresholds[0]
        }
        _ => false,
    }
}

/// The first `count` samples, in dataset order, that every variant predicts
/// correctly when fault-free.
pub fn correct_inputs(
    variants: &[Variant],
    data: &Dataset,
    count: usize,
    format: NumericFormat,
) -> Result<Vec<(Tensor, Target)>, CampaignError> {
    let mut picked = Vec::with_capacity(count);
    for (x, t) in data.iter() {
        if picked.len() == count {
            break;
        }
        let mut ok = true;
        for v in variants {
            let y = engine::infer(&v.graph, x, format)?;
            ok &= is_correct(&v.graph, &y, t);
        }
        if ok {
            picked.push((x.clone(), *t));
        }
    }
    Ok(picked)
}

/// One trial's verdicts for every variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub input: usize,
    pub fault: FaultSpec,
    pub outcomes: Vec<Outcome>,
}

/// Aggregated campaign output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub format: String,
    pub seed: u64,
    pub mode: CampaignMode,
    pub bit_count: u32,
    pub multi_bit_mode: MultiBitMode,
    pub inputs: usize,
    pub trials: u64,
    pub sites_per_input: usize,
    pub exclude_last_fc: bool,
    pub variants: Vec<VariantResult>,
}

impl CampaignResult {
    pub fn variant(&self, name: &str) -> Option<&VariantResult> {
        self.variants.iter().find(|v| v.variant == name)
    }
}

/// Draws the fault for one trial of a sampled campaign.
pub fn sample_fault(config: &CampaignConfig, trial_index: u64) -> Result<FaultSpec, CampaignError> {
    let universe = config.universe()?;
    Ok(universe.sample(config.seed, trial_index, config.bit_count, config.multi_bit_mode))
}

fn read_log(path: &PathBuf, variants: usize) -> Result<BTreeMap<u64, TrialRecord>, CampaignError> {
    let mut done = BTreeMap::new();
    let Ok(file) = File::open(path) else {
        return Ok(done);
    };
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        // a crash can leave a torn final line; everything before it is kept
        let Ok(rec) = serde_json::from_str::<TrialRecord>(&line) else {
            break;
        };
        if rec.outcomes.len() != variants {
            return Err(CampaignError::Log(format!(
                "trial {} has {} outcomes, expected {variants}",
                rec.trial,
                rec.outcomes.len()
            )));
        }
        done.insert(rec.trial, rec);
    }
    Ok(done)
}

pub fn run_campaign(config: &CampaignConfig) -> Result<CampaignResult, CampaignError> {
    config.validate()?;
    let options = config.fault_options();
    let universe = config.universe()?;
    let task = config.task().clone();
    let format = config.format;

    // golden traces per (variant, input)
    let mut goldens: Vec<Vec<ExecutionTrace>> = Vec::with_capacity(config.variants.len());
    for v in &config.variants {
        let traces = config
            .inputs
            .par_iter()
            .map(|(x, _)| engine::run(&v.graph, x, format))
            .collect::<Result<Vec<_>, _>>()?;
        goldens.push(traces);
    }
    let base = &config.variants[0].graph;
    for (i, ((_, target), trace)) in config.inputs.iter().zip(&goldens[0]).enumerate() {
        if !is_correct(base, trace.final_output(base), target) {
            return Err(CampaignError::IncorrectInput { index: i });
        }
    }

    let combos = combinations(format.width(), config.bit_count);
    let per_input = match config.mode {
        CampaignMode::Sampled => config.trials_per_input as u64,
        CampaignMode::Exhaustive => universe.exhaustive_size(config.bit_count),
    };
    let total = per_input * config.inputs.len() as u64;

    let mut done = match &config.log_path {
        Some(p) => read_log(p, config.variants.len())?,
        None => BTreeMap::new(),
    };
    let mut log = match &config.log_path {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            // rewrite only the intact prefix so a torn line is dropped
            let mut f = File::create(p)?;
            for rec in done.values() {
                writeln!(f, "{}", serde_json::to_string(rec).expect("record serializes"))?;
            }
            drop(f);
            Some(OpenOptions::new().append(true).open(p)?)
        }
        None => None,
    };

    // element-major lookup for exhaustive mode
    let element_sites: Vec<(crate::graph::NodeId, usize)> = if config.mode == CampaignMode::Exhaustive {
        universe
            .enumerate(1, MultiBitMode::SingleValue)
            .step_by(format.width() as usize)
            .map(|f| (f.target_op, f.element_index))
            .collect()
    } else {
        Vec::new()
    };

    const CHUNK: u64 = 4096;
    let mut start = 0;
    while start < total {
        let end = (start + CHUNK).min(total);
        let pending: Vec<u64> = (start..end).filter(|t| !done.contains_key(t)).collect();
        let records = pending
            .par_iter()
            .map(|&trial| {
                let input = (trial / per_input) as usize;
                let fault = match config.mode {
                    CampaignMode::Sampled => {
                        universe.sample(config.seed, trial, config.bit_count, config.multi_bit_mode)
                    }
                    CampaignMode::Exhaustive => {
                        let site = trial % per_input;
                        let per_element = combos.len() as u64;
                        let (target_op, element_index) = element_sites[(site / per_element) as usize];
                        FaultSpec {
                            target_op,
                            element_index,
                            bit_positions: combos[(site % per_element) as usize].clone(),
                            trial_index: trial,
                            mode: config.multi_bit_mode,
                        }
                    }
                };
                let outcomes = config
                    .variants
                    .iter()
                    .zip(&goldens)
                    .map(|(v, golden)| {
                        let trace = &golden[input];
                        let faulty = engine::replay_with_fault(&v.graph, trace, &fault, format, &options).map_err(
                            |source| CampaignError::Trial {
                                trial,
                                variant: v.name.clone(),
                                source,
                            },
                        )?;
                        classify_outcome(trace.final_output(&v.graph), &faulty, &task)
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(TrialRecord {
                    trial,
                    input,
                    fault,
                    outcomes,
                })
            })
            .collect::<Result<Vec<_>, CampaignError>>()?;
        if let Some(f) = log.as_mut() {
            for rec in &records {
                writeln!(f, "{}", serde_json::to_string(rec).expect("record serializes"))?;
            }
            f.flush()?;
        }
        for rec in records {
            done.insert(rec.trial, rec);
        }
        start = end;
    }

    let records: Vec<&TrialRecord> = done.range(0..total).map(|(_, r)| r).collect();
    let variants = report::aggregate(config, &records, &task);
    Ok(CampaignResult {
        format: format.to_string(),
        seed: config.seed,
        mode: config.mode,
        bit_count: config.bit_count,
        multi_bit_mode: config.multi_bit_mode,
        inputs: config.inputs.len(),
        trials: total,
        sites_per_input: universe.elements(),
        exclude_last_fc: config.exclude_last_fc,
        variants,
    })
}
