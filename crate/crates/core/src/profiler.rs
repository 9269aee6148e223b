//! Restriction-bound derivation by profiling activation values.
//!
//! Each ReLU layer gets `(0, up)` where `up` is the nearest-rank percentile
//! of every value the layer produced over the sample set (the maximum at
//! percentile 100). Tanh is bounded by construction and gets `(-1, 1)`
//! without sampling.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::campaign::mix_seed;
use crate::engine::{self, EngineError};
use crate::graph::{ActKind, Graph, NodeId};
use crate::numerics::NumericFormat;
use crate::tensor::Tensor;

pub const DEFAULT_RESERVOIR: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("no profiling samples")]
    NoSamples,
    #[error("percentile {0} outside (0, 100]")]
    Percentile(f64),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("bounds file: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-activation restriction bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSet {
    pub percentile: f64,
    #[serde(rename = "bounds")]
    pub act_bounds: BTreeMap<NodeId, (f64, f64)>,
    #[serde(default)]
    pub sample_count: usize,
}

impl BoundSet {
    pub fn get(&self, id: NodeId) -> Option<(f64, f64)> {
        self.act_bounds.get(&id).copied()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("bounds serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, ProfileError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ProfileError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ProfileError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileOptions {
    pub percentile: f64,
    /// Datapath format the samples are run in.
    pub format: NumericFormat,
    /// Values kept per layer for percentiles below 100.
    pub reservoir_size: usize,
    pub seed: u64,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        ProfileOptions {
            percentile: 100.0,
            format: NumericFormat::Float32,
            reservoir_size: DEFAULT_RESERVOIR,
            seed: 0,
        }
    }
}

impl ProfileOptions {
    pub fn at_percentile(percentile: f64) -> Self {
        ProfileOptions {
            percentile,
            ..Self::default()
        }
    }
}

/// Nearest-rank percentile of an ascending-sorted slice.
pub fn nearest_rank(sorted: &[f64], percentile: f64) -> f64 {
    let n = sorted.len();
    // the epsilon absorbs representation error in e.g. 99.9 * n / 100
    let rank = ((percentile * n as f64 / 100.0) - 1e-9).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Running statistics for one layer.
#[derive(Debug, Clone)]
struct LayerStats {
    max: f64,
    min: f64,
    seen: u64,
    reservoir: Vec<f64>,
    capacity: usize,
    rng: ChaCha8Rng,
}

impl LayerStats {
    fn new(capacity: usize, seed: u64) -> Self {
        LayerStats {
            max: f64::NEG_INFINITY,
            min: f64::INFINITY,
            seen: 0,
            reservoir: Vec::new(),
            capacity,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn push(&mut self, v: f64, keep: bool) {
        self.max = self.max.max(v);
        self.min = self.min.min(v);
        self.seen += 1;
        if !keep {
            return;
        }
        if self.reservoir.len() < self.capacity {
            self.reservoir.push(v);
        } else {
            let j = self.rng.gen_range(0..self.seen);
            if (j as usize) < self.capacity {
                self.reservoir[j as usize] = v;
            }
        }
    }

    fn upper(&mut self, percentile: f64) -> f64 {
        if percentile >= 100.0 || self.reservoir.is_empty() {
            return self.max;
        }
        self.reservoir.sort_by(f64::total_cmp);
        nearest_rank(&self.reservoir, percentile)
    }
}

fn act_layers(graph: &Graph) -> Vec<(NodeId, usize, ActKind)> {
    graph
        .nodes()
        .iter()
        .enumerate()
        .filter_map(|(pos, n)| n.kind.act_kind().map(|k| (n.id, pos, k)))
        .collect()
}

/// Runs every sample and hands the selected layers' outputs to `visit`, in
/// sample order. Inference fans out across the rayon pool in fixed-size
/// chunks, so the visit order never depends on scheduling.
fn for_each_activation<I>(
    graph: &Graph,
    samples: I,
    format: NumericFormat,
    positions: &[usize],
    mut visit: impl FnMut(usize, &[Tensor]),
) -> Result<usize, ProfileError>
where
    I: IntoIterator<Item = Tensor>,
{
    const CHUNK: usize = 256;
    let mut iter = samples.into_iter();
    let mut count = 0;
    loop {
        let chunk: Vec<Tensor> = iter.by_ref().take(CHUNK).collect();
        if chunk.is_empty() {
            break;
        }
        let traces = chunk
            .par_iter()
            .map(|x| {
                let trace = engine::run(graph, x, format)?;
                Ok(positions.iter().map(|&p| trace.outputs[p].clone()).collect::<Vec<_>>())
            })
            .collect::<Result<Vec<_>, EngineError>>()?;
        for acts in traces {
            visit(count, &acts);
            count += 1;
        }
    }
    Ok(count)
}

pub fn profile_bounds<I>(graph: &Graph, samples: I, options: &ProfileOptions) -> Result<BoundSet, ProfileError>
where
    I: IntoIterator<Item = Tensor>,
{
    let p = options.percentile;
    if !(p > 0.0 && p <= 100.0) {
        return Err(ProfileError::Percentile(p));
    }
    let layers = act_layers(graph);
    let sampled: Vec<(NodeId, usize)> = layers
        .iter()
        .filter(|(_, _, k)| *k == ActKind::ReLU)
        .map(|&(id, pos, _)| (id, pos))
        .collect();
    let positions: Vec<usize> = sampled.iter().map(|&(_, p)| p).collect();
    let keep = p < 100.0;
    let mut stats: Vec<LayerStats> = sampled
        .iter()
        .map(|&(id, _)| LayerStats::new(options.reservoir_size, mix_seed(options.seed, u64::from(id))))
        .collect();
    let count = for_each_activation(graph, samples, options.format, &positions, |_, acts| {
        for (s, t) in stats.iter_mut().zip(acts) {
            for &v in t.values() {
                s.push(v, keep);
            }
        }
    })?;
    if count == 0 {
        return Err(ProfileError::NoSamples);
    }
    let mut act_bounds = BTreeMap::new();
    let mut sampled_stats = sampled.iter().zip(stats.iter_mut());
    for (id, _, kind) in layers {
        let bound = match kind {
            ActKind::Tanh => (-1.0, 1.0),
            ActKind::ReLU => {
                let (_, s) = sampled_stats.next().expect("one stats entry per ReLU");
                (0.0, s.upper(p).max(0.0))
            }
        };
        act_bounds.insert(id, bound);
    }
    Ok(BoundSet {
        percentile: p,
        act_bounds,
        sample_count: count,
    })
}

/// Running per-layer maxima at sample-count checkpoints, normalized by the
/// value at the last checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub checkpoints: Vec<usize>,
    /// `(layer id, raw running max per checkpoint)`.
    pub raw: Vec<(NodeId, Vec<f64>)>,
    pub normalized: Vec<(NodeId, Vec<f64>)>,
}

impl ConvergenceReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,samples,running_max,normalized\n");
        for ((id, raw), (_, norm)) in self.raw.iter().zip(&self.normalized) {
            for ((c, r), n) in self.checkpoints.iter().zip(raw).zip(norm) {
                let _ = writeln!(out, "{id},{c},{r},{n}");
            }
        }
        out
    }
}

/// Checkpoints beyond the number of samples available are clamped to it.
pub fn bound_convergence_report<I>(
    graph: &Graph,
    samples: I,
    checkpoints: &[usize],
    format: NumericFormat,
) -> Result<ConvergenceReport, ProfileError>
where
    I: IntoIterator<Item = Tensor>,
{
    let layers = act_layers(graph);
    let positions: Vec<usize> = layers.iter().map(|&(_, p, _)| p).collect();
    let mut marks: Vec<usize> = checkpoints.iter().copied().filter(|&c| c > 0).collect();
    marks.sort_unstable();
    marks.dedup();
    let limit = marks.last().copied().unwrap_or(0);
    let mut running = vec![f64::NEG_INFINITY; layers.len()];
    let mut snapshots: Vec<Vec<f64>> = Vec::new();
    let mut next = 0;
    let count = for_each_activation(graph, samples.into_iter().take(limit), format, &positions, |i, acts| {
        for (m, t) in running.iter_mut().zip(acts) {
            *m = t.values().iter().copied().fold(*m, f64::max);
        }
        while next < marks.len() && marks[next] == i + 1 {
            snapshots.push(running.clone());
            next += 1;
        }
    })?;
    if count == 0 {
        return Err(ProfileError::NoSamples);
    }
    // checkpoints past the end of the data all see the full set
    let mut reached: Vec<usize> = marks[..next].to_vec();
    if next < marks.len() {
        snapshots.push(running.clone());
        reached.push(count);
    }
    let mut raw = Vec::new();
    let mut normalized = Vec::new();
    for (l, &(id, _, _)) in layers.iter().enumerate() {
        let series: Vec<f64> = snapshots.iter().map(|s| s[l]).collect();
        let last = *series.last().expect("at least one snapshot");
        let norm = series
            .iter()
            .map(|&v| if last == 0.0 { 1.0 } else { v / last })
            .collect();
        raw.push((id, series));
        normalized.push((id, norm));
    }
    Ok(ConvergenceReport {
        checkpoints: reached,
        raw,
        normalized,
    })
}
