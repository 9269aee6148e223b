//! Aggregation, JSON/CSV/plaintext reports and variant comparison.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::outcome::OutcomeKind;
use super::stats::{ci95_half_width, Proportion};
use super::{CampaignConfig, CampaignMode, CampaignResult, TrialRecord};
use crate::engine::count_flops;
use crate::graph::TaskSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdStat {
    /// Degrees; `None` for classification.
    pub threshold: Option<f64>,
    pub sdc_count: u64,
    pub masked_count: u64,
    pub detectable_count: u64,
    pub sdc: f64,
    pub ci95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BitStat {
    pub bit: u32,
    pub trials: u64,
    pub sdc_count: u64,
    pub sdc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopSummary {
    pub total: u64,
    pub baseline_total: u64,
    pub overhead: i64,
    pub overhead_pct: f64,
}

/// Per-variant statistics. Headline rates refer to the first (tightest)
/// threshold for regression tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub variant: String,
    pub n: u64,
    pub sdc: f64,
    pub masked: f64,
    pub detectable: f64,
    pub ci95: f64,
    pub per_threshold: Vec<ThresholdStat>,
    pub per_bit_histogram: Vec<BitStat>,
    pub flops: FlopSummary,
}

impl VariantResult {
    pub fn sdc_proportion(&self, threshold: usize) -> Proportion {
        Proportion::new(self.per_threshold[threshold].sdc_count, self.n)
    }

    pub fn sdc_counts(&self) -> Proportion {
        self.sdc_proportion(0)
    }
}

pub(super) fn aggregate(config: &CampaignConfig, records: &[&TrialRecord], task: &TaskSpec) -> Vec<VariantResult> {
    let thresholds: Vec<Option<f64>> = match task {
        TaskSpec::Classification { .. } => vec![None],
        TaskSpec::Regression { sdc_thresholds, .. } => sdc_thresholds.iter().copied().map(Some).collect(),
    };
    let width = config.format.width() as usize;
    let n = records.len() as u64;
    let baseline_flops = count_flops(&config.variants[0].graph).total;
    config
        .variants
        .iter()
        .enumerate()
        .map(|(vi, v)| {
            let mut counts = vec![[0u64; 3]; thresholds.len()];
            let mut bits = vec![(0u64, 0u64); width];
            for rec in records {
                let o = &rec.outcomes[vi];
                for (t, c) in counts.iter_mut().enumerate() {
                    match o.kind(t) {
                        OutcomeKind::Sdc => c[0] += 1,
                        OutcomeKind::Masked => c[1] += 1,
                        OutcomeKind::Detectable => c[2] += 1,
                    }
                }
                let primary_sdc = o.kind(0) == OutcomeKind::Sdc;
                for &b in &rec.fault.bit_positions {
                    bits[b as usize].0 += 1;
                    bits[b as usize].1 += u64::from(primary_sdc);
                }
            }
            let rate = |c: u64| if n == 0 { 0.0 } else { c as f64 / n as f64 };
            let per_threshold: Vec<ThresholdStat> = thresholds
                .iter()
                .zip(&counts)
                .map(|(&threshold, c)| ThresholdStat {
                    threshold,
                    sdc_count: c[0],
                    masked_count: c[1],
                    detectable_count: c[2],
                    sdc: rate(c[0]),
                    ci95: ci95_half_width(rate(c[0]), n),
                })
                .collect();
            let per_bit_histogram = bits
                .iter()
                .enumerate()
                .map(|(bit, &(trials, sdc_count))| BitStat {
                    bit: bit as u32,
                    trials,
                    sdc_count,
                    sdc: if trials == 0 { 0.0 } else { sdc_count as f64 / trials as f64 },
                })
                .collect();
            let total = count_flops(&v.graph).total;
            let overhead = total as i64 - baseline_flops as i64;
            let head = &per_threshold[0];
            VariantResult {
                variant: v.name.clone(),
                n,
                sdc: head.sdc,
                masked: rate(head.masked_count),
                detectable: rate(head.detectable_count),
                ci95: head.ci95,
                per_bit_histogram,
                flops: FlopSummary {
                    total,
                    baseline_total: baseline_flops,
                    overhead,
                    overhead_pct: if baseline_flops == 0 {
                        0.0
                    } else {
                        100.0 * overhead as f64 / baseline_flops as f64
                    },
                },
                per_threshold,
            }
        })
        .collect()
}

fn threshold_label(t: Option<f64>) -> String {
    match t {
        None => "top-k".to_string(),
        Some(t) => format!("{t}deg"),
    }
}

impl CampaignResult {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Plaintext summary, one row per variant and threshold.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "format {}  mode {}  bits {}  inputs {}  trials {}  seed {}",
            self.format,
            match self.mode {
                CampaignMode::Sampled => "sampled",
                CampaignMode::Exhaustive => "exhaustive",
            },
            self.bit_count,
            self.inputs,
            self.trials,
            self.seed
        );
        let _ = writeln!(
            out,
            "{:<16} {:>10} {:>9} {:>10} {:>9} {:>11} {:>9}",
            "variant", "threshold", "n", "SDC %", "+/- %", "detect %", "FLOPs +%"
        );
        for v in &self.variants {
            for t in &v.per_threshold {
                let _ = writeln!(
                    out,
                    "{:<16} {:>10} {:>9} {:>10.3} {:>9.3} {:>11.3} {:>9.3}",
                    v.variant,
                    threshold_label(t.threshold),
                    v.n,
                    100.0 * t.sdc,
                    100.0 * t.ci95,
                    100.0 * t.detectable_count as f64 / v.n.max(1) as f64,
                    v.flops.overhead_pct
                );
            }
        }
        out
    }

    /// Plot data: `variant,bit,trials,sdc_count,sdc_rate`.
    pub fn bit_histogram_csv(&self) -> String {
        let mut out = String::from("variant,bit,trials,sdc_count,sdc_rate\n");
        for v in &self.variants {
            for b in &v.per_bit_histogram {
                let _ = writeln!(out, "{},{},{},{},{}", v.variant, b.bit, b.trials, b.sdc_count, b.sdc);
            }
        }
        out
    }

    /// Plot data: `variant,threshold,sdc_rate,ci95`.
    pub fn threshold_csv(&self) -> String {
        let mut out = String::from("variant,threshold,sdc_rate,ci95\n");
        for v in &self.variants {
            for t in &v.per_threshold {
                let th = t.threshold.map(|x| x.to_string()).unwrap_or_default();
                let _ = writeln!(out, "{},{},{},{}", v.variant, th, t.sdc, t.ci95);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub variant: String,
    pub threshold: Option<f64>,
    pub baseline_sdc: f64,
    pub sdc: f64,
    /// `1 - sdc / baseline_sdc`; `None` when the baseline has no SDCs.
    pub reduction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: String,
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn to_table(&self) -> String {
        let mut out = format!("relative SDC reduction vs '{}'\n", self.baseline);
        let _ = writeln!(
            out,
            "{:<16} {:>10} {:>12} {:>10} {:>12}",
            "variant", "threshold", "baseline %", "SDC %", "reduction"
        );
        for r in &self.rows {
            let red = match r.reduction {
                Some(x) => format!("{:.2}%", 100.0 * x),
                None => "n/a".to_string(),
            };
            let _ = writeln!(
                out,
                "{:<16} {:>10} {:>12.3} {:>10.3} {:>12}",
                r.variant,
                threshold_label(r.threshold),
                100.0 * r.baseline_sdc,
                100.0 * r.sdc,
                red
            );
        }
        out
    }

    pub fn reduction(&self, variant: &str, threshold: usize) -> Option<f64> {
        self.rows
            .iter()
            .filter(|r| r.variant == variant)
            .nth(threshold)
            .and_then(|r| r.reduction)
    }
}

/// Relative SDC reduction of every variant against the first one.
pub fn compare_variants(results: &[VariantResult]) -> Comparison {
    let Some(base) = results.first() else {
        return Comparison {
            baseline: String::new(),
            rows: Vec::new(),
        };
    };
    let mut rows = Vec::new();
    for v in &results[1..] {
        for (bt, vt) in base.per_threshold.iter().zip(&v.per_threshold) {
            rows.push(ComparisonRow {
                variant: v.variant.clone(),
                threshold: vt.threshold,
                baseline_sdc: bt.sdc,
                sdc: vt.sdc,
                reduction: if bt.sdc == 0.0 { None } else { Some(1.0 - vt.sdc / bt.sdc) },
            });
        }
    }
    Comparison {
        baseline: base.variant.clone(),
        rows,
    }
}
