#![allow(dead_code)]

use std::path::PathBuf;

use rangeguard::campaign::{correct_inputs, run_campaign, CampaignConfig, CampaignResult, Variant};
use rangeguard::graph::{load_model, Graph};
use rangeguard::modelzoo::{load_dataset, Architecture, Dataset};
use rangeguard::profiler::{profile_bounds, BoundSet, ProfileOptions};
use rangeguard::ranger::{instrument, Extension, Instrumentation};
use rangeguard::{CorrectionPolicy, NumericFormat};

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn shipped(arch: Architecture) -> Graph {
    let dir = repo_root().join("models");
    load_model(&dir.join(format!("{arch}.json")), &dir.join(format!("{arch}.rgwb"))).expect("shipped model loads")
}

fn data_pair(dir: &str, inputs: &str, targets: &str) -> Dataset {
    let dir = repo_root().join("data").join(dir);
    load_dataset(&dir.join(inputs), &dir.join(targets)).expect("data set loads")
}

pub fn train_set(arch: Architecture) -> Dataset {
    match arch {
        Architecture::LenetMini | Architecture::LenetMiniTanh => {
            data_pair("mnist", "train-images.idx", "train-labels.idx")
        }
        a => data_pair(a.name(), "train-inputs.rgtn", "train-targets.rgtn"),
    }
}

pub fn val_set(arch: Architecture) -> Dataset {
    match arch {
        Architecture::LenetMini | Architecture::LenetMiniTanh => data_pair("mnist", "val-images.idx", "val-labels.idx"),
        a => data_pair(a.name(), "val-inputs.rgtn", "val-targets.rgtn"),
    }
}

pub fn bounds(graph: &Graph, data: &Dataset, percentile: f64, format: NumericFormat) -> BoundSet {
    let options = ProfileOptions {
        percentile,
        format,
        ..ProfileOptions::default()
    };
    profile_bounds(graph, data.inputs.iter().cloned(), &options).expect("profiling succeeds")
}

pub fn protect(graph: &Graph, bounds: &BoundSet) -> Instrumentation {
    instrument(graph, bounds, CorrectionPolicy::ToBound, Extension::Transitive).expect("instrumentation succeeds")
}

/// Original vs. ranger-protected campaign on the first `inputs` validation
/// samples both graphs classify correctly.
pub struct Rq1 {
    pub format: NumericFormat,
    pub inputs: usize,
    pub trials_per_input: usize,
    pub bit_count: u32,
    pub seed: u64,
}

impl Rq1 {
    pub fn run(&self, arch: Architecture, extra: Vec<Variant>) -> CampaignResult {
        let g = shipped(arch);
        let b = bounds(&g, &train_set(arch), 100.0, self.format);
        let mut variants = vec![Variant::new("original", g.clone()), Variant::new("ranger", protect(&g, &b).graph)];
        variants.extend(extra);
        let inputs = correct_inputs(&variants, &val_set(arch), self.inputs, self.format).expect("inference");
        assert_eq!(inputs.len(), self.inputs, "not enough correctly classified inputs");
        let mut config = CampaignConfig::new(variants, inputs);
        config.format = self.format;
        config.trials_per_input = self.trials_per_input;
        config.bit_count = self.bit_count;
        config.seed = self.seed;
        config.exclude_last_fc = true;
        run_campaign(&config).expect("campaign runs")
    }
}
