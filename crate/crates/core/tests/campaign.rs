use std::fs;

use rangeguard::campaign::{
    binomial, correct_inputs, run_campaign, sample_fault, CampaignConfig, CampaignError, CampaignMode, MultiBitMode, Variant,
};
use rangeguard::modelzoo::{toy_dataset, Architecture, Target};
use rangeguard::NumericFormat;

fn toy_config(inputs: usize) -> CampaignConfig {
    let g = Architecture::ToyChain.build(0);
    let data = toy_dataset(inputs, 4);
    let mut c = CampaignConfig::new(vec![Variant::new("original", g)], data.iter().map(|(x, t)| (x.clone(), *t)).collect());
    c.exclude_last_fc = false;
    c.seed = 21;
    c
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let mut c = toy_config(3);
    c.trials_per_input = 3000;
    let one = in_pool(1, || run_campaign(&c).unwrap().to_json());
    let three = in_pool(3, || run_campaign(&c).unwrap().to_json());
    assert_eq!(one, three);
}

#[test]
fn interrupted_log_resumes_to_the_same_report() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("trials.jsonl");
    let mut c = toy_config(2);
    c.trials_per_input = 2500;
    let reference = run_campaign(&c).unwrap();

    c.log_path = Some(log.clone());
    assert_eq!(run_campaign(&c).unwrap(), reference);
    let full = fs::read_to_string(&log).unwrap();
    assert_eq!(full.lines().count(), 5000);

    // keep 1234 records and half of the next one
    let lines: Vec<&str> = full.lines().collect();
    let mut torn = lines[..1234].join("\n");
    torn.push('\n');
    torn.push_str(&lines[1234][..lines[1234].len() / 2]);
    fs::write(&log, torn).unwrap();

    assert_eq!(run_campaign(&c).unwrap(), reference);
    assert_eq!(fs::read_to_string(&log).unwrap(), full);
}

#[test]
fn exhaustive_covers_every_site_once() {
    let mut c = toy_config(2);
    c.format = NumericFormat::fixed16();
    c.inputs = correct_inputs(&c.variants, &toy_dataset(50, 4), 2, c.format).unwrap();
    c.mode = CampaignMode::Exhaustive;
    let elements = c.universe().unwrap().elements() as u64;
    assert_eq!(elements, 8 + 8 + 8 + 4 + 4);
    let r = run_campaign(&c).unwrap();
    assert_eq!(r.trials, 2 * elements * 16);
    let v = &r.variants[0];
    assert!(v.per_bit_histogram.iter().all(|b| b.trials == 2 * elements));
    let sdc: u64 = v.per_bit_histogram.iter().map(|b| b.sdc_count).sum();
    assert_eq!(sdc, v.per_threshold[0].sdc_count);

    c.bit_count = 2;
    let r = run_campaign(&c).unwrap();
    assert_eq!(r.trials, 2 * elements * binomial(16, 2));
    // every bit appears in 15 of the 120 pairs
    assert!(r.variants[0].per_bit_histogram.iter().all(|b| b.trials == 2 * elements * 15));
}

#[test]
fn multi_bit_faults_use_distinct_bits() {
    let mut c = toy_config(1);
    for mode in [MultiBitMode::SingleValue, MultiBitMode::AdjacentValues] {
        for k in 1..=5 {
            c.bit_count = k;
            c.multi_bit_mode = mode;
            for t in 0..200 {
                let f = sample_fault(&c, t).unwrap();
                let mut bits = f.bit_positions.clone();
                bits.sort_unstable();
                bits.dedup();
                assert_eq!(bits.len(), k as usize);
                assert!(bits.iter().all(|&b| b < 32));
                assert_eq!(f.mode, mode);
            }
        }
    }
}

#[test]
fn bad_configurations_are_rejected() {
    let mut c = toy_config(2);
    c.inputs[1].1 = match c.inputs[1].1 {
        Target::Class(k) => Target::Class((k + 1) % 4),
        t => t,
    };
    assert!(matches!(run_campaign(&c), Err(CampaignError::IncorrectInput { index: 1 })));

    let mut c = toy_config(1);
    c.bit_count = 6;
    assert!(matches!(run_campaign(&c), Err(CampaignError::Config(_))));

    let mut c = toy_config(1);
    c.variants.push(Variant::new("mlp", Architecture::TinyMlp.build(0)));
    assert!(matches!(run_campaign(&c), Err(CampaignError::Config(_))));
}
