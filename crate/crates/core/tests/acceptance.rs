//! Acceptance suite. Prints one `[PASS]`/`[FAIL]` line per criterion and
//! exits non-zero if any criterion fails.

mod common;

use std::time::{Duration, Instant};

use rangeguard::campaign::{
    compare_variants, correct_inputs, intervals_disjoint, run_campaign, CampaignConfig, CampaignMode, CampaignResult,
    Variant, VariantResult,
};
use rangeguard::engine::{count_flops, infer};
use rangeguard::graph::ActKind;
use rangeguard::modelzoo::{evaluate_accuracy, Architecture, Metrics};
use rangeguard::ranger::act_swap;
use rangeguard::NumericFormat;

use common::{bounds, protect, shipped, train_set, val_set, Rq1};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn pct(x: f64) -> String {
    format!("{:.3}%", 100.0 * x)
}

fn rate(v: &VariantResult) -> String {
    format!("{} +/- {}", pct(v.sdc), pct(v.ci95))
}

fn formats() -> [NumericFormat; 3] {
    [NumericFormat::Float32, NumericFormat::fixed32(), NumericFormat::fixed16()]
}

fn toy_campaign(format: NumericFormat, mode: CampaignMode, trials_per_input: usize) -> CampaignResult {
    let g = shipped(Architecture::ToyChain);
    let variants = vec![Variant::new("original", g)];
    let inputs = correct_inputs(&variants, &val_set(Architecture::ToyChain), 10, format).unwrap();
    let mut config = CampaignConfig::new(variants, inputs);
    config.format = format;
    config.mode = mode;
    config.trials_per_input = trials_per_input;
    config.exclude_last_fc = false;
    config.seed = 1;
    run_campaign(&config).unwrap()
}

fn oracle_equivalence() -> Verdict {
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for format in formats() {
        let exact = toy_campaign(format, CampaignMode::Exhaustive, 0);
        let sampled = toy_campaign(format, CampaignMode::Sampled, 500);
        let (e, s) = (&exact.variants[0], &sampled.variants[0]);
        assert_eq!(s.n, 5000);
        let ok = exact.trials <= 100_000 && (s.sdc - e.sdc).abs() <= s.ci95;
        pass &= ok;
        parts.push(format!("{format}: exact {} over {} sites, sampled {}", pct(e.sdc), exact.trials, rate(s)));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(120);
    verdict(pass, format!("{}; {:.1}s", parts.join("; "), elapsed.as_secs_f64()))
}

fn ranger_efficacy(format: NumericFormat) -> Verdict {
    let start = Instant::now();
    let r = Rq1 {
        format,
        inputs: 10,
        trials_per_input: 3000,
        bit_count: 1,
        seed: 42,
    }
    .run(Architecture::LenetMini, Vec::new());
    let (o, p) = (&r.variants[0], &r.variants[1]);
    let elapsed = start.elapsed();
    let pass = p.sdc <= 0.2 * o.sdc
        && intervals_disjoint(&o.sdc_counts(), &p.sdc_counts())
        && elapsed < Duration::from_secs(600);
    verdict(
        pass,
        format!(
            "lenet-mini {format}, n={}: original {}, ranger {}, {:.1}x; {:.1}s",
            o.n,
            rate(o),
            rate(p),
            o.sdc / p.sdc.max(f64::MIN_POSITIVE),
            elapsed.as_secs_f64()
        ),
    )
}

fn accuracy_preservation() -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    let f = NumericFormat::Float32;
    for &arch in Architecture::all() {
        let g = shipped(arch);
        let b = bounds(&g, &train_set(arch), 100.0, f);
        let protected = protect(&g, &b).graph;
        let val = val_set(arch);
        assert!(val.len() >= 1000);
        let (m0, m1) = (evaluate_accuracy(&g, &val, f).unwrap(), evaluate_accuracy(&protected, &val, f).unwrap());
        match (m0, m1) {
            (Metrics::Classification { accuracy: a0, .. }, Metrics::Classification { accuracy: a1, .. }) => {
                let diff = 100.0 * (a1 - a0);
                pass &= diff.abs() <= 0.1;
                parts.push(format!("{arch} {} -> {} ({diff:+.2}pp)", pct(a0), pct(a1)));
            }
            (
                Metrics::Regression {
                    rmse: r0,
                    avg_deviation: d0,
                    ..
                },
                Metrics::Regression {
                    rmse: r1,
                    avg_deviation: d1,
                    ..
                },
            ) => {
                let same = format!("{r0:.6} {d0:.6}") == format!("{r1:.6} {d1:.6}");
                // the exact-metrics gate covers the degree-output regressor only
                let gated = arch == Architecture::SteerMini;
                pass &= same || !gated;
                parts.push(format!(
                    "{arch} rmse {r0:.6}/{r1:.6} avgdev {d0:.6}/{d1:.6}{}",
                    if gated { "" } else { " (not gated)" }
                ));
            }
            _ => unreachable!("task kind is preserved"),
        }
    }
    verdict(pass, format!("{} validation samples each; {}", 1000, parts.join("; ")))
}

fn flop_overhead() -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for &arch in Architecture::all() {
        let g = shipped(arch);
        let inst = protect(&g, &bounds(&g, &train_set(arch).slice(0, 200), 100.0, NumericFormat::Float32));
        let (base, total) = (count_flops(&g).total, count_flops(&inst.graph).total);
        let bounded: u64 = inst
            .clips
            .iter()
            .map(|&(node, ..)| g.node(node).unwrap().output_shape.iter().product::<usize>() as u64)
            .sum();
        let overhead = 100.0 * (total - base) as f64 / base as f64;
        pass &= overhead < 2.0 && total - base == 2 * bounded;
        parts.push(format!("{arch} {overhead:.3}% (+{} = 2x{bounded})", total - base));
    }
    verdict(pass, parts.join("; "))
}

fn multi_bit() -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    let mut prev: Option<VariantResult> = None;
    for k in 2..=5 {
        let r = Rq1 {
            format: NumericFormat::fixed32(),
            inputs: 10,
            trials_per_input: 300,
            bit_count: k,
            seed: 7,
        }
        .run(Architecture::LenetMini, Vec::new());
        let (o, p) = (&r.variants[0], &r.variants[1]);
        if let Some(q) = &prev {
            pass &= o.sdc + o.ci95 + q.ci95 >= q.sdc;
        }
        pass &= p.sdc < o.sdc;
        parts.push(format!("k={k} original {} ranger {}", rate(o), rate(p)));
        prev = Some(o.clone());
    }
    verdict(pass, format!("lenet-mini fixed32, 3000 trials per k; {}", parts.join("; ")))
}

fn percentile_tradeoff() -> Verdict {
    let arch = Architecture::SteerMini;
    let format = NumericFormat::fixed32();
    let g = shipped(arch);
    let (train, val) = (train_set(arch), val_set(arch));
    let percentiles = [100.0, 99.9, 99.0, 98.0];
    let mut variants = vec![Variant::new("original", g.clone())];
    let mut metrics = Vec::new();
    for p in percentiles {
        let protected = protect(&g, &bounds(&g, &train, p, format)).graph;
        let Metrics::Regression { rmse, avg_deviation, .. } = evaluate_accuracy(&protected, &val, format).unwrap()
        else {
            unreachable!()
        };
        metrics.push((rmse, avg_deviation));
        variants.push(Variant::new(format!("p{p}"), protected));
    }
    let inputs = correct_inputs(&variants, &val, 10, format).unwrap();
    let mut config = CampaignConfig::new(variants, inputs);
    config.format = format;
    config.trials_per_input = 1000;
    config.seed = 3;
    let r = run_campaign(&config).unwrap();
    let protected = &r.variants[1..];
    let mut pass = true;
    for w in protected.windows(2) {
        for t in 0..w[0].per_threshold.len() {
            pass &= w[1].per_threshold[t].sdc <= w[0].per_threshold[t].sdc;
        }
    }
    for w in metrics.windows(2) {
        pass &= w[1].0 >= w[0].0 && w[1].1 >= w[0].1;
    }
    let parts: Vec<String> = protected
        .iter()
        .zip(&metrics)
        .map(|(v, (rmse, dev))| {
            let sdc: Vec<String> = v.per_threshold.iter().map(|t| pct(t.sdc)).collect();
            format!("{} sdc[{}] rmse {rmse:.4} avgdev {dev:.4}", v.variant, sdc.join(" "))
        })
        .collect();
    verdict(
        pass,
        format!(
            "steer-mini fixed32 n={}, thresholds 15/30/60/120deg; original sdc {}; {}",
            r.variants[0].n,
            pct(r.variants[0].sdc),
            parts.join("; ")
        ),
    )
}

fn bit_monotonicity() -> Verdict {
    let format = NumericFormat::fixed32();
    let r = toy_campaign(format, CampaignMode::Exhaustive, 0);
    let hist = &r.variants[0].per_bit_histogram;
    let field = format.integer_bits();
    let mut pass = true;
    for b in field.clone() {
        let lower_max = hist[field.start as usize..b as usize].iter().map(|s| s.sdc).fold(0.0, f64::max);
        pass &= hist[b as usize].sdc >= lower_max;
    }
    let frac_max = hist[..field.start as usize].iter().map(|s| s.sdc).fold(0.0, f64::max);
    let rates: Vec<String> = hist.iter().map(|s| format!("{:.2}", s.sdc)).collect();
    verdict(
        pass,
        format!(
            "toy-chain fixed32 exhaustive, integer bits {field:?}; highest fractional-bit sdc {frac_max:.2} \
             (bit {} sdc {:.2}, not gated); per-bit sdc [{}]",
            field.start,
            hist[field.start as usize].sdc,
            rates.join(" ")
        ),
    )
}

fn semantic_preservation() -> Verdict {
    let mut mismatches = 0usize;
    let mut total = 0usize;
    for &arch in Architecture::all() {
        let g = shipped(arch);
        let data = train_set(arch);
        for format in [NumericFormat::Float32, NumericFormat::fixed32()] {
            let protected = protect(&g, &bounds(&g, &data, 100.0, format)).graph;
            for x in &data.inputs {
                let (a, b) = (infer(&g, x, format).unwrap(), infer(&protected, x, format).unwrap());
                mismatches += usize::from(!a.bit_eq(&b));
                total += 1;
            }
        }
    }
    verdict(
        mismatches == 0,
        format!("{mismatches} mismatches over {total} profiling-set inferences (6 models, float32 and fixed32)"),
    )
}

fn act_swap_baseline() -> Verdict {
    let arch = Architecture::LenetMiniTanh;
    let swapped = act_swap(&shipped(arch), ActKind::ReLU, ActKind::Tanh);
    let r = Rq1 {
        format: NumericFormat::fixed32(),
        inputs: 10,
        trials_per_input: 1000,
        bit_count: 1,
        seed: 11,
    }
    .run(arch, vec![Variant::new("act_swap", swapped)]);
    let c = compare_variants(&r.variants);
    let (o, p, s) = (&r.variants[0], &r.variants[1], &r.variants[2]);
    let (swap_red, ranger_red) = (c.reduction("act_swap", 0), c.reduction("ranger", 0));
    let pass = swap_red == Some(0.0)
        && ranger_red.is_some_and(|x| x > 0.0)
        && intervals_disjoint(&o.sdc_counts(), &p.sdc_counts());
    verdict(
        pass,
        format!(
            "lenet-mini-tanh fixed32 n={}: original {}, act_swap {} ({:?} reduction), ranger {} ({:?} reduction)",
            o.n,
            rate(o),
            rate(s),
            swap_red,
            rate(p),
            ranger_red
        ),
    )
}

fn main() {
    let criteria: Vec<(&str, fn() -> Verdict)> = vec![
        ("1 oracle equivalence", oracle_equivalence),
        ("2 ranger efficacy fixed32", || ranger_efficacy(NumericFormat::fixed32())),
        ("3 accuracy preservation", accuracy_preservation),
        ("4 FLOP overhead", flop_overhead),
        ("5 ranger efficacy fixed16", || ranger_efficacy(NumericFormat::fixed16())),
        ("6 multi-bit faults", multi_bit),
        ("7 percentile trade-off", percentile_tradeoff),
        ("8 bit-position monotonicity", bit_monotonicity),
        ("9 semantic preservation", semantic_preservation),
        ("10 act_swap baseline", act_swap_baseline),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let v = check();
        failed += usize::from(!v.pass);
        println!("[{}] {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
