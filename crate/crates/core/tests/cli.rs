use std::fs;
use std::path::Path;
use std::process::Command;

use rangeguard::campaign::CampaignResult;
use rangeguard::cli;
use rangeguard::profiler::BoundSet;

fn run(args: &[&str]) -> i32 {
    cli::main(std::iter::once("rangeguard").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn exit_codes() {
    let bin = env!("CARGO_BIN_EXE_rangeguard");
    let code = |args: &[&str]| Command::new(bin).args(args).output().unwrap().status.code();
    assert_eq!(code(&["--help"]), Some(0));
    assert_eq!(code(&["--version"]), Some(0));
    assert_eq!(code(&[]), Some(1));
    assert_eq!(code(&["inject", "--bogus"]), Some(1));
    assert_eq!(code(&["train", "--arch", "vgg16", "--out", "x.json"]), Some(1));
    assert_eq!(
        code(&["evaluate", "--model", "/nonexistent.json", "--inputs", "a", "--targets", "b"]),
        Some(2)
    );
    assert_eq!(code(&["report", "--compare", "/nonexistent.json"]), Some(2));
}

#[test]
fn train_profile_instrument_inject_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (model, data) = (d.join("mlp.json"), d.join("data"));
    let args = ["train", "--arch", "tiny-mlp", "--samples", "300", "--epochs", "3", "--out", s(&model), "--export-data", s(&data)];
    assert_eq!(run(&args), 0);
    assert!(d.join("mlp.rgwb").exists());
    let (xi, yi) = (data.join("train-inputs.rgtn"), data.join("train-targets.rgtn"));
    let (vx, vy) = (data.join("val-inputs.rgtn"), data.join("val-targets.rgtn"));
    assert!(vx.exists() && vy.exists());

    let bounds = d.join("bounds.json");
    assert_eq!(
        run(&["profile", "--model", s(&model), "--inputs", s(&xi), "--targets", s(&yi), "--out", s(&bounds)]),
        0
    );
    let b = BoundSet::load(&bounds).unwrap();
    assert_eq!(b.sample_count, 300);
    assert_eq!(b.act_bounds.len(), 1);

    let protected = d.join("mlp-ranger.json");
    assert_eq!(
        run(&["instrument", "--model", s(&model), "--bounds", s(&bounds), "--out", s(&protected)]),
        0
    );
    assert_eq!(run(&["evaluate", "--model", s(&protected), "--inputs", s(&vx), "--targets", s(&vy)]), 0);

    let report = d.join("report.json");
    let variant = format!("twin={}", s(&protected));
    let plot = d.join("plot");
    let inject = [
        "inject", "--model", s(&model), "--bounds", s(&bounds), "--variant", &variant, "--inputs", s(&vx),
        "--targets", s(&vy), "--num-inputs", "3", "--trials", "50", "--seed", "5", "--out", s(&report), "--csv",
        s(&plot),
    ];
    assert_eq!(run(&inject), 0);
    let r = CampaignResult::from_json(&fs::read_to_string(&report).unwrap()).unwrap();
    let names: Vec<&str> = r.variants.iter().map(|v| v.variant.as_str()).collect();
    assert_eq!(names, ["original", "ranger", "twin"]);
    assert_eq!(r.variants[0].n, 150);
    // the explicit variant is the same instrumented graph, so it sees the same faults with the same verdicts
    assert_eq!(r.variants[1].per_threshold, r.variants[2].per_threshold);
    let bits = fs::read_to_string(d.join("plot-bits.csv")).unwrap();
    assert!(bits.starts_with("variant,bit,trials,sdc_count,sdc_rate\n"));
    assert_eq!(bits.lines().count(), 1 + 3 * 32);

    let first = fs::read(&report).unwrap();
    assert_eq!(run(&inject), 0);
    assert_eq!(fs::read(&report).unwrap(), first, "same seed, same report bytes");

    let cmp = d.join("cmp.json");
    assert_eq!(run(&["report", "--compare", s(&report), "--out", s(&cmp)]), 0);
    assert!(fs::read_to_string(&cmp).unwrap().contains("\"reduction\""));

    // too many inputs requested is a runtime error
    let mut greedy = inject.to_vec();
    let at = greedy.iter().position(|a| *a == "3").unwrap();
    greedy[at] = "100000";
    assert_eq!(run(&greedy), 2);
}

#[test]
fn experiment_file_trains_when_model_is_missing() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(run(&["train", "--arch", "toy-chain", "--samples", "100", "--out", s(&d.join("unused.json")), "--export-data", s(&d.join("toy"))]), 0);
    let config = d.join("exp.toml");
    fs::write(
        &config,
        r#"
seed = 9
format = "fixed16"

[model]
manifest = "models/toy.json"
train = { architecture = "toy-chain" }

[data]
inputs = "toy/val-inputs.rgtn"
targets = "toy/val-targets.rgtn"

[profile]
inputs = "toy/train-inputs.rgtn"
targets = "toy/train-targets.rgtn"

[campaign]
inputs = 2
trials = 40

[output]
report = "out/report.json"
bounds = "out/bounds.json"
log = "out/trials.jsonl"
"#,
    )
    .unwrap();
    assert_eq!(run(&["inject", "--config", s(&config)]), 0);
    assert!(d.join("models/toy.rgwb").exists());
    let r = CampaignResult::from_json(&fs::read_to_string(d.join("out/report.json")).unwrap()).unwrap();
    assert_eq!(r.format, "fixed16");
    assert_eq!(r.variants.len(), 2);
    assert_eq!(r.variants[1].n, 80);
    assert_eq!(fs::read_to_string(d.join("out/trials.jsonl")).unwrap().lines().count(), 80);
    assert!(BoundSet::load(&d.join("out/bounds.json")).is_ok());

    fs::write(&config, "seed = 1\nunknown_key = 3\n").unwrap();
    assert_eq!(run(&["inject", "--config", s(&config)]), 2);
}
