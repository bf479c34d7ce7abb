//! End-to-end runs through the CLI binary and the suite entry points on
//! configurations small enough for the regular test run.

use std::fs;
use std::path::Path;
use std::process::Command;

use capflow::harness::Manifest;

const TINY_POUR: &str = r#"
id = "tiny"
seed = 11

[pouring]
training_pours = 4
eval_targets = [50.0, 100.0]
eval_reps = 1
variants = ["full", "no_owe", "bc"]
electrode_subsets = []
bc_demos_per_class = 3

[pouring.pwp]
width = 32
blocks = 1
epochs = 8

[pouring.collect]
targets = [30.0, 45.0, 60.0]
reps = 2

[pouring.bc]
width = 16
blocks = 1
epochs = 2
"#;

fn capflow(args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_capflow"))
        .args(args)
        .env("RUST_LOG", "warn")
        .status()
        .expect("binary runs");
    assert!(status.success(), "capflow {args:?} failed");
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn column(header: &str, name: &str) -> usize {
    header.split(',').position(|c| c == name).unwrap_or_else(|| panic!("no column {name}"))
}

#[test]
fn sim_trial_cli_is_reproducible_and_seed_sensitive() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |sub: &str, seed: &str| {
        let d = tmp.path().join(sub);
        capflow(&["sim-trial", "--seed", seed, "--out", d.to_str().unwrap()]);
        d
    };
    let (a, b, c) = (run("a", "3"), run("b", "3"), run("c", "4"));
    assert_eq!(read(&a, "trial.log"), read(&b, "trial.log"));
    assert_ne!(read(&a, "trial.log"), read(&c, "trial.log"));

    let ma = Manifest::load(a.join("manifest.json")).unwrap();
    let mb = Manifest::load(b.join("manifest.json")).unwrap();
    let mc = Manifest::load(c.join("manifest.json")).unwrap();
    assert_eq!(ma.command, "sim-trial");
    assert_eq!(ma.config_hash, mb.config_hash);
    assert_ne!(ma.config_hash, mc.config_hash);
    assert_eq!(ma.seed, 3);
    assert!(ma.seeds.contains_key("sim_trial"));
    for f in &ma.outputs {
        assert!(a.join(f).exists(), "listed output {f} missing");
    }
}

#[test]
fn tiny_pour_suite_tables_match_trial_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("tiny.toml");
    fs::write(&cfg, TINY_POUR).unwrap();
    let out = tmp.path().join("out");
    capflow(&["pour-suite", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);

    let manifest = Manifest::load(out.join("manifest.json")).unwrap();
    assert_eq!(manifest.experiment, "tiny");
    assert_eq!(manifest.seed, 11);

    for variant in ["full", "no_owe", "bc"] {
        let trials = read(&out, &format!("trials_{variant}.csv"));
        let mut lines = trials.lines();
        let header = lines.next().unwrap();
        let (ie, is) = (column(header, "error"), column(header, "signed_error"));
        let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
        assert_eq!(rows.len(), 5 * 2, "{variant}: one pour per substance and target");
        let errors: Vec<f64> = rows.iter().map(|r| r[ie].parse().unwrap()).collect();
        let signed: Vec<f64> = rows.iter().map(|r| r[is].parse().unwrap()).collect();
        for (e, s) in errors.iter().zip(&signed) {
            assert!((e - s.abs()).abs() < 1e-12);
        }
        let n = errors.len() as f64;
        let mean = errors.iter().sum::<f64>() / n;
        let mean_signed = signed.iter().sum::<f64>() / n;

        let table = read(&out, &format!("table_{variant}.csv"));
        let mut tl = table.lines();
        let th = tl.next().unwrap();
        let agg: Vec<&str> = tl.map(|l| l.split(',').collect::<Vec<_>>()).find(|r| r[1] == "all" && r[2] == "all").unwrap();
        let got = |name: &str| agg[column(th, name)].parse::<f64>().unwrap();
        assert!((got("mean_error_g") - mean).abs() <= 5e-5, "{variant}: {} vs {mean}", got("mean_error_g"));
        assert!((got("mean_signed_g") - mean_signed).abs() <= 5e-5);
        assert_eq!(got("n") as usize, rows.len());
    }
    for f in ["summary.csv", "bc_model.json", "pwp_model_full.json", "owe_full.txt", "error_by_target.svg"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
}

#[test]
fn pipeline_commands_chain_through_saved_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("tiny.toml");
    fs::write(&cfg, TINY_POUR).unwrap();
    let out = tmp.path().join("chain");
    let (c, o) = (cfg.to_str().unwrap(), out.to_str().unwrap());
    capflow(&["train-pwp", "--config", c, "--out", o]);
    let model = read(&out, "pwp_model.json");
    capflow(&["fit-owe", "--config", c, "--out", o]);
    assert_eq!(read(&out, "pwp_model.json"), model, "fit-owe reuses the saved predictor");
    let table = read(&out, "owe_table.txt");
    capflow(&["pour-once", "--config", c, "--out", o]);
    assert_eq!(read(&out, "owe_table.txt"), table);
    let result: serde_json::Value = serde_json::from_str(&read(&out, "pour_result.json")).unwrap();
    assert!(result["final_true"].as_f64().unwrap() > 0.0);
    assert!(out.join("pour_trace.svg").exists());
}
