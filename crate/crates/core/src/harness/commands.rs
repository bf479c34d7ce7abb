//! One function per CLI subcommand. Each writes its files plus
//! `config.toml` and `manifest.json` into the output directory.

use anyhow::{bail, Context, Result};
use serde::Serialize;

use super::classification::run_classification_suite;
use super::config::{ExperimentConfig, ScriptedPolicy, SimKind, Stage, Variant};
use super::manifest::{Manifest, Outputs};
use super::pouring::{
    fit_owe_table, owe_chart, owe_samples_csv, pwp_curve_chart, run_pouring_suite, trace_pour, train_bc_baseline,
    train_predictor, training_set,
};
use super::svg::{LineChart, Series};
use super::table::TrialRecord;
use crate::control::{run_pour, BcModel, Brain, PourOptions};
use crate::neural::Checkpoint;
use crate::owe::OweTable;
use crate::pwp::{PwpModel, PwpVariant};
use crate::signals::{write_trial, Trial, ELECTRODES};
use crate::simworld::{grasp_signature, run_scripted_pour, AlwaysForward, Catalog, Hold, Policy, PourSetup, StopAndGo};

pub const PWP_MODEL_FILE: &str = "pwp_model.json";
pub const OWE_TABLE_FILE: &str = "owe_table.txt";
pub const BC_MODEL_FILE: &str = "bc_model.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    ClassifySuite,
    PourSuite,
    TrainPwp,
    FitOwe,
    PourOnce,
    SimTrial,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::ClassifySuite => "classify-suite",
            Command::PourSuite => "pour-suite",
            Command::TrainPwp => "train-pwp",
            Command::FitOwe => "fit-owe",
            Command::PourOnce => "pour-once",
            Command::SimTrial => "sim-trial",
        }
    }
}

/// Runs `cmd` and returns the manifest it wrote.
pub fn run(cmd: Command, cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Manifest> {
    cfg.validate()?;
    match cmd {
        Command::ClassifySuite => {
            let o = run_classification_suite(cfg, Some(out))?;
            println!(
                "container {:.4}  substance {:.4}  joint {:.4}  ({} train / {} test)",
                o.report.container_acc, o.report.substance_acc, o.report.joint_acc, o.n_train, o.n_test
            );
        }
        Command::PourSuite => {
            let o = run_pouring_suite(cfg, Some(out))?;
            for t in &o.tables {
                println!(
                    "{:<16} mean |error| {:6.2} g  mean signed {:6.2} g  n {}",
                    t.variant, t.aggregate.mean_error, t.aggregate.mean_signed, t.aggregate.n
                );
            }
        }
        Command::TrainPwp => {
            let m = train_pwp_cmd(cfg, out)?;
            println!("saved {} ({:?}, electrodes {})", out.path(PWP_MODEL_FILE).display(), m.variant, m.electrodes);
        }
        Command::FitOwe => {
            let t = fit_owe_cmd(cfg, out)?;
            print!("{}", t.to_text());
        }
        Command::PourOnce => {
            let r = pour_once_cmd(cfg, out)?;
            println!(
                "{} target {} g: poured {:.2} g, error {:+.2} g{}",
                r.substance,
                r.target,
                r.final_true,
                r.signed_error,
                if r.exhausted { " (source exhausted)" } else { "" }
            );
        }
        Command::SimTrial => {
            let t = sim_trial_cmd(cfg, out)?;
            println!("{} frames, {} scale samples", t.frames.len(), t.scale.len());
        }
    }
    Manifest::write(cmd.name(), cfg, out)
}

fn pwp_variant(v: Variant) -> Result<PwpVariant> {
    match v {
        Variant::Full | Variant::NoOwe => Ok(PwpVariant::Full),
        Variant::NoOffsets => Ok(PwpVariant::NoOffsets),
        Variant::Bc => bail!("the bc variant has no weight predictor; use pour-once --variant bc"),
    }
}

pub fn train_pwp_cmd(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<PwpModel> {
    let catalog = cfg.catalog()?;
    let data = training_set(cfg, &catalog)?;
    let (model, report) = train_predictor(cfg, &data, pwp_variant(cfg.variant)?, cfg.electrodes)?;
    out.write(PWP_MODEL_FILE, model.to_checkpoint().to_json())?;
    out.write("pwp_curve.csv", report.to_csv())?;
    out.write("pwp_curve.svg", pwp_curve_chart(cfg.variant.as_str(), &report).render())?;
    Ok(model)
}

/// The predictor saved in the output directory, or a freshly trained one
/// when there is none.
pub fn load_or_train_pwp(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<PwpModel> {
    let p = out.path(PWP_MODEL_FILE);
    if p.exists() {
        log::info!("loading {}", p.display());
        let m = PwpModel::load(&p).with_context(|| format!("loading {}", p.display()))?;
        if m.variant != pwp_variant(cfg.variant)? {
            bail!("{} holds a {:?} predictor but the variant asks for {}", p.display(), m.variant, cfg.variant);
        }
        return Ok(m);
    }
    train_pwp_cmd(cfg, out)
}

pub fn fit_owe_cmd(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<OweTable> {
    let catalog = cfg.catalog()?;
    let model = load_or_train_pwp(cfg, out)?;
    let (table, collect) = fit_owe_table(cfg, &catalog, &model)?;
    out.write(OWE_TABLE_FILE, table.to_text())?;
    out.write("owe_samples.csv", owe_samples_csv(&collect))?;
    out.write("owe_fit.svg", owe_chart(cfg.variant.as_str(), &table, &collect).render())?;
    Ok(table)
}

fn load_or_fit_owe(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<OweTable> {
    let p = out.path(OWE_TABLE_FILE);
    if p.exists() {
        return OweTable::load(&p).with_context(|| format!("loading {}", p.display()));
    }
    fit_owe_cmd(cfg, out)
}

fn load_or_train_bc(cfg: &ExperimentConfig, catalog: &Catalog, out: &mut Outputs) -> Result<BcModel> {
    let p = out.path(BC_MODEL_FILE);
    if p.exists() {
        let text = std::fs::read_to_string(&p)?;
        return Ok(BcModel::from_checkpoint(&Checkpoint::from_json(&text)?)?);
    }
    let (m, report) = train_bc_baseline(cfg, catalog)?;
    out.write(BC_MODEL_FILE, m.to_checkpoint().to_json())?;
    out.write("bc_curve.csv", report.to_csv())?;
    Ok(m)
}

#[derive(Serialize)]
struct PourSummary<'a> {
    #[serde(flatten)]
    record: &'a TrialRecord,
    retract_step: Option<u64>,
    timed_out: bool,
    fault: Option<&'a str>,
}

pub fn pour_once_cmd(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<crate::control::PourResult> {
    let catalog = cfg.catalog()?;
    let po = &cfg.pour_once;
    let setup = PourSetup { day_seed: po.day_seed, ..PourSetup::new(po.substance, cfg.stage_seed(Stage::Evaluation)) };
    let result = match cfg.variant {
        Variant::Bc => {
            let m = load_or_train_bc(cfg, &catalog, out)?;
            let r = run_pour(&catalog, &setup, po.target, Brain::Cloned(&m), &PourOptions::default())?;
            let chart = LineChart {
                title: format!("bc: {}, target {} g", po.substance, po.target),
                x_label: "time (s)".into(),
                y_label: "weight (g)".into(),
                series: vec![Series::new("true scale", r.log.iter().map(|l| (l.t, l.scale_true)).collect())],
                markers: vec![],
            };
            out.write("pour_trace.svg", chart.render())?;
            r
        }
        v => {
            let model = load_or_train_pwp(cfg, out)?;
            let table = if v == Variant::NoOwe { None } else { Some(load_or_fit_owe(cfg, out)?) };
            let coeffs = table.as_ref().map(|t| t.get(po.substance)).transpose()?;
            let tr = trace_pour(&catalog, &model, coeffs, &setup, po.target)?;
            out.write("pour_trace.svg", tr.chart(&format!("{v}: {}, target {} g", po.substance, po.target)).render())?;
            tr.result
        }
    };
    out.write("pour_log.csv", result.log_csv())?;
    out.write("trial.log", write_trial(&result.trial))?;
    let record = TrialRecord::from_result(cfg.variant.as_str(), 0, &result);
    let summary =
        PourSummary { record: &record, retract_step: result.retract_step, timed_out: result.timed_out, fault: result.fault.as_deref() };
    out.write("pour_result.json", serde_json::to_string_pretty(&summary)?)?;
    Ok(result)
}

/// Electrode readings and, when present, the scale stream.
pub fn trial_charts(trial: &Trial, title: &str) -> Vec<(String, LineChart)> {
    let series = (0..ELECTRODES)
        .map(|e| Series::new(format!("e{}", e + 1), trial.frames.iter().map(|f| (f.t, f.readings[e])).collect()))
        .collect();
    let mut charts = vec![(
        "electrodes".to_string(),
        LineChart {
            title: format!("{title}: electrodes"),
            x_label: "time (s)".into(),
            y_label: "capacitance".into(),
            series,
            markers: vec![],
        },
    )];
    if !trial.scale.is_empty() {
        charts.push((
            "scale".to_string(),
            LineChart {
                title: format!("{title}: scale"),
                x_label: "time (s)".into(),
                y_label: "weight (g)".into(),
                series: vec![Series::new("scale", trial.scale.iter().map(|s| (s.t, s.weight)).collect())],
                markers: vec![],
            },
        ));
    }
    charts
}

pub fn sim_trial_cmd(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Trial> {
    let catalog = cfg.catalog()?;
    let st = &cfg.sim_trial;
    let seed = cfg.stage_seed(Stage::SimTrial);
    let trial = match st.kind {
        SimKind::Pour => {
            let setup = PourSetup { container: st.container, day_seed: st.day_seed, ..PourSetup::new(st.substance, seed) };
            let mut policy: Box<dyn Policy> = match st.policy {
                ScriptedPolicy::Forward => Box::new(AlwaysForward),
                ScriptedPolicy::StopAndGo => Box::new(StopAndGo::new(seed)),
                ScriptedPolicy::Hold => Box::new(Hold),
            };
            run_scripted_pour(&catalog, &setup, policy.as_mut(), st.duration)
        }
        SimKind::Grasp => grasp_signature(&catalog, st.container, st.substance, st.day_seed, seed, &catalog.grasp),
    };
    out.write("trial.log", write_trial(&trial))?;
    let title = format!("{} in {}", st.substance, st.container);
    for (name, chart) in trial_charts(&trial, &title) {
        out.write(&format!("trial_{name}.svg"), chart.render())?;
    }
    Ok(trial)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sim_trial_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::default();
        let mut a = Outputs::create(dir.path().join("a")).unwrap();
        let mut b = Outputs::create(dir.path().join("b")).unwrap();
        let ma = run(Command::SimTrial, &cfg, &mut a).unwrap();
        let mb = run(Command::SimTrial, &cfg, &mut b).unwrap();
        assert_eq!(ma, mb);
        let read = |o: &Outputs| std::fs::read(o.path("trial.log")).unwrap();
        assert_eq!(read(&a), read(&b));
        assert!(ma.outputs.contains(&"trial_scale.svg".to_string()));
    }

    #[test]
    fn grasp_trial_has_no_scale_chart() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::default();
        cfg.sim_trial.kind = SimKind::Grasp;
        let mut o = Outputs::create(dir.path()).unwrap();
        let m = run(Command::SimTrial, &cfg, &mut o).unwrap();
        assert!(m.outputs.contains(&"trial_electrodes.svg".to_string()));
        assert!(!m.outputs.contains(&"trial_scale.svg".to_string()));
    }

    #[test]
    fn bc_has_no_predictor() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig { variant: Variant::Bc, ..Default::default() };
        let mut o = Outputs::create(dir.path()).unwrap();
        assert!(train_pwp_cmd(&cfg, &mut o).is_err());
    }
}
