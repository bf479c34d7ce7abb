use anyhow::{Context, Result};
use serde::Serialize;

use super::config::{ExperimentConfig, Stage};
use super::manifest::Outputs;
use super::svg::{heatmap, LineChart, Series};
use crate::classify::{
    build_grasp_dataset, evaluate, fit_forest, nested_class_subsets, Forest, ForestConfig, GraspDataset, GraspSplit,
    Report, JOINT_CLASSES,
};
use crate::signals::ElectrodeSet;
use crate::simworld::Catalog;

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub electrodes: ElectrodeSet,
    pub container_acc: f64,
    pub substance_acc: f64,
    pub joint_acc: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingRow {
    pub classes: usize,
    pub n_test: usize,
    pub joint_acc: f64,
}

#[derive(Debug, Clone)]
pub struct ClassificationOutcome {
    pub n_train: usize,
    pub n_test: usize,
    /// Forest on the configured electrode set and all 81 classes.
    pub report: Report,
    pub forest: Forest,
    pub ablation: Vec<AblationRow>,
    pub scaling: Vec<ScalingRow>,
}

/// Builds the grasp split with the experiment's data seed.
pub fn grasp_split(cfg: &ExperimentConfig, catalog: &Catalog) -> Result<GraspSplit> {
    let mut d = cfg.classification.dataset.clone();
    d.seed = cfg.stage_seed(Stage::GraspData);
    build_grasp_dataset(catalog, &d).context("building grasp dataset")
}

fn forest_config(cfg: &ExperimentConfig) -> ForestConfig {
    ForestConfig { seed: cfg.stage_seed(Stage::Forest), ..cfg.classification.forest.clone() }
}

/// Fits on `train` and scores on `test`, both reduced to `electrodes`.
pub fn fit_and_evaluate(
    split: &GraspSplit,
    electrodes: ElectrodeSet,
    forest_cfg: &ForestConfig,
) -> Result<(Forest, Report)> {
    let (train, test) = if electrodes.is_all() {
        (split.train.clone(), split.test.clone())
    } else {
        (split.train.select_electrodes(electrodes)?, split.test.select_electrodes(electrodes)?)
    };
    let forest = fit_forest(&train.x, &train.joint_labels(), JOINT_CLASSES, forest_cfg)?;
    let report = evaluate(&forest, &test.x, &test.y)?;
    Ok((forest, report))
}

pub fn electrode_ablation(split: &GraspSplit, subsets: &[ElectrodeSet], forest_cfg: &ForestConfig) -> Result<Vec<AblationRow>> {
    subsets
        .iter()
        .map(|&e| {
            let (_, r) = fit_and_evaluate(split, e, forest_cfg)?;
            log::info!("electrodes {e}: joint {:.4}", r.joint_acc);
            Ok(AblationRow { electrodes: e, container_acc: r.container_acc, substance_acc: r.substance_acc, joint_acc: r.joint_acc })
        })
        .collect()
}

/// Joint accuracy on nested class subsets, each fitted on its own classes.
pub fn class_scaling(split: &GraspSplit, counts: &[usize], subset_seed: u64, forest_cfg: &ForestConfig) -> Result<Vec<ScalingRow>> {
    let subsets = nested_class_subsets(counts, subset_seed)?;
    subsets
        .iter()
        .map(|classes| {
            let sub = |d: &GraspDataset| d.restrict(classes);
            let s = GraspSplit { train: sub(&split.train), test: sub(&split.test) };
            let (_, r) = fit_and_evaluate(&s, ElectrodeSet::ALL, forest_cfg)?;
            log::info!("{} classes: joint {:.4}", classes.len(), r.joint_acc);
            Ok(ScalingRow { classes: classes.len(), n_test: s.test.len(), joint_acc: r.joint_acc })
        })
        .collect()
}

pub fn run_classification_suite(cfg: &ExperimentConfig, out: Option<&mut Outputs>) -> Result<ClassificationOutcome> {
    let catalog = cfg.catalog()?;
    let split = grasp_split(cfg, &catalog)?;
    let fcfg = forest_config(cfg);
    let c = &cfg.classification;
    let (forest, report) = fit_and_evaluate(&split, cfg.electrodes, &fcfg)?;
    log::info!("joint accuracy {:.4} on {} test grasps", report.joint_acc, report.n);
    let ablation = electrode_ablation(&split, &c.electrode_subsets, &fcfg)?;
    let scaling = class_scaling(&split, &c.class_counts, cfg.stage_seed(Stage::ClassSubsets), &fcfg)?;
    let outcome = ClassificationOutcome { n_train: split.train.len(), n_test: split.test.len(), report, forest, ablation, scaling };
    if let Some(out) = out {
        write_classification(&outcome, out)?;
    }
    Ok(outcome)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("electrodes,n_electrodes,container_acc,substance_acc,joint_acc\n");
    for r in rows {
        s += &format!("\"{}\",{},{},{},{}\n", r.electrodes, r.electrodes.len(), r.container_acc, r.substance_acc, r.joint_acc);
    }
    s
}

pub fn scaling_csv(rows: &[ScalingRow]) -> String {
    let mut s = String::from("classes,n_test,joint_acc\n");
    for r in rows {
        s += &format!("{},{},{}\n", r.classes, r.n_test, r.joint_acc);
    }
    s
}

pub fn write_classification(o: &ClassificationOutcome, out: &mut Outputs) -> Result<()> {
    let r = &o.report;
    out.write(
        "accuracy.csv",
        format!("{}n_train,{}\n", r.summary_csv(), o.n_train),
    )?;
    for (name, conf) in [("container", &r.container), ("substance", &r.substance), ("joint", &r.joint)] {
        out.write(&format!("confusion_{name}.csv"), conf.to_csv())?;
        out.write(&format!("confusion_{name}.svg"), heatmap(&format!("{name} confusion"), &conf.labels, &conf.counts))?;
    }
    out.write("electrode_ablation.csv", ablation_csv(&o.ablation))?;
    out.write("class_scaling.csv", scaling_csv(&o.scaling))?;
    let chart = LineChart {
        title: "Joint accuracy vs number of classes".into(),
        x_label: "classes".into(),
        y_label: "joint accuracy".into(),
        series: vec![Series::new("joint", o.scaling.iter().map(|r| (r.classes as f64, r.joint_acc)).collect())],
        markers: vec![],
    };
    out.write("class_scaling.svg", chart.render())?;
    let chart = LineChart {
        title: "Joint accuracy vs electrodes".into(),
        x_label: "electrodes".into(),
        y_label: "accuracy".into(),
        series: vec![
            Series::new("container", o.ablation.iter().map(|r| (r.electrodes.len() as f64, r.container_acc)).collect()),
            Series::new("substance", o.ablation.iter().map(|r| (r.electrodes.len() as f64, r.substance_acc)).collect()),
            Series::new("joint", o.ablation.iter().map(|r| (r.electrodes.len() as f64, r.joint_acc)).collect()),
        ],
        markers: vec![],
    };
    out.write("electrode_ablation.svg", chart.render())?;
    out.write("forest.json", o.forest.to_json()?)?;
    Ok(())
}
