use std::cell::RefCell;

use anyhow::{anyhow, Context, Result};
use rayon::prelude::*;

use super::config::{ExperimentConfig, Stage, Variant};
use super::manifest::Outputs;
use super::svg::{LineChart, Marker, Series};
use super::table::{records_csv, ResultTable, TrialRecord};
use crate::control::{
    generate_bc_demos, run_pour, train_bc, BcModel, BcTrainConfig, BcTrainReport, Brain, ControlError, PourOptions,
    PourResult, WindowContext, WindowPredictor, BC_TARGETS,
};
use crate::owe::{collect_overpour, fit_owe, CollectConfig, CollectOutcome, OweCoeffs, OweTable};
use crate::pwp::{simulate_training_pours, split_train_val, train_pwp, PwpError, PwpModel, PwpOutput, PwpTrainConfig, PwpVariant, TrainReport};
use crate::signals::{ElectrodeBounds, ElectrodeSet, Substance, Trial, POUR_SUBSTANCES};
use crate::simworld::{mix_seed, Catalog, PourSetup};

/// Scripted pours split into training and validation trials.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub train: Vec<Trial>,
    pub val: Vec<Trial>,
}

pub fn training_set(cfg: &ExperimentConfig, catalog: &Catalog) -> Result<TrainingSet> {
    let p = &cfg.pouring;
    let trials = simulate_training_pours(catalog, p.training_pours, cfg.stage_seed(Stage::PwpData));
    let (train, val) = split_train_val(&trials, p.train_frac)?;
    Ok(TrainingSet { train, val })
}

/// Trains one predictor. A non-finite loss aborts with the epoch and the
/// settings that produced it.
pub fn train_predictor(
    cfg: &ExperimentConfig,
    data: &TrainingSet,
    variant: PwpVariant,
    electrodes: ElectrodeSet,
) -> Result<(PwpModel, TrainReport)> {
    let tc = PwpTrainConfig { seed: cfg.stage_seed(Stage::PwpInit), variant, electrodes, ..cfg.pouring.pwp.clone() };
    log::info!("training {variant:?} predictor on electrodes {electrodes}: {} epochs", tc.epochs);
    match train_pwp(&data.train, &data.val, &tc) {
        Err(PwpError::Diverged { epoch, detail }) => Err(anyhow!(
            "predictor training diverged at epoch {epoch} ({detail}); width {}, lr {}, weight decay {}. \
             Lower pouring.pwp.lr or raise pouring.pwp.weight_decay and rerun",
            tc.width,
            tc.lr,
            tc.weight_decay
        )),
        other => other.context("training predictor"),
    }
}

/// One overpour polynomial per pouring substance, fitted on pours made with
/// `model` and no correction.
pub fn fit_owe_table(
    cfg: &ExperimentConfig,
    catalog: &Catalog,
    model: &PwpModel,
) -> Result<(OweTable, Vec<(Substance, CollectOutcome)>)> {
    let cc = CollectConfig { seed: cfg.stage_seed(Stage::OweCollect), ..cfg.pouring.collect.clone() };
    let outcomes: Vec<(Substance, CollectOutcome)> = POUR_SUBSTANCES
        .par_iter()
        .map(|&s| collect_overpour(catalog, model, s, &cc).map(|o| (s, o)))
        .collect::<std::result::Result<_, _>>()
        .context("collecting overpour samples")?;
    let mut table = OweTable::default();
    for (s, o) in &outcomes {
        let c = fit_owe(&o.samples).with_context(|| format!("fitting overpour for {s}"))?;
        log::info!("{s}: overpour {:.5} w^2 + {:.4} w + {:.3}, rmse {:.3} g over {} pours", c.a, c.b, c.c, c.rmse, c.n);
        table.insert(c);
    }
    Ok((table, outcomes))
}

/// `bc_demos_per_class` oracle demonstrations for every substance and trained
/// target.
pub fn train_bc_baseline(cfg: &ExperimentConfig, catalog: &Catalog) -> Result<(BcModel, BcTrainReport)> {
    let p = &cfg.pouring;
    let seed = cfg.stage_seed(Stage::BcDemos);
    let jobs: Vec<(Substance, usize, f64)> =
        POUR_SUBSTANCES.iter().flat_map(|&s| BC_TARGETS.iter().enumerate().map(move |(i, &t)| (s, i, t))).collect();
    let demos: Vec<_> = jobs
        .par_iter()
        .flat_map(|&(s, i, t)| generate_bc_demos(catalog, s, t, p.bc_demos_per_class, mix_seed(seed, (s.index() * 16 + i) as u64)))
        .collect();
    log::info!("training cloned policy on {} demonstrations", demos.len());
    let bc = BcTrainConfig { seed: cfg.stage_seed(Stage::BcInit), ..p.bc.clone() };
    train_bc(&demos, &bc).context("training cloned policy")
}

/// One cell of the evaluation grid. The setup depends only on the cell, so
/// every variant pours the same sequence of trials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalCase {
    pub substance: Substance,
    pub target: f64,
    pub rep: usize,
    pub setup: PourSetup,
}

pub fn eval_cases(cfg: &ExperimentConfig) -> Vec<EvalCase> {
    let seed = cfg.stage_seed(Stage::Evaluation);
    let p = &cfg.pouring;
    let mut out = Vec::new();
    for &s in &POUR_SUBSTANCES {
        for &target in &p.eval_targets {
            for rep in 0..p.eval_reps {
                let stream = s.index() as u64 * 1_000_000 + (target * 10.0).round() as u64 * 100 + rep as u64;
                let setup = PourSetup { day_seed: rep as i64, ..PourSetup::new(s, mix_seed(seed, stream)) };
                out.push(EvalCase { substance: s, target, rep, setup });
            }
        }
    }
    out
}

/// What decides when to stop a pour.
#[derive(Clone, Copy)]
pub enum Contender<'a> {
    Model { model: &'a PwpModel, owe: Option<&'a OweTable> },
    Cloned(&'a BcModel),
}

impl Contender<'_> {
    pub fn pour(&self, catalog: &Catalog, setup: &PourSetup, target: f64) -> Result<PourResult> {
        let brain = match *self {
            Contender::Model { model, owe } => {
                let owe = owe.map(|t| t.get(setup.substance)).transpose()?;
                Brain::Model { predictor: model, owe }
            }
            Contender::Cloned(m) => Brain::Cloned(m),
        };
        Ok(run_pour(catalog, setup, target, brain, &PourOptions::default())?)
    }
}

/// Called with the variant name, the grid cell and the finished pour.
pub type Observer<'a> = &'a (dyn Fn(&str, &EvalCase, &PourResult) + Sync);

/// Runs every case in parallel. Records come back in case order.
pub fn evaluate_grid(
    catalog: &Catalog,
    name: &str,
    contender: Contender,
    cases: &[EvalCase],
    observer: Option<Observer>,
) -> Result<Vec<TrialRecord>> {
    cases
        .par_iter()
        .map(|c| {
            let r = contender
                .pour(catalog, &c.setup, c.target)
                .with_context(|| format!("{name}: {} at {} g, rep {}", c.substance, c.target, c.rep))?;
            if let Some(f) = observer {
                f(name, c, &r);
            }
            Ok(TrialRecord::from_result(name, c.rep, &r))
        })
        .collect()
}

/// Passes predictions through while keeping every output, offsets included.
struct Recording<'a> {
    model: &'a PwpModel,
    seen: RefCell<Vec<PwpOutput>>,
}

impl WindowPredictor for Recording<'_> {
    fn delta(&self, ctx: &WindowContext) -> crate::control::Result<f64> {
        let label = ctx.substance.pour_label().ok_or(PwpError::NotPourable(ctx.substance))?;
        let o = self.model.predict_window(ctx.window, label)?;
        self.seen.borrow_mut().push(o);
        Ok(o.dw_hat)
    }

    fn bounds(&self, s: Substance) -> crate::control::Result<Option<&ElectrodeBounds>> {
        self.model.bounds_for(s).map(Some).ok_or(ControlError::NoBounds(s))
    }
}

/// A pour together with the predictor outputs of each accumulated window.
#[derive(Debug, Clone)]
pub struct Trace {
    pub result: PourResult,
    pub outputs: Vec<PwpOutput>,
}

pub fn trace_pour(catalog: &Catalog, model: &PwpModel, owe: Option<&OweCoeffs>, setup: &PourSetup, target: f64) -> Result<Trace> {
    let rec = Recording { model, seen: RefCell::new(Vec::new()) };
    let result = run_pour(catalog, setup, target, Brain::Model { predictor: &rec, owe }, &PourOptions::default())?;
    Ok(Trace { result, outputs: rec.seen.into_inner() })
}

impl Trace {
    /// `(t + O_E, ŵ)` for each accumulated window: the estimate placed at the
    /// time its mass is expected to have landed.
    pub fn shifted_curve(&self) -> Vec<(f64, f64)> {
        self.result
            .log
            .iter()
            .filter(|l| l.dw_hat.is_some())
            .zip(&self.outputs)
            .map(|(l, o)| (l.t + o.o_e, l.w_hat))
            .collect()
    }

    pub fn chart(&self, title: &str) -> LineChart {
        let r = &self.result;
        let mut markers = Vec::new();
        if let (Some(step), Some(w)) = (r.retract_step, r.w_hat_at_retract) {
            if let Some(l) = r.log.get(step as usize) {
                markers.push(Marker { x: l.t, y: w, label: format!("retract {w:.1} g") });
            }
        }
        if let (Some(fp), Some(last)) = (r.final_predicted, r.log.last()) {
            markers.push(Marker { x: last.t, y: fp, label: format!("predicted final {fp:.1} g") });
        }
        LineChart {
            title: title.to_string(),
            x_label: "time (s)".into(),
            y_label: "weight (g)".into(),
            series: vec![
                Series::new("true scale", r.log.iter().map(|l| (l.t, l.scale_true)).collect()),
                Series::new("predicted", r.log.iter().map(|l| (l.t, l.w_hat)).collect()),
                Series::new("predicted, O_E shifted", self.shifted_curve()).dashed(),
                Series::new("target", vec![(0.0, r.target), (r.log.last().map_or(1.0, |l| l.t), r.target)]).dashed(),
            ],
            markers,
        }
    }
}

/// Sums the logged window estimates tick by tick and compares with the
/// controller's running total. True when every tick matches exactly.
pub fn accumulation_matches(r: &PourResult) -> bool {
    let mut sum = 0.0;
    let mut seen = Vec::new();
    for l in &r.log {
        if let Some(d) = l.dw_hat {
            sum += d;
            seen.push(d);
        }
        if l.w_hat.to_bits() != sum.to_bits() {
            return false;
        }
    }
    seen == r.deltas
}

/// A trained model-based stack: predictor, its curve and its correction.
pub struct ModelStack {
    pub label: String,
    pub model: PwpModel,
    pub report: TrainReport,
    pub owe: OweTable,
    pub collect: Vec<(Substance, CollectOutcome)>,
}

pub fn build_stack(
    cfg: &ExperimentConfig,
    catalog: &Catalog,
    data: &TrainingSet,
    label: &str,
    variant: PwpVariant,
    electrodes: ElectrodeSet,
) -> Result<ModelStack> {
    let (model, report) = train_predictor(cfg, data, variant, electrodes).with_context(|| format!("predictor `{label}`"))?;
    let (owe, collect) = fit_owe_table(cfg, catalog, &model).with_context(|| format!("overpour fit for `{label}`"))?;
    Ok(ModelStack { label: label.to_string(), model, report, owe, collect })
}

pub struct PouringOutcome {
    pub stacks: Vec<ModelStack>,
    pub bc: Option<(BcModel, BcTrainReport)>,
    /// `(variant name, per-trial records)` in evaluation order.
    pub records: Vec<(String, Vec<TrialRecord>)>,
    pub tables: Vec<ResultTable>,
}

impl PouringOutcome {
    pub fn table(&self, name: &str) -> Option<&ResultTable> {
        self.tables.iter().find(|t| t.variant == name)
    }

    pub fn stack(&self, label: &str) -> Option<&ModelStack> {
        self.stacks.iter().find(|s| s.label == label)
    }
}

fn subset_name(e: ElectrodeSet) -> String {
    if ElectrodeSet::canonical(e.len()) == Some(e) {
        format!("electrodes_{}", e.len())
    } else {
        format!("electrodes_{}", e.to_string().replace(',', "-"))
    }
}

pub fn run_pouring_suite(cfg: &ExperimentConfig, out: Option<&mut Outputs>) -> Result<PouringOutcome> {
    run_pouring_suite_observed(cfg, out, None)
}

/// Trains what the configured variants need, evaluates each one on the same
/// grid and writes tables, curves and traces when `out` is given.
pub fn run_pouring_suite_observed(
    cfg: &ExperimentConfig,
    out: Option<&mut Outputs>,
    observer: Option<Observer>,
) -> Result<PouringOutcome> {
    let catalog = cfg.catalog()?;
    let p = &cfg.pouring;
    let wants = |v: Variant| p.variants.contains(&v);
    let data = if wants(Variant::Full) || wants(Variant::NoOwe) || wants(Variant::NoOffsets) || !p.electrode_subsets.is_empty() {
        Some(training_set(cfg, &catalog)?)
    } else {
        None
    };
    let mut stacks = Vec::new();
    if let Some(d) = &data {
        if wants(Variant::Full) || wants(Variant::NoOwe) {
            stacks.push(build_stack(cfg, &catalog, d, "full", PwpVariant::Full, cfg.electrodes)?);
        }
        if wants(Variant::NoOffsets) {
            stacks.push(build_stack(cfg, &catalog, d, "no_offsets", PwpVariant::NoOffsets, cfg.electrodes)?);
        }
        for &e in &p.electrode_subsets {
            stacks.push(build_stack(cfg, &catalog, d, &subset_name(e), PwpVariant::Full, e)?);
        }
    }
    let bc = if wants(Variant::Bc) { Some(train_bc_baseline(cfg, &catalog)?) } else { None };

    let cases = eval_cases(cfg);
    let find = |l: &str| stacks.iter().find(|s| s.label == l).ok_or_else(|| anyhow!("missing predictor {l}"));
    let mut runs: Vec<(String, Contender)> = Vec::new();
    for &v in &p.variants {
        let c = match v {
            Variant::Full => {
                let s = find("full")?;
                Contender::Model { model: &s.model, owe: Some(&s.owe) }
            }
            Variant::NoOwe => Contender::Model { model: &find("full")?.model, owe: None },
            Variant::NoOffsets => {
                let s = find("no_offsets")?;
                Contender::Model { model: &s.model, owe: Some(&s.owe) }
            }
            Variant::Bc => Contender::Cloned(&bc.as_ref().ok_or_else(|| anyhow!("missing cloned policy"))?.0),
        };
        runs.push((v.to_string(), c));
    }
    for &e in &p.electrode_subsets {
        let s = find(&subset_name(e))?;
        runs.push((s.label.clone(), Contender::Model { model: &s.model, owe: Some(&s.owe) }));
    }
    let mut records = Vec::new();
    let mut tables = Vec::new();
    for (name, c) in &runs {
        let recs = evaluate_grid(&catalog, name, *c, &cases, observer)?;
        let t = ResultTable::from_records(name, &recs);
        log::info!("{name}: mean |error| {:.2} g, mean signed {:.2} g over {}", t.aggregate.mean_error, t.aggregate.mean_signed, t.aggregate.n);
        records.push((name.clone(), recs));
        tables.push(t);
    }

    if let Some(out) = out {
        for (name, c) in &runs {
            if let Contender::Model { model, owe } = c {
                for &s in &POUR_SUBSTANCES {
                    let setup = PourSetup::new(s, mix_seed(cfg.stage_seed(Stage::Evaluation), 0xF00D + s.index() as u64));
                    let coeffs = owe.map(|t| t.get(s)).transpose()?;
                    let tr = trace_pour(&catalog, model, coeffs, &setup, p.trace_target)?;
                    out.write(&format!("traces/{name}_{s}.csv"), tr.result.log_csv())?;
                    out.write(&format!("traces/{name}_{s}.svg"), tr.chart(&format!("{name}: {s}, target {} g", p.trace_target)).render())?;
                }
            }
        }
        let outcome = PouringOutcome { stacks, bc, records, tables };
        write_pouring(&outcome, out)?;
        return Ok(outcome);
    }
    Ok(PouringOutcome { stacks, bc, records, tables })
}

pub fn pwp_curve_chart(label: &str, report: &TrainReport) -> LineChart {
    LineChart {
        title: format!("{label} predictor training"),
        x_label: "epoch".into(),
        y_label: "loss".into(),
        series: vec![
            Series::new("train", report.curve.iter().map(|r| (r.epoch as f64, r.train_total)).collect()),
            Series::new("validation", report.curve.iter().map(|r| (r.epoch as f64, r.val_total)).collect()),
            Series::new("validation weight term", report.curve.iter().map(|r| (r.epoch as f64, r.val.weight)).collect()).dashed(),
        ],
        markers: vec![],
    }
}

pub fn owe_samples_csv(collect: &[(Substance, CollectOutcome)]) -> String {
    let mut s = String::from("substance,target,w_stop_observed,w_overpoured\n");
    for (_, o) in collect {
        for x in &o.samples {
            s += &format!("{},{:?},{:?},{:?}\n", x.substance, x.target, x.w_stop_observed, x.w_overpoured);
        }
    }
    s
}

pub fn owe_chart(label: &str, table: &OweTable, collect: &[(Substance, CollectOutcome)]) -> LineChart {
    let mut series = Vec::new();
    for (s, o) in collect {
        series.push(Series::new(format!("{s} samples"), o.samples.iter().map(|x| (x.w_stop_observed, x.w_overpoured)).collect()).dots());
        if let Ok(c) = table.get(*s) {
            let (lo, hi) = o
                .samples
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x.w_stop_observed), b.max(x.w_stop_observed)));
            if lo.is_finite() {
                let pts = (0..=40).map(|i| lo + (hi - lo) * i as f64 / 40.0).map(|w| (w, c.overpour(w))).collect();
                series.push(Series::new(format!("{s} fit"), pts));
            }
        }
    }
    LineChart {
        title: format!("{label}: overpour vs predicted weight at retraction"),
        x_label: "predicted weight at retraction (g)".into(),
        y_label: "overpour (g)".into(),
        series,
        markers: vec![],
    }
}

pub fn write_pouring(o: &PouringOutcome, out: &mut Outputs) -> Result<()> {
    for s in &o.stacks {
        out.write(&format!("pwp_curve_{}.csv", s.label), s.report.to_csv())?;
        out.write(&format!("pwp_curve_{}.svg", s.label), pwp_curve_chart(&s.label, &s.report).render())?;
        out.write(&format!("pwp_model_{}.json", s.label), s.model.to_checkpoint().to_json())?;
        out.write(&format!("owe_{}.txt", s.label), s.owe.to_text())?;
        out.write(&format!("owe_samples_{}.csv", s.label), owe_samples_csv(&s.collect))?;
        out.write(&format!("owe_fit_{}.svg", s.label), owe_chart(&s.label, &s.owe, &s.collect).render())?;
    }
    if let Some((m, r)) = &o.bc {
        out.write("bc_curve.csv", r.to_csv())?;
        let chart = LineChart {
            title: "cloned policy training".into(),
            x_label: "epoch".into(),
            y_label: "binary cross-entropy".into(),
            series: vec![
                Series::new("train", r.curve.iter().map(|c| (c.0 as f64, c.1)).collect()),
                Series::new("validation", r.curve.iter().map(|c| (c.0 as f64, c.2)).collect()),
            ],
            markers: vec![],
        };
        out.write("bc_curve.svg", chart.render())?;
        out.write("bc_model.json", m.to_checkpoint().to_json())?;
    }
    let mut summary = format!("{}\n", ResultTable::CSV_HEADER);
    for ((name, recs), t) in o.records.iter().zip(&o.tables) {
        out.write(&format!("trials_{name}.csv"), records_csv(recs))?;
        out.write(&format!("table_{name}.csv"), t.to_csv())?;
        let by_sub = ResultTable { variant: name.clone(), rows: ResultTable::by_substance(recs), aggregate: t.aggregate.clone() };
        summary += by_sub.to_csv().split_once('\n').map_or("", |x| x.1);
    }
    out.write("summary.csv", summary)?;
    let chart = LineChart {
        title: "Mean absolute error by target".into(),
        x_label: "target (g)".into(),
        y_label: "mean |error| (g)".into(),
        series: o
            .tables
            .iter()
            .map(|t| {
                let mut by_target: Vec<(f64, f64, usize)> = Vec::new();
                for r in &t.rows {
                    let tg = r.target.unwrap_or(f64::NAN);
                    match by_target.iter_mut().find(|x| x.0 == tg) {
                        Some(x) => {
                            x.1 += r.mean_error * r.n as f64;
                            x.2 += r.n;
                        }
                        None => by_target.push((tg, r.mean_error * r.n as f64, r.n)),
                    }
                }
                by_target.sort_by(|a, b| a.0.total_cmp(&b.0));
                Series::new(t.variant.clone(), by_target.iter().map(|x| (x.0, x.1 / x.2 as f64)).collect())
            })
            .collect(),
        markers: vec![],
    };
    out.write("error_by_target.svg", chart.render())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::OraclePredictor;

    #[test]
    fn cases_are_paired_and_distinct() {
        let mut cfg = ExperimentConfig::default();
        cfg.pouring.eval_reps = 3;
        let a = eval_cases(&cfg);
        assert_eq!(a.len(), 5 * 4 * 3);
        let mut seeds: Vec<u64> = a.iter().map(|c| c.setup.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), a.len());
        assert_eq!(eval_cases(&cfg), a);
    }

    #[test]
    fn oracle_pours_accumulate_exactly() {
        let cat = Catalog::default();
        let setup = PourSetup::new(Substance::Rice, 11);
        let r = run_pour(&cat, &setup, 60.0, Brain::Model { predictor: &OraclePredictor, owe: None }, &PourOptions::default()).unwrap();
        assert!(!r.deltas.is_empty());
        assert!(accumulation_matches(&r));
        let mut bad = r.clone();
        bad.log.last_mut().unwrap().w_hat += 1e-12;
        assert!(!accumulation_matches(&bad));
    }

    #[test]
    fn subset_names() {
        assert_eq!(subset_name(ElectrodeSet::canonical(6).unwrap()), "electrodes_6");
        assert_eq!(subset_name(ElectrodeSet::from_indices(&[0, 9]).unwrap()), "electrodes_1-10");
    }
}
