use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::control::PourResult;
use crate::signals::Substance;

/// The scored outcome of one evaluation pour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub variant: String,
    pub substance: Substance,
    pub target: f64,
    pub rep: usize,
    pub seed: u64,
    pub w_stop: Option<f64>,
    pub w_hat_at_retract: Option<f64>,
    pub final_true: f64,
    pub final_predicted: Option<f64>,
    pub error: f64,
    pub signed_error: f64,
    pub exhausted: bool,
    pub faulted: bool,
}

impl TrialRecord {
    pub fn from_result(variant: &str, rep: usize, r: &PourResult) -> Self {
        TrialRecord {
            variant: variant.to_string(),
            substance: r.substance,
            target: r.target,
            rep,
            seed: r.seed,
            w_stop: r.w_stop,
            w_hat_at_retract: r.w_hat_at_retract,
            final_true: r.final_true,
            final_predicted: r.final_predicted,
            error: r.error,
            signed_error: r.signed_error,
            exhausted: r.exhausted,
            faulted: r.fault.is_some(),
        }
    }

    pub const CSV_HEADER: &'static str =
        "variant,substance,target,rep,seed,w_stop,w_hat_at_retract,final_true,final_predicted,error,signed_error,exhausted,faulted";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        format!(
            "{},{},{:?},{},{},{},{},{:?},{},{:?},{:?},{},{}",
            self.variant,
            self.substance,
            self.target,
            self.rep,
            self.seed,
            opt(self.w_stop),
            opt(self.w_hat_at_retract),
            self.final_true,
            opt(self.final_predicted),
            self.error,
            self.signed_error,
            self.exhausted,
            self.faulted
        )
    }
}

pub fn records_csv(records: &[TrialRecord]) -> String {
    let mut s = format!("{}\n", TrialRecord::CSV_HEADER);
    for r in records {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Absolute and signed error statistics over a set of pours. Standard
/// deviations are population values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    /// `None` on the aggregate row.
    pub substance: Option<Substance>,
    pub target: Option<f64>,
    pub mean_error: f64,
    pub std_error: f64,
    pub mean_signed: f64,
    pub std_signed: f64,
    pub n: usize,
    pub exhausted: usize,
}

impl ResultRow {
    fn from_records<'a>(substance: Option<Substance>, target: Option<f64>, it: impl Iterator<Item = &'a TrialRecord>) -> Self {
        let recs: Vec<&TrialRecord> = it.collect();
        let n = recs.len();
        let stats = |f: &dyn Fn(&TrialRecord) -> f64| {
            if n == 0 {
                return (f64::NAN, f64::NAN);
            }
            let m = recs.iter().map(|r| f(r)).sum::<f64>() / n as f64;
            let v = recs.iter().map(|r| (f(r) - m).powi(2)).sum::<f64>() / n as f64;
            (m, v.sqrt())
        };
        let (mean_error, std_error) = stats(&|r| r.error);
        let (mean_signed, std_signed) = stats(&|r| r.signed_error);
        ResultRow {
            substance,
            target,
            mean_error,
            std_error,
            mean_signed,
            std_signed,
            n,
            exhausted: recs.iter().filter(|r| r.exhausted).count(),
        }
    }
}

/// Per-substance and per-target rows plus a pooled aggregate row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub variant: String,
    pub rows: Vec<ResultRow>,
    pub aggregate: ResultRow,
}

impl ResultTable {
    /// Rows follow the first appearance of each (substance, target) pair.
    pub fn from_records(variant: &str, records: &[TrialRecord]) -> Self {
        let mut keys: Vec<(Substance, u64)> = Vec::new();
        for r in records {
            let k = (r.substance, r.target.to_bits());
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        let rows = keys
            .iter()
            .map(|&(s, t)| {
                let t = f64::from_bits(t);
                ResultRow::from_records(Some(s), Some(t), records.iter().filter(move |r| r.substance == s && r.target == t))
            })
            .collect();
        ResultTable { variant: variant.to_string(), rows, aggregate: ResultRow::from_records(None, None, records.iter()) }
    }

    /// Pools rows of one substance across targets.
    pub fn by_substance(records: &[TrialRecord]) -> Vec<ResultRow> {
        let mut subs: Vec<Substance> = Vec::new();
        for r in records {
            if !subs.contains(&r.substance) {
                subs.push(r.substance);
            }
        }
        subs.into_iter()
            .map(|s| ResultRow::from_records(Some(s), None, records.iter().filter(move |r| r.substance == s)))
            .collect()
    }

    pub const CSV_HEADER: &'static str =
        "variant,substance,target,mean_error_g,std_error_g,mean_signed_g,std_signed_g,n,exhausted";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in self.rows.iter().chain(std::iter::once(&self.aggregate)) {
            let sub = r.substance.map(|x| x.to_string()).unwrap_or_else(|| "all".into());
            let tgt = r.target.map(|x| format!("{x}")).unwrap_or_else(|| "all".into());
            let _ = writeln!(
                s,
                "{},{},{},{:.4},{:.4},{:.4},{:.4},{},{}",
                self.variant, sub, tgt, r.mean_error, r.std_error, r.mean_signed, r.std_signed, r.n, r.exhausted
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(s: Substance, target: f64, signed: f64) -> TrialRecord {
        TrialRecord {
            variant: "x".into(),
            substance: s,
            target,
            rep: 0,
            seed: 0,
            w_stop: Some(target),
            w_hat_at_retract: Some(target),
            final_true: target + signed,
            final_predicted: None,
            error: signed.abs(),
            signed_error: signed,
            exhausted: false,
            faulted: false,
        }
    }

    #[test]
    fn row_statistics() {
        let recs = vec![rec(Substance::Oil, 50.0, 2.0), rec(Substance::Oil, 50.0, -4.0)];
        let t = ResultTable::from_records("full", &recs);
        assert_eq!(t.rows.len(), 1);
        let r = &t.rows[0];
        assert_eq!((r.mean_error, r.std_error), (3.0, 1.0));
        assert_eq!((r.mean_signed, r.std_signed), (-1.0, 3.0));
        assert!(t.to_csv().lines().last().unwrap().starts_with("full,all,all,3.0000"));
    }

    proptest! {
        #[test]
        fn aggregate_is_pooled_mean_of_rows(
            errs in prop::collection::vec((0usize..5, 0usize..4, -30.0f64..30.0), 1..80)
        ) {
            let subs = crate::signals::POUR_SUBSTANCES;
            let recs: Vec<TrialRecord> = errs.iter().map(|&(s, t, e)| rec(subs[s], 50.0 + 25.0 * t as f64, e)).collect();
            let table = ResultTable::from_records("v", &recs);
            let n: usize = table.rows.iter().map(|r| r.n).sum();
            prop_assert_eq!(n, recs.len());
            let pooled = table.rows.iter().map(|r| r.mean_error * r.n as f64).sum::<f64>() / n as f64;
            prop_assert!((pooled - table.aggregate.mean_error).abs() < 1e-9);
            let by_sub = ResultTable::by_substance(&recs);
            let pooled_s = by_sub.iter().map(|r| r.mean_signed * r.n as f64).sum::<f64>() / n as f64;
            prop_assert!((pooled_s - table.aggregate.mean_signed).abs() < 1e-9);
        }
    }
}
