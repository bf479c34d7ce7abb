use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::data::mask_window;
use super::{PwpError, PwpOutput, PwpVariant, Result, LABELS};
use crate::neural::{Checkpoint, Net, NetInput, Params};
use crate::signals::{ElectrodeBounds, ElectrodeSet, Substance, POUR_SUBSTANCES, WINDOW_VALUES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Meta {
    variant: PwpVariant,
    electrodes: ElectrodeSet,
    labels: Vec<Substance>,
    bounds: BTreeMap<Substance, ElectrodeBounds>,
}

/// A trained predictor together with what inference needs: the variant, the
/// enabled electrodes and frozen per-substance normalization bounds.
#[derive(Debug, Clone)]
pub struct PwpModel {
    pub net: Net,
    pub params: Params,
    pub variant: PwpVariant,
    pub electrodes: ElectrodeSet,
    /// Mean of the training trials' per-trial min/max, per substance.
    pub bounds: BTreeMap<Substance, ElectrodeBounds>,
}

impl PwpModel {
    fn outputs(&self, y: ArrayView2<f64>) -> Vec<PwpOutput> {
        y.rows()
            .into_iter()
            .map(|r| match self.variant {
                PwpVariant::Full => PwpOutput { dw_hat: r[0], o_s: r[1], o_e: r[2] },
                PwpVariant::NoOffsets => PwpOutput { dw_hat: r[0], o_s: 0.0, o_e: 0.0 },
            })
            .collect()
    }

    /// Eval-mode predictions for already-masked window rows.
    pub fn predict_rows(&self, rows: Array2<f64>, label: usize) -> Result<Vec<PwpOutput>> {
        let n = rows.nrows();
        let input = NetInput::new(rows, vec![vec![label; n]]);
        let y = self.net.predict(&self.params, &input)?;
        Ok(self.outputs(y.view()))
    }

    /// One normalized window (`WINDOW_VALUES` values, time-major).
    pub fn predict_window(&self, window: &[f64], label: usize) -> Result<PwpOutput> {
        if label >= LABELS {
            return Err(PwpError::Neural(crate::neural::NeuralError::Label { table: 0, label, vocab: LABELS }));
        }
        if window.len() != WINDOW_VALUES {
            return Err(PwpError::Neural(crate::neural::NeuralError::Dimension {
                what: "window",
                expected: WINDOW_VALUES,
                got: window.len(),
            }));
        }
        let mut row = window.to_vec();
        mask_window(&mut row, self.electrodes);
        let rows = Array2::from_shape_vec((1, WINDOW_VALUES), row).expect("row shape");
        Ok(self.predict_rows(rows, label)?[0])
    }

    pub fn bounds_for(&self, s: Substance) -> Option<&ElectrodeBounds> {
        self.bounds.get(&s)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = Meta {
            variant: self.variant,
            electrodes: self.electrodes,
            labels: POUR_SUBSTANCES.to_vec(),
            bounds: self.bounds.clone(),
        };
        Checkpoint::new(self.net.spec(), &self.params, serde_json::to_value(meta).expect("meta serializes"))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<PwpModel> {
        let meta: Meta = serde_json::from_value(ck.meta.clone()).map_err(|e| PwpError::Model(e.to_string()))?;
        if meta.labels != POUR_SUBSTANCES {
            return Err(PwpError::Model("label vocabulary differs from this build".into()));
        }
        if ck.spec.output_dim != meta.variant.output_dim() {
            return Err(PwpError::Model("output width does not match variant".into()));
        }
        Ok(PwpModel {
            net: Net::new(ck.spec.clone())?,
            params: ck.params()?,
            variant: meta.variant,
            electrodes: meta.electrodes,
            bounds: meta.bounds,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<PwpModel> {
        PwpModel::from_checkpoint(&Checkpoint::load(path)?)
    }
}
