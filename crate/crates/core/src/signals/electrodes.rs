use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{SignalError, ELECTRODES};

/// A non-empty subset of the ten electrodes. Stored 0-based; the text form
/// is 1-based (left panel 1-5 bottom-to-top, right panel 6-10).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ElectrodeSet {
    bits: u16,
}

impl ElectrodeSet {
    pub const ALL: ElectrodeSet = ElectrodeSet { bits: (1 << ELECTRODES) - 1 };

    /// From 0-based indices.
    pub fn from_indices(idx: &[usize]) -> Result<ElectrodeSet, SignalError> {
        let mut bits = 0u16;
        for &i in idx {
            if i >= ELECTRODES {
                return Err(SignalError::Invalid(format!("electrode {} out of range 1..=10", i + 1)));
            }
            bits |= 1 << i;
        }
        if bits == 0 {
            return Err(SignalError::Invalid("empty electrode subset".into()));
        }
        Ok(ElectrodeSet { bits })
    }

    /// Canonical subsets by size: 10 = all, 6 = 1st/3rd/5th per panel,
    /// 2 = 1st and 5th of the right panel, 1 = 3rd of the right panel.
    pub fn canonical(n: usize) -> Option<ElectrodeSet> {
        let idx: &[usize] = match n {
            10 => return Some(ElectrodeSet::ALL),
            6 => &[0, 2, 4, 5, 7, 9],
            2 => &[5, 9],
            1 => &[7],
            _ => return None,
        };
        ElectrodeSet::from_indices(idx).ok()
    }

    pub fn contains(&self, e: usize) -> bool {
        e < ELECTRODES && self.bits & (1 << e) != 0
    }

    pub fn indices(&self) -> Vec<usize> {
        (0..ELECTRODES).filter(|&e| self.contains(e)).collect()
    }

    pub fn len(&self) -> usize {
        self.bits.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.bits == 0
    }

    pub fn is_all(&self) -> bool {
        *self == ElectrodeSet::ALL
    }
}

impl Default for ElectrodeSet {
    fn default() -> Self {
        ElectrodeSet::ALL
    }
}

impl fmt::Display for ElectrodeSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.indices().iter().map(|e| (e + 1).to_string()).collect();
        write!(f, "{}", parts.join(","))
    }
}

/// Accepts `all`, a canonical size (`10`, `6`, `2`, `1`), or a 1-based
/// comma list such as `6,10` (a single explicit electrode is written `8,`).
impl FromStr for ElectrodeSet {
    type Err = SignalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("all") {
            return Ok(ElectrodeSet::ALL);
        }
        if !s.contains(',') {
            let n: usize = s.parse().map_err(|_| SignalError::Invalid(format!("bad electrode spec `{s}`")))?;
            return ElectrodeSet::canonical(n)
                .ok_or_else(|| SignalError::Invalid(format!("no canonical {n}-electrode subset; use a list like `1,3`")));
        }
        let mut idx = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let e: usize = part.parse().map_err(|_| SignalError::Invalid(format!("bad electrode `{part}`")))?;
            if e == 0 {
                return Err(SignalError::Invalid("electrodes are numbered from 1".into()));
            }
            idx.push(e - 1);
        }
        ElectrodeSet::from_indices(&idx)
    }
}

impl TryFrom<String> for ElectrodeSet {
    type Error = SignalError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        if s.contains(',') || s == "all" {
            s.parse()
        } else {
            format!("{s},").parse()
        }
    }
}

impl From<ElectrodeSet> for String {
    fn from(e: ElectrodeSet) -> String {
        e.to_string()
    }
}
