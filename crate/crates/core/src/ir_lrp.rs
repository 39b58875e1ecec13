//! Inverse-rank slopes: the most expensive period gets the flattest curve.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::tariff::{AlphaSchedule, PriceSchedule};

/// Evenly spaced multipliers on `[tau_min, tau_max]`, endpoints included.
#[derive(Debug, Clone, PartialEq)]
pub struct TauVector {
    values: Vec<f64>,
    tau_min: f64,
    tau_max: f64,
}

impl TauVector {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn tau_min(&self) -> f64 {
        self.tau_min
    }

    pub fn tau_max(&self) -> f64 {
        self.tau_max
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauRange {
    pub tau_min: f64,
    pub tau_max: f64,
}

impl TauRange {
    pub const SINGLE_CUSTOMER: TauRange = TauRange { tau_min: 0.1, tau_max: 1.5 };
    pub const FEEDER: TauRange = TauRange { tau_min: 0.1, tau_max: 3.0 };
}

pub fn build_tau(n: usize, tau_min: f64, tau_max: f64) -> Result<TauVector> {
    if n < 2 {
        return Err(Error::invalid(format!("tau vector needs at least 2 entries, got {n}")));
    }
    if !(tau_min.is_finite() && tau_max.is_finite() && tau_min > 0.0 && tau_min < tau_max) {
        return Err(Error::invalid(format!(
            "tau range must satisfy 0 < tau_min < tau_max, got [{tau_min}, {tau_max}]"
        )));
    }
    let step = (tau_max - tau_min) / (n - 1) as f64;
    let mut values: Vec<f64> = (0..n).map(|i| tau_min + i as f64 * step).collect();
    values[n - 1] = tau_max;
    Ok(TauVector { values, tau_min, tau_max })
}

/// Periods ordered from highest to lowest price. Equal prices keep
/// period order, so the earlier period ranks as more expensive.
fn price_rank(beta: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..beta.len()).collect();
    order.sort_by(|&a, &b| beta[b].total_cmp(&beta[a]));
    order
}

/// Reindexes `tau` so the k-th most expensive period holds the k-th
/// smallest multiplier.
pub fn assign_inverse_rank(beta: &PriceSchedule, tau: &TauVector) -> Result<Vec<f64>> {
    check_len(beta.n_periods(), tau.len())?;
    let mut out = vec![0.0; tau.len()];
    for (k, t) in price_rank(beta.beta()).into_iter().enumerate() {
        out[t] = tau.values[k];
    }
    Ok(out)
}

pub fn compute(beta: &PriceSchedule, range: TauRange, eta: f64) -> Result<AlphaSchedule> {
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::invalid(format!("eta must be finite and > 0, got {eta}")));
    }
    let tau = build_tau(beta.n_periods(), range.tau_min, range.tau_max)?;
    let assigned = assign_inverse_rank(beta, &tau)?;
    AlphaSchedule::new(assigned.into_iter().map(|t| t * eta).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaClass {
    pub class_name: String,
    pub max_load_kw: f64,
    pub eta: f64,
}

/// Customer classes keyed by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaTable {
    pub classes: Vec<EtaClass>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum EtaTableDoc {
    Wrapped(EtaTable),
    Bare(Vec<EtaClass>),
}

impl EtaTable {
    pub fn new(classes: Vec<EtaClass>) -> Result<Self> {
        for (i, c) in classes.iter().enumerate() {
            if !(c.eta.is_finite() && c.eta > 0.0) {
                return Err(Error::invalid(format!(
                    "class `{}` has non-positive eta {}",
                    c.class_name, c.eta
                )));
            }
            if classes[..i].iter().any(|o| o.class_name == c.class_name) {
                return Err(Error::invalid(format!("duplicate class `{}`", c.class_name)));
            }
        }
        Ok(Self { classes })
    }

    /// Accepts either `{"classes": [...]}` or a bare array.
    pub fn from_json(text: &str) -> Result<Self> {
        let classes = match serde_json::from_str::<EtaTableDoc>(text)? {
            EtaTableDoc::Wrapped(t) => t.classes,
            EtaTableDoc::Bare(v) => v,
        };
        Self::new(classes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn get(&self, class_name: &str) -> Result<&EtaClass> {
        self.classes
            .iter()
            .find(|c| c.class_name == class_name)
            .ok_or_else(|| Error::invalid(format!("unknown customer class `{class_name}`")))
    }
}
