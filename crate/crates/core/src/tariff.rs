//! Shared domain types and the load-responsive pricing arithmetic.
//!
//! A period's price is linear in the energy bought in that period,
//! `price = alpha * x + beta`, so the period cost is the quadratic
//! `alpha * x^2 + beta * x`. With `alpha = 0` this is an ordinary
//! volumetric day-ahead tariff.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Day-ahead volumetric prices, $/kWh, one per pricing period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSchedule {
    beta: Vec<f64>,
    period_hours: f64,
}

impl PriceSchedule {
    pub fn new(beta: Vec<f64>, period_hours: f64) -> Result<Self> {
        if !(period_hours.is_finite() && period_hours > 0.0) {
            return Err(Error::invalid(format!(
                "period_hours must be positive, got {period_hours}"
            )));
        }
        if beta.is_empty() {
            return Err(Error::invalid("price schedule has no periods"));
        }
        if let Some((t, b)) = beta
            .iter()
            .enumerate()
            .find(|(_, b)| !(b.is_finite() && **b > 0.0))
        {
            return Err(Error::invalid(format!(
                "beta[{t}] = {b}: prices must be finite and > 0"
            )));
        }
        Ok(Self { beta, period_hours })
    }

    /// Hourly schedule.
    pub fn hourly(beta: Vec<f64>) -> Result<Self> {
        Self::new(beta, 1.0)
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn n_periods(&self) -> usize {
        self.beta.len()
    }

    pub fn period_hours(&self) -> f64 {
        self.period_hours
    }

    /// Prices for `len` periods starting at `start`.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        let end = start + len;
        if end > self.beta.len() {
            return Err(Error::IndexOutOfRange {
                index: end.saturating_sub(1),
                n_periods: self.beta.len(),
            });
        }
        Self::new(self.beta[start..end].to_vec(), self.period_hours)
    }

    /// Every price multiplied by `factor` (unit conversion).
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.beta.iter().map(|b| b * factor).collect(), self.period_hours)
    }
}

/// LRP slopes, $/kWh^2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSchedule {
    alpha: Vec<f64>,
}

impl AlphaSchedule {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if let Some((t, a)) = alpha
            .iter()
            .enumerate()
            .find(|(_, a)| !(a.is_finite() && **a >= 0.0))
        {
            return Err(Error::invalid(format!(
                "alpha[{t}] = {a}: slopes must be finite and >= 0"
            )));
        }
        Ok(Self { alpha })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            alpha: vec![0.0; n],
        }
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn n_periods(&self) -> usize {
        self.alpha.len()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.alpha.iter().map(|a| a * factor).collect())
    }
}

/// A linear pricing curve per period: slope `alpha` and intercept `beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrpSchedule {
    alpha: AlphaSchedule,
    beta: PriceSchedule,
}

impl LrpSchedule {
    pub fn new(alpha: AlphaSchedule, beta: PriceSchedule) -> Result<Self> {
        check_len(beta.n_periods(), alpha.n_periods())?;
        Ok(Self { alpha, beta })
    }

    /// The plain day-ahead tariff (all slopes zero).
    pub fn day_ahead(beta: PriceSchedule) -> Self {
        Self {
            alpha: AlphaSchedule::zeros(beta.n_periods()),
            beta,
        }
    }

    pub fn alpha(&self) -> &AlphaSchedule {
        &self.alpha
    }

    pub fn beta(&self) -> &PriceSchedule {
        &self.beta
    }

    pub fn n_periods(&self) -> usize {
        self.beta.n_periods()
    }

    fn coefficients(&self, t: usize) -> Result<(f64, f64)> {
        if t >= self.n_periods() {
            return Err(Error::IndexOutOfRange {
                index: t,
                n_periods: self.n_periods(),
            });
        }
        Ok((self.alpha.alpha[t], self.beta.beta[t]))
    }

    /// `alpha_t * x + beta_t`, $/kWh.
    pub fn marginal_price(&self, t: usize, x: f64) -> Result<f64> {
        let (a, b) = self.coefficients(t)?;
        Ok(a * x + b)
    }

    /// `alpha_t * x^2 + beta_t * x`, $. Applies unchanged to negative
    /// (exported) energy.
    pub fn period_cost(&self, t: usize, x: f64) -> Result<f64> {
        let (a, b) = self.coefficients(t)?;
        Ok(a * x * x + b * x)
    }

    pub fn total_cost(&self, profile: &LoadProfile) -> Result<f64> {
        check_len(self.n_periods(), profile.n_periods())?;
        profile
            .x()
            .iter()
            .enumerate()
            .map(|(t, &x)| self.period_cost(t, x))
            .sum()
    }

    pub fn bill(&self, profile: &LoadProfile) -> Result<Bill> {
        check_len(self.n_periods(), profile.n_periods())?;
        let items = profile
            .x()
            .iter()
            .enumerate()
            .map(|(t, &x)| {
                Ok(BillLineItem {
                    period_index: t,
                    energy_kwh: x,
                    marginal_price_usd_per_kwh: self.marginal_price(t, x)?,
                    period_cost_usd: self.period_cost(t, x)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let total = items.iter().map(|i| i.period_cost_usd).sum();
        Ok(Bill { items, total })
    }
}

/// Per-period energy, kWh. Negative entries are exports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadProfile {
    x: Vec<f64>,
}

impl LoadProfile {
    pub fn new(x: Vec<f64>) -> Result<Self> {
        if let Some((t, v)) = x.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::invalid(format!("load[{t}] = {v} is not finite")));
        }
        Ok(Self { x })
    }

    pub fn zeros(n: usize) -> Self {
        Self { x: vec![0.0; n] }
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn n_periods(&self) -> usize {
        self.x.len()
    }

    pub fn total(&self) -> f64 {
        self.x.iter().sum()
    }

    pub fn has_negative(&self) -> bool {
        self.x.iter().any(|v| *v < 0.0)
    }

    /// Elementwise sum.
    pub fn plus(&self, other: &LoadProfile) -> Result<LoadProfile> {
        check_len(self.n_periods(), other.n_periods())?;
        Ok(LoadProfile {
            x: self.x.iter().zip(&other.x).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn scaled(&self, factor: f64) -> LoadProfile {
        LoadProfile {
            x: self.x.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn window(&self, start: usize, len: usize) -> Result<LoadProfile> {
        let end = start + len;
        if end > self.x.len() {
            return Err(Error::IndexOutOfRange {
                index: end.saturating_sub(1),
                n_periods: self.x.len(),
            });
        }
        Ok(LoadProfile {
            x: self.x[start..end].to_vec(),
        })
    }

    /// Sums consecutive meter readings into pricing periods. `per_period`
    /// readings make up one pricing period.
    pub fn aggregate(readings: &[f64], per_period: usize) -> Result<LoadProfile> {
        if per_period == 0 || readings.len() % per_period != 0 {
            return Err(Error::invalid(format!(
                "{} readings do not divide into groups of {per_period}",
                readings.len()
            )));
        }
        LoadProfile::new(
            readings
                .chunks(per_period)
                .map(|c| c.iter().sum())
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BillLineItem {
    pub period_index: usize,
    pub energy_kwh: f64,
    pub marginal_price_usd_per_kwh: f64,
    pub period_cost_usd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bill {
    pub items: Vec<BillLineItem>,
    pub total: f64,
}

/// Rounds a dollar amount for display.
pub fn round_to(value: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    (value * scale).round() / scale
}

// ---------------------------------------------------------------------------
// Tariff CSV: `period,beta[,alpha]`
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct TariffRow {
    period: usize,
    beta: f64,
    #[serde(default)]
    alpha: Option<f64>,
}

#[derive(Debug, Serialize)]
struct TariffRowOut {
    period: usize,
    beta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
}

/// Parsed tariff file: the price intercepts and, if present, the slopes.
#[derive(Debug, Clone, PartialEq)]
pub struct TariffFile {
    pub beta: PriceSchedule,
    pub alpha: Option<AlphaSchedule>,
}

impl TariffFile {
    pub fn into_schedule(self) -> Result<LrpSchedule> {
        match self.alpha {
            Some(alpha) => LrpSchedule::new(alpha, self.beta),
            None => Ok(LrpSchedule::day_ahead(self.beta)),
        }
    }
}

pub fn read_tariff_csv<R: Read>(reader: R, period_hours: f64) -> Result<TariffFile> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let names: Vec<&str> = headers.iter().collect();
    let has_alpha = match names.as_slice() {
        ["period", "beta"] => false,
        ["period", "beta", "alpha"] => true,
        other => {
            return Err(Error::invalid(format!(
                "tariff header must be `period,beta[,alpha]`, got `{}`",
                other.join(",")
            )))
        }
    };
    let mut beta = Vec::new();
    let mut alpha = Vec::new();
    for (i, row) in rdr.deserialize::<TariffRow>().enumerate() {
        let row = row?;
        if row.period != i {
            return Err(Error::invalid(format!(
                "tariff rows must be ordered by period: row {i} has period {}",
                row.period
            )));
        }
        beta.push(row.beta);
        if has_alpha {
            alpha.push(
                row.alpha
                    .ok_or_else(|| Error::invalid(format!("missing alpha at period {i}")))?,
            );
        }
    }
    Ok(TariffFile {
        beta: PriceSchedule::new(beta, period_hours)?,
        alpha: if has_alpha {
            Some(AlphaSchedule::new(alpha)?)
        } else {
            None
        },
    })
}

pub fn write_tariff_csv<W: Write>(
    writer: W,
    beta: &PriceSchedule,
    alpha: Option<&AlphaSchedule>,
) -> Result<()> {
    if let Some(a) = alpha {
        check_len(beta.n_periods(), a.n_periods())?;
    }
    let mut wtr = csv::Writer::from_writer(writer);
    for (t, b) in beta.beta().iter().enumerate() {
        wtr.serialize(TariffRowOut {
            period: t,
            beta: *b,
            alpha: alpha.map(|a| a.alpha()[t]),
        })?;
    }
    wtr.flush().map_err(|e| Error::io("<tariff csv>", e))?;
    Ok(())
}

pub fn load_tariff(path: &Path, period_hours: f64) -> Result<TariffFile> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_tariff_csv(file, period_hours).map_err(|e| e.context(path.display().to_string()))
}

pub fn save_tariff(path: &Path, beta: &PriceSchedule, alpha: Option<&AlphaSchedule>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_tariff_csv(file, beta, alpha)
}
