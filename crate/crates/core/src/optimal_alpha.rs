//! Optimal-alpha slopes: choose `alpha_t` so that a cost-minimizing
//! customer's stationarity conditions are met exactly at a target profile.
//!
//! Every loaded period must share the seed period's marginal price
//! `lambda* = 2 alpha_seed x_seed + beta_seed`, which fixes
//! `alpha_t = (lambda* - beta_t) / (2 x_t)`. Periods where that value is
//! infinite (no target load) or negative are protected with `theta`.

use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::customer::{self, CustomerSpec, Metering, OptimizerResult};
use crate::error::{check_len, Error, Result};
use crate::tariff::{AlphaSchedule, LoadProfile, LrpSchedule, PriceSchedule};

/// Target controllable energy per period as set by the DSO.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetProfile {
    pub x_hat: LoadProfile,
    /// Non-controllable load on the same meter (shared metering only).
    pub base_load: Option<LoadProfile>,
    pub metering: Metering,
    pub controllable_is_bidirectional: bool,
}

impl TargetProfile {
    /// Separately metered target.
    pub fn separate(x_hat: LoadProfile) -> Self {
        let bidirectional = x_hat.has_negative();
        Self {
            x_hat,
            base_load: None,
            metering: Metering::Separate,
            controllable_is_bidirectional: bidirectional,
        }
    }

    /// Unidirectional controllable load sharing a meter with `base_load`.
    pub fn shared_unidirectional(x_hat: LoadProfile, base_load: LoadProfile) -> Result<Self> {
        check_len(x_hat.n_periods(), base_load.n_periods())?;
        if x_hat.has_negative() {
            return Err(Error::invalid(
                "unidirectional target contains injections",
            ));
        }
        Ok(Self {
            x_hat,
            base_load: Some(base_load),
            metering: Metering::Shared,
            controllable_is_bidirectional: false,
        })
    }

    pub fn n_periods(&self) -> usize {
        self.x_hat.n_periods()
    }

    fn shared_unidirectional_mode(&self) -> bool {
        self.metering == Metering::Shared && !self.controllable_is_bidirectional
    }

    /// Energy seen by the meter in each period.
    pub fn metered(&self) -> Vec<f64> {
        match (self.metering, &self.base_load) {
            (Metering::Shared, Some(base)) => self
                .x_hat
                .x()
                .iter()
                .zip(base.x())
                .map(|(x, b)| x + b)
                .collect(),
            _ => self.x_hat.x().to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalAlphaConfig {
    #[serde(default = "default_alpha_seed")]
    pub alpha_seed: f64,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default)]
    pub reassign_seed_alpha: bool,
}

fn default_alpha_seed() -> f64 {
    1e-13
}

fn default_theta() -> f64 {
    10.0
}

impl Default for OptimalAlphaConfig {
    fn default() -> Self {
        Self {
            alpha_seed: default_alpha_seed(),
            theta: default_theta(),
            reassign_seed_alpha: false,
        }
    }
}

impl OptimalAlphaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_seed.is_finite() && self.alpha_seed >= 0.0) {
            return Err(Error::invalid(format!(
                "alpha_seed must be finite and >= 0, got {}",
                self.alpha_seed
            )));
        }
        if !(self.theta.is_finite() && self.theta > 0.0) {
            return Err(Error::invalid(format!(
                "theta must be finite and > 0, got {}",
                self.theta
            )));
        }
        Ok(())
    }
}

/// Period with the highest price among those with positive target load.
/// Ties resolve to the earliest period.
pub fn select_seed(beta: &PriceSchedule, target: &TargetProfile) -> Result<usize> {
    check_len(beta.n_periods(), target.n_periods())?;
    let mut seed: Option<usize> = None;
    for (t, &x) in target.x_hat.x().iter().enumerate() {
        if x > 0.0 && seed.is_none_or(|s| beta.beta()[t] > beta.beta()[s]) {
            seed = Some(t);
        }
    }
    seed.ok_or_else(|| Error::invalid("target has no period with positive load to seed from"))
}

/// Full result of the slope computation.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaDesign {
    pub alphas: AlphaSchedule,
    pub seed: usize,
    /// Marginal price every loaded period is tuned to.
    pub lambda_star: f64,
    /// Periods whose slope was replaced by the protection value.
    pub protected: Vec<bool>,
    /// Protection value actually used (0 in shared unidirectional mode).
    pub theta: f64,
    pub warnings: Vec<String>,
}

pub fn compute_alphas(
    beta: &PriceSchedule,
    target: &TargetProfile,
    config: &OptimalAlphaConfig,
) -> Result<AlphaSchedule> {
    design_alphas(beta, target, config).map(|d| d.alphas)
}

pub fn design_alphas(
    beta: &PriceSchedule,
    target: &TargetProfile,
    config: &OptimalAlphaConfig,
) -> Result<AlphaDesign> {
    config.validate()?;
    let seed = select_seed(beta, target)?;
    let prices = beta.beta();
    let metered = target.metered();
    let shared_uni = target.shared_unidirectional_mode();
    let theta = if shared_uni { 0.0 } else { config.theta };

    let seed_energy = if shared_uni {
        target.x_hat.x()[seed]
    } else {
        metered[seed]
    };
    let lambda_star = 2.0 * config.alpha_seed * seed_energy + prices[seed];

    let n = prices.len();
    let mut alpha = vec![0.0; n];
    let mut protected = vec![false; n];
    for t in 0..n {
        if t == seed {
            alpha[t] = config.alpha_seed;
            continue;
        }
        let raw = (lambda_star - prices[t]) / (2.0 * metered[t]);
        if raw.is_finite() && raw >= 0.0 {
            alpha[t] = raw;
        } else {
            alpha[t] = theta;
            protected[t] = true;
        }
    }

    if config.reassign_seed_alpha {
        let floor = (0..n)
            .filter(|&t| t != seed && !protected[t])
            .map(|t| alpha[t])
            .fold(f64::INFINITY, f64::min);
        if floor.is_finite() {
            alpha[seed] = floor;
        }
    }

    let mut warnings = Vec::new();
    if target.controllable_is_bidirectional && target.x_hat.has_negative() {
        let peak = (0..n).fold(0, |best, t| if prices[t] > prices[best] { t } else { best });
        if target.x_hat.x()[peak] >= 0.0 {
            let msg = format!(
                "target injects energy but not at the highest-price period {peak}; \
                 protected periods will not follow the injection"
            );
            warn!("{msg}");
            warnings.push(msg);
        }
    }

    Ok(AlphaDesign {
        alphas: AlphaSchedule::new(alpha)?,
        seed,
        lambda_star,
        protected,
        theta,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundTripReport {
    pub deviation: Vec<f64>,
    pub max_deviation: f64,
    pub lambda_star: f64,
    /// For zero-target periods: largest deviation the slope there allows,
    /// `max(0, lambda* - beta_t) / (2 alpha_t)`.
    pub protected_bound: Vec<Option<f64>>,
    pub result: OptimizerResult,
}

/// Runs the customer optimizer on the designed tariff and measures how
/// closely it reproduces the target.
pub fn verify_roundtrip(
    beta: &PriceSchedule,
    target: &TargetProfile,
    alphas: &AlphaSchedule,
    spec: &CustomerSpec,
) -> Result<RoundTripReport> {
    check_len(beta.n_periods(), alphas.n_periods())?;
    let total = target.x_hat.total();
    if (spec.net_energy_kwh() - total).abs() > 1e-6 * total.abs().max(1.0) {
        return Err(Error::invalid(format!(
            "customer net energy {} does not match target total {total}",
            spec.net_energy_kwh()
        )));
    }
    let seed = select_seed(beta, target)?;
    let seed_energy = if target.shared_unidirectional_mode() {
        target.x_hat.x()[seed]
    } else {
        target.metered()[seed]
    };
    let lambda_star = 2.0 * alphas.alpha()[seed] * seed_energy + beta.beta()[seed];

    let schedule = LrpSchedule::new(alphas.clone(), beta.clone())?;
    let result = customer::optimize(&schedule, spec)?;
    let deviation: Vec<f64> = result
        .profile
        .x()
        .iter()
        .zip(target.x_hat.x())
        .map(|(x, xh)| (x - xh).abs())
        .collect();
    let protected_bound = target
        .x_hat
        .x()
        .iter()
        .enumerate()
        .map(|(t, &xh)| {
            (xh == 0.0).then(|| {
                let gap = (lambda_star - beta.beta()[t]).max(0.0);
                let a = alphas.alpha()[t];
                if gap == 0.0 {
                    0.0
                } else {
                    gap / (2.0 * a)
                }
            })
        })
        .collect();
    Ok(RoundTripReport {
        max_deviation: deviation.iter().cloned().fold(0.0, f64::max),
        deviation,
        lambda_star,
        protected_bound,
        result,
    })
}

#[derive(Debug, Deserialize)]
struct TargetRow {
    period: usize,
    x_hat_kwh: f64,
}

/// Reads a `period,x_hat_kwh` CSV.
pub fn read_target_csv<R: std::io::Read>(reader: R) -> Result<LoadProfile> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["period", "x_hat_kwh"] {
        return Err(Error::invalid(format!(
            "target header must be `period,x_hat_kwh`, got `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut x = Vec::new();
    for (i, row) in rdr.deserialize::<TargetRow>().enumerate() {
        let row = row?;
        if row.period != i {
            return Err(Error::invalid(format!(
                "target rows must be ordered by period: row {i} has period {}",
                row.period
            )));
        }
        x.push(row.x_hat_kwh);
    }
    LoadProfile::new(x)
}

pub fn write_target_csv<W: std::io::Write>(writer: W, target: &LoadProfile) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["period", "x_hat_kwh"])?;
    for (t, x) in target.x().iter().enumerate() {
        wtr.write_record([t.to_string(), x.to_string()])?;
    }
    wtr.flush().map_err(|e| Error::io("<target csv>", e))?;
    Ok(())
}

pub fn load_target(path: &Path) -> Result<LoadProfile> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_target_csv(file).map_err(|e| e.context(path.display().to_string()))
}
