//! The customer's day-ahead cost minimization under an LRP schedule.
//!
//! A customer moves controllable energy across periods to minimize
//! `sum_t alpha_t m_t^2 + beta_t m_t`, where `m_t` is the metered energy
//! (the controllable load alone when separately metered, controllable plus
//! base load on a shared meter). Storage exports are bounded per period by
//! the inject rating and in total by the energy the customer has to sell.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::knapsack::{Knapsack, ENERGY_TOL};
use crate::tariff::{LoadProfile, LrpSchedule, PriceSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Metering {
    #[default]
    Separate,
    Shared,
}

/// Controllable-resource description.
///
/// `total_energy_kwh` is the energy the controllable load must consume over
/// the horizon; `export_energy_kwh` is what storage has to sell. The net
/// energy the optimizer balances is their difference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomerSpec {
    pub total_energy_kwh: f64,
    pub consume_bound_kw: f64,
    #[serde(default)]
    pub inject_bound_kw: f64,
    #[serde(default)]
    pub export_energy_kwh: f64,
    pub local_limit_kw: f64,
    /// Non-controllable load; empty means none.
    #[serde(default)]
    pub base_load: Vec<f64>,
    #[serde(default)]
    pub metering: Metering,
}

impl CustomerSpec {
    pub fn is_bidirectional(&self) -> bool {
        self.inject_bound_kw > 0.0
    }

    pub fn net_energy_kwh(&self) -> f64 {
        self.total_energy_kwh - self.export_energy_kwh
    }

    pub fn base_profile(&self, n: usize) -> Result<LoadProfile> {
        if self.base_load.is_empty() {
            return Ok(LoadProfile::zeros(n));
        }
        check_len(n, self.base_load.len())?;
        LoadProfile::new(self.base_load.clone())
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("total_energy_kwh", self.total_energy_kwh),
            ("consume_bound_kw", self.consume_bound_kw),
            ("inject_bound_kw", self.inject_bound_kw),
            ("export_energy_kwh", self.export_energy_kwh),
            ("local_limit_kw", self.local_limit_kw),
        ];
        for (name, v) in fields {
            if v.is_nan() {
                return Err(Error::invalid(format!("{name} is NaN")));
            }
        }
        if self.total_energy_kwh < 0.0 || !self.total_energy_kwh.is_finite() {
            return Err(Error::invalid("total_energy_kwh must be finite and >= 0"));
        }
        if self.export_energy_kwh < 0.0 || !self.export_energy_kwh.is_finite() {
            return Err(Error::invalid("export_energy_kwh must be finite and >= 0"));
        }
        if self.consume_bound_kw < 0.0 || self.inject_bound_kw < 0.0 {
            return Err(Error::invalid("power bounds must be >= 0"));
        }
        if !self.inject_bound_kw.is_finite() {
            return Err(Error::invalid("inject_bound_kw must be finite"));
        }
        if self.local_limit_kw <= 0.0 {
            return Err(Error::invalid("local_limit_kw must be > 0"));
        }
        if let Some(v) = self.base_load.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("base load value {v} is not finite")));
        }
        Ok(())
    }

    /// Per-period bounds on controllable energy, `(lo, hi)` in kWh.
    pub fn bounds(&self, n: usize, period_hours: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let base = self.base_profile(n)?;
        let hi = base
            .x()
            .iter()
            .map(|b| {
                let kw = self.consume_bound_kw.min(self.local_limit_kw - b / period_hours);
                kw.max(0.0) * period_hours
            })
            .collect();
        let lo = vec![-self.inject_bound_kw * period_hours; n];
        Ok((lo, hi))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: CustomerSpec = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizerResult {
    /// Controllable energy per period.
    pub profile: LoadProfile,
    /// Multiplier on the energy balance, $/kWh.
    pub lambda_star: f64,
    /// Extra multiplier on the export budget (0 when it is slack).
    pub export_multiplier: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
}

/// The customer QP in separable form, with the meter shift folded into
/// each period's intercept.
#[derive(Debug, Clone)]
pub struct CustomerProblem {
    pub alpha: Vec<f64>,
    pub intercept: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub net_energy: f64,
    pub export_budget: f64,
}

impl CustomerProblem {
    pub fn new(schedule: &LrpSchedule, spec: &CustomerSpec) -> Result<Self> {
        spec.validate()?;
        let n = schedule.n_periods();
        let h = schedule.beta().period_hours();
        let (lo, hi) = spec.bounds(n, h)?;
        let base = spec.base_profile(n)?;
        let alpha = schedule.alpha().alpha().to_vec();
        let intercept = schedule
            .beta()
            .beta()
            .iter()
            .zip(&alpha)
            .zip(base.x())
            .map(|((b, a), m)| match spec.metering {
                Metering::Separate => *b,
                Metering::Shared => b + 2.0 * a * m,
            })
            .collect();

        let capacity: f64 = hi.iter().sum();
        let slack = ENERGY_TOL * spec.total_energy_kwh.max(1.0);
        if spec.total_energy_kwh > capacity + slack {
            return Err(Error::Infeasible(format!(
                "energy {} kWh exceeds capacity {capacity} kWh",
                spec.total_energy_kwh
            )));
        }
        let export_capacity: f64 = lo.iter().map(|l| -l).sum();
        if spec.export_energy_kwh > export_capacity + slack {
            return Err(Error::Infeasible(format!(
                "export {} kWh exceeds injection capacity {export_capacity} kWh",
                spec.export_energy_kwh
            )));
        }
        Ok(Self {
            alpha,
            intercept,
            lo,
            hi,
            net_energy: spec.net_energy_kwh(),
            export_budget: spec.export_energy_kwh,
        })
    }

    fn knapsack(&self) -> Knapsack<'_> {
        Knapsack {
            alpha: &self.alpha,
            intercept: &self.intercept,
            lo: &self.lo,
            hi: &self.hi,
            total: self.net_energy,
        }
    }

    /// Net controllable energy the customer would take at multiplier
    /// `lambda` with the export budget ignored.
    pub fn energy_at(&self, lambda: f64) -> f64 {
        self.knapsack().sum_low(lambda)
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        x.iter()
            .enumerate()
            .map(|(t, v)| self.alpha[t] * v * v + self.intercept[t] * v)
            .sum()
    }

    fn solve(&self, bracket: Option<(f64, f64)>) -> Result<(Vec<f64>, f64, f64, usize)> {
        let joint = self.knapsack().solve(bracket)?;
        let injected: f64 = joint.x.iter().map(|v| (-v).max(0.0)).sum();
        if injected <= self.export_budget + ENERGY_TOL * self.export_budget.max(1.0) {
            return Ok((joint.x, joint.lambda, 0.0, joint.iterations));
        }

        // The export budget binds: consumption and injection decouple into
        // two allocations with their own multipliers.
        let n = self.alpha.len();
        let zeros = vec![0.0; n];
        let consume = Knapsack {
            alpha: &self.alpha,
            intercept: &self.intercept,
            lo: &zeros,
            hi: &self.hi,
            total: self.net_energy + self.export_budget,
        }
        .solve(bracket)?;
        let neg_intercept: Vec<f64> = self.intercept.iter().map(|b| -b).collect();
        let inject_cap: Vec<f64> = self.lo.iter().map(|l| -l).collect();
        let inject = Knapsack {
            alpha: &self.alpha,
            intercept: &neg_intercept,
            lo: &zeros,
            hi: &inject_cap,
            total: self.export_budget,
        }
        .solve(bracket.map(|(a, b)| (-b, -a)))?;
        let x = consume
            .x
            .iter()
            .zip(&inject.x)
            .map(|(p, q)| p - q)
            .collect();
        let export_lambda = -inject.lambda;
        Ok((
            x,
            consume.lambda,
            (export_lambda - consume.lambda).max(0.0),
            joint.iterations + consume.iterations + inject.iterations,
        ))
    }
}

/// Global minimizer of the customer's LRP cost.
pub fn optimize(schedule: &LrpSchedule, spec: &CustomerSpec) -> Result<OptimizerResult> {
    optimize_with_bracket(schedule, spec, None)
}

/// As [`optimize`], starting bisection from a caller-chosen multiplier
/// bracket (widened if it does not contain the solution).
pub fn optimize_with_bracket(
    schedule: &LrpSchedule,
    spec: &CustomerSpec,
    bracket: Option<(f64, f64)>,
) -> Result<OptimizerResult> {
    let problem = CustomerProblem::new(schedule, spec)?;
    let (x, lambda, mu, iterations) = problem.solve(bracket)?;
    let profile = LoadProfile::new(x)?;
    let report = kkt_check(schedule, spec, &profile)?;
    Ok(OptimizerResult {
        profile,
        lambda_star: lambda,
        export_multiplier: mu,
        kkt_residual: report.stationarity_residual,
        iterations,
    })
}

/// Day-ahead response with no slopes: fill the cheapest periods up to
/// their caps and sell from the most expensive ones. Ties go to the
/// earliest period.
pub fn optimize_day_ahead(beta: &PriceSchedule, spec: &CustomerSpec) -> Result<OptimizerResult> {
    let schedule = LrpSchedule::day_ahead(beta.clone());
    let problem = CustomerProblem::new(&schedule, spec)?;
    let n = beta.n_periods();
    let prices = beta.beta();

    let mut cheapest: Vec<usize> = (0..n).collect();
    cheapest.sort_by(|&s, &t| prices[s].partial_cmp(&prices[t]).unwrap().then(s.cmp(&t)));
    let mut dearest: Vec<usize> = (0..n).collect();
    dearest.sort_by(|&s, &t| prices[t].partial_cmp(&prices[s]).unwrap().then(s.cmp(&t)));

    let fill = |order: &[usize], start: &[f64], cap: &[f64], mut remaining: f64| {
        let mut x = start.to_vec();
        let mut marginal = None;
        for &t in order {
            if remaining <= 0.0 {
                break;
            }
            let take = remaining.min(cap[t] - start[t]);
            x[t] += take;
            remaining -= take;
            marginal = Some(t);
        }
        (x, marginal)
    };

    let lo_sum: f64 = problem.lo.iter().sum();
    let (joint, marginal) = fill(&cheapest, &problem.lo, &problem.hi, problem.net_energy - lo_sum);
    let injected: f64 = joint.iter().map(|v| (-v).max(0.0)).sum();
    let (x, lambda, mu) = if injected
        <= problem.export_budget + ENERGY_TOL * problem.export_budget.max(1.0)
    {
        (joint, marginal.map_or(prices[cheapest[0]], |t| prices[t]), 0.0)
    } else {
        let zeros = vec![0.0; n];
        let (consume, marginal) = fill(
            &cheapest,
            &zeros,
            &problem.hi,
            problem.net_energy + problem.export_budget,
        );
        let inject_cap: Vec<f64> = problem.lo.iter().map(|l| -l).collect();
        let (inject, export_marginal) = fill(&dearest, &zeros, &inject_cap, problem.export_budget);
        let lambda = marginal.map_or(prices[cheapest[0]], |t| prices[t]);
        let nu = export_marginal.map_or(lambda, |t| prices[t]);
        (
            consume.iter().zip(&inject).map(|(p, q)| p - q).collect(),
            lambda,
            (nu - lambda).max(0.0),
        )
    };
    let profile = LoadProfile::new(x)?;
    let report = kkt_check(&schedule, spec, &profile)?;
    Ok(OptimizerResult {
        profile,
        lambda_star: lambda,
        export_multiplier: mu,
        kkt_residual: report.stationarity_residual,
        iterations: 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KktReport {
    /// Median marginal price over interior consuming periods.
    pub lambda_hat: Option<f64>,
    /// Median marginal price over interior exporting periods.
    pub export_lambda_hat: Option<f64>,
    pub stationarity_residual: f64,
    pub bound_violation: f64,
    pub energy_residual: f64,
    pub export_violation: f64,
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    })
}

/// Optimality diagnostics for a candidate profile.
pub fn kkt_check(
    schedule: &LrpSchedule,
    spec: &CustomerSpec,
    profile: &LoadProfile,
) -> Result<KktReport> {
    let problem = CustomerProblem::new(schedule, spec)?;
    check_len(problem.alpha.len(), profile.n_periods())?;
    let x = profile.x();
    let n = x.len();
    let grad: Vec<f64> = (0..n)
        .map(|t| 2.0 * problem.alpha[t] * x[t] + problem.intercept[t])
        .collect();
    let eps = |v: f64| 1e-9 * v.abs().max(1.0);

    #[derive(PartialEq)]
    enum Pos {
        AtLo,
        AtHi,
        AtZero,
        InteriorPos,
        InteriorNeg,
    }
    let position: Vec<Pos> = (0..n)
        .map(|t| {
            let (lo, hi) = (problem.lo[t], problem.hi[t]);
            if x[t] <= lo + eps(lo) {
                Pos::AtLo
            } else if x[t] >= hi - eps(hi) {
                Pos::AtHi
            } else if lo < 0.0 && x[t].abs() <= eps(0.0) {
                Pos::AtZero
            } else if x[t] > 0.0 || lo >= 0.0 {
                Pos::InteriorPos
            } else {
                Pos::InteriorNeg
            }
        })
        .collect();

    let mut pos: Vec<f64> = (0..n)
        .filter(|&t| position[t] == Pos::InteriorPos)
        .map(|t| grad[t])
        .collect();
    let mut neg: Vec<f64> = (0..n)
        .filter(|&t| position[t] == Pos::InteriorNeg)
        .map(|t| grad[t])
        .collect();
    let lambda_hat = median(&mut pos);
    let export_lambda_hat = median(&mut neg);

    let stationarity_residual = pos
        .iter()
        .map(|g| (g - lambda_hat.unwrap()).abs())
        .chain(neg.iter().map(|g| (g - export_lambda_hat.unwrap()).abs()))
        .fold(0.0, f64::max);

    // Consumption side threshold, export side threshold.
    let lam = lambda_hat.or(export_lambda_hat);
    let nu = export_lambda_hat.or(lambda_hat);
    let mut bound_violation: f64 = 0.0;
    for t in 0..n {
        let g = grad[t];
        let v = match position[t] {
            Pos::AtHi => lam.map_or(0.0, |l| (g - l).max(0.0)),
            Pos::AtLo => {
                if problem.lo[t] < 0.0 {
                    nu.map_or(0.0, |l| (l - g).max(0.0))
                } else {
                    lam.map_or(0.0, |l| (l - g).max(0.0))
                }
            }
            Pos::AtZero => {
                lam.map_or(0.0, |l| (l - g).max(0.0)) + nu.map_or(0.0, |l| (g - l).max(0.0))
            }
            _ => 0.0,
        };
        bound_violation = bound_violation.max(v);
    }

    let injected: f64 = x.iter().map(|v| (-v).max(0.0)).sum();
    Ok(KktReport {
        lambda_hat,
        export_lambda_hat,
        stationarity_residual,
        bound_violation,
        energy_residual: (profile.total() - problem.net_energy).abs(),
        export_violation: (injected - problem.export_budget).max(0.0),
    })
}

#[derive(Debug, Serialize)]
struct ResultRow {
    period: usize,
    x_kwh: f64,
    marginal_price: f64,
}

/// Writes `period,x_kwh,marginal_price`. The marginal price is evaluated at
/// the metered energy.
pub fn write_result_csv<W: std::io::Write>(
    writer: W,
    schedule: &LrpSchedule,
    spec: &CustomerSpec,
    result: &OptimizerResult,
) -> Result<()> {
    let n = schedule.n_periods();
    let base = spec.base_profile(n)?;
    let mut wtr = csv::Writer::from_writer(writer);
    for (t, x) in result.profile.x().iter().enumerate() {
        let metered = match spec.metering {
            Metering::Separate => *x,
            Metering::Shared => x + base.x()[t],
        };
        wtr.serialize(ResultRow {
            period: t,
            x_kwh: *x,
            marginal_price: schedule.marginal_price(t, metered)?,
        })?;
    }
    wtr.flush().map_err(|e| Error::io("<result csv>", e))?;
    Ok(())
}
