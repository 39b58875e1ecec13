use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Scenario, TariffRun, RUN_META};
use crate::error::{check_len, Error, Result};
use crate::tariff::{LoadProfile, PriceSchedule};

const BASELINE: &str = "day_ahead";

/// Total energy valued at day-ahead prices, whatever tariff was billed.
pub fn social_cost(profiles: &[LoadProfile], beta: &PriceSchedule) -> Result<f64> {
    let mut total = 0.0;
    for p in profiles {
        check_len(beta.n_periods(), p.n_periods())?;
        total += p.x().iter().zip(beta.beta()).map(|(x, b)| x * b).sum::<f64>();
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Deviation {
    pub per_period: Vec<f64>,
    pub linf: f64,
    pub l1: f64,
}

pub fn deviation_metrics(actual: &LoadProfile, target: &LoadProfile) -> Result<Deviation> {
    check_len(target.n_periods(), actual.n_periods())?;
    let per_period: Vec<f64> = actual.x().iter().zip(target.x()).map(|(a, t)| (a - t).abs()).collect();
    Ok(Deviation {
        linf: per_period.iter().cloned().fold(0.0, f64::max),
        l1: per_period.iter().sum(),
        per_period,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub tariff: String,
    pub min_voltage_pu: Option<f64>,
    pub violation_days: Option<usize>,
    /// Mean horizon bill per customer of each class.
    pub class_costs: BTreeMap<String, f64>,
    pub social_cost: f64,
    /// Social cost relative to the day-ahead run, in percent.
    pub pct_diff: Option<f64>,
    /// Class cost relative to the day-ahead run, in percent.
    pub class_pct_diff: BTreeMap<String, f64>,
}

impl SummaryRow {
    pub fn class_cost(&self, class: &str) -> Option<f64> {
        self.class_costs.get(class).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub rows: Vec<SummaryRow>,
}

impl ComparisonReport {
    pub fn row(&self, tariff: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.tariff == tariff)
    }
}

struct TariffTotals {
    tariff: String,
    /// Per customer: (class, bill, beta valuation).
    customers: Vec<(String, f64, f64)>,
    voltage: Option<(f64, usize)>,
}

fn pct(value: f64, base: f64) -> f64 {
    (value - base) / base * 100.0
}

fn build(totals: Vec<TariffTotals>) -> ComparisonReport {
    let mut rows: Vec<SummaryRow> = totals
        .into_iter()
        .map(|t| {
            let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
            for (class, cost, _) in &t.customers {
                let e = sums.entry(class.clone()).or_insert((0.0, 0));
                e.0 += cost;
                e.1 += 1;
            }
            SummaryRow {
                tariff: t.tariff,
                min_voltage_pu: t.voltage.map(|v| v.0),
                violation_days: t.voltage.map(|v| v.1),
                class_costs: sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect(),
                social_cost: t.customers.iter().map(|c| c.2).sum(),
                pct_diff: None,
                class_pct_diff: BTreeMap::new(),
            }
        })
        .collect();
    if let Some(base) = rows.iter().find(|r| r.tariff == BASELINE).cloned() {
        for r in &mut rows {
            r.pct_diff = Some(pct(r.social_cost, base.social_cost));
            r.class_pct_diff = r
                .class_costs
                .iter()
                .filter_map(|(k, v)| base.class_costs.get(k).map(|b| (k.clone(), pct(*v, *b))))
                .collect();
        }
    }
    ComparisonReport { rows }
}

pub(crate) fn summarize_runs(scenario: &Scenario, runs: &[TariffRun]) -> ComparisonReport {
    build(
        runs.iter()
            .map(|r| TariffTotals {
                tariff: r.tariff.clone(),
                customers: scenario
                    .customers
                    .iter()
                    .enumerate()
                    .map(|(i, c)| (c.class.clone(), r.customer_costs[i], r.customer_beta_costs[i]))
                    .collect(),
                voltage: r.min_voltage.zip(r.violation_days),
            })
            .collect(),
    )
}

#[derive(Deserialize)]
struct MetaDoc {
    tariffs: Vec<String>,
    customers: Vec<MetaCustomer>,
    has_feeder: bool,
}

#[derive(Deserialize)]
struct MetaCustomer {
    id: String,
    class: String,
}

#[derive(Deserialize)]
struct BillRow {
    #[allow(dead_code)]
    day: usize,
    customer: String,
    #[allow(dead_code)]
    class: String,
    #[allow(dead_code)]
    energy_kwh: f64,
    cost_usd: f64,
    beta_cost_usd: f64,
}

#[derive(Deserialize)]
struct DailyVoltage {
    #[allow(dead_code)]
    day: usize,
    min_voltage_pu: f64,
    violations: usize,
}

/// Rebuilds the comparison from the bill and voltage CSVs of a finished
/// run.
pub fn summarize_dir(dir: &Path) -> Result<ComparisonReport> {
    let meta_path = dir.join(RUN_META);
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: MetaDoc = serde_json::from_str(&text)?;
    let mut totals = Vec::new();
    for tariff in &meta.tariffs {
        let path = dir.join("bills").join(format!("{tariff}.csv"));
        let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut sums: Vec<(f64, f64)> = vec![(0.0, 0.0); meta.customers.len()];
        for row in csv::Reader::from_reader(file).deserialize::<BillRow>() {
            let row = row?;
            let i = meta
                .customers
                .iter()
                .position(|c| c.id == row.customer)
                .ok_or_else(|| Error::invalid(format!("{}: unknown customer `{}`", path.display(), row.customer)))?;
            sums[i].0 += row.cost_usd;
            sums[i].1 += row.beta_cost_usd;
        }
        let voltage = if meta.has_feeder {
            let path = dir.join("voltages").join(format!("{tariff}_daily.csv"));
            let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
            let mut min_v = f64::INFINITY;
            let mut days = 0;
            for row in csv::Reader::from_reader(file).deserialize::<DailyVoltage>() {
                let row = row?;
                min_v = min_v.min(row.min_voltage_pu);
                days += usize::from(row.violations > 0);
            }
            Some((min_v, days))
        } else {
            None
        };
        totals.push(TariffTotals {
            tariff: tariff.clone(),
            customers: meta.customers.iter().zip(sums).map(|(c, (a, b))| (c.class.clone(), a, b)).collect(),
            voltage,
        });
    }
    Ok(build(totals))
}

fn opt(v: Option<f64>, decimals: usize) -> String {
    v.map(|v| format!("{v:.decimals$}")).unwrap_or_default()
}

/// Writes `summary.csv` and `percent_diff.csv` into `dir`.
pub fn write_summary_csv(dir: &Path, report: &ComparisonReport) -> Result<()> {
    let path = dir.join("summary.csv");
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["tariff", "min_voltage_pu", "violation_days", "cost_office", "cost_warehouse", "social_cost", "pct_diff"])?;
    for r in &report.rows {
        w.write_record([
            r.tariff.clone(),
            opt(r.min_voltage_pu, 4),
            r.violation_days.map(|d| d.to_string()).unwrap_or_default(),
            opt(r.class_cost("office"), 2),
            opt(r.class_cost("warehouse"), 2),
            format!("{:.2}", r.social_cost),
            opt(r.pct_diff, 2),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("percent_diff.csv");
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["tariff", "class", "cost_usd", "pct_diff"])?;
    for r in &report.rows {
        for (class, cost) in &r.class_costs {
            w.write_record([
                r.tariff.clone(),
                class.clone(),
                format!("{cost:.2}"),
                opt(r.class_pct_diff.get(class).copied(), 2),
            ])?;
        }
        w.write_record([r.tariff.clone(), "social".into(), format!("{:.2}", r.social_cost), opt(r.pct_diff, 2)])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(())
}
