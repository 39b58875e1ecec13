//! Multi-day scenario runs comparing tariffs on one customer roster.
//!
//! Each day is solved independently. For every day, every registered
//! tariff strategy produces a controllable profile and a billing schedule
//! per customer; the harness then bills, evaluates feeder voltages and
//! writes CSV reports.

mod report;
mod strategy;
pub mod synthetic;

use std::cell::OnceCell;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::customer::{self, CustomerSpec, Metering};
use crate::error::{Error, Result};
use crate::feeder::{self, check_violations, FeederDoc, FeederModel, LoadKind, NodalInjection};
use crate::fleet::{self, Building, FleetSpec};
use crate::ir_lrp::{EtaClass, EtaTable, TauRange};
use crate::optimal_alpha::{self, OptimalAlphaConfig};
use crate::tariff::{self, LoadProfile, LrpSchedule, PriceSchedule};

pub use report::{
    deviation_metrics, social_cost, summarize_dir, write_summary_csv, ComparisonReport, Deviation, SummaryRow,
};
pub use strategy::{
    CentralizedLdf, DayAhead, DayOutcome, IrLrp, OptimalAlpha, StrategyRegistry, TariffStrategy,
};

/// Either a path (relative to the scenario file) or the value inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Source<T> {
    Path(String),
    Inline(T),
}

impl<T: serde::de::DeserializeOwned + Clone> Source<T> {
    fn resolve(&self, root: &Path) -> Result<T> {
        match self {
            Source::Inline(v) => Ok(v.clone()),
            Source::Path(p) => {
                let path = root.join(p);
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                serde_json::from_str(&text).map_err(|e| Error::from(e).context(path.display().to_string()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomerEntry {
    pub id: String,
    #[serde(default)]
    pub class: String,
    #[serde(default)]
    pub node: Option<String>,
    pub spec: Source<CustomerSpec>,
    /// `period,x_hat_kwh` CSV covering one day or the whole horizon.
    #[serde(default)]
    pub target: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrLrpParams {
    #[serde(default = "default_tau_min")]
    pub tau_min: f64,
    #[serde(default = "default_tau_max")]
    pub tau_max: f64,
    #[serde(default)]
    pub eta_table: Option<Source<Vec<EtaClass>>>,
    /// Used for classes missing from the table.
    #[serde(default)]
    pub eta: Option<f64>,
}

fn default_tau_min() -> f64 {
    TauRange::SINGLE_CUSTOMER.tau_min
}

fn default_tau_max() -> f64 {
    TauRange::SINGLE_CUSTOMER.tau_max
}

impl Default for IrLrpParams {
    fn default() -> Self {
        Self { tau_min: default_tau_min(), tau_max: default_tau_max(), eta_table: None, eta: None }
    }
}

/// On-disk scenario document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDoc {
    #[serde(default)]
    pub name: String,
    pub horizon_days: usize,
    #[serde(default = "default_ppd")]
    pub periods_per_day: usize,
    #[serde(default = "default_hours")]
    pub period_hours: f64,
    /// `period,beta` CSV covering one day (repeated) or the whole horizon.
    pub prices: String,
    #[serde(alias = "tariff", deserialize_with = "one_or_many")]
    pub tariffs: Vec<String>,
    #[serde(default)]
    pub customers: Vec<CustomerEntry>,
    #[serde(default)]
    pub fleet: Option<Source<FleetSpec>>,
    #[serde(default)]
    pub feeder: Option<Source<FeederDoc>>,
    #[serde(default)]
    pub ir_lrp: IrLrpParams,
    #[serde(default)]
    pub optimal_alpha: OptimalAlphaConfig,
    #[serde(default = "default_v_min")]
    pub v_min: f64,
    #[serde(default)]
    pub output_dir: Option<String>,
}

fn default_ppd() -> usize {
    24
}

fn default_hours() -> f64 {
    1.0
}

fn default_v_min() -> f64 {
    feeder::DEFAULT_V_MIN
}

fn one_or_many<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Vec<String>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(String),
        Many(Vec<String>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(s) => vec![s],
        OneOrMany::Many(v) => v,
    })
}

/// One member of the roster, covering the whole horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Customer {
    pub id: String,
    pub class: String,
    pub node: Option<String>,
    pub spec: CustomerSpec,
    pub target: Option<Vec<f64>>,
    /// Index into the fleet when the customer is an EV building.
    pub building: Option<usize>,
}

/// Scenario with every referenced file read and validated.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub horizon_days: usize,
    pub periods_per_day: usize,
    pub prices: PriceSchedule,
    pub tariffs: Vec<String>,
    pub customers: Vec<Customer>,
    pub fleet: Option<FleetSpec>,
    pub feeder: Option<FeederModel>,
    pub tau_range: TauRange,
    pub eta_table: EtaTable,
    pub default_eta: Option<f64>,
    pub alpha_config: OptimalAlphaConfig,
    pub v_min: f64,
    pub output_dir: Option<PathBuf>,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: ScenarioDoc =
            serde_json::from_str(&text).map_err(|e| Error::from(e).context(path.display().to_string()))?;
        let root = path.parent().unwrap_or(Path::new("."));
        Self::from_doc(doc, root).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn from_doc(doc: ScenarioDoc, root: &Path) -> Result<Self> {
        let price_path = root.join(&doc.prices);
        let file = tariff::load_tariff(&price_path, doc.period_hours)
            .map_err(|e| e.context(format!("prices {}", price_path.display())))?;
        Self::with_prices(doc, root, file.beta.beta())
    }

    /// Like [`Scenario::from_doc`] but with the price series supplied
    /// directly; `doc.prices` is ignored.
    pub fn with_prices(doc: ScenarioDoc, root: &Path, beta: &[f64]) -> Result<Self> {
        if doc.horizon_days == 0 || doc.periods_per_day == 0 {
            return Err(Error::invalid("horizon_days and periods_per_day must be positive"));
        }
        let total = doc.horizon_days * doc.periods_per_day;
        let prices = PriceSchedule::new(spread(beta, doc.periods_per_day, total)?, doc.period_hours)?;

        let mut customers = Vec::new();
        for entry in &doc.customers {
            let spec = entry.spec.resolve(root).map_err(|e| e.context(format!("customer `{}`", entry.id)))?;
            let target = match &entry.target {
                Some(p) => {
                    let t = optimal_alpha::load_target(&root.join(p))?;
                    Some(spread(t.x(), doc.periods_per_day, total)?)
                }
                None => None,
            };
            customers.push(Customer {
                id: entry.id.clone(),
                class: entry.class.clone(),
                node: entry.node.clone(),
                spec,
                target,
                building: None,
            });
        }

        let fleet = doc.fleet.as_ref().map(|f| f.resolve(root)).transpose()?;
        if let Some(fleet) = &fleet {
            for (i, b) in fleet.buildings.iter().enumerate() {
                customers.push(Customer {
                    id: b.id.clone(),
                    class: b.building_type.clone(),
                    node: Some(b.node.clone()),
                    spec: building_customer(b),
                    target: None,
                    building: Some(i),
                });
            }
        }
        for (i, c) in customers.iter().enumerate() {
            if customers[..i].iter().any(|o| o.id == c.id) {
                return Err(Error::invalid(format!("duplicate customer id `{}`", c.id)));
            }
        }

        let feeder = doc.feeder.as_ref().map(|f| f.resolve(root).and_then(FeederModel::from_doc)).transpose()?;
        if let Some(f) = &feeder {
            for c in &customers {
                if let Some(node) = &c.node {
                    f.node_index(node).map_err(|e| e.context(format!("customer `{}`", c.id)))?;
                }
            }
        }

        let eta_table = match &doc.ir_lrp.eta_table {
            None => EtaTable::new(Vec::new())?,
            Some(Source::Inline(classes)) => EtaTable::new(classes.clone())?,
            Some(Source::Path(p)) => EtaTable::load(&root.join(p))?,
        };
        doc.optimal_alpha.validate()?;

        // Names are resolved against a registry at run time, so custom
        // strategies can be listed here.
        for (i, t) in doc.tariffs.iter().enumerate() {
            if doc.tariffs[..i].contains(t) {
                return Err(Error::invalid(format!("tariff `{t}` is listed twice")));
            }
        }
        if doc.tariffs.iter().any(|t| t == "ir_lrp") {
            for c in &customers {
                if eta_table.get(&c.class).is_err() && doc.ir_lrp.eta.is_none() {
                    return Err(Error::invalid(format!(
                        "no eta for class `{}` of customer `{}`",
                        c.class, c.id
                    )));
                }
            }
        }

        Ok(Scenario {
            name: doc.name,
            horizon_days: doc.horizon_days,
            periods_per_day: doc.periods_per_day,
            prices,
            tariffs: doc.tariffs,
            customers,
            fleet,
            feeder,
            tau_range: TauRange { tau_min: doc.ir_lrp.tau_min, tau_max: doc.ir_lrp.tau_max },
            eta_table,
            default_eta: doc.ir_lrp.eta,
            alpha_config: doc.optimal_alpha,
            v_min: doc.v_min,
            output_dir: doc.output_dir.map(|d| root.join(d)),
        })
    }

    pub fn period_hours(&self) -> f64 {
        self.prices.period_hours()
    }

    fn eta_for(&self, class: &str) -> Result<f64> {
        match self.eta_table.get(class) {
            Ok(c) => Ok(c.eta),
            Err(e) => self.default_eta.ok_or(e),
        }
    }

    fn day(&self, d: usize) -> Result<DayContext<'_>> {
        let ppd = self.periods_per_day;
        let total = ppd * self.horizon_days;
        let prices = self.prices.window(d * ppd, ppd)?;
        let customers = self
            .customers
            .iter()
            .map(|c| {
                let mut spec = c.spec.clone();
                spec.base_load = day_slice(&c.spec.base_load, d, ppd, total)?;
                let target = c
                    .target
                    .as_ref()
                    .map(|t| LoadProfile::new(t[d * ppd..(d + 1) * ppd].to_vec()))
                    .transpose()?;
                Ok(DayCustomer { customer: c, spec, target })
            })
            .collect::<Result<Vec<_>>>()?;
        let fleet = self
            .fleet
            .as_ref()
            .map(|f| -> Result<FleetSpec> {
                let buildings = f
                    .buildings
                    .iter()
                    .map(|b| {
                        Ok(Building { base_load_kwh: day_slice(&b.base_load_kwh, d, ppd, total)?, ..b.clone() })
                    })
                    .collect::<Result<_>>()?;
                Ok(FleetSpec { buildings, share_profiles_by_type: f.share_profiles_by_type })
            })
            .transpose()?;
        Ok(DayContext { scenario: self, day: d, prices, customers, fleet, centralized: OnceCell::new() })
    }
}

/// Customer view of an EV building: unidirectional, sharing the building
/// meter.
pub fn building_customer(b: &Building) -> CustomerSpec {
    CustomerSpec {
        total_energy_kwh: b.ev_energy_total(),
        consume_bound_kw: b.ev_count as f64 * b.ev_rate_kw,
        inject_bound_kw: 0.0,
        export_energy_kwh: 0.0,
        local_limit_kw: b.local_limit_kw,
        base_load: b.base_load_kwh.clone(),
        metering: Metering::Shared,
    }
}

/// Expands a one-day series to the horizon, or checks a full-horizon one.
fn spread(values: &[f64], ppd: usize, total: usize) -> Result<Vec<f64>> {
    if values.len() == total {
        Ok(values.to_vec())
    } else if values.len() == ppd {
        Ok(values.iter().copied().cycle().take(total).collect())
    } else {
        Err(Error::invalid(format!(
            "series has {} entries; expected {ppd} (one day) or {total} (horizon)",
            values.len()
        )))
    }
}

fn day_slice(values: &[f64], d: usize, ppd: usize, total: usize) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Ok(Vec::new());
    }
    let full = spread(values, ppd, total)?;
    Ok(full[d * ppd..(d + 1) * ppd].to_vec())
}

pub struct DayCustomer<'a> {
    pub customer: &'a Customer,
    /// Spec with base load cut to this day.
    pub spec: CustomerSpec,
    pub target: Option<LoadProfile>,
}

/// Everything a strategy sees for one day.
pub struct DayContext<'a> {
    pub scenario: &'a Scenario,
    pub day: usize,
    pub prices: PriceSchedule,
    pub customers: Vec<DayCustomer<'a>>,
    pub fleet: Option<FleetSpec>,
    centralized: OnceCell<Vec<LoadProfile>>,
}

impl DayContext<'_> {
    /// Centrally planned controllable profile for every customer. EV
    /// buildings come from the fleet schedule (voltage constrained when a
    /// feeder is present); other customers use their target, or their
    /// day-ahead optimum when none is given.
    pub fn centralized_targets(&self) -> Result<&[LoadProfile]> {
        if let Some(v) = self.centralized.get() {
            return Ok(v);
        }
        let fleet_profiles = match (&self.fleet, &self.scenario.feeder) {
            (Some(fl), Some(fd)) => Some(fleet::schedule_voltage_constrained(&self.prices, fl, fd, self.scenario.v_min)?),
            (Some(fl), None) => Some(fleet::schedule_unconstrained(&self.prices, fl)?),
            _ => None,
        }
        .map(|r| r.profiles);
        let mut out = Vec::with_capacity(self.customers.len());
        for dc in &self.customers {
            let p = match (dc.customer.building, &fleet_profiles, &dc.target) {
                (Some(b), Some(fp), _) => fp[b].clone(),
                (_, _, Some(t)) => t.clone(),
                _ => customer::optimize_day_ahead(&self.prices, &dc.spec)?.profile,
            };
            out.push(p);
        }
        let _ = self.centralized.set(out);
        Ok(self.centralized.get().expect("just set"))
    }
}

/// Result of one tariff over the whole horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct TariffRun {
    pub tariff: String,
    /// `[day][customer]` controllable profiles.
    pub profiles: Vec<Vec<LoadProfile>>,
    /// `[day][customer]` billing schedules.
    pub schedules: Vec<Vec<LrpSchedule>>,
    /// Horizon bill per customer under this tariff.
    pub customer_costs: Vec<f64>,
    /// Horizon cost per customer valued at beta only.
    pub customer_beta_costs: Vec<f64>,
    pub min_voltage: Option<f64>,
    pub violation_days: Option<usize>,
    /// `[day]` profiles the tariff was designed to reproduce, if any.
    pub targets: Vec<Option<Vec<LoadProfile>>>,
    /// Largest per-period gap to those targets.
    pub max_target_deviation: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub runs: Vec<TariffRun>,
    pub report: ComparisonReport,
}

impl RunResult {
    pub fn tariff(&self, name: &str) -> Option<&TariffRun> {
        self.runs.iter().find(|r| r.tariff == name)
    }
}

fn metered(spec: &CustomerSpec, x: &LoadProfile) -> Result<LoadProfile> {
    match spec.metering {
        Metering::Separate => Ok(x.clone()),
        Metering::Shared => x.plus(&spec.base_profile(x.n_periods())?),
    }
}

/// Runs every tariff of the scenario and, when `out_dir` is given, writes
/// the CSV reports there.
pub fn run_scenario(scenario: &Scenario, out_dir: Option<&Path>) -> Result<RunResult> {
    run_with_registry(scenario, &StrategyRegistry::with_builtins(), out_dir)
}

pub fn run_with_registry(scenario: &Scenario, registry: &StrategyRegistry, out_dir: Option<&Path>) -> Result<RunResult> {
    let strategies = scenario
        .tariffs
        .iter()
        .map(|t| registry.get(t))
        .collect::<Result<Vec<_>>>()?;
    let n_cust = scenario.customers.len();
    let mut runs: Vec<TariffRun> = scenario
        .tariffs
        .iter()
        .map(|t| TariffRun {
            tariff: t.clone(),
            profiles: Vec::new(),
            schedules: Vec::new(),
            customer_costs: vec![0.0; n_cust],
            customer_beta_costs: vec![0.0; n_cust],
            min_voltage: None,
            violation_days: None,
            targets: Vec::new(),
            max_target_deviation: None,
            warnings: Vec::new(),
        })
        .collect();

    for d in 0..scenario.horizon_days {
        let ctx = scenario.day(d)?;
        for (s, run) in strategies.iter().zip(runs.iter_mut()) {
            let outcome = s
                .run_day(&ctx)
                .map_err(|e| e.context(format!("tariff `{}`, day {d}", s.name())))?;
            if outcome.profiles.len() != n_cust || outcome.schedules.len() != n_cust {
                return Err(Error::invalid(format!("tariff `{}` returned the wrong number of customers", s.name())));
            }
            for (i, dc) in ctx.customers.iter().enumerate() {
                let m = metered(&dc.spec, &outcome.profiles[i])?;
                run.customer_costs[i] += outcome.schedules[i].total_cost(&m)?;
                run.customer_beta_costs[i] += LrpSchedule::day_ahead(ctx.prices.clone()).total_cost(&m)?;
            }
            if let Some(targets) = &outcome.targets {
                for (x, t) in outcome.profiles.iter().zip(targets) {
                    let dev = deviation_metrics(x, t)?.linf;
                    run.max_target_deviation = Some(run.max_target_deviation.unwrap_or(0.0).max(dev));
                }
            }
            run.targets.push(outcome.targets);
            run.warnings.extend(outcome.warnings.into_iter().map(|w| format!("day {d}: {w}")));
            run.profiles.push(outcome.profiles);
            run.schedules.push(outcome.schedules);
        }
    }

    let mut voltage_reports = Vec::new();
    if let Some(f) = &scenario.feeder {
        for run in runs.iter_mut() {
            let rep = evaluate_voltages(scenario, f, &run.profiles)?;
            run.min_voltage = Some(rep.min_voltage);
            run.violation_days = Some(rep.violation_days);
            voltage_reports.push(rep);
        }
    }

    if let Some(dir) = out_dir {
        write_outputs(scenario, &runs, &voltage_reports, dir)?;
        let report = summarize_dir(dir)?;
        write_summary_csv(dir, &report)?;
        return Ok(RunResult { runs, report });
    }
    let report = report::summarize_runs(scenario, &runs);
    Ok(RunResult { runs, report })
}

fn evaluate_voltages(
    scenario: &Scenario,
    feeder: &FeederModel,
    profiles: &[Vec<LoadProfile>],
) -> Result<feeder::VoltageReport> {
    let h = scenario.period_hours();
    let ppd = scenario.periods_per_day;
    let total = ppd * scenario.horizon_days;
    let mut squared = Vec::with_capacity(total);
    for (d, day) in profiles.iter().enumerate() {
        let mut loads = Vec::new();
        for (c, x) in scenario.customers.iter().zip(day) {
            let Some(node) = &c.node else { continue };
            let k = feeder.node_index(node)?;
            let base = day_slice(&c.spec.base_load, d, ppd, total)?;
            let base = if base.is_empty() { vec![0.0; ppd] } else { base };
            loads.push((
                k,
                feeder::map_building_loads(&base, h, LoadKind::Building)?,
                feeder::map_building_loads(x.x(), h, LoadKind::Ev)?,
            ));
        }
        for t in 0..ppd {
            let mut inj = NodalInjection::zeros(feeder.n_nodes());
            for (k, base, ev) in &loads {
                inj.add(*k, base[t], LoadKind::Building);
                inj.add(*k, ev[t], LoadKind::Ev);
            }
            squared.push(feeder::voltage_profile(feeder, &inj)?);
        }
    }
    check_violations(feeder, squared, ppd, scenario.v_min)
}

#[derive(Serialize)]
struct RunMeta<'a> {
    name: &'a str,
    horizon_days: usize,
    periods_per_day: usize,
    period_hours: f64,
    tariffs: &'a [String],
    customers: Vec<CustomerMeta<'a>>,
    has_feeder: bool,
    v_min: f64,
    warnings: BTreeMap<&'a str, &'a [String]>,
}

#[derive(Serialize)]
struct CustomerMeta<'a> {
    id: &'a str,
    class: &'a str,
    node: Option<&'a str>,
}

pub(crate) const RUN_META: &str = "run.json";

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn create_file(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| Error::io(path, e))
}

/// Writes `tariffs/<tariff>/<customer>_day_NNN.csv` for every schedule a
/// run billed.
pub fn write_tariff_files(scenario: &Scenario, runs: &[TariffRun], dir: &Path) -> Result<()> {
    for run in runs {
        let tdir = dir.join("tariffs").join(&run.tariff);
        create_dir(&tdir)?;
        for (d, schedules) in run.schedules.iter().enumerate() {
            for (c, s) in scenario.customers.iter().zip(schedules) {
                let path = tdir.join(format!("{}_day_{d:03}.csv", c.id));
                tariff::write_tariff_csv(create_file(&path)?, s.beta(), Some(s.alpha()))?;
            }
        }
    }
    Ok(())
}

fn write_outputs(
    scenario: &Scenario,
    runs: &[TariffRun],
    voltages: &[feeder::VoltageReport],
    dir: &Path,
) -> Result<()> {
    create_dir(dir)?;
    write_tariff_files(scenario, runs, dir)?;
    let ppd = scenario.periods_per_day;

    for (r, run) in runs.iter().enumerate() {
        let pdir = dir.join("profiles").join(&run.tariff);
        create_dir(&pdir)?;
        for (d, (profiles, schedules)) in run.profiles.iter().zip(&run.schedules).enumerate() {
            let path = pdir.join(format!("day_{d:03}.csv"));
            let mut w = csv::Writer::from_writer(create_file(&path)?);
            w.write_record(["period", "customer", "x_kwh", "metered_kwh", "alpha", "beta", "marginal_price"])?;
            for t in 0..ppd {
                for ((c, x), s) in scenario.customers.iter().zip(profiles).zip(schedules) {
                    let mut spec = c.spec.clone();
                    spec.base_load = day_slice(&c.spec.base_load, d, ppd, ppd * scenario.horizon_days)?;
                    let m = metered(&spec, x)?.x()[t];
                    w.write_record([
                        t.to_string(),
                        c.id.clone(),
                        x.x()[t].to_string(),
                        m.to_string(),
                        s.alpha().alpha()[t].to_string(),
                        s.beta().beta()[t].to_string(),
                        s.marginal_price(t, m)?.to_string(),
                    ])?;
                }
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
        }

        let bdir = dir.join("bills");
        create_dir(&bdir)?;
        let path = bdir.join(format!("{}.csv", run.tariff));
        let mut w = csv::Writer::from_writer(create_file(&path)?);
        w.write_record(["day", "customer", "class", "energy_kwh", "cost_usd", "beta_cost_usd"])?;
        for (d, (profiles, schedules)) in run.profiles.iter().zip(&run.schedules).enumerate() {
            for ((c, x), s) in scenario.customers.iter().zip(profiles).zip(schedules) {
                let mut spec = c.spec.clone();
                spec.base_load = day_slice(&c.spec.base_load, d, ppd, ppd * scenario.horizon_days)?;
                let m = metered(&spec, x)?;
                w.write_record([
                    d.to_string(),
                    c.id.clone(),
                    c.class.clone(),
                    m.total().to_string(),
                    s.total_cost(&m)?.to_string(),
                    LrpSchedule::day_ahead(s.beta().clone()).total_cost(&m)?.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        if let Some(rep) = voltages.get(r) {
            let vdir = dir.join("voltages");
            create_dir(&vdir)?;
            let path = vdir.join(format!("{}_violations.csv", run.tariff));
            feeder::write_violations_csv(create_file(&path)?, rep)?;
            let path = vdir.join(format!("{}_daily.csv", run.tariff));
            let mut w = csv::Writer::from_writer(create_file(&path)?);
            w.write_record(["day", "min_voltage_pu", "violations"])?;
            let feeder = scenario.feeder.as_ref().expect("voltages imply a feeder");
            for d in 0..scenario.horizon_days {
                let mut min_v = f64::INFINITY;
                for sv in &rep.squared[d * ppd..(d + 1) * ppd] {
                    for k in 0..feeder.n_nodes() {
                        for ph in (0..feeder::PHASES).filter(|&ph| feeder.has_phase(k, ph)) {
                            min_v = min_v.min(sv.magnitude(k, ph));
                        }
                    }
                }
                let count = rep.violations.iter().filter(|v| v.period / ppd == d).count();
                w.write_record([d.to_string(), min_v.to_string(), count.to_string()])?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
    }

    let path = dir.join("deviations.csv");
    let mut w = csv::Writer::from_writer(create_file(&path)?);
    w.write_record(["tariff", "customer", "day", "linf_kwh", "l1_kwh"])?;
    for run in runs {
        for (d, targets) in run.targets.iter().enumerate() {
            let Some(targets) = targets else { continue };
            for ((c, x), t) in scenario.customers.iter().zip(&run.profiles[d]).zip(targets) {
                let dev = deviation_metrics(x, t)?;
                w.write_record([
                    run.tariff.clone(),
                    c.id.clone(),
                    d.to_string(),
                    dev.linf.to_string(),
                    dev.l1.to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let warnings = runs.iter().map(|r| (r.tariff.as_str(), r.warnings.as_slice())).collect();
    let meta = RunMeta {
        name: &scenario.name,
        horizon_days: scenario.horizon_days,
        periods_per_day: ppd,
        period_hours: scenario.period_hours(),
        tariffs: &scenario.tariffs,
        customers: scenario
            .customers
            .iter()
            .map(|c| CustomerMeta { id: &c.id, class: &c.class, node: c.node.as_deref() })
            .collect(),
        has_feeder: scenario.feeder.is_some(),
        v_min: scenario.v_min,
        warnings,
    };
    let path = dir.join(RUN_META);
    let text = serde_json::to_string_pretty(&meta)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(())
}
