//! Seeded synthetic desk-scale feeder scenarios.
//!
//! A small radial feeder carries office and warehouse buildings with EV
//! fleets. Prices are a one-day hourly shape perturbed per day. Fleet sizes
//! grow until day-ahead charging pulls some node below the voltage limit,
//! and the inverse-rank scaling is then tuned by search so that IR-LRP
//! keeps every day within limits.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{IrLrpParams, Scenario, ScenarioDoc, Source};
use crate::error::{Error, Result};
use crate::feeder::{EdgeDoc, FeederDoc, FeederModel, NodeDoc, PerPhase, DEFAULT_V_MIN};
use crate::fleet::{self, Building, FleetSpec};
use crate::ir_lrp::{EtaClass, TauRange};
use crate::optimal_alpha::OptimalAlphaConfig;
use crate::tariff::{self, PriceSchedule};

/// Hourly price shape ($/kWh) that the synthetic series perturbs.
pub const REFERENCE_PRICES: [f64; 24] = [
    0.2198, 0.2074, 0.2044, 0.1945, 0.2081, 0.2632, 0.3349, 0.3226, 0.2318, 0.1773, 0.1479, 0.1397, 0.1455,
    0.1630, 0.1711, 0.1839, 0.2739, 0.4124, 0.5185, 0.4680, 0.4213, 0.3841, 0.3393, 0.2833,
];

pub const ALL_TARIFFS: [&str; 4] = ["day_ahead", "centralized_ldf", "optimal_alpha", "ir_lrp"];

const OFFICE_PEAK_KW: f64 = 180.0;
const WAREHOUSE_PEAK_KW: f64 = 90.0;
const MAX_FLEET_SCALE: u32 = 60;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub horizon_days: usize,
    /// Fleets grow until the day-ahead minimum voltage drops below this.
    pub target_min_voltage: f64,
    pub v_min: f64,
}

impl SyntheticConfig {
    pub fn new(seed: u64) -> Self {
        Self { seed, horizon_days: 7, target_min_voltage: 0.945, v_min: DEFAULT_V_MIN }
    }
}

/// All inputs of a generated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScenario {
    pub config: SyntheticConfig,
    pub feeder: FeederDoc,
    pub fleet: FleetSpec,
    /// Hourly prices over the whole horizon.
    pub prices: Vec<f64>,
    pub eta: Vec<EtaClass>,
    /// Multiplier applied to the initial fleet sizes.
    pub fleet_scale: u32,
}

impl SyntheticScenario {
    /// Scenario document referring to the files written by [`write`].
    ///
    /// [`write`]: SyntheticScenario::write
    pub fn doc(&self) -> ScenarioDoc {
        let mut doc = base_doc(&self.config, &ALL_TARIFFS);
        doc.prices = "prices_synthetic.csv".into();
        doc.fleet = Some(Source::Path("fleet.json".into()));
        doc.feeder = Some(Source::Path("feeder.json".into()));
        doc.ir_lrp.eta_table = Some(Source::Path("eta.json".into()));
        doc
    }

    /// Builds the scenario in memory with the given tariffs.
    pub fn scenario_with(&self, tariffs: &[&str]) -> Result<Scenario> {
        inline_scenario(&self.config, &self.feeder, &self.fleet, &self.prices, &self.eta, tariffs)
    }

    pub fn scenario(&self) -> Result<Scenario> {
        self.scenario_with(&ALL_TARIFFS)
    }

    /// Writes every input file and `scenario.json` into `dir`; returns the
    /// scenario path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(&dir.join("feeder.json"), &self.feeder)?;
        write_json(&dir.join("fleet.json"), &self.fleet)?;
        write_json(&dir.join("eta.json"), &self.eta)?;
        tariff::save_tariff(&dir.join("prices_synthetic.csv"), &PriceSchedule::hourly(self.prices.clone())?, None)?;
        let path = dir.join("scenario.json");
        write_json(&path, &self.doc())?;
        Ok(path)
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn base_doc(cfg: &SyntheticConfig, tariffs: &[&str]) -> ScenarioDoc {
    ScenarioDoc {
        name: format!("synthetic-desk-feeder-seed-{}", cfg.seed),
        horizon_days: cfg.horizon_days,
        periods_per_day: 24,
        period_hours: 1.0,
        prices: String::new(),
        tariffs: tariffs.iter().map(|s| s.to_string()).collect(),
        customers: Vec::new(),
        fleet: None,
        feeder: None,
        ir_lrp: IrLrpParams {
            tau_min: TauRange::FEEDER.tau_min,
            tau_max: TauRange::FEEDER.tau_max,
            eta_table: None,
            eta: None,
        },
        optimal_alpha: OptimalAlphaConfig::default(),
        v_min: cfg.v_min,
        output_dir: None,
    }
}

fn inline_scenario(
    cfg: &SyntheticConfig,
    feeder: &FeederDoc,
    fleet: &FleetSpec,
    prices: &[f64],
    eta: &[EtaClass],
    tariffs: &[&str],
) -> Result<Scenario> {
    let mut doc = base_doc(cfg, tariffs);
    doc.fleet = Some(Source::Inline(fleet.clone()));
    doc.feeder = Some(Source::Inline(feeder.clone()));
    doc.ir_lrp.eta_table = Some(Source::Inline(eta.to_vec()));
    Scenario::with_prices(doc, Path::new("."), prices)
}

fn office_shape(t: usize) -> f64 {
    let h = t as f64;
    if (7.0..19.0).contains(&h) {
        0.35 + 0.65 * (std::f64::consts::PI * (h - 7.0) / 12.0).sin()
    } else {
        0.3
    }
}

fn warehouse_shape(t: usize) -> f64 {
    if (5..21).contains(&t) {
        0.8
    } else {
        0.5
    }
}

fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

fn line(rng: &mut ChaCha8Rng, from: &str, to: &str) -> EdgeDoc {
    let r = round4(rng.gen_range(0.005..0.010));
    let x = round4(r * rng.gen_range(0.8..1.2));
    EdgeDoc { from: from.into(), to: to.into(), r_pu: PerPhase::Balanced(r), x_pu: PerPhase::Balanced(x) }
}

/// Six-node trunk with a lateral of one to three nodes hanging off every
/// trunk node but the first. Returns the feeder and the building sites.
fn build_feeder(rng: &mut ChaCha8Rng) -> (FeederDoc, Vec<String>) {
    let mut nodes = vec![NodeDoc { id: "sub".into(), phases: None }];
    let mut edges = Vec::new();
    let mut sites = Vec::new();
    let mut prev = "sub".to_string();
    for i in 1..=6 {
        let id = format!("t{i}");
        nodes.push(NodeDoc { id: id.clone(), phases: None });
        edges.push(line(rng, &prev, &id));
        if i <= 5 {
            let mut lp = id.clone();
            for j in 1..=rng.gen_range(1..=3) {
                let lid = format!("t{i}l{j}");
                nodes.push(NodeDoc { id: lid.clone(), phases: None });
                edges.push(line(rng, &lp, &lid));
                lp = lid;
            }
            sites.push(lp);
        }
        prev = id;
    }
    sites.push(prev);
    let doc = FeederDoc {
        substation: "sub".into(),
        substation_voltage_pu: 1.0,
        base_kva: 500.0,
        base_kv: Some(12.47),
        nodes,
        edges,
    };
    (doc, sites)
}

fn build_fleet(rng: &mut ChaCha8Rng, sites: &[String], days: usize) -> (FleetSpec, Vec<u32>) {
    let mut buildings = Vec::new();
    let mut counts = Vec::new();
    for (i, node) in sites.iter().enumerate() {
        let office = i % 3 != 2;
        let (kind, peak, evs, limit) =
            if office { ("office", OFFICE_PEAK_KW, 2, 600.0) } else { ("warehouse", WAREHOUSE_PEAK_KW, 1, 300.0) };
        let size = rng.gen_range(0.8..1.2);
        let base = (0..days * 24)
            .map(|k| {
                let shape = if office { office_shape(k % 24) } else { warehouse_shape(k % 24) };
                round4(peak * size * shape * rng.gen_range(0.95..1.05))
            })
            .collect();
        buildings.push(Building {
            id: format!("{kind}-{}", i + 1),
            node: node.clone(),
            building_type: kind.into(),
            ev_count: evs,
            ev_rate_kw: 7.2,
            ev_energy_kwh: 20.0,
            local_limit_kw: limit,
            base_load_kwh: base,
        });
        counts.push(evs);
    }
    (FleetSpec { buildings, share_profiles_by_type: false }, counts)
}

/// Prices are kept distinct within each day: tied prices leave the
/// optimal-slope design without a unique customer optimum.
fn build_prices(rng: &mut ChaCha8Rng, days: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(days * 24);
    for _ in 0..days {
        let mut day: Vec<f64> = REFERENCE_PRICES.iter().map(|p| round4(p * rng.gen_range(0.92..1.08))).collect();
        for t in 1..day.len() {
            while day[..t].contains(&day[t]) {
                day[t] = round4(day[t] + 1e-4);
            }
        }
        out.extend(day);
    }
    out
}

fn eta_classes(m: f64) -> Vec<EtaClass> {
    vec![
        EtaClass { class_name: "office".into(), max_load_kw: 600.0, eta: m / OFFICE_PEAK_KW },
        EtaClass { class_name: "warehouse".into(), max_load_kw: 300.0, eta: m / WAREHOUSE_PEAK_KW },
    ]
}

fn single_run(
    cfg: &SyntheticConfig,
    feeder: &FeederDoc,
    fleet: &FleetSpec,
    prices: &[f64],
    eta: &[EtaClass],
    tariff: &str,
) -> Result<super::TariffRun> {
    let s = inline_scenario(cfg, feeder, fleet, prices, eta, &[tariff])?;
    let mut run = super::run_scenario(&s, None)?;
    Ok(run.runs.remove(0))
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticScenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (feeder, sites) = build_feeder(&mut rng);
    let (mut fleet, counts) = build_fleet(&mut rng, &sites, cfg.horizon_days);
    let prices = build_prices(&mut rng, cfg.horizon_days);
    let probe_eta = eta_classes(1.0);

    let mut fleet_scale = None;
    for k in 1..=MAX_FLEET_SCALE {
        for (b, &c) in fleet.buildings.iter_mut().zip(&counts) {
            b.ev_count = c * k;
        }
        let run = single_run(cfg, &feeder, &fleet, &prices, &probe_eta, "day_ahead")?;
        log::debug!("fleet scale {k}: day-ahead min voltage {:?}", run.min_voltage);
        if run.min_voltage.is_some_and(|v| v < cfg.target_min_voltage) {
            fleet_scale = Some(k);
            break;
        }
    }
    let fleet_scale = fleet_scale.ok_or_else(|| Error::invalid("EV fleets never pushed the feeder below the target"))?;

    // The central plan has to exist on every day.
    let model = FeederModel::from_doc(feeder.clone())?;
    for d in 0..cfg.horizon_days {
        let day_prices = PriceSchedule::hourly(prices[d * 24..(d + 1) * 24].to_vec())?;
        let day_fleet = FleetSpec {
            buildings: fleet
                .buildings
                .iter()
                .map(|b| Building { base_load_kwh: b.base_load_kwh[d * 24..(d + 1) * 24].to_vec(), ..b.clone() })
                .collect(),
            share_profiles_by_type: false,
        };
        fleet::schedule_voltage_constrained(&day_prices, &day_fleet, &model, cfg.v_min)
            .map_err(|e| e.context(format!("central plan, day {d}")))?;
    }

    // Smallest scaling that keeps every day within limits.
    let mut eta = None;
    let mut m = 1e-3;
    while m < 1e3 {
        let classes = eta_classes(m);
        let run = single_run(cfg, &feeder, &fleet, &prices, &classes, "ir_lrp")?;
        if run.violation_days == Some(0) {
            eta = Some(classes);
            break;
        }
        m *= 1.25;
    }
    let eta = eta.ok_or_else(|| Error::invalid("no inverse-rank scaling keeps the feeder within limits"))?;

    Ok(SyntheticScenario { config: cfg.clone(), feeder, fleet, prices, eta, fleet_scale })
}
