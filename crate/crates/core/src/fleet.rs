//! Centralized day-ahead EV fleet charging.
//!
//! EVs are aggregated per building: the decision variable is the energy
//! delivered to one EV of a group in one period, and a building's
//! controllable load is that times its EV count. Without sharing, every
//! building is its own group. With sharing, buildings of one type follow a
//! single per-EV profile.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feeder::{
    self, check_violations, map_building_loads, voltage_profile, FeederModel, LoadKind, NodalInjection,
    SquaredVoltages, PHASES, PHASE_NAMES,
};
use crate::lp::{lp_solve_with, LpProblem, LpStatus, Pricing};
use crate::tariff::{LoadProfile, PriceSchedule};

const ENERGY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Building {
    pub id: String,
    pub node: String,
    #[serde(default)]
    pub building_type: String,
    pub ev_count: u32,
    #[serde(default = "default_rate")]
    pub ev_rate_kw: f64,
    #[serde(default = "default_energy")]
    pub ev_energy_kwh: f64,
    pub local_limit_kw: f64,
    /// Empty means no base load.
    #[serde(default)]
    pub base_load_kwh: Vec<f64>,
}

fn default_rate() -> f64 {
    7.2
}

fn default_energy() -> f64 {
    20.0
}

impl Building {
    pub fn ev_energy_total(&self) -> f64 {
        self.ev_count as f64 * self.ev_energy_kwh
    }

    pub fn base_profile(&self, n: usize) -> Result<LoadProfile> {
        if self.base_load_kwh.is_empty() {
            Ok(LoadProfile::zeros(n))
        } else if self.base_load_kwh.len() == n {
            LoadProfile::new(self.base_load_kwh.clone())
        } else {
            Err(Error::LengthMismatch { expected: n, actual: self.base_load_kwh.len() })
        }
    }

    /// Per-period cap on EV energy from the charger rating and the local
    /// limit net of base load.
    pub fn ev_cap(&self, t: usize, period_hours: f64) -> f64 {
        let base = self.base_load_kwh.get(t).copied().unwrap_or(0.0);
        let rate = self.ev_count as f64 * self.ev_rate_kw * period_hours;
        rate.min(self.local_limit_kw * period_hours - base).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetSpec {
    pub buildings: Vec<Building>,
    #[serde(default)]
    pub share_profiles_by_type: bool,
}

impl FleetSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: Self = serde_json::from_str(&text).map_err(|e| Error::from(e).context(path.display().to_string()))?;
        Ok(spec)
    }

    pub fn validate(&self, n_periods: usize) -> Result<()> {
        for (i, b) in self.buildings.iter().enumerate() {
            let ctx = |m: String| Error::invalid(format!("building `{}`: {m}", b.id));
            if self.buildings[..i].iter().any(|o| o.id == b.id) {
                return Err(ctx("duplicate id".into()));
            }
            for (name, v) in [
                ("ev_rate_kw", b.ev_rate_kw),
                ("ev_energy_kwh", b.ev_energy_kwh),
                ("local_limit_kw", b.local_limit_kw),
            ] {
                if !(v.is_finite() && v > 0.0) {
                    return Err(ctx(format!("{name} must be > 0, got {v}")));
                }
            }
            let base = b.base_profile(n_periods).map_err(|e| e.context(format!("building `{}`", b.id)))?;
            if base.x().iter().any(|&v| v < 0.0) {
                return Err(ctx("base load must be non-negative".into()));
            }
        }
        Ok(())
    }
}

/// Buildings that share one per-EV profile.
#[derive(Debug, Clone)]
struct Group {
    members: Vec<usize>,
    counts: Vec<f64>,
    energy_per_ev: f64,
    /// Per-EV cap in each period.
    upper: Vec<f64>,
}

impl Group {
    fn total_count(&self) -> f64 {
        self.counts.iter().sum()
    }
}

fn build_groups(fleet: &FleetSpec, n: usize, h: f64) -> Result<Vec<Group>> {
    let mut groups: Vec<(String, Group)> = Vec::new();
    for (i, b) in fleet.buildings.iter().enumerate() {
        if b.ev_count == 0 {
            continue;
        }
        let count = b.ev_count as f64;
        let upper: Vec<f64> = (0..n).map(|t| b.ev_cap(t, h) / count).collect();
        let key = if fleet.share_profiles_by_type { b.building_type.clone() } else { b.id.clone() };
        match groups.iter_mut().find(|(k, _)| fleet.share_profiles_by_type && *k == key) {
            Some((_, g)) => {
                if (g.energy_per_ev - b.ev_energy_kwh).abs() > 0.0 {
                    return Err(Error::invalid(format!(
                        "buildings of type `{key}` share a profile but need different energy per EV"
                    )));
                }
                g.members.push(i);
                g.counts.push(count);
                for (u, v) in g.upper.iter_mut().zip(upper) {
                    *u = u.min(v);
                }
            }
            None => groups.push((
                key,
                Group { members: vec![i], counts: vec![count], energy_per_ev: b.ev_energy_kwh, upper },
            )),
        }
    }
    for (key, g) in &groups {
        let cap: f64 = g.upper.iter().sum();
        if g.energy_per_ev > cap + ENERGY_TOL {
            return Err(Error::Infeasible(format!(
                "`{key}` needs {} kWh per EV but can take at most {cap} kWh",
                g.energy_per_ev
            )));
        }
    }
    Ok(groups.into_iter().map(|(_, g)| g).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMethod {
    Greedy,
    LinearProgram,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BindingVoltage {
    pub period: usize,
    pub node: String,
    pub phase: &'static str,
    pub slack_pu2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleResult {
    /// Controllable energy per building, in fleet order.
    pub profiles: Vec<LoadProfile>,
    /// Includes the cost of base load.
    pub objective: f64,
    pub binding_voltage: Vec<BindingVoltage>,
    pub iterations: usize,
    pub method: ScheduleMethod,
}

fn expand(fleet: &FleetSpec, groups: &[Group], w: &[Vec<f64>], n: usize) -> Result<Vec<LoadProfile>> {
    let mut profiles = vec![vec![0.0; n]; fleet.buildings.len()];
    for (g, wg) in groups.iter().zip(w) {
        for (&b, &count) in g.members.iter().zip(&g.counts) {
            profiles[b] = wg.iter().map(|v| v * count).collect();
        }
    }
    profiles.into_iter().map(LoadProfile::new).collect()
}

fn objective(prices: &PriceSchedule, fleet: &FleetSpec, profiles: &[LoadProfile]) -> Result<f64> {
    let n = prices.n_periods();
    let mut total = 0.0;
    for (b, p) in fleet.buildings.iter().zip(profiles) {
        let base = b.base_profile(n)?;
        for t in 0..n {
            total += prices.beta()[t] * (p.x()[t] + base.x()[t]);
        }
    }
    Ok(total)
}

fn greedy(prices: &[f64], upper: &[f64], energy: f64) -> Vec<f64> {
    let mut order: Vec<usize> = (0..prices.len()).collect();
    order.sort_by(|&a, &b| prices[a].total_cmp(&prices[b]));
    let mut w = vec![0.0; prices.len()];
    let mut left = energy;
    for t in order {
        if left <= 0.0 {
            break;
        }
        let take = upper[t].min(left);
        w[t] = take;
        left -= take;
    }
    w
}

/// Cheapest-first fill per group; exact because groups decouple when no
/// network constraint links them.
pub fn schedule_unconstrained(prices: &PriceSchedule, fleet: &FleetSpec) -> Result<ScheduleResult> {
    let n = prices.n_periods();
    let h = prices.period_hours();
    fleet.validate(n)?;
    let groups = build_groups(fleet, n, h)?;
    let w: Vec<Vec<f64>> = groups.iter().map(|g| greedy(prices.beta(), &g.upper, g.energy_per_ev)).collect();
    let profiles = expand(fleet, &groups, &w, n)?;
    Ok(ScheduleResult {
        objective: objective(prices, fleet, &profiles)?,
        profiles,
        binding_voltage: Vec::new(),
        iterations: 0,
        method: ScheduleMethod::Greedy,
    })
}

/// Squared voltages in every period with the given EV profiles on top of
/// base load.
pub fn fleet_voltages(
    feeder: &FeederModel,
    fleet: &FleetSpec,
    profiles: Option<&[LoadProfile]>,
    period_hours: f64,
    n: usize,
) -> Result<Vec<SquaredVoltages>> {
    let nodes: Vec<usize> = fleet
        .buildings
        .iter()
        .map(|b| feeder.node_index(&b.node))
        .collect::<Result<_>>()?;
    let base: Vec<_> = fleet
        .buildings
        .iter()
        .map(|b| map_building_loads(b.base_profile(n)?.x(), period_hours, LoadKind::Building))
        .collect::<Result<_>>()?;
    let ev: Option<Vec<_>> = profiles
        .map(|ps| {
            ps.iter()
                .map(|p| map_building_loads(p.x(), period_hours, LoadKind::Ev))
                .collect::<Result<Vec<_>>>()
        })
        .transpose()?;
    (0..n)
        .map(|t| {
            let mut inj = NodalInjection::zeros(feeder.n_nodes());
            for (b, &k) in nodes.iter().enumerate() {
                inj.add(k, base[b][t], LoadKind::Building);
                if let Some(ev) = &ev {
                    inj.add(k, ev[b][t], LoadKind::Ev);
                }
            }
            voltage_profile(feeder, &inj)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoltageLpOptions {
    pub v_min: f64,
    pub pricing: Pricing,
}

impl Default for VoltageLpOptions {
    fn default() -> Self {
        Self { v_min: feeder::DEFAULT_V_MIN, pricing: Pricing::Bland }
    }
}

pub fn schedule_voltage_constrained(
    prices: &PriceSchedule,
    fleet: &FleetSpec,
    feeder: &FeederModel,
    v_min: f64,
) -> Result<ScheduleResult> {
    schedule_voltage_constrained_with(prices, fleet, feeder, VoltageLpOptions { v_min, ..Default::default() })
}

pub fn schedule_voltage_constrained_with(
    prices: &PriceSchedule,
    fleet: &FleetSpec,
    feeder: &FeederModel,
    opts: VoltageLpOptions,
) -> Result<ScheduleResult> {
    let n = prices.n_periods();
    let h = prices.period_hours();
    let v_min2 = opts.v_min * opts.v_min;

    let base_v = fleet_voltages(feeder, fleet, None, h, n)?;
    for (t, sv) in base_v.iter().enumerate() {
        for k in 0..feeder.n_nodes() {
            for ph in (0..PHASES).filter(|&ph| feeder.has_phase(k, ph)) {
                if sv.v2[k][ph] < v_min2 {
                    return Err(Error::Infeasible(format!(
                        "base load alone puts node `{}` phase {} below {} pu in period {t}",
                        feeder.node_id(k),
                        PHASE_NAMES[ph],
                        opts.v_min
                    )));
                }
            }
        }
    }

    let free = schedule_unconstrained(prices, fleet)?;
    let free_v = fleet_voltages(feeder, fleet, Some(&free.profiles), h, n)?;
    let report = check_violations(feeder, free_v, n, opts.v_min)?;
    if report.violations.is_empty() {
        return Ok(free);
    }

    let groups = build_groups(fleet, n, h)?;
    let g_count = groups.len();
    let var = |g: usize, t: usize| g * n + t;
    let n_vars = g_count * n;

    let mut c = vec![0.0; n_vars];
    let mut bounds = vec![(0.0, 0.0); n_vars];
    for (g, grp) in groups.iter().enumerate() {
        for t in 0..n {
            c[var(g, t)] = prices.beta()[t] * grp.total_count();
            bounds[var(g, t)] = (0.0, grp.upper[t]);
        }
    }
    let mut a_eq = Vec::with_capacity(g_count);
    let mut b_eq = Vec::with_capacity(g_count);
    for (g, grp) in groups.iter().enumerate() {
        let mut row = vec![0.0; n_vars];
        for t in 0..n {
            row[var(g, t)] = 1.0;
        }
        a_eq.push(row);
        b_eq.push(grp.energy_per_ev);
    }

    // Voltage rows at leaves and loaded nodes.
    let building_nodes: Vec<usize> = fleet
        .buildings
        .iter()
        .map(|b| feeder.node_index(&b.node))
        .collect::<Result<_>>()?;
    let mut candidates: Vec<usize> = (0..feeder.n_nodes())
        .filter(|&k| feeder.is_leaf(k) || building_nodes.contains(&k))
        .collect();
    candidates.dedup();

    let mut a_ub: Vec<Vec<f64>> = Vec::new();
    let mut b_ub: Vec<f64> = Vec::new();
    let mut row_keys: Vec<(usize, usize, usize)> = Vec::new();
    for &k in &candidates {
        let mut seen: Vec<Vec<f64>> = Vec::new();
        for ph in (0..PHASES).filter(|&ph| feeder.has_phase(k, ph)) {
            let sens = feeder::voltage_sensitivity(feeder, feeder.node_id(k), ph)?.per_kw(feeder.base_kva());
            // Drop in v^2 per unit of per-EV energy, for each group.
            let drop: Vec<f64> = groups
                .iter()
                .map(|grp| {
                    grp.members
                        .iter()
                        .zip(&grp.counts)
                        .map(|(&b, &cnt)| -sens.dp[building_nodes[b]] * cnt / (PHASES as f64 * h))
                        .sum()
                })
                .collect();
            if seen.iter().any(|s| *s == drop) {
                continue;
            }
            seen.push(drop.clone());
            for t in 0..n {
                let rhs = base_v[t].v2[k][ph] - v_min2;
                let worst: f64 = groups.iter().zip(&drop).map(|(grp, d)| d * grp.upper[t]).sum();
                if worst <= rhs {
                    continue;
                }
                let mut row = vec![0.0; n_vars];
                for g in 0..g_count {
                    row[var(g, t)] = drop[g];
                }
                a_ub.push(row);
                b_ub.push(rhs);
                row_keys.push((t, k, ph));
            }
        }
    }

    let lp = LpProblem { c, a_ub, b_ub, a_eq, b_eq, bounds };
    let sol = lp_solve_with(&lp, opts.pricing)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => {
            return Err(Error::Infeasible(
                "voltage limit cannot be met even with charging spread out".into(),
            ))
        }
        LpStatus::Unbounded => return Err(Error::Unbounded("fleet LP".into())),
    }

    // Re-impose exact energy balance on the largest free entry of each group.
    let mut w: Vec<Vec<f64>> = (0..g_count).map(|g| sol.x[g * n..(g + 1) * n].to_vec()).collect();
    for (wg, grp) in w.iter_mut().zip(&groups) {
        let err = grp.energy_per_ev - wg.iter().sum::<f64>();
        if err != 0.0 {
            if let Some(t) = (0..n)
                .filter(|&t| wg[t] + err >= 0.0 && wg[t] + err <= grp.upper[t])
                .max_by(|&a, &b| wg[a].total_cmp(&wg[b]))
            {
                wg[t] += err;
            }
        }
    }
    let profiles = expand(fleet, &groups, &w, n)?;

    let binding_voltage = lp
        .a_ub
        .iter()
        .zip(&lp.b_ub)
        .zip(&row_keys)
        .filter_map(|((row, rhs), &(t, k, ph))| {
            let slack = rhs - row.iter().zip(&sol.x).map(|(a, x)| a * x).sum::<f64>();
            (slack < 1e-9).then(|| BindingVoltage {
                period: t,
                node: feeder.node_id(k).to_string(),
                phase: PHASE_NAMES[ph],
                slack_pu2: slack,
            })
        })
        .collect();

    Ok(ScheduleResult {
        objective: objective(prices, fleet, &profiles)?,
        profiles,
        binding_voltage,
        iterations: sol.iterations,
        method: ScheduleMethod::LinearProgram,
    })
}

#[derive(Debug, Serialize)]
struct ScheduleRow<'a> {
    period: usize,
    node: &'a str,
    building: &'a str,
    x_tilde_kwh: f64,
}

pub fn write_schedule_csv<W: std::io::Write>(writer: W, fleet: &FleetSpec, result: &ScheduleResult) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    wtr.write_record(["period", "node", "building", "x_tilde_kwh"])?;
    let n = result.profiles.first().map_or(0, |p| p.n_periods());
    for t in 0..n {
        for (b, p) in fleet.buildings.iter().zip(&result.profiles) {
            wtr.serialize(ScheduleRow { period: t, node: &b.node, building: &b.id, x_tilde_kwh: p.x()[t] })?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<schedule csv>", e))?;
    Ok(())
}
