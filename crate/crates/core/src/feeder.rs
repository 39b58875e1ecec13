//! Radial feeder model with linearized branch-flow voltages.
//!
//! Squared voltage drops along each line by `2 (R P + X Q)`, where `P` and
//! `Q` are the sums of every injection downstream of the line. Loads are
//! balanced, so the three phases are evaluated independently.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PHASES: usize = 3;
pub const PHASE_NAMES: [&str; PHASES] = ["a", "b", "c"];
pub const DEFAULT_V_MIN: f64 = 0.95;

/// Reactive-to-real ratio for a 0.9 power factor, `tan(acos(0.9))`.
pub fn building_q_ratio() -> f64 {
    0.9_f64.acos().tan()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerPhase {
    Balanced(f64),
    Phases([f64; PHASES]),
}

impl PerPhase {
    pub fn values(&self) -> [f64; PHASES] {
        match *self {
            PerPhase::Balanced(v) => [v; PHASES],
            PerPhase::Phases(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDoc {
    pub id: String,
    #[serde(default)]
    pub phases: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeDoc {
    pub from: String,
    pub to: String,
    pub r_pu: PerPhase,
    pub x_pu: PerPhase,
}

/// On-disk feeder description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeederDoc {
    pub substation: String,
    #[serde(default = "default_substation_voltage")]
    pub substation_voltage_pu: f64,
    /// Per-phase power base used to convert kW into per-unit.
    pub base_kva: f64,
    #[serde(default)]
    pub base_kv: Option<f64>,
    pub nodes: Vec<NodeDoc>,
    pub edges: Vec<EdgeDoc>,
}

fn default_substation_voltage() -> f64 {
    1.0
}

/// Validated radial feeder. Node 0 is always the substation.
#[derive(Debug, Clone, PartialEq)]
pub struct FeederModel {
    ids: Vec<String>,
    index: BTreeMap<String, usize>,
    phases: Vec<[bool; PHASES]>,
    parent: Vec<Option<usize>>,
    /// Impedance of the line feeding each node.
    r: Vec<[f64; PHASES]>,
    x: Vec<[f64; PHASES]>,
    /// Parents always precede children.
    order: Vec<usize>,
    children: Vec<Vec<usize>>,
    substation_voltage: f64,
    base_kva: f64,
    doc: FeederDoc,
}

impl FeederModel {
    pub fn from_doc(doc: FeederDoc) -> Result<Self> {
        if !(doc.base_kva.is_finite() && doc.base_kva > 0.0) {
            return Err(Error::invalid(format!("base_kva must be > 0, got {}", doc.base_kva)));
        }
        if !(doc.substation_voltage_pu.is_finite() && doc.substation_voltage_pu > 0.0) {
            return Err(Error::invalid("substation voltage must be > 0"));
        }

        // Substation first, the rest in document order.
        let mut raw: Vec<&NodeDoc> = Vec::with_capacity(doc.nodes.len());
        match doc.nodes.iter().find(|n| n.id == doc.substation) {
            Some(s) => raw.push(s),
            None => {
                return Err(Error::Topology(format!(
                    "substation `{}` is not in the node list",
                    doc.substation
                )))
            }
        }
        raw.extend(doc.nodes.iter().filter(|n| n.id != doc.substation));

        let mut ids = Vec::with_capacity(raw.len());
        let mut index = BTreeMap::new();
        let mut phases = Vec::with_capacity(raw.len());
        for n in raw {
            if index.insert(n.id.clone(), ids.len()).is_some() {
                return Err(Error::Topology(format!("duplicate node `{}`", n.id)));
            }
            ids.push(n.id.clone());
            phases.push(parse_phases(n)?);
        }

        let n = ids.len();
        let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        for (e, edge) in doc.edges.iter().enumerate() {
            let lookup = |id: &str| {
                index
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::Topology(format!("edge {e} references unknown node `{id}`")))
            };
            let (a, b) = (lookup(&edge.from)?, lookup(&edge.to)?);
            if a == b {
                return Err(Error::Topology(format!("edge {e} is a self loop on `{}`", edge.from)));
            }
            for v in edge.r_pu.values().into_iter().chain(edge.x_pu.values()) {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::invalid(format!("edge {e} has negative or non-finite impedance")));
                }
            }
            adj[a].push((b, e));
            adj[b].push((a, e));
        }

        let mut parent = vec![None; n];
        let mut r = vec![[0.0; PHASES]; n];
        let mut x = vec![[0.0; PHASES]; n];
        let mut children = vec![Vec::new(); n];
        let mut visited = vec![false; n];
        let mut order = Vec::with_capacity(n);
        let mut via_edge = vec![usize::MAX; n];
        let mut queue = VecDeque::from([0]);
        visited[0] = true;
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &(v, e) in &adj[u] {
                if e == via_edge[u] {
                    continue;
                }
                if visited[v] {
                    return Err(Error::Topology(format!(
                        "cycle detected through `{}` and `{}`",
                        ids[u], ids[v]
                    )));
                }
                visited[v] = true;
                via_edge[v] = e;
                parent[v] = Some(u);
                r[v] = doc.edges[e].r_pu.values();
                x[v] = doc.edges[e].x_pu.values();
                children[u].push(v);
                queue.push_back(v);
            }
        }
        if let Some(k) = visited.iter().position(|v| !v) {
            return Err(Error::Topology(format!(
                "node `{}` is not connected to the substation",
                ids[k]
            )));
        }

        Ok(Self {
            ids,
            index,
            phases,
            parent,
            r,
            x,
            order,
            children,
            substation_voltage: doc.substation_voltage_pu,
            base_kva: doc.base_kva,
            doc,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_doc(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn doc(&self) -> &FeederDoc {
        &self.doc
    }

    pub fn n_nodes(&self) -> usize {
        self.ids.len()
    }

    pub fn node_id(&self, k: usize) -> &str {
        &self.ids[k]
    }

    pub fn node_index(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::Topology(format!("unknown node `{id}`")))
    }

    pub fn parent(&self, k: usize) -> Option<usize> {
        self.parent[k]
    }

    pub fn children(&self, k: usize) -> &[usize] {
        &self.children[k]
    }

    pub fn is_leaf(&self, k: usize) -> bool {
        k != 0 && self.children[k].is_empty()
    }

    pub fn has_phase(&self, k: usize, phase: usize) -> bool {
        self.phases[k][phase]
    }

    pub fn line_impedance(&self, k: usize) -> ([f64; PHASES], [f64; PHASES]) {
        (self.r[k], self.x[k])
    }

    pub fn substation_voltage(&self) -> f64 {
        self.substation_voltage
    }

    pub fn base_kva(&self) -> f64 {
        self.base_kva
    }

    /// Nodes on the path from `k` up to (not including) the substation.
    fn path(&self, mut k: usize) -> Vec<usize> {
        let mut out = Vec::new();
        while let Some(p) = self.parent[k] {
            out.push(k);
            k = p;
        }
        out
    }
}

fn parse_phases(node: &NodeDoc) -> Result<[bool; PHASES]> {
    let Some(list) = &node.phases else {
        return Ok([true; PHASES]);
    };
    let mut out = [false; PHASES];
    for p in list {
        let i = PHASE_NAMES
            .iter()
            .position(|n| n.eq_ignore_ascii_case(p))
            .ok_or_else(|| Error::invalid(format!("node `{}` has unknown phase `{p}`", node.id)))?;
        out[i] = true;
    }
    Ok(out)
}

/// Per-phase real and reactive demand of one load in one period.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct PhaseLoad {
    pub p_kw: f64,
    pub q_kvar: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadKind {
    /// Non-controllable building load at 0.9 power factor.
    Building,
    /// Unity power factor charging.
    Ev,
}

/// Converts per-period energy of a balanced three-phase load into
/// per-phase power.
pub fn map_building_loads(energy_kwh: &[f64], period_hours: f64, kind: LoadKind) -> Result<Vec<PhaseLoad>> {
    if !(period_hours.is_finite() && period_hours > 0.0) {
        return Err(Error::invalid(format!("period_hours must be > 0, got {period_hours}")));
    }
    let ratio = match kind {
        LoadKind::Building => building_q_ratio(),
        LoadKind::Ev => 0.0,
    };
    energy_kwh
        .iter()
        .map(|&e| {
            if !e.is_finite() {
                return Err(Error::invalid("non-finite load energy"));
            }
            if kind == LoadKind::Building && e < 0.0 {
                return Err(Error::invalid(format!("building load energy {e} is negative")));
            }
            let p = e / period_hours / PHASES as f64;
            Ok(PhaseLoad { p_kw: p, q_kvar: p * ratio })
        })
        .collect()
}

/// Demand at every node for one period, split into fixed and
/// controllable parts. Positive values are consumption.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalInjection {
    pub p_kw: Vec<[f64; PHASES]>,
    pub q_kvar: Vec<[f64; PHASES]>,
    pub p_ctrl_kw: Vec<[f64; PHASES]>,
    pub q_ctrl_kvar: Vec<[f64; PHASES]>,
}

impl NodalInjection {
    pub fn zeros(n_nodes: usize) -> Self {
        Self {
            p_kw: vec![[0.0; PHASES]; n_nodes],
            q_kvar: vec![[0.0; PHASES]; n_nodes],
            p_ctrl_kw: vec![[0.0; PHASES]; n_nodes],
            q_ctrl_kvar: vec![[0.0; PHASES]; n_nodes],
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.p_kw.len()
    }

    /// Adds a balanced load on every phase of `node`.
    pub fn add(&mut self, node: usize, load: PhaseLoad, kind: LoadKind) {
        let (p, q) = match kind {
            LoadKind::Building => (&mut self.p_kw, &mut self.q_kvar),
            LoadKind::Ev => (&mut self.p_ctrl_kw, &mut self.q_ctrl_kvar),
        };
        for ph in 0..PHASES {
            p[node][ph] += load.p_kw;
            q[node][ph] += load.q_kvar;
        }
    }

    pub fn total_p(&self, node: usize, phase: usize) -> f64 {
        self.p_kw[node][phase] + self.p_ctrl_kw[node][phase]
    }

    pub fn total_q(&self, node: usize, phase: usize) -> f64 {
        self.q_kvar[node][phase] + self.q_ctrl_kvar[node][phase]
    }
}

/// Squared voltage magnitudes (pu²) per node and phase.
#[derive(Debug, Clone, PartialEq)]
pub struct SquaredVoltages {
    pub v2: Vec<[f64; PHASES]>,
}

impl SquaredVoltages {
    pub fn magnitude(&self, node: usize, phase: usize) -> f64 {
        self.v2[node][phase].max(0.0).sqrt()
    }
}

pub fn voltage_profile(feeder: &FeederModel, inj: &NodalInjection) -> Result<SquaredVoltages> {
    let n = feeder.n_nodes();
    if inj.n_nodes() != n {
        return Err(Error::LengthMismatch { expected: n, actual: inj.n_nodes() });
    }
    for k in 0..n {
        for ph in 0..PHASES {
            let (p, q) = (inj.total_p(k, ph), inj.total_q(k, ph));
            if !(p.is_finite() && q.is_finite()) {
                return Err(Error::invalid(format!("non-finite injection at `{}`", feeder.ids[k])));
            }
            if !feeder.phases[k][ph] && (p != 0.0 || q != 0.0) {
                return Err(Error::invalid(format!(
                    "load on phase {} of `{}`, which does not carry it",
                    PHASE_NAMES[ph], feeder.ids[k]
                )));
            }
        }
    }

    let base = feeder.base_kva;
    let mut p_flow: Vec<[f64; PHASES]> = (0..n)
        .map(|k| std::array::from_fn(|ph| inj.total_p(k, ph) / base))
        .collect();
    let mut q_flow: Vec<[f64; PHASES]> = (0..n)
        .map(|k| std::array::from_fn(|ph| inj.total_q(k, ph) / base))
        .collect();
    for &k in feeder.order.iter().rev() {
        if let Some(p) = feeder.parent[k] {
            for ph in 0..PHASES {
                p_flow[p][ph] += p_flow[k][ph];
                q_flow[p][ph] += q_flow[k][ph];
            }
        }
    }

    let v0 = feeder.substation_voltage * feeder.substation_voltage;
    let mut v2 = vec![[v0; PHASES]; n];
    for &k in &feeder.order {
        if let Some(p) = feeder.parent[k] {
            for ph in 0..PHASES {
                v2[k][ph] = v2[p][ph] - 2.0 * (feeder.r[k][ph] * p_flow[k][ph] + feeder.x[k][ph] * q_flow[k][ph]);
            }
        }
    }
    Ok(SquaredVoltages { v2 })
}

/// Sensitivities of squared voltage at one node and phase with respect to
/// per-unit real and reactive demand at every node.
#[derive(Debug, Clone, PartialEq)]
pub struct Sensitivity {
    pub dp: Vec<f64>,
    pub dq: Vec<f64>,
}

impl Sensitivity {
    /// Same coefficients scaled to kW and kVAr.
    pub fn per_kw(&self, base_kva: f64) -> Sensitivity {
        Sensitivity {
            dp: self.dp.iter().map(|v| v / base_kva).collect(),
            dq: self.dq.iter().map(|v| v / base_kva).collect(),
        }
    }
}

/// `d v2_k / d P_j = -2 * (resistance shared by the paths of k and j)`.
pub fn voltage_sensitivity(feeder: &FeederModel, node: &str, phase: usize) -> Result<Sensitivity> {
    if phase >= PHASES {
        return Err(Error::invalid(format!("phase index {phase} out of range")));
    }
    let k = feeder.node_index(node)?;
    let n = feeder.n_nodes();
    let mut on_path = vec![false; n];
    for m in feeder.path(k) {
        on_path[m] = true;
    }
    let mut dp = vec![0.0; n];
    let mut dq = vec![0.0; n];
    // Resistance above j that also lies above k. Valid in one top-down pass
    // because k's path is closed under taking parents.
    let mut shared_r = vec![0.0; n];
    let mut shared_x = vec![0.0; n];
    for &j in &feeder.order {
        if let Some(p) = feeder.parent[j] {
            let (r, x) = if on_path[j] {
                (feeder.r[j][phase], feeder.x[j][phase])
            } else {
                (0.0, 0.0)
            };
            shared_r[j] = shared_r[p] + r;
            shared_x[j] = shared_x[p] + x;
        }
    }
    for j in 0..n {
        dp[j] = -2.0 * shared_r[j];
        dq[j] = -2.0 * shared_x[j];
    }
    Ok(Sensitivity { dp, dq })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub period: usize,
    pub node: String,
    pub phase: &'static str,
    pub v_pu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoltageReport {
    /// Indexed by period.
    pub squared: Vec<SquaredVoltages>,
    pub min_voltage: f64,
    pub min_location: Option<(usize, usize, usize)>,
    pub violations: Vec<Violation>,
    pub violation_days: usize,
    pub periods_per_day: usize,
}

impl VoltageReport {
    pub fn magnitude(&self, period: usize, node: usize, phase: usize) -> f64 {
        self.squared[period].magnitude(node, phase)
    }
}

/// Slack below `v_min` still counted as compliant. Schedules built against
/// the limit land on it up to rounding.
pub const VOLTAGE_TOLERANCE: f64 = 1e-6;

/// Flags every node, phase and period whose magnitude is below `v_min` by
/// more than [`VOLTAGE_TOLERANCE`].
pub fn check_violations(
    feeder: &FeederModel,
    squared: Vec<SquaredVoltages>,
    periods_per_day: usize,
    v_min: f64,
) -> Result<VoltageReport> {
    if periods_per_day == 0 {
        return Err(Error::invalid("periods_per_day must be positive"));
    }
    let mut violations = Vec::new();
    let mut min_voltage = f64::INFINITY;
    let mut min_location = None;
    let mut bad_days = std::collections::BTreeSet::new();
    for (t, sv) in squared.iter().enumerate() {
        if sv.v2.len() != feeder.n_nodes() {
            return Err(Error::LengthMismatch { expected: feeder.n_nodes(), actual: sv.v2.len() });
        }
        for k in 0..feeder.n_nodes() {
            for ph in 0..PHASES {
                if !feeder.phases[k][ph] {
                    continue;
                }
                let v = sv.magnitude(k, ph);
                if v < min_voltage {
                    min_voltage = v;
                    min_location = Some((t, k, ph));
                }
                if v < v_min - VOLTAGE_TOLERANCE {
                    violations.push(Violation {
                        period: t,
                        node: feeder.ids[k].clone(),
                        phase: PHASE_NAMES[ph],
                        v_pu: v,
                    });
                    bad_days.insert(t / periods_per_day);
                }
            }
        }
    }
    Ok(VoltageReport {
        squared,
        min_voltage,
        min_location,
        violations,
        violation_days: bad_days.len(),
        periods_per_day,
    })
}

pub fn write_violations_csv<W: std::io::Write>(writer: W, report: &VoltageReport) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    wtr.write_record(["period", "node", "phase", "v_pu"])?;
    for v in &report.violations {
        wtr.serialize(v)?;
    }
    wtr.flush().map_err(|e| Error::io("<violations csv>", e))?;
    Ok(())
}
