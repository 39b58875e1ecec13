//! Oracles and fixtures shared by the integration tests. Nothing here calls
//! into the solvers under test.

#![allow(dead_code)]

use lrp_core::customer::{CustomerSpec, Metering};
use lrp_core::feeder::{EdgeDoc, FeederDoc, NodeDoc, PerPhase};
use rand::Rng;

pub const BETA: [f64; 24] = [
    0.2198, 0.2074, 0.2044, 0.1945, 0.2081, 0.2632, 0.3349, 0.3226, 0.2318, 0.1773, 0.1479, 0.1397, 0.1455,
    0.1630, 0.1711, 0.1839, 0.2739, 0.4124, 0.5185, 0.4680, 0.4213, 0.3841, 0.3393, 0.2833,
];

pub const IR_TAU: [f64; 24] = [
    0.83, 0.95, 1.01, 1.07, 0.89, 0.71, 0.47, 0.53, 0.77, 1.20, 1.38, 1.50, 1.44, 1.32, 1.26, 1.13, 0.65, 0.28,
    0.10, 0.16, 0.22, 0.34, 0.40, 0.59,
];

/// In units of 1e-4 $/kWh².
pub const IR_ALPHA_E4: [f64; 24] = [
    8.30, 9.52, 10.13, 10.74, 8.91, 7.09, 4.65, 5.26, 7.70, 11.96, 13.78, 15.00, 14.39, 13.17, 12.57, 11.35,
    6.48, 2.83, 1.00, 1.61, 2.22, 3.43, 4.04, 5.87,
];

pub fn target_profile() -> Vec<f64> {
    let mut x = vec![0.0; 24];
    for (h, v) in (8..15).zip([10.0, 2.0, 12.0, 15.0, 13.0, 3.0, 5.0]) {
        x[h] = v;
    }
    x[18] = -10.0;
    x
}

/// Printed slopes for loaded hours, $/kWh².
pub const OPT_ALPHA: [(usize, f64); 8] = [
    (8, 1e-13),
    (9, 0.0136),
    (10, 0.0035),
    (11, 0.0031),
    (12, 0.0033),
    (13, 0.0115),
    (14, 0.0061),
    (18, 0.0143),
];

pub fn case1_customer() -> CustomerSpec {
    CustomerSpec {
        total_energy_kwh: 60.0,
        consume_bound_kw: 20.0,
        inject_bound_kw: 10.0,
        export_energy_kwh: 10.0,
        local_limit_kw: 30.0,
        base_load: Vec::new(),
        metering: Metering::Separate,
    }
}

// ---------------------------------------------------------------------------
// Customer QP oracle
// ---------------------------------------------------------------------------

/// The customer problem restated from its definition:
/// min sum a_t (s_t + x_t)^2 + beta_t (s_t + x_t), with s the metered base
/// (zero for a separate meter), lo <= x <= hi, sum x = net, and at most
/// `export` kWh injected in total.
#[derive(Debug, Clone)]
pub struct Qp {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub shift: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub net: f64,
    pub export: f64,
}

impl Qp {
    pub fn from_spec(alpha: &[f64], beta: &[f64], spec: &CustomerSpec, h: f64) -> Qp {
        let n = alpha.len();
        let base: Vec<f64> = if spec.base_load.is_empty() { vec![0.0; n] } else { spec.base_load.clone() };
        let hi = base
            .iter()
            .map(|b| (spec.consume_bound_kw.min(spec.local_limit_kw - b / h)).max(0.0) * h)
            .collect();
        Qp {
            alpha: alpha.to_vec(),
            beta: beta.to_vec(),
            shift: match spec.metering {
                Metering::Shared => base,
                Metering::Separate => vec![0.0; n],
            },
            lo: vec![-spec.inject_bound_kw * h; n],
            hi,
            net: spec.total_energy_kwh - spec.export_energy_kwh,
            export: spec.export_energy_kwh,
        }
    }

    pub fn n(&self) -> usize {
        self.alpha.len()
    }

    pub fn cost(&self, x: &[f64]) -> f64 {
        (0..self.n())
            .map(|t| {
                let m = self.shift[t] + x[t];
                self.alpha[t] * m * m + self.beta[t] * m
            })
            .sum()
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n()).map(|t| 2.0 * self.alpha[t] * (self.shift[t] + x[t]) + self.beta[t]).collect()
    }

    pub fn feasibility_gap(&self, x: &[f64]) -> f64 {
        let mut gap: f64 = (x.iter().sum::<f64>() - self.net).abs();
        for t in 0..self.n() {
            gap = gap.max(self.lo[t] - x[t]).max(x[t] - self.hi[t]);
        }
        let injected: f64 = x.iter().map(|v| (-v).max(0.0)).sum();
        gap.max(injected - self.export)
    }
}

/// Finds `shift` with sum clamp(u + shift, 0, cap) = total.
fn box_sum_shift(u: &[f64], cap: &[f64], total: f64) -> f64 {
    let f = |s: f64| u.iter().zip(cap).map(|(v, c)| (v + s).clamp(0.0, *c)).sum::<f64>() - total;
    let span = u.iter().map(|v| v.abs()).fold(0.0, f64::max) + cap.iter().fold(0.0, |a, c| a + c) + 1.0;
    let (mut a, mut b) = (-span, span);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if f(m) < 0.0 {
            a = m;
        } else {
            b = m;
        }
        if b - a <= f64::EPSILON * span {
            break;
        }
    }
    0.5 * (a + b)
}

fn project_box_sum(u: &[f64], cap: &[f64], total: f64) -> Vec<f64> {
    let s = box_sum_shift(u, cap, total);
    u.iter().zip(cap).map(|(v, c)| (v + s).clamp(0.0, *c)).collect()
}

/// Euclidean projection onto the lifted set {0 <= p <= hi, 0 <= q <= -lo,
/// sum p - sum q = net, sum q <= export}.
fn project_lifted(qp: &Qp, p: &[f64], q: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = qp.n();
    let hi_p: Vec<f64> = qp.hi.iter().map(|h| h.max(0.0)).collect();
    let hi_q: Vec<f64> = qp.lo.iter().map(|l| (-l).max(0.0)).collect();
    // Relaxed: a single shift moves p up and q down.
    let mut u = p.to_vec();
    u.extend(q.iter().map(|v| -v));
    let mut cap = hi_p.clone();
    cap.extend(hi_q.iter().copied());
    let lower: Vec<f64> = (0..2 * n).map(|i| if i < n { 0.0 } else { -cap[i] }).collect();
    let upper: Vec<f64> = (0..2 * n).map(|i| if i < n { cap[i] } else { 0.0 }).collect();
    let f = |s: f64| (0..2 * n).map(|i| (u[i] + s).clamp(lower[i], upper[i])).sum::<f64>() - qp.net;
    let span = u.iter().map(|v| v.abs()).fold(0.0, f64::max) + cap.iter().sum::<f64>() + 1.0;
    let (mut a, mut b) = (-span, span);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if f(m) < 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    let s = 0.5 * (a + b);
    let pp: Vec<f64> = (0..n).map(|i| (u[i] + s).clamp(0.0, hi_p[i])).collect();
    let qq: Vec<f64> = (0..n).map(|i| -((u[n + i] + s).clamp(-hi_q[i], 0.0))).collect();
    if qq.iter().sum::<f64>() <= qp.export {
        return (pp, qq);
    }
    // Budget active: both sums are pinned and the blocks decouple.
    (project_box_sum(p, &hi_p, qp.net + qp.export), project_box_sum(q, &hi_q, qp.export))
}

/// Accelerated projected gradient on x = p - q, run until the iterates stop
/// moving. Returns the profile and its cost.
pub fn pg_oracle(qp: &Qp) -> (Vec<f64>, f64) {
    let n = qp.n();
    let amax = qp.alpha.iter().fold(0.0, |a: f64, b| a.max(*b));
    let step = 1.0 / (4.0 * amax).max(0.05);
    let (mut p, mut q) = project_lifted(qp, &vec![0.0; n], &vec![0.0; n]);
    let (mut yp, mut yq) = (p.clone(), q.clone());
    let mut t = 1.0f64;
    let x_of = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(a, b)| a - b).collect() };
    let mut best = qp.cost(&x_of(&p, &q));
    let mut still = 0;
    for _ in 0..200_000 {
        let g = qp.grad(&x_of(&yp, &yq));
        let up: Vec<f64> = (0..n).map(|i| yp[i] - step * g[i]).collect();
        let uq: Vec<f64> = (0..n).map(|i| yq[i] + step * g[i]).collect();
        let (np, nq) = project_lifted(qp, &up, &uq);
        let c = qp.cost(&x_of(&np, &nq));
        let moved = (0..n).map(|i| (np[i] - p[i]).abs() + (nq[i] - q[i]).abs()).fold(0.0, f64::max);
        if c > best {
            // Restart momentum.
            t = 1.0;
            yp = p.clone();
            yq = q.clone();
            continue;
        }
        best = c;
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let mom = (t - 1.0) / t_next;
        yp = (0..n).map(|i| np[i] + mom * (np[i] - p[i])).collect();
        yq = (0..n).map(|i| nq[i] + mom * (nq[i] - q[i])).collect();
        p = np;
        q = nq;
        t = t_next;
        still = if moved < 1e-13 { still + 1 } else { 0 };
        if still > 50 {
            break;
        }
    }
    let x = x_of(&p, &q);
    let c = qp.cost(&x);
    (x, c)
}

/// Maximizes a unimodal function on `[a, b]` by golden-section search.
fn golden_max(mut a: f64, mut b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..160 {
        if fc < fd {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        } else {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        }
    }
    fc.max(fd).max(f(a)).max(f(b))
}

/// Optimal cost through the Lagrangian dual in the energy multiplier and
/// the export-budget multiplier. Exact by strong duality; needs no primal
/// solve, so it is insensitive to zero slopes.
pub fn dual_oracle(qp: &Qp) -> f64 {
    let n = qp.n();
    // Cost in x: a x^2 + b x + k with the meter shift folded in.
    let lin: Vec<f64> = (0..n).map(|t| qp.beta[t] + 2.0 * qp.alpha[t] * qp.shift[t]).collect();
    let k: f64 = (0..n).map(|t| qp.alpha[t] * qp.shift[t].powi(2) + qp.beta[t] * qp.shift[t]).sum();
    let piece = |a: f64, b: f64, lo: f64, hi: f64| -> f64 {
        let f = |x: f64| a * x * x + b * x;
        let mut m = f(lo).min(f(hi));
        if a > 0.0 {
            m = m.min(f((-b / (2.0 * a)).clamp(lo, hi)));
        }
        m
    };
    let dual = |lam: f64, mu: f64| -> f64 {
        let inner: f64 = (0..n)
            .map(|t| {
                let a = qp.alpha[t];
                let up = piece(a, lin[t] - lam, 0.0, qp.hi[t]);
                let down = if qp.lo[t] < 0.0 { piece(a, lin[t] - lam - mu, qp.lo[t], 0.0) } else { 0.0 };
                up.min(down)
            })
            .sum();
        k + inner + lam * qp.net - mu * qp.export
    };
    let span = (0..n)
        .map(|t| lin[t].abs() + 2.0 * qp.alpha[t] * qp.hi[t].max(-qp.lo[t]))
        .fold(0.0, f64::max)
        + 1.0;
    let outer = |mu: f64| golden_max(-span, span, |lam| dual(lam, mu));
    if qp.lo.iter().all(|l| *l >= 0.0) {
        outer(0.0)
    } else {
        golden_max(0.0, 2.0 * span, outer)
    }
}

/// Largest violation of the optimality conditions: stationarity values of
/// interior periods agree (separately for consumption and injection), and
/// periods at a bound sit on the right side of them.
pub fn kkt_residual(qp: &Qp, x: &[f64]) -> f64 {
    let n = qp.n();
    let g = qp.grad(x);
    let tol = |v: f64| 1e-9 * v.abs().max(1.0);
    let injected: f64 = x.iter().map(|v| (-v).max(0.0)).sum();
    let budget_slack = injected < qp.export - 1e-7;
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    enum At {
        Lo,
        Hi,
        Zero,
        Free,
    }
    let mut state = Vec::with_capacity(n);
    for t in 0..n {
        let s = if x[t] <= qp.lo[t] + tol(qp.lo[t]) {
            At::Lo
        } else if x[t] >= qp.hi[t] - tol(qp.hi[t]) {
            At::Hi
        } else if qp.lo[t] < 0.0 && x[t].abs() <= 1e-9 {
            At::Zero
        } else {
            if x[t] > 0.0 || budget_slack {
                pos.push(g[t]);
            } else {
                neg.push(g[t]);
            }
            At::Free
        };
        state.push(s);
    }
    let spread = |v: &[f64]| {
        v.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b)) - v.iter().fold(f64::INFINITY, |a, b| a.min(*b))
    };
    let mut r: f64 = 0.0;
    if pos.len() > 1 {
        r = r.max(spread(&pos));
    }
    if neg.len() > 1 {
        r = r.max(spread(&neg));
    }
    let lam = (!pos.is_empty()).then(|| pos.iter().sum::<f64>() / pos.len() as f64);
    let nu = (!neg.is_empty()).then(|| neg.iter().sum::<f64>() / neg.len() as f64);
    let (lam, nu) = match (lam, nu) {
        (Some(l), Some(v)) => {
            // Injection is priced at lambda plus a nonnegative export multiplier.
            r = r.max(l - v);
            (Some(l), Some(v))
        }
        (l, v) if budget_slack => (l.or(v), v.or(l)),
        (l, v) => (l, v),
    };
    for t in 0..n {
        let v = match state[t] {
            At::Hi => lam.map_or(0.0, |l| g[t] - l),
            At::Lo if qp.lo[t] < 0.0 => nu.map_or(0.0, |l| l - g[t]),
            At::Lo => lam.map_or(0.0, |l| l - g[t]),
            At::Zero => lam.map_or(0.0, |l| (l - g[t]).max(0.0)).max(nu.map_or(0.0, |l| g[t] - l)),
            At::Free => 0.0,
        };
        r = r.max(v);
    }
    r
}

/// Random feasible instance with `n` periods and slopes in [0, 0.05].
pub fn random_customer<R: Rng>(rng: &mut R, n: usize) -> (Vec<f64>, Vec<f64>, CustomerSpec) {
    let alpha: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..0.05) }).collect();
    let beta: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..0.5)).collect();
    let consume = rng.gen_range(1.0..10.0);
    let inject = if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(0.5..5.0) };
    let shared = rng.gen_bool(0.5);
    let local = consume * rng.gen_range(0.6..1.5);
    let base: Vec<f64> = if shared { (0..n).map(|_| rng.gen_range(0.0..0.8 * local)).collect() } else { Vec::new() };
    let hi_sum: f64 = (0..n)
        .map(|t| consume.min(local - base.get(t).copied().unwrap_or(0.0)).max(0.0))
        .sum();
    let export = if inject > 0.0 { rng.gen_range(0.0..inject * n as f64) } else { 0.0 };
    // Gross energy within headroom, as the spec type requires.
    let total = hi_sum * rng.gen_range(0.0..0.95);
    let spec = CustomerSpec {
        total_energy_kwh: total,
        consume_bound_kw: consume,
        inject_bound_kw: inject,
        export_energy_kwh: export,
        local_limit_kw: local,
        base_load: base,
        metering: if shared { Metering::Shared } else { Metering::Separate },
    };
    (alpha, beta, spec)
}

// ---------------------------------------------------------------------------
// LinDistFlow oracle
// ---------------------------------------------------------------------------

/// Random radial tree. Node 0 is the substation; `parent[k] < k`. Edges are
/// emitted in shuffled order with random orientation.
pub struct RandomTree {
    pub doc: FeederDoc,
    pub parent: Vec<Option<usize>>,
    pub r: Vec<[f64; 3]>,
    pub x: Vec<[f64; 3]>,
}

pub fn node_name(k: usize) -> String {
    if k == 0 {
        "sub".into()
    } else {
        format!("bus{k}")
    }
}

pub fn random_tree<R: Rng>(rng: &mut R, n: usize) -> RandomTree {
    let mut parent = vec![None];
    let mut r = vec![[0.0; 3]];
    let mut x = vec![[0.0; 3]];
    let mut edges = Vec::new();
    for k in 1..n {
        let p = rng.gen_range(0..k);
        parent.push(Some(p));
        let rr: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.001..0.02));
        let xx: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.001..0.02));
        r.push(rr);
        x.push(xx);
        let (a, b) = if rng.gen_bool(0.5) { (p, k) } else { (k, p) };
        edges.push(EdgeDoc {
            from: node_name(a),
            to: node_name(b),
            r_pu: PerPhase::Phases(rr),
            x_pu: PerPhase::Phases(xx),
        });
    }
    for i in (1..edges.len()).rev() {
        let j = rng.gen_range(0..=i);
        edges.swap(i, j);
    }
    let mut nodes: Vec<NodeDoc> = (0..n).map(|k| NodeDoc { id: node_name(k), phases: None }).collect();
    for i in (1..nodes.len()).rev() {
        let j = rng.gen_range(0..=i);
        nodes.swap(i, j);
    }
    let doc = FeederDoc {
        substation: "sub".into(),
        substation_voltage_pu: rng.gen_range(0.98..1.05),
        base_kva: rng.gen_range(100.0..2000.0),
        base_kv: None,
        nodes,
        edges,
    };
    RandomTree { doc, parent, r, x }
}

impl RandomTree {
    pub fn n(&self) -> usize {
        self.parent.len()
    }

    fn path(&self, mut k: usize) -> Vec<usize> {
        let mut out = Vec::new();
        while let Some(p) = self.parent[k] {
            out.push(k);
            k = p;
        }
        out
    }

    /// Resistance and reactance matrices of common paths for one phase.
    pub fn common_path(&self, ph: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let n = self.n();
        let paths: Vec<Vec<usize>> = (0..n).map(|k| self.path(k)).collect();
        let mut rm = vec![vec![0.0; n]; n];
        let mut xm = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                for &e in &paths[i] {
                    if paths[j].contains(&e) {
                        rm[i][j] += self.r[e][ph];
                        xm[i][j] += self.x[e][ph];
                    }
                }
            }
        }
        (rm, xm)
    }

    /// v^2 = v0^2 - 2 (R p + X q) with p, q in per unit, one phase at a time.
    /// Indexed by this tree's node numbering.
    pub fn dense_v2(&self, p_kw: &[[f64; 3]], q_kvar: &[[f64; 3]]) -> Vec<[f64; 3]> {
        let n = self.n();
        let v0 = self.doc.substation_voltage_pu.powi(2);
        let base = self.doc.base_kva;
        let mut out = vec![[0.0; 3]; n];
        for ph in 0..3 {
            let (rm, xm) = self.common_path(ph);
            for i in 0..n {
                let drop: f64 = (0..n).map(|j| rm[i][j] * p_kw[j][ph] / base + xm[i][j] * q_kvar[j][ph] / base).sum();
                out[i][ph] = v0 - 2.0 * drop;
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Vertex enumeration LP oracle
// ---------------------------------------------------------------------------

/// Solves `a x = b` by Gaussian elimination with partial pivoting; `None`
/// when singular.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[piv][c].abs() < 1e-11 {
            return None;
        }
        a.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            if f != 0.0 {
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
                b[r] -= f * b[c];
            }
        }
    }
    let mut x = vec![0.0; n];
    for c in (0..n).rev() {
        let s: f64 = (c + 1..n).map(|k| a[c][k] * x[k]).sum();
        x[c] = (b[c] - s) / a[c][c];
    }
    Some(x)
}

/// min c.x s.t. a_eq x = b_eq, a_ub x <= b_ub, lo <= x <= hi by trying every
/// vertex. `None` when infeasible.
pub fn vertex_enumeration(
    c: &[f64],
    a_eq: &[Vec<f64>],
    b_eq: &[f64],
    a_ub: &[Vec<f64>],
    b_ub: &[f64],
    lo: &[f64],
    hi: &[f64],
) -> Option<(Vec<f64>, f64)> {
    let n = c.len();
    // Candidate tight inequalities: x_i = lo_i, x_i = hi_i, row_k = b_k.
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        rows.push((e.clone(), lo[i]));
        rows.push((e, hi[i]));
    }
    for (a, b) in a_ub.iter().zip(b_ub) {
        rows.push((a.clone(), *b));
    }
    let need = n - a_eq.len();
    let feasible = |x: &[f64]| {
        let tol = 1e-7;
        (0..n).all(|i| x[i] >= lo[i] - tol && x[i] <= hi[i] + tol)
            && a_ub.iter().zip(b_ub).all(|(a, b)| a.iter().zip(x).map(|(u, v)| u * v).sum::<f64>() <= b + tol)
            && a_eq
                .iter()
                .zip(b_eq)
                .all(|(a, b)| (a.iter().zip(x).map(|(u, v)| u * v).sum::<f64>() - b).abs() <= tol)
    };
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut pick = Vec::with_capacity(need);
    fn rec(
        start: usize,
        need: usize,
        rows: &[(Vec<f64>, f64)],
        pick: &mut Vec<usize>,
        visit: &mut dyn FnMut(&[usize]),
    ) {
        if pick.len() == need {
            visit(pick);
            return;
        }
        for k in start..rows.len() {
            if rows.len() - k < need - pick.len() {
                break;
            }
            pick.push(k);
            rec(k + 1, need, rows, pick, visit);
            pick.pop();
        }
    }
    let mut visit = |sel: &[usize]| {
        let mut a: Vec<Vec<f64>> = a_eq.to_vec();
        let mut b: Vec<f64> = b_eq.to_vec();
        for &k in sel {
            a.push(rows[k].0.clone());
            b.push(rows[k].1);
        }
        if let Some(x) = solve_dense(a, b) {
            if feasible(&x) {
                let v: f64 = c.iter().zip(&x).map(|(u, w)| u * w).sum();
                if best.as_ref().is_none_or(|(_, bv)| v < *bv) {
                    best = Some((x, v));
                }
            }
        }
    };
    rec(0, need, &rows, &mut pick, &mut visit);
    best
}
