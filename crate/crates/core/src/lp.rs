//! Dense revised simplex for small linear programs.
//!
//! Solves `min c.x` subject to `A_ub x <= b_ub`, `A_eq x = b_eq` and
//! `lo <= x <= hi`. Variables are shifted to `[0, hi - lo]` and handled with
//! the bounded-variable simplex, so box constraints never become rows.
//! Phase one drives artificial variables out; phase two optimizes. The
//! basis inverse is kept explicitly and refactored periodically.

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-9;
const OPT_TOL: f64 = 1e-9;
const REFACTOR_EVERY: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pricing {
    /// Lowest-index improving column. Never cycles.
    #[default]
    Bland,
    /// Most negative reduced cost, switching to Bland's rule after a run of
    /// degenerate pivots.
    Dantzig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    pub c: Vec<f64>,
    pub a_ub: Vec<Vec<f64>>,
    pub b_ub: Vec<f64>,
    pub a_eq: Vec<Vec<f64>>,
    pub b_eq: Vec<f64>,
    /// Lower bounds must be finite; upper bounds may be infinite.
    pub bounds: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Multipliers of the inequality rows (non-positive at optimum).
    pub duals_ub: Vec<f64>,
    pub duals_eq: Vec<f64>,
    pub reduced_costs: Vec<f64>,
    pub iterations: usize,
    pub duality_gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum State {
    Basic,
    Lower,
    Upper,
}

struct Tableau {
    m: usize,
    /// Column-major constraint matrix over all internal variables.
    cols: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    upper: Vec<f64>,
    state: Vec<State>,
    basis: Vec<usize>,
    binv: Vec<Vec<f64>>,
    xb: Vec<f64>,
    n_real: usize,
    iterations: usize,
    max_iterations: usize,
    pricing: Pricing,
}

enum Step {
    Optimal,
    Unbounded,
    Continue,
}

impl Tableau {
    fn value(&self, j: usize) -> f64 {
        match self.state[j] {
            State::Lower => 0.0,
            State::Upper => self.upper[j],
            State::Basic => {
                let r = self.basis.iter().position(|&b| b == j).unwrap();
                self.xb[r]
            }
        }
    }

    fn refactor(&mut self) -> Result<()> {
        let m = self.m;
        let mut a: Vec<Vec<f64>> = (0..m)
            .map(|i| self.basis.iter().map(|&j| self.cols[j][i]).collect())
            .collect();
        let mut inv: Vec<Vec<f64>> = (0..m)
            .map(|i| (0..m).map(|k| if i == k { 1.0 } else { 0.0 }).collect())
            .collect();
        for col in 0..m {
            let piv = (col..m)
                .max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs()))
                .unwrap();
            if a[piv][col].abs() < 1e-12 {
                return Err(Error::NoConvergence {
                    iterations: self.iterations,
                    context: "basis matrix became singular".into(),
                });
            }
            a.swap(col, piv);
            inv.swap(col, piv);
            let d = a[col][col];
            for k in 0..m {
                a[col][k] /= d;
                inv[col][k] /= d;
            }
            for r in 0..m {
                if r != col && a[r][col] != 0.0 {
                    let f = a[r][col];
                    for k in 0..m {
                        a[r][k] -= f * a[col][k];
                        inv[r][k] -= f * inv[col][k];
                    }
                }
            }
        }
        self.binv = inv;
        self.recompute_xb();
        Ok(())
    }

    fn recompute_xb(&mut self) {
        let mut b = self.rhs.clone();
        for (j, col) in self.cols.iter().enumerate() {
            if self.state[j] == State::Upper {
                for i in 0..self.m {
                    b[i] -= col[i] * self.upper[j];
                }
            }
        }
        self.xb = self.mul_binv(&b);
    }

    fn mul_binv(&self, v: &[f64]) -> Vec<f64> {
        self.binv
            .iter()
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn duals(&self, cost: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.m];
        for (r, &j) in self.basis.iter().enumerate() {
            let cb = cost[j];
            if cb != 0.0 {
                for (yi, bi) in y.iter_mut().zip(&self.binv[r]) {
                    *yi += cb * bi;
                }
            }
        }
        y
    }

    fn reduced_cost(&self, cost: &[f64], y: &[f64], j: usize) -> f64 {
        cost[j] - self.cols[j].iter().zip(y).map(|(a, b)| a * b).sum::<f64>()
    }

    fn step(&mut self, cost: &[f64], allowed: usize, use_bland: bool) -> Result<(Step, bool)> {
        let y = self.duals(cost);
        let mut enter: Option<(usize, f64)> = None;
        let mut best = 0.0;
        for j in 0..allowed {
            let dir = match self.state[j] {
                State::Basic => continue,
                State::Lower => 1.0,
                State::Upper => -1.0,
            };
            if self.upper[j] == 0.0 {
                continue;
            }
            let d = self.reduced_cost(cost, &y, j);
            if d * dir < -OPT_TOL {
                if use_bland {
                    enter = Some((j, dir));
                    break;
                }
                if d.abs() > best {
                    best = d.abs();
                    enter = Some((j, dir));
                }
            }
        }
        let Some((q, dir)) = enter else {
            return Ok((Step::Optimal, false));
        };

        let w = self.mul_binv(&self.cols[q]);
        // Basic values move by -dir * theta * w.
        let mut theta = self.upper[q];
        let mut leave: Option<(usize, State)> = None;
        for (r, &wr) in w.iter().enumerate() {
            let rate = dir * wr;
            let (limit, to) = if rate > PIVOT_TOL {
                (self.xb[r].max(0.0) / rate, State::Lower)
            } else if rate < -PIVOT_TOL && self.upper[self.basis[r]].is_finite() {
                ((self.upper[self.basis[r]] - self.xb[r]).max(0.0) / -rate, State::Upper)
            } else {
                continue;
            };
            let take = match leave {
                _ if limit < theta - 1e-12 => true,
                Some((s, _)) => limit <= theta + 1e-12 && self.basis[r] < self.basis[s],
                None => false,
            };
            if take {
                theta = limit;
                leave = Some((r, to));
            }
        }
        if theta.is_infinite() {
            return Ok((Step::Unbounded, false));
        }
        self.iterations += 1;
        let degenerate = theta <= 1e-12;

        for (xb, wr) in self.xb.iter_mut().zip(&w) {
            *xb -= dir * theta * wr;
        }
        match leave {
            None => {
                self.state[q] = if dir > 0.0 { State::Upper } else { State::Lower };
            }
            Some((r, to)) => {
                let entering_value = if dir > 0.0 { theta } else { self.upper[q] - theta };
                let out = self.basis[r];
                self.state[out] = to;
                self.state[q] = State::Basic;
                self.basis[r] = q;
                self.xb[r] = entering_value;
                let pivot = w[r];
                let pivot_row: Vec<f64> = self.binv[r].iter().map(|v| v / pivot).collect();
                for (i, row) in self.binv.iter_mut().enumerate() {
                    if i == r {
                        continue;
                    }
                    let f = w[i];
                    if f != 0.0 {
                        for (a, p) in row.iter_mut().zip(&pivot_row) {
                            *a -= f * p;
                        }
                    }
                }
                self.binv[r] = pivot_row;
                if self.iterations % REFACTOR_EVERY == 0 {
                    self.refactor()?;
                }
            }
        }
        Ok((Step::Continue, degenerate))
    }

    fn run(&mut self, cost: &[f64], allowed: usize) -> Result<Step> {
        let mut degenerate_run = 0usize;
        loop {
            if self.iterations >= self.max_iterations {
                return Err(Error::NoConvergence {
                    iterations: self.iterations,
                    context: "simplex iteration cap".into(),
                });
            }
            let bland = self.pricing == Pricing::Bland || degenerate_run > 50;
            match self.step(cost, allowed, bland)? {
                (Step::Continue, degenerate) => {
                    degenerate_run = if degenerate { degenerate_run + 1 } else { 0 };
                }
                (other, _) => return Ok(other),
            }
        }
    }
}

fn check_shape(p: &LpProblem) -> Result<()> {
    let n = p.c.len();
    let rows_ok = |a: &[Vec<f64>], b: &[f64]| a.len() == b.len() && a.iter().all(|r| r.len() == n);
    if p.bounds.len() != n || !rows_ok(&p.a_ub, &p.b_ub) || !rows_ok(&p.a_eq, &p.b_eq) {
        return Err(Error::invalid("LP dimensions are inconsistent"));
    }
    let finite = p.c.iter().chain(&p.b_ub).chain(&p.b_eq).all(|v| v.is_finite())
        && p.a_ub.iter().chain(&p.a_eq).flatten().all(|v| v.is_finite());
    if !finite {
        return Err(Error::invalid("LP data contains non-finite values"));
    }
    for (j, &(lo, hi)) in p.bounds.iter().enumerate() {
        if !lo.is_finite() || hi.is_nan() || hi < lo {
            return Err(Error::invalid(format!("variable {j} has invalid bounds [{lo}, {hi}]")));
        }
    }
    Ok(())
}

pub fn lp_solve(problem: &LpProblem) -> Result<LpSolution> {
    lp_solve_with(problem, Pricing::default())
}

pub fn lp_solve_with(problem: &LpProblem, pricing: Pricing) -> Result<LpSolution> {
    check_shape(problem)?;
    let n = problem.c.len();
    let m_ub = problem.a_ub.len();
    let m = m_ub + problem.a_eq.len();
    let lo: Vec<f64> = problem.bounds.iter().map(|b| b.0).collect();

    let rows: Vec<&Vec<f64>> = problem.a_ub.iter().chain(&problem.a_eq).collect();
    let mut rhs: Vec<f64> = problem
        .b_ub
        .iter()
        .chain(&problem.b_eq)
        .zip(&rows)
        .map(|(b, row)| b - row.iter().zip(&lo).map(|(a, l)| a * l).sum::<f64>())
        .collect();
    let sign: Vec<f64> = rhs.iter().map(|&r| if r < 0.0 { -1.0 } else { 1.0 }).collect();
    for (r, s) in rhs.iter_mut().zip(&sign) {
        *r *= s;
    }

    // Columns: structural, one slack per inequality row, one artificial per
    // row that lacks a usable slack.
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| rows[i][j] * sign[i]).collect()).collect();
    let mut upper: Vec<f64> = problem.bounds.iter().map(|&(l, h)| h - l).collect();
    let mut basis = vec![usize::MAX; m];
    for i in 0..m_ub {
        let mut col = vec![0.0; m];
        col[i] = sign[i];
        if sign[i] > 0.0 {
            basis[i] = cols.len();
        }
        cols.push(col);
        upper.push(f64::INFINITY);
    }
    let n_real = cols.len();
    for (i, b) in basis.iter_mut().enumerate() {
        if *b == usize::MAX {
            let mut col = vec![0.0; m];
            col[i] = 1.0;
            *b = cols.len();
            cols.push(col);
            upper.push(f64::INFINITY);
        }
    }
    let total = cols.len();
    let mut state = vec![State::Lower; total];
    for &b in &basis {
        state[b] = State::Basic;
    }

    let mut tab = Tableau {
        m,
        cols,
        rhs,
        upper,
        state,
        basis,
        binv: Vec::new(),
        xb: Vec::new(),
        n_real,
        iterations: 0,
        max_iterations: 50 * (total + m).max(100),
        pricing,
    };
    tab.refactor()?;

    if total > n_real {
        let phase1: Vec<f64> = (0..total).map(|j| if j >= n_real { 1.0 } else { 0.0 }).collect();
        tab.run(&phase1, total)?;
        let infeas: f64 = (n_real..total).map(|j| tab.value(j)).sum();
        let scale = 1.0 + tab.rhs.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
        if infeas > 1e-8 * scale {
            return Ok(infeasible(n, m_ub, m - m_ub, tab.iterations));
        }
        drive_out_artificials(&mut tab)?;
        for j in n_real..total {
            tab.upper[j] = 0.0;
        }
        tab.recompute_xb();
    }

    let mut cost = vec![0.0; total];
    cost[..n].copy_from_slice(&problem.c);
    if let Step::Unbounded = tab.run(&cost, tab.n_real)? {
        return Ok(LpSolution {
            status: LpStatus::Unbounded,
            x: vec![f64::NAN; n],
            objective: f64::NEG_INFINITY,
            duals_ub: vec![0.0; m_ub],
            duals_eq: vec![0.0; m - m_ub],
            reduced_costs: vec![0.0; n],
            iterations: tab.iterations,
            duality_gap: f64::INFINITY,
        });
    }
    tab.refactor()?;

    let x: Vec<f64> = (0..n)
        .map(|j| {
            let v = lo[j] + tab.value(j);
            v.clamp(problem.bounds[j].0, problem.bounds[j].1)
        })
        .collect();
    let objective = problem.c.iter().zip(&x).map(|(c, x)| c * x).sum::<f64>();

    let y_internal = tab.duals(&cost);
    let y: Vec<f64> = y_internal.iter().zip(&sign).map(|(v, s)| v * s).collect();
    let reduced_costs: Vec<f64> = (0..n)
        .map(|j| problem.c[j] - rows.iter().zip(&y).map(|(r, yi)| r[j] * yi).sum::<f64>())
        .collect();
    let mut dual_obj: f64 = problem.b_ub.iter().chain(&problem.b_eq).zip(&y).map(|(b, y)| b * y).sum();
    for (j, &d) in reduced_costs.iter().enumerate() {
        let (l, h) = problem.bounds[j];
        dual_obj += if d >= 0.0 || !h.is_finite() { l * d } else { h * d };
    }
    Ok(LpSolution {
        status: LpStatus::Optimal,
        duality_gap: (objective - dual_obj).abs(),
        x,
        objective,
        duals_ub: y[..m_ub].to_vec(),
        duals_eq: y[m_ub..].to_vec(),
        reduced_costs,
        iterations: tab.iterations,
    })
}

fn infeasible(n: usize, m_ub: usize, m_eq: usize, iterations: usize) -> LpSolution {
    LpSolution {
        status: LpStatus::Infeasible,
        x: vec![f64::NAN; n],
        objective: f64::NAN,
        duals_ub: vec![0.0; m_ub],
        duals_eq: vec![0.0; m_eq],
        reduced_costs: vec![0.0; n],
        iterations,
        duality_gap: f64::NAN,
    }
}

/// Replaces artificials still basic at zero with real columns where the
/// row allows it. Rows where none qualifies are redundant and keep their
/// artificial pinned at zero.
fn drive_out_artificials(tab: &mut Tableau) -> Result<()> {
    for r in 0..tab.m {
        if tab.basis[r] < tab.n_real {
            continue;
        }
        let candidate = (0..tab.n_real).find(|&j| {
            tab.state[j] != State::Basic
                && tab.binv[r].iter().zip(&tab.cols[j]).map(|(a, b)| a * b).sum::<f64>().abs() > 1e-7
        });
        if let Some(q) = candidate {
            let out = tab.basis[r];
            tab.state[out] = State::Lower;
            tab.state[q] = State::Basic;
            tab.basis[r] = q;
            tab.refactor()?;
        }
    }
    Ok(())
}
