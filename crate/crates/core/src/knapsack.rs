//! Separable convex quadratic allocation with one coupling constraint:
//!
//! ```text
//! min  sum_t alpha_t x_t^2 + b_t x_t
//! s.t. sum_t x_t = total,  lo_t <= x_t <= hi_t
//! ```
//!
//! Stationarity gives `x_t(lambda) = clamp((lambda - b_t) / (2 alpha_t), lo_t, hi_t)`,
//! a nondecreasing map in `lambda`; zero-slope periods are step functions.
//! The multiplier is bracketed by bisection, then the free set is solved
//! exactly relative to the flattest free period so that tiny slopes
//! (seed periods near 1e-13) do not lose precision.

use crate::error::{Error, Result};

pub(crate) const MAX_BISECTION_ITERATIONS: usize = 200;
pub(crate) const BRACKET_WIDTH_TOL: f64 = 1e-12;
pub(crate) const ENERGY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Low,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Lo,
    Hi,
    Free,
    Tied,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Knapsack<'a> {
    pub alpha: &'a [f64],
    pub intercept: &'a [f64],
    pub lo: &'a [f64],
    pub hi: &'a [f64],
    pub total: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Allocation {
    pub x: Vec<f64>,
    pub lambda: f64,
    pub iterations: usize,
}

impl<'a> Knapsack<'a> {
    fn n(&self) -> usize {
        self.alpha.len()
    }

    fn x_at(&self, t: usize, lambda: f64, side: Side) -> f64 {
        let (a, b, lo, hi) = (self.alpha[t], self.intercept[t], self.lo[t], self.hi[t]);
        if a > 0.0 {
            ((lambda - b) / (2.0 * a)).max(lo).min(hi)
        } else if lambda < b {
            lo
        } else if lambda > b {
            hi
        } else {
            match side {
                Side::Low => lo,
                Side::High => hi,
            }
        }
    }

    fn sum_at(&self, lambda: f64, side: Side) -> f64 {
        (0..self.n()).map(|t| self.x_at(t, lambda, side)).sum()
    }

    /// Smallest allocation total reachable at `lambda`.
    pub fn sum_low(&self, lambda: f64) -> f64 {
        self.sum_at(lambda, Side::Low)
    }

    fn energy_tol(&self) -> f64 {
        ENERGY_TOL * 1e-3 * self.total.abs().max(1.0)
    }

    fn check_feasible(&self) -> Result<()> {
        let lo: f64 = self.lo.iter().sum();
        let hi: f64 = self.hi.iter().sum();
        let slack = ENERGY_TOL * self.total.abs().max(1.0);
        if self.total < lo - slack || self.total > hi + slack {
            return Err(Error::Infeasible(format!(
                "energy {} outside reachable range [{lo}, {hi}]",
                self.total
            )));
        }
        Ok(())
    }

    fn default_bracket(&self) -> Result<(f64, f64)> {
        let mut low = f64::INFINITY;
        let mut high = f64::NEG_INFINITY;
        for t in 0..self.n() {
            let (a, b) = (self.alpha[t], self.intercept[t]);
            low = low.min(b + 2.0 * a * self.lo[t]);
            high = high.max(b);
            if self.hi[t].is_finite() {
                high = high.max(b + 2.0 * a * self.hi[t]);
            }
        }
        let low = low - 1.0;
        let mut step = 1.0;
        let mut upper = high + step;
        let mut guard = 0;
        while self.sum_at(upper, Side::Low) < self.total {
            step *= 2.0;
            upper = high + step;
            guard += 1;
            if guard > 2000 || !upper.is_finite() {
                return Err(Error::Infeasible(
                    "could not bracket the energy multiplier".into(),
                ));
            }
        }
        Ok((low, upper))
    }

    pub fn solve(&self, bracket: Option<(f64, f64)>) -> Result<Allocation> {
        let n = self.n();
        if n == 0 {
            return Err(Error::invalid("no periods to allocate"));
        }
        self.check_feasible()?;
        let (mut a, mut b) = match bracket {
            Some(br) => self.widen(br)?,
            None => self.default_bracket()?,
        };
        let tol = self.energy_tol();
        let mut iterations = 0;
        let mut found = None;
        while b - a >= BRACKET_WIDTH_TOL {
            if iterations >= MAX_BISECTION_ITERATIONS {
                return Err(Error::NoConvergence {
                    iterations,
                    context: format!("multiplier bracket [{a}, {b}]"),
                });
            }
            iterations += 1;
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            let high = self.sum_at(mid, Side::High);
            let low = self.sum_at(mid, Side::Low);
            if high < self.total - tol {
                a = mid;
            } else if low > self.total + tol {
                b = mid;
            } else {
                found = Some(mid);
                break;
            }
        }
        let (a, b) = match found {
            Some(m) => (m, m),
            None => (a, b),
        };
        let (x, lambda, polish) = self.polish(a, b)?;
        Ok(Allocation {
            x,
            lambda,
            iterations: iterations + polish,
        })
    }

    /// Widens a caller-supplied bracket until it contains the multiplier.
    fn widen(&self, (mut a, mut b): (f64, f64)) -> Result<(f64, f64)> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::invalid(format!("bad bracket [{a}, {b}]")));
        }
        let mut step = (b - a).max(1.0);
        for _ in 0..2000 {
            let ok_low = self.sum_at(a, Side::High) <= self.total;
            let ok_high = self.sum_at(b, Side::Low) >= self.total;
            if ok_low && ok_high {
                return Ok((a, b));
            }
            if !ok_low {
                a -= step;
            }
            if !ok_high {
                b += step;
            }
            step *= 2.0;
        }
        Err(Error::Infeasible(
            "could not bracket the energy multiplier".into(),
        ))
    }

    fn polish(&self, a: f64, b: f64) -> Result<(Vec<f64>, f64, usize)> {
        let n = self.n();
        let mut state = vec![State::Free; n];
        for t in 0..n {
            let (alpha, beta) = (self.alpha[t], self.intercept[t]);
            state[t] = if alpha > 0.0 {
                if self.x_at(t, a, Side::Low) >= self.hi[t] {
                    State::Hi
                } else if self.x_at(t, b, Side::High) <= self.lo[t] {
                    State::Lo
                } else {
                    State::Free
                }
            } else if beta < a {
                State::Hi
            } else if beta > b {
                State::Lo
            } else {
                State::Tied
            };
        }

        if state.contains(&State::Tied) {
            return self.allocate_ties(&state, a).map(|(x, l)| (x, l, 1));
        }

        let mut iterations = 0;
        let limit = 4 * n + 8;
        loop {
            iterations += 1;
            if iterations > limit {
                return Err(Error::NoConvergence {
                    iterations,
                    context: "active-set polish".into(),
                });
            }
            let mut x: Vec<f64> = (0..n)
                .map(|t| match state[t] {
                    State::Lo => self.lo[t],
                    State::Hi => self.hi[t],
                    _ => 0.0,
                })
                .collect();
            let free: Vec<usize> = (0..n).filter(|&t| state[t] == State::Free).collect();
            let Some(&reference) = free.iter().min_by(|&&s, &&t| {
                self.alpha[s]
                    .partial_cmp(&self.alpha[t])
                    .unwrap()
                    .then(s.cmp(&t))
            }) else {
                let sum: f64 = x.iter().sum();
                if (sum - self.total).abs() > ENERGY_TOL * self.total.abs().max(1.0) {
                    return Err(Error::NoConvergence {
                        iterations,
                        context: "no free period left to absorb the residual".into(),
                    });
                }
                return Ok((x, 0.5 * (a + b), iterations));
            };

            let fixed: f64 = (0..n)
                .filter(|&t| state[t] != State::Free)
                .map(|t| x[t])
                .sum();
            let (a_s, b_s) = (self.alpha[reference], self.intercept[reference]);
            let mut coef = 1.0;
            let mut rhs = self.total - fixed;
            for &t in &free {
                if t == reference {
                    continue;
                }
                coef += a_s / self.alpha[t];
                rhs -= (b_s - self.intercept[t]) / (2.0 * self.alpha[t]);
            }
            let x_ref = rhs / coef;
            let lambda = 2.0 * a_s * x_ref + b_s;
            for &t in &free {
                x[t] = if t == reference {
                    x_ref
                } else {
                    (2.0 * a_s * x_ref + b_s - self.intercept[t]) / (2.0 * self.alpha[t])
                };
            }

            // Worst bound violation among free periods leaves the free set.
            let mut worst: Option<(usize, f64, State)> = None;
            for &t in &free {
                let scale = 1e-12 * x[t].abs().max(1.0);
                let below = self.lo[t] - x[t];
                let above = x[t] - self.hi[t];
                let (v, s) = if below > above {
                    (below, State::Lo)
                } else {
                    (above, State::Hi)
                };
                if v > scale && worst.is_none_or(|(_, w, _)| v > w) {
                    worst = Some((t, v, s));
                }
            }
            if let Some((t, _, s)) = worst {
                state[t] = s;
                continue;
            }

            // Fixed periods whose marginal price disagrees with lambda rejoin.
            let gtol = 1e-12 * lambda.abs().max(1.0);
            let mut changed = false;
            for t in 0..n {
                let alpha = self.alpha[t];
                if alpha <= 0.0 {
                    continue;
                }
                let wants_free = match state[t] {
                    State::Lo => 2.0 * alpha * self.lo[t] + self.intercept[t] < lambda - gtol,
                    State::Hi => 2.0 * alpha * self.hi[t] + self.intercept[t] > lambda + gtol,
                    _ => false,
                };
                if wants_free {
                    state[t] = State::Free;
                    changed = true;
                }
            }
            if changed {
                continue;
            }

            for &t in &free {
                x[t] = x[t].max(self.lo[t]).min(self.hi[t]);
            }
            let residual = self.total - x.iter().sum::<f64>();
            x[reference] = (x[reference] + residual).max(self.lo[reference]).min(self.hi[reference]);
            return Ok((x, lambda, iterations));
        }
    }

    /// Zero-slope periods whose price sits inside the final bracket share the
    /// residual energy, cheapest first and then earliest period first.
    fn allocate_ties(&self, state: &[State], a: f64) -> Result<(Vec<f64>, f64)> {
        let n = self.n();
        let mut tied: Vec<usize> = (0..n).filter(|&t| state[t] == State::Tied).collect();
        tied.sort_by(|&s, &t| {
            self.intercept[s]
                .partial_cmp(&self.intercept[t])
                .unwrap()
                .then(s.cmp(&t))
        });
        let lambda = self.intercept[tied[0]].max(a);
        let mut x = vec![0.0; n];
        for t in 0..n {
            x[t] = match state[t] {
                State::Lo | State::Tied => self.lo[t],
                State::Hi => self.hi[t],
                State::Free => self.x_at(t, lambda, Side::Low),
            };
        }
        let mut residual = self.total - x.iter().sum::<f64>();
        for &t in &tied {
            if residual <= 0.0 {
                break;
            }
            let room = self.hi[t] - self.lo[t];
            let take = residual.min(room);
            x[t] += take;
            residual -= take;
        }
        if residual.abs() > 0.0 {
            // Rounding left over from the free periods goes to the flattest one.
            if let Some(t) = (0..n)
                .filter(|&t| state[t] == State::Free)
                .min_by(|&s, &t| self.alpha[s].partial_cmp(&self.alpha[t]).unwrap().then(s.cmp(&t)))
            {
                x[t] = (x[t] + residual).max(self.lo[t]).min(self.hi[t]);
            } else if residual.abs() > ENERGY_TOL * self.total.abs().max(1.0) {
                return Err(Error::Infeasible(format!(
                    "residual {residual} kWh could not be placed"
                )));
            }
        }
        Ok((x, lambda))
    }
}
