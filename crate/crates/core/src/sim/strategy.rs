use std::collections::BTreeMap;

use super::{DayContext, DayCustomer};
use crate::customer::{self, Metering};
use crate::error::{Error, Result};
use crate::ir_lrp;
use crate::optimal_alpha::{self, TargetProfile};
use crate::tariff::{AlphaSchedule, LoadProfile, LrpSchedule};

/// What a tariff produced for one day.
#[derive(Debug, Clone, PartialEq)]
pub struct DayOutcome {
    /// Controllable energy per customer, in roster order.
    pub profiles: Vec<LoadProfile>,
    /// Schedule each customer is billed under.
    pub schedules: Vec<LrpSchedule>,
    /// Profiles the tariff was designed to reproduce.
    pub targets: Option<Vec<LoadProfile>>,
    pub warnings: Vec<String>,
}

/// A tariff mode selectable by name from a scenario.
pub trait TariffStrategy: Send + Sync {
    fn name(&self) -> &str;

    fn description(&self) -> &str;

    fn run_day(&self, ctx: &DayContext<'_>) -> Result<DayOutcome>;
}

/// Tariff strategies keyed by name.
pub struct StrategyRegistry {
    strategies: BTreeMap<String, Box<dyn TariffStrategy>>,
}

impl Default for StrategyRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl StrategyRegistry {
    pub fn empty() -> Self {
        Self { strategies: BTreeMap::new() }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        for s in [
            Box::new(DayAhead) as Box<dyn TariffStrategy>,
            Box::new(IrLrp),
            Box::new(OptimalAlpha),
            Box::new(CentralizedLdf),
        ] {
            r.register(s).expect("built-in names are distinct");
        }
        r
    }

    pub fn register(&mut self, strategy: Box<dyn TariffStrategy>) -> Result<()> {
        let name = strategy.name().to_string();
        if self.strategies.contains_key(&name) {
            return Err(Error::invalid(format!("tariff `{name}` is already registered")));
        }
        self.strategies.insert(name, strategy);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&dyn TariffStrategy> {
        self.strategies.get(name).map(|s| s.as_ref()).ok_or_else(|| {
            let known: Vec<&str> = self.names().collect();
            Error::invalid(format!("unknown tariff `{name}` (known: {})", known.join(", ")))
        })
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.strategies.keys().map(String::as_str)
    }
}

fn with_context<T>(dc: &DayCustomer<'_>, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.context(format!("customer `{}`", dc.customer.id)))
}

/// Flat day-ahead prices; customers fill the cheapest periods.
pub struct DayAhead;

impl TariffStrategy for DayAhead {
    fn name(&self) -> &str {
        "day_ahead"
    }

    fn description(&self) -> &str {
        "volumetric day-ahead prices with no slope"
    }

    fn run_day(&self, ctx: &DayContext<'_>) -> Result<DayOutcome> {
        let schedule = LrpSchedule::day_ahead(ctx.prices.clone());
        let profiles = ctx
            .customers
            .iter()
            .map(|dc| with_context(dc, customer::optimize_day_ahead(&ctx.prices, &dc.spec)).map(|r| r.profile))
            .collect::<Result<_>>()?;
        Ok(DayOutcome {
            profiles,
            schedules: vec![schedule; ctx.customers.len()],
            targets: None,
            warnings: Vec::new(),
        })
    }
}

/// Slopes ranked inversely to price, scaled by the customer's class.
pub struct IrLrp;

impl TariffStrategy for IrLrp {
    fn name(&self) -> &str {
        "ir_lrp"
    }

    fn description(&self) -> &str {
        "inverse-rank slopes scaled per customer class"
    }

    fn run_day(&self, ctx: &DayContext<'_>) -> Result<DayOutcome> {
        let sc = ctx.scenario;
        let mut profiles = Vec::with_capacity(ctx.customers.len());
        let mut schedules = Vec::with_capacity(ctx.customers.len());
        for dc in &ctx.customers {
            let eta = with_context(dc, sc.eta_for(&dc.customer.class))?;
            let alpha = ir_lrp::compute(&ctx.prices, sc.tau_range, eta)?;
            let schedule = LrpSchedule::new(alpha, ctx.prices.clone())?;
            profiles.push(with_context(dc, customer::optimize(&schedule, &dc.spec))?.profile);
            schedules.push(schedule);
        }
        Ok(DayOutcome { profiles, schedules, targets: None, warnings: Vec::new() })
    }
}

/// Slopes designed so each customer's optimum is the central plan.
pub struct OptimalAlpha;

impl TariffStrategy for OptimalAlpha {
    fn name(&self) -> &str {
        "optimal_alpha"
    }

    fn description(&self) -> &str {
        "slopes that make the centrally planned profile each customer's optimum"
    }

    fn run_day(&self, ctx: &DayContext<'_>) -> Result<DayOutcome> {
        let targets = ctx.centralized_targets()?.to_vec();
        let mut profiles = Vec::with_capacity(targets.len());
        let mut schedules = Vec::with_capacity(targets.len());
        let mut warnings = Vec::new();
        for (dc, target) in ctx.customers.iter().zip(&targets) {
            let alpha = if target.x().iter().any(|&x| x > 0.0) {
                let base = dc.spec.base_profile(target.n_periods())?;
                let tp = match dc.spec.metering {
                    Metering::Shared if !dc.spec.is_bidirectional() => {
                        TargetProfile::shared_unidirectional(target.clone(), base)?
                    }
                    Metering::Shared => TargetProfile {
                        x_hat: target.clone(),
                        base_load: Some(base),
                        metering: Metering::Shared,
                        controllable_is_bidirectional: true,
                    },
                    Metering::Separate => TargetProfile {
                        x_hat: target.clone(),
                        base_load: None,
                        metering: Metering::Separate,
                        controllable_is_bidirectional: dc.spec.is_bidirectional(),
                    },
                };
                let design =
                    with_context(dc, optimal_alpha::design_alphas(&ctx.prices, &tp, &ctx.scenario.alpha_config))?;
                warnings.extend(design.warnings.iter().map(|w| format!("{}: {w}", dc.customer.id)));
                design.alphas
            } else {
                AlphaSchedule::zeros(target.n_periods())
            };
            let schedule = LrpSchedule::new(alpha, ctx.prices.clone())?;
            profiles.push(with_context(dc, customer::optimize(&schedule, &dc.spec))?.profile);
            schedules.push(schedule);
        }
        Ok(DayOutcome { profiles, schedules, targets: Some(targets), warnings })
    }
}

/// The operator's own plan, billed at day-ahead prices.
pub struct CentralizedLdf;

impl TariffStrategy for CentralizedLdf {
    fn name(&self) -> &str {
        "centralized_ldf"
    }

    fn description(&self) -> &str {
        "central voltage-constrained schedule billed at day-ahead prices"
    }

    fn run_day(&self, ctx: &DayContext<'_>) -> Result<DayOutcome> {
        let profiles = ctx.centralized_targets()?.to_vec();
        Ok(DayOutcome {
            schedules: vec![LrpSchedule::day_ahead(ctx.prices.clone()); profiles.len()],
            profiles,
            targets: None,
            warnings: Vec::new(),
        })
    }
}
