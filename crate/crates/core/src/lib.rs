//! Load-responsive pricing (LRP) for day-ahead retail energy tariffs.
//!
//! The crate builds LRP slope schedules (optimal-alpha from a target
//! profile, inverse-rank from the price ranking), solves the customer's
//! quadratic cost minimization, evaluates LinDistFlow voltages on radial
//! feeders, schedules EV fleets centrally, and runs multi-day comparisons.

pub mod customer;
pub mod error;
pub mod feeder;
pub mod fleet;
pub mod ir_lrp;
mod knapsack;
pub mod lp;
pub mod optimal_alpha;
pub mod sim;
pub mod tariff;

pub use customer::{optimize, optimize_day_ahead, CustomerSpec, Metering, OptimizerResult};
pub use error::{Error, Result};
pub use tariff::{AlphaSchedule, LoadProfile, LrpSchedule, PriceSchedule};
