use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use lrp_core::customer::{self, CustomerSpec};
use lrp_core::ir_lrp::{self, TauRange};
use lrp_core::optimal_alpha::{self, OptimalAlphaConfig, TargetProfile};
use lrp_core::sim::{self, synthetic, ComparisonReport, Scenario};
use lrp_core::tariff::{self, AlphaSchedule, LrpSchedule};

#[derive(Parser)]
#[command(name = "lrp", version, about = "Load-responsive pricing: tariffs, customer optimization and feeder simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Emit alpha/beta schedules.
    Price(PriceArgs),
    /// Optimize a single customer against a tariff.
    Optimize(OptimizeArgs),
    /// Run a full scenario, from a file or generated from a seed.
    Simulate(SimulateArgs),
    /// Recompute summary.csv from the CSVs of a finished run.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Mode {
    DayAhead,
    IrLrp,
    OptimalAlpha,
}

#[derive(clap::Args)]
struct PriceArgs {
    /// Price every tariff of a scenario, per customer and day.
    #[arg(long, conflicts_with_all = ["mode", "prices"])]
    scenario: Option<PathBuf>,
    #[arg(long, value_enum, requires = "prices")]
    mode: Option<Mode>,
    /// `period,beta` CSV.
    #[arg(long)]
    prices: Option<PathBuf>,
    /// `period,x_hat_kwh` CSV (optimal_alpha).
    #[arg(long)]
    target: Option<PathBuf>,
    /// Customer JSON; selects shared-meter handling for optimal_alpha.
    #[arg(long)]
    customer: Option<PathBuf>,
    /// Class scaling factor (ir_lrp).
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long, default_value_t = TauRange::SINGLE_CUSTOMER.tau_min)]
    tau_min: f64,
    #[arg(long, default_value_t = TauRange::SINGLE_CUSTOMER.tau_max)]
    tau_max: f64,
    #[arg(long, default_value_t = 1.0)]
    period_hours: f64,
    /// Output CSV (direct mode) or directory (scenario mode). Stdout if
    /// omitted in direct mode.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct OptimizeArgs {
    /// `period,beta[,alpha]` CSV.
    #[arg(long)]
    tariff: PathBuf,
    #[arg(long)]
    customer: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    period_hours: f64,
    /// `period,x_kwh,marginal_price` CSV. Stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct SimulateArgs {
    #[arg(long, required_unless_present = "seed", conflicts_with = "seed")]
    scenario: Option<PathBuf>,
    /// Generate a synthetic desk-scale feeder scenario from this seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Horizon of a generated scenario.
    #[arg(long, default_value_t = 7, requires = "seed")]
    days: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct ReportArgs {
    /// Directory written by `simulate`.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Price(a) => price(a),
        Command::Optimize(a) => optimize(a),
        Command::Simulate(a) => simulate(a),
        Command::Report(a) => report(a),
    }
}

fn price(a: PriceArgs) -> Result<()> {
    if let Some(path) = &a.scenario {
        let scenario = Scenario::load(path)?;
        let out = output_dir(a.out.as_deref(), &scenario);
        let run = sim::run_scenario(&scenario, None)?;
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        sim::write_tariff_files(&scenario, &run.runs, &out)?;
        info!("wrote tariffs for {} customers to {}", scenario.customers.len(), out.join("tariffs").display());
        return Ok(());
    }
    let Some(mode) = a.mode else { bail!("give either --scenario or --mode with --prices") };
    let prices_path = a.prices.as_deref().expect("clap requires --prices with --mode");
    let beta = tariff::load_tariff(prices_path, a.period_hours)?.beta;
    let alpha = match mode {
        Mode::DayAhead => AlphaSchedule::zeros(beta.n_periods()),
        Mode::IrLrp => {
            let eta = a.eta.context("--eta is required for ir_lrp")?;
            ir_lrp::compute(&beta, TauRange { tau_min: a.tau_min, tau_max: a.tau_max }, eta)?
        }
        Mode::OptimalAlpha => {
            let target = optimal_alpha::load_target(a.target.as_deref().context("--target is required for optimal_alpha")?)?;
            let tp = match &a.customer {
                Some(c) => target_for(CustomerSpec::load(c)?, target)?,
                None => TargetProfile::separate(target),
            };
            let design = optimal_alpha::design_alphas(&beta, &tp, &OptimalAlphaConfig::default())?;
            info!("seed period {}, lambda* = {:.6}", design.seed, design.lambda_star);
            design.alphas
        }
    };
    match &a.out {
        Some(p) => tariff::save_tariff(p, &beta, Some(&alpha))?,
        None => tariff::write_tariff_csv(std::io::stdout().lock(), &beta, Some(&alpha))?,
    }
    Ok(())
}

fn target_for(spec: CustomerSpec, target: lrp_core::LoadProfile) -> Result<TargetProfile> {
    let n = target.n_periods();
    Ok(match spec.metering {
        customer::Metering::Separate => TargetProfile {
            controllable_is_bidirectional: spec.is_bidirectional(),
            ..TargetProfile::separate(target)
        },
        customer::Metering::Shared if !spec.is_bidirectional() => {
            TargetProfile::shared_unidirectional(target, spec.base_profile(n)?)?
        }
        customer::Metering::Shared => TargetProfile {
            x_hat: target,
            base_load: Some(spec.base_profile(n)?),
            metering: customer::Metering::Shared,
            controllable_is_bidirectional: true,
        },
    })
}

fn optimize(a: OptimizeArgs) -> Result<()> {
    let schedule: LrpSchedule = tariff::load_tariff(&a.tariff, a.period_hours)?.into_schedule()?;
    let spec = CustomerSpec::load(&a.customer)?;
    let result = customer::optimize(&schedule, &spec)?;
    let cost = schedule.total_cost(&spec_metered(&spec, &result.profile)?)?;
    info!("lambda* = {:.6}, cost = {cost:.2}, KKT residual = {:.2e}", result.lambda_star, result.kkt_residual);
    match &a.out {
        Some(p) => {
            let file = fs::File::create(p).with_context(|| format!("creating {}", p.display()))?;
            customer::write_result_csv(file, &schedule, &spec, &result)?;
        }
        None => customer::write_result_csv(std::io::stdout().lock(), &schedule, &spec, &result)?,
    }
    Ok(())
}

fn spec_metered(spec: &CustomerSpec, x: &lrp_core::LoadProfile) -> Result<lrp_core::LoadProfile> {
    Ok(match spec.metering {
        customer::Metering::Separate => x.clone(),
        customer::Metering::Shared => x.plus(&spec.base_profile(x.n_periods())?)?,
    })
}

fn output_dir(flag: Option<&Path>, scenario: &Scenario) -> PathBuf {
    flag.map(Path::to_path_buf).or_else(|| scenario.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"))
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let (scenario, out) = if let Some(seed) = a.seed {
        let cfg = synthetic::SyntheticConfig { horizon_days: a.days, ..synthetic::SyntheticConfig::new(seed) };
        let generated = synthetic::generate(&cfg)?;
        let out = a.out.clone().unwrap_or_else(|| PathBuf::from(format!("out/seed_{seed}")));
        let path = generated.write(&out.join("inputs"))?;
        info!(
            "generated {} buildings on {} nodes (fleet scale {}), inputs in {}",
            generated.fleet.buildings.len(),
            generated.feeder.nodes.len(),
            generated.fleet_scale,
            path.parent().unwrap_or(&out).display()
        );
        (Scenario::load(&path)?, out)
    } else {
        let path = a.scenario.as_deref().expect("clap requires --scenario without --seed");
        let s = Scenario::load(path)?;
        let out = output_dir(a.out.as_deref(), &s);
        (s, out)
    };
    let result = sim::run_scenario(&scenario, Some(&out))?;
    for run in &result.runs {
        for w in &run.warnings {
            log::warn!("{}: {w}", run.tariff);
        }
    }
    print_report(&result.report)?;
    info!("wrote results to {}", out.display());
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let rep = sim::summarize_dir(&a.out)?;
    sim::write_summary_csv(&a.out, &rep)?;
    print_report(&rep)
}

fn print_report(rep: &ComparisonReport) -> Result<()> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{:<16} {:>10} {:>8} {:>14} {:>9}", "tariff", "min_v_pu", "viol_d", "social_cost", "pct_diff")?;
    for r in &rep.rows {
        let v = r.min_voltage_pu.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
        let d = r.violation_days.map(|d| d.to_string()).unwrap_or_else(|| "-".into());
        let p = r.pct_diff.map(|p| format!("{p:.2}")).unwrap_or_else(|| "-".into());
        writeln!(out, "{:<16} {v:>10} {d:>8} {:>14.2} {p:>9}", r.tariff, r.social_cost)?;
        for (class, cost) in &r.class_costs {
            writeln!(out, "  {class:<14} {cost:>12.2}")?;
        }
    }
    Ok(())
}
