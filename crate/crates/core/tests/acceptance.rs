//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use lrp_core::customer;
use lrp_core::feeder::{self, FeederModel, NodalInjection, PHASES};
use lrp_core::ir_lrp::{self, TauRange};
use lrp_core::optimal_alpha::{self, OptimalAlphaConfig, TargetProfile};
use lrp_core::sim::{self, synthetic, Scenario};
use lrp_core::{CustomerSpec, LoadProfile, LrpSchedule, PriceSchedule};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

struct Outcome {
    pass: bool,
    detail: String,
    elapsed: Duration,
    budget: Option<Duration>,
}

fn timed(budget: Option<Duration>, f: impl FnOnce() -> Result<String, String>) -> Outcome {
    let start = Instant::now();
    let r = f();
    let elapsed = start.elapsed();
    let in_time = budget.is_none_or(|b| elapsed <= b);
    match r {
        Ok(detail) => Outcome { pass: in_time, detail, elapsed, budget },
        Err(detail) => Outcome { pass: false, detail, elapsed, budget },
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn beta() -> PriceSchedule {
    PriceSchedule::hourly(BETA.to_vec()).unwrap()
}

fn criterion_1() -> Result<String, String> {
    let b = beta();
    let alpha = ir_lrp::compute(&b, TauRange::SINGLE_CUSTOMER, 0.001).map_err(|e| e.to_string())?;
    let tau = ir_lrp::build_tau(24, 0.1, 1.5).map_err(|e| e.to_string())?;
    let tau_t = ir_lrp::assign_inverse_rank(&b, &tau).map_err(|e| e.to_string())?;
    let mut dt: f64 = 0.0;
    let mut da: f64 = 0.0;
    for h in 0..24 {
        dt = dt.max((tau_t[h] - IR_TAU[h]).abs());
        da = da.max((alpha.alpha()[h] * 1e4 - IR_ALPHA_E4[h]).abs());
    }
    check(dt <= 0.005, || format!("max |dtau| = {dt:.4}"))?;
    check(da <= 0.005, || format!("max |dalpha| = {da:.4}e-4"))?;
    Ok(format!("max |dtau| = {dt:.4}, max |dalpha| = {da:.4}e-4"))
}

fn criterion_2() -> Result<String, String> {
    let target = TargetProfile::separate(LoadProfile::new(target_profile()).unwrap());
    let cfg = OptimalAlphaConfig { alpha_seed: 1e-13, theta: 10.0, ..Default::default() };
    let a = optimal_alpha::compute_alphas(&beta(), &target, &cfg).map_err(|e| e.to_string())?;
    let x = target_profile();
    let mut worst: f64 = 0.0;
    for (h, printed) in OPT_ALPHA {
        worst = worst.max((a.alpha()[h] - printed).abs());
    }
    check(worst <= 5e-5, || format!("max |dalpha| = {worst:.2e}"))?;
    for h in 0..24 {
        if x[h] == 0.0 {
            check(a.alpha()[h] == 10.0, || format!("hour {h}: alpha = {} at zero target", a.alpha()[h]))?;
        }
    }
    Ok(format!("max |dalpha| = {worst:.2e} $/kWh^2, theta at all zero-target hours"))
}

/// Round trip with every energy quantity expressed in `unit` kWh.
fn round_trip(unit: f64) -> Result<f64, String> {
    let s = 1.0 / unit;
    let b = PriceSchedule::hourly(BETA.iter().map(|v| v * unit).collect()).unwrap();
    let x: Vec<f64> = target_profile().iter().map(|v| v * s).collect();
    let target = TargetProfile::separate(LoadProfile::new(x).unwrap());
    let a = optimal_alpha::compute_alphas(&b, &target, &OptimalAlphaConfig::default()).map_err(|e| e.to_string())?;
    let c = case1_customer();
    let spec = CustomerSpec {
        total_energy_kwh: c.total_energy_kwh * s,
        consume_bound_kw: c.consume_bound_kw * s,
        inject_bound_kw: c.inject_bound_kw * s,
        export_energy_kwh: c.export_energy_kwh * s,
        local_limit_kw: c.local_limit_kw * s,
        ..c
    };
    let rep = optimal_alpha::verify_roundtrip(&b, &target, &a, &spec).map_err(|e| e.to_string())?;
    Ok(rep.max_deviation * unit)
}

fn criterion_3() -> Result<String, String> {
    let kwh = round_trip(1.0)?;
    let wh = round_trip(1e-3)?;
    check(kwh <= 0.06, || format!("kWh deviation {kwh:.4}"))?;
    check(wh <= 0.002, || format!("Wh-scaled deviation {wh:.5} kWh"))?;
    Ok(format!("max deviation {kwh:.4} kWh; {wh:.2e} kWh with Wh units"))
}

fn criterion_4() -> Result<String, String> {
    let r = customer::optimize_day_ahead(&beta(), &case1_customer()).map_err(|e| e.to_string())?;
    let mut want = vec![0.0; 24];
    want[10] = 20.0;
    want[11] = 20.0;
    want[12] = 20.0;
    want[18] = -10.0;
    check(r.profile.x() == want.as_slice(), || format!("profile {:?}", r.profile.x()))?;
    Ok("20 kWh at hours 10-12, -10 kWh at hour 18, zero elsewhere".into())
}

fn criterion_5() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_gap: f64 = 0.0;
    let mut worst_kkt: f64 = 0.0;
    for i in 0..200 {
        let n = rng.gen_range(1..=6);
        let (alpha, beta, spec) = random_customer(&mut rng, n);
        let sched = LrpSchedule::new(
            lrp_core::AlphaSchedule::new(alpha.clone()).unwrap(),
            PriceSchedule::hourly(beta.clone()).unwrap(),
        )
        .unwrap();
        let r = customer::optimize(&sched, &spec).map_err(|e| format!("instance {i}: {e}"))?;
        let qp = Qp::from_spec(&alpha, &beta, &spec, 1.0);
        let x = r.profile.x();
        check(qp.feasibility_gap(x) <= 1e-8, || format!("instance {i}: infeasible by {}", qp.feasibility_gap(x)))?;
        let oracle = dual_oracle(&qp);
        let gap = (qp.cost(x) - oracle).abs();
        worst_gap = worst_gap.max(gap);
        worst_kkt = worst_kkt.max(kkt_residual(&qp, x));
        check(gap <= 1e-6, || format!("instance {i}: objective gap {gap:.2e}"))?;
        check(worst_kkt < 1e-8, || format!("instance {i}: KKT residual {worst_kkt:.2e}"))?;
    }
    Ok(format!("200 instances, max objective gap {worst_gap:.1e}, max KKT residual {worst_kkt:.1e}"))
}

fn random_injection<R: Rng>(rng: &mut R, n: usize) -> (Vec<[f64; 3]>, Vec<[f64; 3]>) {
    let p: Vec<[f64; 3]> = (0..n).map(|k| std::array::from_fn(|_| if k == 0 { 0.0 } else { rng.gen_range(0.0..200.0) })).collect();
    let q = (0..n).map(|k| std::array::from_fn(|ph| p[k][ph] * rng.gen_range(0.0..0.6))).collect();
    (p, q)
}

fn to_model(tree: &RandomTree, model: &FeederModel, p: &[[f64; 3]], q: &[[f64; 3]]) -> NodalInjection {
    let mut inj = NodalInjection::zeros(model.n_nodes());
    for k in 0..tree.n() {
        let m = model.node_index(&node_name(k)).unwrap();
        inj.p_kw[m] = p[k];
        inj.q_kvar[m] = q[k];
    }
    inj
}

fn criterion_6() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let n = rng.gen_range(2..=30);
        let tree = random_tree(&mut rng, n);
        let model = FeederModel::from_doc(tree.doc.clone()).map_err(|e| format!("tree {i}: {e}"))?;
        let (p1, q1) = random_injection(&mut rng, n);
        let (p2, q2) = random_injection(&mut rng, n);
        let want = tree.dense_v2(&p1, &q1);
        let v1 = feeder::voltage_profile(&model, &to_model(&tree, &model, &p1, &q1)).map_err(|e| e.to_string())?;
        for k in 0..n {
            let m = model.node_index(&node_name(k)).unwrap();
            for ph in 0..PHASES {
                worst = worst.max((v1.v2[m][ph] - want[k][ph]).abs());
            }
        }
        check(worst <= 1e-10, || format!("tree {i}: oracle gap {worst:.2e}"))?;

        // Linearity of the drop and monotonicity in added load.
        let (a, b) = (rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0));
        let mix = |u: &[[f64; 3]], w: &[[f64; 3]]| -> Vec<[f64; 3]> {
            u.iter().zip(w).map(|(x, y)| std::array::from_fn(|ph| a * x[ph] + b * y[ph])).collect()
        };
        let v2 = feeder::voltage_profile(&model, &to_model(&tree, &model, &p2, &q2)).unwrap();
        let vm = feeder::voltage_profile(&model, &to_model(&tree, &model, &mix(&p1, &p2), &mix(&q1, &q2))).unwrap();
        let v0 = tree.doc.substation_voltage_pu.powi(2);
        let sum: Vec<[f64; 3]> = p1.iter().zip(&p2).map(|(x, y)| std::array::from_fn(|ph| x[ph] + y[ph])).collect();
        let vs = feeder::voltage_profile(&model, &to_model(&tree, &model, &sum, &q1)).unwrap();
        for m in 0..n {
            for ph in 0..PHASES {
                let lin = (vm.v2[m][ph] - v0) - a * (v1.v2[m][ph] - v0) - b * (v2.v2[m][ph] - v0);
                check(lin.abs() <= 1e-12, || format!("tree {i}: linearity gap {lin:.2e}"))?;
                check(vs.v2[m][ph] <= v1.v2[m][ph] + 1e-15, || format!("tree {i}: added load raised v^2"))?;
            }
        }
    }
    Ok(format!("50 trees, max oracle gap {worst:.1e}; linearity and monotonicity hold"))
}

struct Desk {
    generated: synthetic::SyntheticScenario,
    result: sim::RunResult,
}

fn criterion_7(desk: &mut Option<Desk>) -> Result<String, String> {
    let generated = synthetic::generate(&synthetic::SyntheticConfig::new(42)).map_err(|e| e.to_string())?;
    let scenario = generated.scenario().map_err(|e| e.to_string())?;
    let result = sim::run_scenario(&scenario, None).map_err(|e| e.to_string())?;
    let nodes = generated.feeder.nodes.len();
    check(nodes <= 30, || format!("{nodes} nodes"))?;
    check(scenario.horizon_days == 7, || "horizon is not 7 days".into())?;
    check(scenario.tau_range.tau_max <= 3.0, || "tau_max above 3".into())?;
    let run = |t: &str| result.tariff(t).ok_or_else(|| format!("tariff {t} missing"));
    let da = run("day_ahead")?;
    let (da_min, da_days) = (da.min_voltage.unwrap(), da.violation_days.unwrap());
    check(da_min < 0.95 && da_days >= 1, || format!("day-ahead min {da_min:.4}, {da_days} violation days"))?;
    for t in ["centralized_ldf", "optimal_alpha", "ir_lrp"] {
        let d = run(t)?.violation_days.unwrap();
        check(d == 0, || format!("{t}: {d} violation days"))?;
    }
    let dev = run("optimal_alpha")?.max_target_deviation.unwrap();
    check(dev <= 1e-3, || format!("optimal-alpha deviation {dev:.2e} kWh"))?;
    let detail = format!(
        "{nodes} nodes, {} buildings; day-ahead min {da_min:.4} pu on {da_days} days; others 0 days; \
         optimal-alpha deviation {dev:.1e} kWh",
        generated.fleet.buildings.len()
    );
    *desk = Some(Desk { generated, result });
    Ok(detail)
}

fn criterion_8(desk: &Option<Desk>) -> Result<String, String> {
    let desk = desk.as_ref().ok_or("criterion 7 did not produce a run")?;
    let r = &desk.result;
    let get = |t: &str| r.tariff(t).ok_or_else(|| format!("tariff {t} missing"));
    let (da, cl, oa) = (get("day_ahead")?, get("centralized_ldf")?, get("optimal_alpha")?);
    for (i, b) in desk.generated.fleet.buildings.iter().enumerate() {
        let (a, c, o) = (da.customer_costs[i], cl.customer_costs[i], oa.customer_costs[i]);
        let tol = 1e-9 * o.abs();
        check(a <= c + tol && c <= o + tol, || format!("{}: {a:.4} / {c:.4} / {o:.4}", b.id))?;
    }
    let s_cl = r.report.row("centralized_ldf").unwrap().social_cost;
    let s_oa = r.report.row("optimal_alpha").unwrap().social_cost;
    let rel = (s_cl - s_oa).abs() / s_cl.abs();
    check(rel <= 1e-6, || format!("social cost {s_cl:.6} vs {s_oa:.6}"))?;
    Ok(format!(
        "ordering holds for all {} customers; social cost {s_cl:.2} vs {s_oa:.2} (rel {rel:.1e})",
        da.customer_costs.len()
    ))
}

fn read_tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn criterion_9() -> Result<String, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let case1 = manifest.join("../../scenarios/case1/scenario.json");
    let desk_a = synthetic::generate(&synthetic::SyntheticConfig::new(42)).map_err(|e| e.to_string())?;
    let desk_b = synthetic::generate(&synthetic::SyntheticConfig::new(42)).map_err(|e| e.to_string())?;
    check(desk_a == desk_b, || "synthetic generation differs between runs".into())?;
    let desk_path = desk_a.write(&tmp.path().join("desk_inputs")).map_err(|e| e.to_string())?;
    let mut files = 0;
    for (name, path) in [("case1", case1), ("desk", desk_path)] {
        let mut trees = Vec::new();
        for k in 0..2 {
            let scenario = Scenario::load(&path).map_err(|e| e.to_string())?;
            let out = tmp.path().join(format!("{name}_{k}"));
            sim::run_scenario(&scenario, Some(&out)).map_err(|e| e.to_string())?;
            trees.push(read_tree(&out));
        }
        check(!trees[0].is_empty(), || format!("{name}: no output"))?;
        check(trees[0] == trees[1], || {
            let diff: Vec<_> = trees[0].keys().filter(|k| trees[0].get(*k) != trees[1].get(*k)).collect();
            format!("{name}: differing files {diff:?}")
        })?;
        files += trees[0].len();
    }
    Ok(format!("{files} output files byte-identical across repeated runs"))
}

fn main() {
    let ms = Duration::from_millis;
    let mut desk = None;
    let results = [
        ("IR-LRP tau/alpha regression", timed(Some(ms(1)), criterion_1)),
        ("optimal-alpha regression", timed(Some(ms(1)), criterion_2)),
        ("round-trip fidelity", timed(Some(ms(100)), criterion_3)),
        ("day-ahead baseline", timed(None, criterion_4)),
        ("customer QP oracle suite", timed(Some(ms(5000)), criterion_5)),
        ("LinDistFlow oracle suite", timed(Some(ms(5000)), criterion_6)),
        ("desk-scale congestion", timed(Some(ms(60_000)), || criterion_7(&mut desk))),
        ("cost ordering", timed(None, || criterion_8(&desk))),
        ("determinism", timed(None, criterion_9)),
    ];
    let mut failed = 0;
    for (i, (name, o)) in results.iter().enumerate() {
        let budget = o.budget.map(|b| format!(" / budget {b:?}")).unwrap_or_default();
        let status = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {} {status}: {name}: {} [{:?}{budget}]", i + 1, o.detail, o.elapsed);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
