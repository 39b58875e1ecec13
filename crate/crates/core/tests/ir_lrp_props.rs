mod common;

use common::*;
use lrp_core::customer::{self, CustomerSpec, Metering};
use lrp_core::ir_lrp::{self, EtaTable, TauRange};
use lrp_core::{LrpSchedule, PriceSchedule};
use proptest::prelude::*;

fn distinct_prices(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.02..0.6f64, n).prop_filter("prices must be distinct", |b| {
        let mut s = b.clone();
        s.sort_by(f64::total_cmp);
        s.windows(2).all(|w| w[0] < w[1])
    })
}

fn range() -> impl Strategy<Value = TauRange> {
    (0.01..1.0f64, 0.1..3.0f64).prop_map(|(lo, width)| TauRange { tau_min: lo, tau_max: lo + width })
}

proptest! {
    #[test]
    fn slopes_are_a_permutation_of_scaled_tau(
        beta in prop::collection::vec(0.02..0.6f64, 2..48),
        r in range(),
        eta in 1e-5..1e-2f64,
    ) {
        let b = PriceSchedule::hourly(beta.clone()).unwrap();
        let alpha = ir_lrp::compute(&b, r, eta).unwrap();
        let tau = ir_lrp::build_tau(beta.len(), r.tau_min, r.tau_max).unwrap();
        let mut want: Vec<f64> = tau.values().iter().map(|t| t * eta).collect();
        let mut got = alpha.alpha().to_vec();
        want.sort_by(f64::total_cmp);
        got.sort_by(f64::total_cmp);
        prop_assert_eq!(got, want);
        prop_assert_eq!(tau.values()[0], r.tau_min);
        prop_assert_eq!(*tau.values().last().unwrap(), r.tau_max);
    }

    #[test]
    fn dearer_periods_get_smaller_slopes(beta in distinct_prices(24), r in range(), eta in 1e-5..1e-2f64) {
        let alpha = ir_lrp::compute(&PriceSchedule::hourly(beta.clone()).unwrap(), r, eta).unwrap();
        let a = alpha.alpha();
        for s in 0..24 {
            for t in 0..24 {
                if beta[s] > beta[t] {
                    prop_assert!(a[s] < a[t], "beta {} > {} but alpha {} >= {}", beta[s], beta[t], a[s], a[t]);
                }
            }
        }
    }

    #[test]
    fn doubling_eta_doubles_every_slope(beta in prop::collection::vec(0.02..0.6f64, 2..48), r in range(), eta in 1e-5..1e-2f64) {
        let b = PriceSchedule::hourly(beta).unwrap();
        let one = ir_lrp::compute(&b, r, eta).unwrap();
        let two = ir_lrp::compute(&b, r, 2.0 * eta).unwrap();
        for (x, y) in one.alpha().iter().zip(two.alpha()) {
            prop_assert_eq!(2.0 * x, *y);
        }
    }

    #[test]
    fn slopes_pull_load_out_of_the_cheapest_period(
        beta in distinct_prices(24),
        fill in 0.05..0.95f64,
        eta in 1e-4..1e-2f64,
    ) {
        let spec = CustomerSpec {
            total_energy_kwh: 24.0 * 20.0 * fill,
            consume_bound_kw: 20.0,
            inject_bound_kw: 0.0,
            export_energy_kwh: 0.0,
            local_limit_kw: 20.0,
            base_load: vec![],
            metering: Metering::Separate,
        };
        let b = PriceSchedule::hourly(beta.clone()).unwrap();
        let cheapest = (0..24).min_by(|&s, &t| beta[s].total_cmp(&beta[t])).unwrap();
        let flat = customer::optimize_day_ahead(&b, &spec).unwrap();
        let alpha = ir_lrp::compute(&b, TauRange::SINGLE_CUSTOMER, eta).unwrap();
        let lrp = customer::optimize(&LrpSchedule::new(alpha, b).unwrap(), &spec).unwrap();
        prop_assert!(lrp.profile.x()[cheapest] <= flat.profile.x()[cheapest] + 1e-9);
    }
}

#[test]
fn reference_multipliers() {
    let b = PriceSchedule::hourly(BETA.to_vec()).unwrap();
    let tau = ir_lrp::build_tau(24, 0.1, 1.5).unwrap();
    let assigned = ir_lrp::assign_inverse_rank(&b, &tau).unwrap();
    let alpha = ir_lrp::compute(&b, TauRange::SINGLE_CUSTOMER, 0.001).unwrap();
    for h in 0..24 {
        assert!((assigned[h] - IR_TAU[h]).abs() <= 0.005, "hour {h}");
        assert!((alpha.alpha()[h] * 1e4 - IR_ALPHA_E4[h]).abs() <= 0.005, "hour {h}");
    }
}

#[test]
fn equal_prices_rank_earlier_period_as_dearer() {
    let b = PriceSchedule::hourly(vec![0.2, 0.2, 0.1]).unwrap();
    let tau = ir_lrp::build_tau(3, 1.0, 3.0).unwrap();
    assert_eq!(ir_lrp::assign_inverse_rank(&b, &tau).unwrap(), vec![1.0, 2.0, 3.0]);
}

#[test]
fn eta_table_accepts_both_layouts() {
    let wrapped = EtaTable::from_json(r#"{"classes":[{"class_name":"office","max_load_kw":100,"eta":0.001}]}"#).unwrap();
    let bare = EtaTable::from_json(r#"[{"class_name":"office","max_load_kw":100,"eta":0.001}]"#).unwrap();
    assert_eq!(wrapped, bare);
    assert_eq!(wrapped.get("office").unwrap().eta, 0.001);
    assert!(wrapped.get("warehouse").is_err());
    assert!(EtaTable::from_json(r#"[{"class_name":"a","max_load_kw":1,"eta":0}]"#).is_err());
}
