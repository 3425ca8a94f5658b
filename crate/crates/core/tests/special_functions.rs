mod common;

use common::oracle;
use echo_core::stats::{chi2_survival, normal_survival};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn chi2_survival_matches_oracle(x in 0.0f64..1000.0, k in 1u32..=200) {
        let got = chi2_survival(x, k).unwrap();
        let want = oracle::chi2_sf(x, k);
        prop_assert!((got - want).abs() <= 1e-10, "x={} k={} got={} want={}", x, k, got, want);
    }

    #[test]
    fn normal_survival_matches_oracle(z in -8.0f64..8.0) {
        prop_assert!((normal_survival(z) - oracle::normal_sf(z)).abs() <= 1e-12);
    }
}

#[test]
fn table_p_value_rounds() {
    let p = chi2_survival(44.327, 32).unwrap();
    assert!((p - 0.07223).abs() < 1e-4, "{p}");
    assert_eq!(format!("{p:.3}"), "0.072");
    assert_eq!(chi2_survival(0.0, 7).unwrap(), 1.0);
}
