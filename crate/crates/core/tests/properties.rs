use std::f64::consts::PI;

use cusp_torsion::hyp_geometry::{covering_rho, dist_h, lift, CuspPoint, DeckIndex, HPoint};
use cusp_torsion::metrics_flattenings::FlatteningFamily;
use cusp_torsion::profile_dsl::{parse, RadialPoint};
use proptest::prelude::*;

/// Random profile source built from smooth, everywhere-defined pieces on `0 < r < 1`.
fn profile_source() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        Just("r".to_string()),
        Just("w".to_string()),
        Just("ln(r)".to_string()),
        (-3.0f64..3.0).prop_map(|c| format!("{c:?}")),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} + {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} - {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a})*({b})")),
            inner.clone().prop_map(|a| format!("-({a})")),
            inner.clone().prop_map(|a| format!("psi({a})")),
            inner.clone().prop_map(|a| format!("chi({a})")),
            inner.clone().prop_map(|a| format!("sqrt(1 + ({a})^2)")),
            inner.prop_map(|a| format!("ln(2 + psi({a}))")),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn hyperbolic_distance_is_a_deck_invariant_metric(
        x1 in -10.0f64..10.0, y1 in 0.01f64..20.0,
        x2 in -10.0f64..10.0, y2 in 0.01f64..20.0,
        x3 in -10.0f64..10.0, y3 in 0.01f64..20.0,
        k in -50i64..50,
    ) {
        let (a, b, c) = (HPoint::new(x1, y1).unwrap(), HPoint::new(x2, y2).unwrap(), HPoint::new(x3, y3).unwrap());
        let ab = dist_h(a, b);
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - dist_h(b, a)).abs() <= 1e-12 * (1.0 + ab));
        let shifted = dist_h(a.translate(DeckIndex(k)), b.translate(DeckIndex(k)));
        prop_assert!((ab - shifted).abs() <= 1e-9 * (1.0 + ab));
        prop_assert!(dist_h(a, c) <= ab + dist_h(b, c) + 1e-9);
    }

    #[test]
    fn lift_inverts_the_covering(r in 1e-6f64..0.999, arg in -PI..PI) {
        let u = CuspPoint::polar(r, arg).unwrap();
        let z = lift(u).unwrap();
        prop_assert!((0.0..2.0 * PI).contains(&z.x));
        let back = covering_rho(z);
        prop_assert!((back.u_re - u.u_re).abs() < 1e-12 && (back.u_im - u.u_im).abs() < 1e-12);
    }

    #[test]
    fn normalized_profiles_reparse_to_the_same_function(src in profile_source(), w in -2.0f64..3.0) {
        let e = parse(&src).unwrap();
        let again = parse(&e.normalized()).unwrap();
        prop_assert_eq!(again.normalized(), e.normalized());
        let (a, b) = (e.eval_w(w).unwrap(), again.eval_w(w).unwrap());
        prop_assert!(a == b || (a.is_nan() && b.is_nan()));
    }

    #[test]
    fn profile_jets_agree_with_values_and_differences(src in profile_source(), w in -1.5f64..2.5) {
        let e = parse(&src).unwrap();
        let jet = e.eval_jet_w(w).unwrap();
        prop_assert_eq!(jet.v, e.eval_w(w).unwrap());
        let h = 1e-5;
        let (p, m) = (e.eval_w(w + h).unwrap(), e.eval_w(w - h).unwrap());
        let fd1 = (p - m) / (2.0 * h);
        let scale = 1.0 + jet.v.abs() + jet.d1.abs() + jet.d2.abs();
        prop_assert!((fd1 - jet.d1).abs() <= 1e-5 * scale, "{} vs {}", fd1, jet.d1);
    }

    #[test]
    fn parser_never_panics(src in "[-+*/^() a-z0-9.,]{0,40}") {
        let _ = parse(&src);
    }

    #[test]
    fn flattening_sources_match_direct_evaluation(
        theta in 1e-6f64..0.049, w in -1.0f64..4.0, n in -3i32..=0, tight in any::<bool>(),
    ) {
        let fam = if tight {
            FlatteningFamily::tight(theta, n).unwrap()
        } else {
            FlatteningFamily::anomaly(theta).unwrap()
        };
        let (lc, ln) = fam.profile_sources();
        let p = RadialPoint::from_w(w);
        let (lc, ln) = (parse(&lc).unwrap(), parse(&ln).unwrap());
        let direct = fam.log_conformal_at(&p);
        prop_assert!((lc.eval_at(&p).unwrap() - direct).abs() <= 1e-9 * (1.0 + direct.abs()));
        let norm = fam.log_norm_at(&p);
        prop_assert!((ln.eval_at(&p).unwrap() - norm).abs() <= 1e-9 * (1.0 + norm.abs()));
    }

    #[test]
    fn anomaly_family_is_poincare_outside_and_euclidean_inside(theta in 1e-8f64..0.049, a in 0.0f64..1.0) {
        let fam = FlatteningFamily::anomaly(theta).unwrap();
        // ln r in [ln θ^{1/2}, 0) and in (ln θ − 5, ln θ].
        let outer = RadialPoint { ln_r: a * 0.5 * theta.ln() - 1e-3, r: 0.0 };
        prop_assert!(fam.log_conformal_at(&outer).abs() < 1e-14);
        let inner_r = theta * (-5.0 * a).exp();
        prop_assert!((fam.metric_density(inner_r).unwrap() - 1.0).abs() < 1e-10);
    }
}
