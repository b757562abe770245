use cusp_torsion::chern_anomaly::{
    anomaly_rhs_bgs, anomaly_rhs_cusp, bott_chern_deg2, c1_radial, ch_similarity_check,
    compact_perturbation_rhs, cusp_limit_band, ChartGrid, MetricData, RhsSettings, XiMetric,
};
use cusp_torsion::metrics_flattenings::{
    anomaly_flattening, poincare_descriptors, tight_flattening, MetricChart, MetricDescriptor,
    NormChart, NormDescriptor,
};
use cusp_torsion::profile_dsl::parse;

/// Single-chart descriptors from profile sources.
fn surface(
    log_conformal: &str,
    log_norm: &str,
    h_prime: [f64; 2],
) -> (MetricDescriptor, NormDescriptor) {
    (
        MetricDescriptor {
            charts: vec![MetricChart {
                id: 0,
                radius: 1.0,
                log_conformal: parse(log_conformal).unwrap(),
                h_prime_at_zero: h_prime,
            }],
            interior_volume: 0.0,
        },
        NormDescriptor {
            charts: vec![NormChart {
                id: 0,
                log_norm: parse(log_norm).unwrap(),
            }],
        },
    )
}

fn xi(rank: usize, src: &str) -> XiMetric {
    XiMetric {
        rank,
        charts: vec![parse(src).unwrap()],
    }
}

/// Conformal bump supported in `w ∈ (0.5, 1.5)`.
const BUMP: &str = "0.3*psi(2*(ln(abs(ln(r))) - 1))";
/// Bundle metric ratio: zero for `w ≤ 0.5`, constant `0.2` for `w ≥ 0.75`.
const XI_STEP: &str = "0.2*chi(ln(abs(ln(r))))";

fn flattened(theta: f64, extra: &str) -> (MetricDescriptor, NormDescriptor) {
    let (m, n) = anomaly_flattening(theta).unwrap();
    let lc = format!("{} + {extra}", m.charts[0].log_conformal.source());
    let ln = format!("{} - ({extra})", n.charts[0].log_norm.source());
    surface(&lc, &ln, [1.0, 0.0])
}

#[test]
fn flat_norm_has_no_curvature() {
    let grid = ChartGrid::uniform(-0.3, 6.0, 0.5).unwrap();
    let c = c1_radial(&parse("1.7").unwrap(), &grid).unwrap();
    assert!(c.values.iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn poincare_norm_curvature_mass() {
    for eps in [1e-2f64, 1e-5] {
        let w0 = (-eps.ln()).ln();
        let grid = ChartGrid::uniform(w0, 40.0, 0.25).unwrap();
        let c = c1_radial(&parse("ln(abs(ln(r)))").unwrap(), &grid).unwrap();
        let v = c.integrate(&grid).unwrap();
        assert!((v - 1.0 / -eps.ln()).abs() < 1e-10, "{v}");
    }
}

#[test]
fn curvature_is_linear() {
    let grid = ChartGrid::uniform(0.0, 5.0, 0.5).unwrap();
    let (a, b) = ("ln(abs(ln(r)))", "0.4*psi(ln(r)/-20)");
    let ca = c1_radial(&parse(a).unwrap(), &grid).unwrap();
    let cb = c1_radial(&parse(b).unwrap(), &grid).unwrap();
    let cab = c1_radial(&parse(&format!("{a} + {b}")).unwrap(), &grid).unwrap();
    let sum = ca.plus(&cb).unwrap();
    for (x, y) in cab.values.iter().zip(&sum.values) {
        assert!((x - y).abs() < 1e-9);
    }
}

#[test]
fn bott_chern_degree_two_is_stable_under_refinement() {
    let (_, np) = poincare_descriptors(1.0);
    let (_, nt) = tight_flattening(1e-3, 0).unwrap();
    let grid = ChartGrid::uniform((-0.9f64.ln()).ln(), 40.0, 0.05).unwrap();
    let bc = |g: &ChartGrid| {
        bott_chern_deg2(&np.charts[0].log_norm, &nt.charts[0].log_norm, g)
            .unwrap()
            .integrate(g)
            .unwrap()
    };
    let (a, b) = (bc(&grid), bc(&grid.refine()));
    assert!(a.is_finite());
    assert!(((a - b) / b).abs() < 1e-7, "{a} vs {b}");
}

#[test]
fn identical_data_gives_zero() {
    let (m, n) = poincare_descriptors(1.0);
    let x = xi(2, "0");
    let s = MetricData {
        metric: &m,
        norm: &n,
        xi: &x,
    };
    let rep = anomaly_rhs_cusp(&s, &s, -1, &RhsSettings::cusp()).unwrap();
    assert_eq!(rep.value, 0.0);
    let (mf, nf) = anomaly_flattening(1e-3).unwrap();
    let sf = MetricData {
        metric: &mf,
        norm: &nf,
        xi: &x,
    };
    assert_eq!(
        anomaly_rhs_bgs(&sf, &sf, 0, &RhsSettings::smooth())
            .unwrap()
            .value,
        0.0
    );
}

#[test]
fn bgs_is_a_cocycle() {
    let x1 = xi(2, "0");
    let x2 = xi(2, XI_STEP);
    let x3 = xi(2, "0.1*psi(ln(abs(ln(r))) - 1)");
    let (m1, n1) = anomaly_flattening(1e-2).unwrap();
    let (m2, n2) = anomaly_flattening(1e-3).unwrap();
    let (m3, n3) = flattened(1e-4, BUMP);
    let s1 = MetricData {
        metric: &m1,
        norm: &n1,
        xi: &x1,
    };
    let s2 = MetricData {
        metric: &m2,
        norm: &n2,
        xi: &x2,
    };
    let s3 = MetricData {
        metric: &m3,
        norm: &n3,
        xi: &x3,
    };
    let set = RhsSettings::smooth();
    let r12 = anomaly_rhs_bgs(&s1, &s2, -1, &set).unwrap().value;
    let r23 = anomaly_rhs_bgs(&s2, &s3, -1, &set).unwrap().value;
    let r13 = anomaly_rhs_bgs(&s1, &s3, -1, &set).unwrap().value;
    println!("bgs: {r12} + {r23} = {} vs {r13}", r12 + r23);
    assert!((r12 + r23 - r13).abs() < 1e-10);
}

#[test]
fn cusp_rhs_is_a_cocycle() {
    let x1 = xi(1, "0");
    let x2 = xi(1, XI_STEP);
    let (m1, n1) = surface("0", "ln(abs(ln(r)))", [1.0, 0.0]);
    let (m2, n2) = surface(BUMP, &format!("ln(abs(ln(r))) - ({BUMP})"), [1.0, 0.0]);
    let (m3, n3) = surface("0", "ln(abs(ln(r)))", [2.0, 0.0]);
    let s1 = MetricData {
        metric: &m1,
        norm: &n1,
        xi: &x1,
    };
    let s2 = MetricData {
        metric: &m2,
        norm: &n2,
        xi: &x2,
    };
    let s3 = MetricData {
        metric: &m3,
        norm: &n3,
        xi: &x1,
    };
    let set = RhsSettings {
        r_outer: Some(0.3),
        ..RhsSettings::cusp()
    };
    let r12 = anomaly_rhs_cusp(&s1, &s2, -1, &set).unwrap();
    let r23 = anomaly_rhs_cusp(&s2, &s3, -1, &set).unwrap();
    let r13 = anomaly_rhs_cusp(&s1, &s3, -1, &set).unwrap();
    println!("cusp: {r12:?}\n{r23:?}\n{r13:?}");
    assert!((r12.value + r23.value - r13.value).abs() < 1e-10);
}

#[test]
fn compact_conformal_change_agrees_with_flattened_path() {
    let x = xi(1, "0");
    let x0 = xi(1, XI_STEP);
    let (m, n) = surface("0", "ln(abs(ln(r)))", [1.0, 0.0]);
    let (m0, n0) = surface(BUMP, &format!("ln(abs(ln(r))) - ({BUMP})"), [1.0, 0.0]);
    let cusp = anomaly_rhs_cusp(
        &MetricData {
            metric: &m,
            norm: &n,
            xi: &x,
        },
        &MetricData {
            metric: &m0,
            norm: &n0,
            xi: &x0,
        },
        -1,
        &RhsSettings::cusp(),
    )
    .unwrap();
    let (mf, nf) = flattened(1e-6, "0");
    let (mf0, nf0) = flattened(1e-6, BUMP);
    let bgs = anomaly_rhs_bgs(
        &MetricData {
            metric: &mf,
            norm: &nf,
            xi: &x,
        },
        &MetricData {
            metric: &mf0,
            norm: &nf0,
            xi: &x0,
        },
        -1,
        &RhsSettings::smooth(),
    )
    .unwrap();
    println!("cusp {cusp:?}\nbgs {bgs:?}");
    assert!((cusp.value - bgs.value).abs() < 1e-10);
}

#[test]
fn band_integral_approaches_germ_limit_monotonically() {
    let mut last = 0.0;
    for theta in [1e-3, 1e-4, 1e-5] {
        let b = cusp_limit_band(theta, [2.0, 0.0], 1, 0).unwrap();
        println!("{b:?}");
        assert!(b.ratio > last && b.ratio < 1.0);
        last = b.ratio;
    }
}

#[test]
fn flat_bundle_gives_no_compact_perturbation() {
    let (m, n) = poincare_descriptors(1.0);
    let (mf, nf) = tight_flattening(1e-2, -1).unwrap();
    let flat = xi(3, "0.5");
    let v = compact_perturbation_rhs(&m, &mf, &n, &nf, &flat, -1, &RhsSettings::smooth()).unwrap();
    assert_eq!(v.value, 0.0);
}

#[test]
fn compact_perturbation_depends_only_on_ratios() {
    // Two base metrics differing away from the bands, flattened by the same ratio profiles.
    let (mf_src, nf_src) = tight_flattening(1e-2, -1).unwrap();
    let lf = mf_src.charts[0].log_conformal.source().to_string();
    let nfs = nf_src.charts[0].log_norm.source().to_string();
    let (m, n) = surface("0", "ln(abs(ln(r)))", [1.0, 0.0]);
    let (mf, nf) = surface(&lf, &nfs, [1.0, 0.0]);
    let (m2, n2) = surface(BUMP, &format!("ln(abs(ln(r))) - ({BUMP})"), [1.0, 0.0]);
    let (mf2, nf2) = surface(
        &format!("{lf} + {BUMP}"),
        &format!("{nfs} - ({BUMP})"),
        [1.0, 0.0],
    );
    let bundle = xi(2, "0.3*g_step(ln(abs(ln(r))))");
    let set = RhsSettings::smooth();
    let a = compact_perturbation_rhs(&m, &mf, &n, &nf, &bundle, -1, &set).unwrap();
    let b = compact_perturbation_rhs(&m2, &mf2, &n2, &nf2, &bundle, -1, &set).unwrap();
    println!("{} {}", a.value, b.value);
    assert!(a.value.abs() > 1e-3);
    assert!((a.value - b.value).abs() < 1e-10);
}

#[test]
fn omega_and_twisted_omega_forms_agree() {
    let (m, n) = poincare_descriptors(1.0);
    let (m0, n0) = surface(BUMP, &format!("ln(abs(ln(r))) - ({BUMP})"), [1.0, 0.0]);
    let grid = ChartGrid::uniform(-0.5, 40.0, 0.5).unwrap();
    let rep = ch_similarity_check(&m, &n, &m0, &n0, &grid).unwrap();
    println!("{rep:?}");
    assert!(rep.identity1_residual < 1e-10);
    assert!(rep.identity3_deep < 1e-6);
    assert!((rep.identity2_flux - 0.5).abs() < 1e-3);
}
