use std::f64::consts::PI;

use cusp_torsion::heat_kernel::{
    build_parametrix, cusp_kernel, deck_tail_bound, diagonal_small_time, exact_kernel_h_n0,
    van_vleck, CALIBRATED_SIGMA,
};
use cusp_torsion::hyp_geometry::{dist_h, lift, rho_weight, CuspPoint, DeckIndex};
use cusp_torsion::quad::{integrate_breaks, Tolerance};
use proptest::prelude::*;

fn mass(t: f64) -> f64 {
    let rmax = t + 40.0 * t.sqrt() + 10.0;
    let mut f = |r: f64| 2.0 * PI * exact_kernel_h_n0(t, r) * r.sinh();
    let pts: Vec<f64> = (0..=40).map(|k| rmax * k as f64 / 40.0).collect();
    integrate_breaks(&mut f, &pts, Tolerance::new(1e-13, 1e-12)).value
}

#[test]
fn exact_kernel_has_unit_mass() {
    for t in [0.1, 1.0, 10.0] {
        let m = mass(t);
        assert!((m - 1.0).abs() < 1e-6, "t = {t}: mass {m}");
    }
}

#[test]
fn small_time_gaussian_ratio() {
    let t = 1e-3;
    for k in 0..=10 {
        let r = 0.1 * k as f64;
        let ratio =
            exact_kernel_h_n0(t, r) * 2.0 * PI * t * (r * r / (2.0 * CALIBRATED_SIGMA * t)).exp()
                / van_vleck(r);
        assert!((ratio - 1.0).abs() < 1e-3, "r = {r}: {ratio}");
    }
}

#[test]
fn calibrated_sigma_is_recovered() {
    // Fit σ from the log-ratio at two radii, with the van Vleck factor removed.
    let t = 1e-3;
    let k = |r: f64| (exact_kernel_h_n0(t, r) / van_vleck(r)).ln();
    let (r1, r2) = (0.2f64, 0.4f64);
    let sigma = (r2 * r2 - r1 * r1) / (2.0 * t * (k(r1) - k(r2)));
    assert!((sigma - CALIBRATED_SIGMA).abs() < 1e-3, "{sigma}");
}

fn slope(k: usize) -> f64 {
    let par = build_parametrix(0, k).unwrap();
    let ts = [0.02f64, 0.04, 0.08, 0.16];
    let pts: Vec<(f64, f64)> = ts
        .iter()
        .map(|&t| {
            (
                t.ln(),
                (exact_kernel_h_n0(t, 0.0) - par.kernel(t, 0.0)).abs().ln(),
            )
        })
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[test]
fn parametrix_defect_slopes() {
    for k in 1..=3 {
        let s = slope(k);
        eprintln!("k = {k}: slope {s}");
        assert!(s >= k as f64 - 0.1, "k = {k}: slope {s}");
    }
}

#[test]
fn cusp_kernel_rotation_and_symmetry() {
    let r = (-2f64).exp();
    let vals: Vec<_> = [0.0, PI / 3.0, PI]
        .iter()
        .map(|&a| {
            let u = CuspPoint::polar(r, a).unwrap();
            cusp_kernel(0.7, u, u, 0, 1e-12).unwrap()
        })
        .collect();
    for v in &vals[1..] {
        assert!((v.value - vals[0].value).abs() <= 2.0 * vals[0].trunc_err + 1e-13);
    }
    let a = CuspPoint::polar(0.2, 0.3).unwrap();
    let b = CuspPoint::polar(0.05, 2.0).unwrap();
    let ab = cusp_kernel(0.4, a, b, 0, 1e-13).unwrap().value;
    let ba = cusp_kernel(0.4, b, a, 0, 1e-13).unwrap().value;
    assert!((ab - ba).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]
    #[test]
    fn extended_deck_tail_is_within_certificate(
        t in 0.05f64..3.0, r1 in 0.001f64..0.9, r2 in 0.001f64..0.9,
        a1 in 0.0f64..2.0 * PI, a2 in 0.0f64..2.0 * PI,
    ) {
        let u1 = CuspPoint::polar(r1, a1).unwrap();
        let u2 = CuspPoint::polar(r2, a2).unwrap();
        let v = cusp_kernel(t, u1, u2, 0, 1e-9).unwrap();
        let z1 = lift(u1).unwrap();
        let z2 = lift(u2).unwrap();
        let j0 = ((z1.x - z2.x) / (2.0 * PI)).round() as i64;
        let i = v.trunc_terms as i64;
        let mut extra = 0.0;
        for m in (i + 1)..=(10 * i) {
            extra += exact_kernel_h_n0(t, dist_h(z1, z2.translate(DeckIndex(j0 + m))));
            extra += exact_kernel_h_n0(t, dist_h(z1, z2.translate(DeckIndex(j0 - m))));
        }
        prop_assert!(extra <= v.trunc_err, "extra {} > {}", extra, v.trunc_err);
        prop_assert!(v.value > 0.0);
        prop_assert!(deck_tail_bound(t, z1, z2, v.trunc_terms) < 1e-9);
    }
}

#[test]
fn small_time_coefficients_are_point_independent() {
    let a = diagonal_small_time(CuspPoint::polar((-2f64).exp(), 0.0).unwrap(), 0, 2).unwrap();
    let b = diagonal_small_time(CuspPoint::polar((-5f64).exp(), 1.0).unwrap(), 0, 2).unwrap();
    assert!((a[0] - 1.0 / (2.0 * PI)).abs() < 1e-14);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-10);
    }
    let m = diagonal_small_time(CuspPoint::polar(0.1, 0.0).unwrap(), -1, 0).unwrap();
    assert!((m[1] - a[1] + 1.0 / (4.0 * PI)).abs() < 1e-11);
}

#[test]
fn weighted_kernel_refuses_unvalidated_times() {
    let u = CuspPoint::polar(0.1, 0.0).unwrap();
    assert!(cusp_kernel(1.0, u, u, -1, 1e-8).is_err());
    let ok = cusp_kernel(1e-3, u, u, -1, 1e-6).unwrap();
    assert!(ok.trunc_err < 1e-6);
    assert!(ok.value > 0.0);
}

#[test]
fn moser_envelope_on_held_out_grid() {
    // Fit C with c = 1/4 on a training grid, then assert on a held-out grid.
    let env = |t: f64, r: f64| {
        let u = CuspPoint::polar(r, 0.0).unwrap();
        cusp_kernel(t, u, u, 0, 1e-10).unwrap().value * t * (-0.25 * t).exp()
            / rho_weight(u).powi(2)
    };
    let mut c: f64 = 0.0;
    for t in [0.1, 0.5, 2.0] {
        for r in [0.5, 0.1, 1e-3] {
            c = c.max(env(t, r));
        }
    }
    for t in [0.2, 1.0, 3.0] {
        for r in [0.3, 0.02, 1e-4] {
            assert!(env(t, r) <= 2.0 * c, "t = {t}, r = {r}");
        }
    }
}

#[test]
fn semigroup_on_the_cusp() {
    let t = 0.5;
    let u = CuspPoint::polar((-2f64).exp(), 0.0).unwrap();
    let lhs = cusp_torsion_semigroup(t, u);
    let rhs = cusp_kernel(2.0 * t, u, u, 0, 1e-12).unwrap().value;
    assert!((lhs - rhs).abs() < 1e-4 * rhs, "{lhs} vs {rhs}");
}

fn cusp_torsion_semigroup(t: f64, u: CuspPoint) -> f64 {
    let nx = 48;
    let mut f = |w: f64| {
        // w = ln y of the lifted point, measure dx dy / y² = e^{−w} dx dw.
        let y = w.exp();
        let mut s = 0.0;
        for j in 0..nx {
            let x = 2.0 * PI * j as f64 / nx as f64;
            let v = CuspPoint::polar((-y).exp(), x).unwrap();
            let k = cusp_kernel(t, u, v, 0, 1e-13).unwrap().value;
            s += k * k;
        }
        s * 2.0 * PI / nx as f64 * (-w).exp()
    };
    let pts: Vec<f64> = (0..=16).map(|k| -4.0 + 8.0 * k as f64 / 16.0).collect();
    integrate_breaks(&mut f, &pts, Tolerance::new(1e-9, 1e-8)).value
}
