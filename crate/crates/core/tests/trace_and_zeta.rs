use std::f64::consts::PI;

use cusp_torsion::reg_trace::{
    cusp_measure_integral, gaussian_cusp_bound, geometric_grid, regularized_trace,
    regularized_trace_perp, small_time_coeffs, trace_curve, HeatDataProvider, LocalCoefficients,
    TailModel,
};
use cusp_torsion::special_functions::dedekind_eta;
use cusp_torsion::zeta_torsion::{
    analytic_torsion, mellin_zeta_prime0, mellin_zeta_prime0_fn, reference_ln_t_tz, selberg_zeta,
    LengthSpectrum,
};

fn single(lambda: f64) -> (HeatDataProvider, HeatDataProvider) {
    let p = HeatDataProvider::spectral(
        vec![lambda],
        1.0,
        LocalCoefficients::Custom {
            a_minus1: 0.0,
            a_0: 1.0,
        },
    )
    .unwrap();
    (p, HeatDataProvider::reference_sphere(0))
}

#[test]
fn single_eigenvalue_family_from_samples() {
    for lambda in [0.5, 1.0, 2.0, 5.0] {
        let (pm, pp) = single(lambda);
        let grid = geometric_grid(1e-6, 60.0 / lambda, 1200).unwrap();
        let curve = trace_curve(&pm, &pp, &grid).unwrap();
        let z = mellin_zeta_prime0(&curve).unwrap();
        assert!(
            (z.zeta_prime_0 + lambda.ln()).abs() < 1e-6,
            "lambda = {lambda}: {z:?}"
        );
    }
}

#[test]
fn unit_eigenvalue_is_exactly_zero() {
    let tail = TailModel {
        mu: 1.0,
        c: 1.0,
        t_fit: 1.0,
        validated: true,
    };
    let z = mellin_zeta_prime0_fn(&|t: f64| (-t).exp(), 0.0, 1.0, &tail).unwrap();
    assert!(z.zeta_prime_0.abs() < 1e-8, "{z:?}");
}

#[test]
fn square_torus_matches_eta_oracle() {
    let torus = HeatDataProvider::flat_torus(0.0);
    let (am1, a0) = small_time_coeffs(&torus, &HeatDataProvider::reference_sphere(0)).unwrap();
    assert!((am1 - 1.0 / (2.0 * PI)).abs() < 1e-15);
    assert_eq!(a0, -1.0);
    let tail = TailModel {
        mu: torus.mu,
        c: 4.0,
        t_fit: 1.0,
        validated: true,
    };
    let core = torus.core.clone();
    let z = mellin_zeta_prime0_fn(&move |t| core.eval(t).unwrap() - 1.0, am1, a0, &tail).unwrap();
    let eta = dedekind_eta(1.0).unwrap().value;
    // ζ_□'(0) = ln 2 · ζ_Δ(0) + ζ_Δ'(0), with ζ_Δ(0) = −1 and ζ_Δ'(0) = −ln(η(i)⁴).
    let oracle = -2f64.ln() - 4.0 * eta.ln();
    assert!(
        (z.zeta_prime_0 - oracle).abs() < 1e-4,
        "{} vs {oracle}",
        z.zeta_prime_0
    );
    assert!((z.zeta_prime_0 - 0.361_541_100_435_726_6).abs() < 1e-8);
}

#[test]
fn sampled_torus_curve() {
    let torus = HeatDataProvider::flat_torus(0.0);
    let pp = HeatDataProvider::reference_sphere(0);
    let grid = geometric_grid(1e-5, 3.0, 1500).unwrap();
    let curve = trace_curve(&torus, &pp, &grid).unwrap();
    assert!(curve.tail_model.unwrap().validated);
    let z = mellin_zeta_prime0(&curve).unwrap();
    assert!(
        (z.zeta_prime_0 - 0.361_541_100_435_726_6).abs() < 1e-4,
        "{z:?}"
    );
}

#[test]
fn three_copies_of_reference_cancel() {
    let pp = HeatDataProvider::reference_sphere(0);
    let pm = pp.triplicate();
    for t in [1e-3, 0.1, 1.0, 10.0] {
        for eta in [0.1, 0.05] {
            let v = regularized_trace(&pm, &pp, t, eta).unwrap();
            assert!(v.abs() < 1e-8, "t = {t}, eta = {eta}: {v}");
        }
    }
    let (am1, a0) = small_time_coeffs(&pm, &pp).unwrap();
    assert!(am1.abs() < 1e-14 && a0.abs() < 1e-14);
    let torsion_grid = geometric_grid(1e-3, 30.0, 40).unwrap();
    let curve = trace_curve(&pm, &pp, &torsion_grid).unwrap();
    let t = analytic_torsion(&pm, &pp, &curve).unwrap();
    assert!(t.zeta.zeta_prime_0.abs() < 1e-8, "{t:?}");
    let ratio = t.ln_torsion - 3.0 * reference_ln_t_tz(0).unwrap();
    assert!(ratio.abs() < 1e-8);
}

#[test]
fn eta_independence_with_a_perturbed_core() {
    // One reference copy plus a distinct core: the cusp terms do not cancel across copies.
    let pp = HeatDataProvider::reference_sphere(0);
    let mut pm = pp.triplicate();
    pm.core = cusp_torsion::reg_trace::CoreTrace::Function(std::sync::Arc::new(|t: f64| {
        7.0 * (-0.3 * t).exp() + 1.0 / t
    }));
    let t = 1.0;
    let vals: Vec<f64> = [0.1, 0.05, 0.02]
        .iter()
        .map(|&e| regularized_trace(&pm, &pp, t, e).unwrap())
        .collect();
    for v in &vals[1..] {
        assert!((v - vals[0]).abs() < 1e-8, "{vals:?}");
    }
}

#[test]
fn zero_mode_relation_is_exact() {
    let pm =
        HeatDataProvider::spectral(vec![0.0, 0.0, 1.5, 3.0], 2.0, LocalCoefficients::Flat).unwrap();
    let pp = HeatDataProvider::reference_sphere(0);
    for t in [0.1, 1.0, 5.0] {
        let a = regularized_trace(&pm, &pp, t, 0.1).unwrap();
        let b = regularized_trace_perp(&pm, &pp, t, 0.1).unwrap();
        assert_eq!(a - b, 2.0);
        let direct = (-1.5 * t).exp() + (-3.0 * t).exp();
        assert!((b - direct).abs() < 1e-12);
    }
}

#[test]
fn planted_eigenvalue_breaks_the_gap_claim() {
    let mu = 1.0;
    let good =
        HeatDataProvider::spectral(vec![mu, 2.0 * mu], 1.0, LocalCoefficients::Flat).unwrap();
    let pp = HeatDataProvider::reference_sphere(0);
    let grid = geometric_grid(0.5, 20.0, 30).unwrap();
    let c = trace_curve(&good, &pp, &grid).unwrap();
    assert!(c.tail_model.unwrap().validated);
    for (t, v) in &c.samples {
        assert!((v - (-mu * t).exp() - (-2.0 * mu * t).exp()).abs() < 1e-12);
    }
    let mut bad =
        HeatDataProvider::spectral(vec![mu / 2.0, mu, 2.0 * mu], 1.0, LocalCoefficients::Flat)
            .unwrap();
    bad.mu = mu;
    let c = trace_curve(&bad, &pp, &grid).unwrap();
    assert!(!c.tail_model.unwrap().validated);
    assert!(mellin_zeta_prime0(&c).is_err());
}

#[test]
fn spectral_scaling_shifts_log_torsion() {
    let base = [0.7, 1.3, 2.2];
    let c = 3.0;
    let run = |scale: f64| {
        let ev: Vec<f64> = base.iter().map(|l| l * scale).collect();
        let pm = HeatDataProvider::spectral(
            ev,
            1.0,
            LocalCoefficients::Custom {
                a_minus1: 0.0,
                a_0: 3.0,
            },
        )
        .unwrap();
        let pp = HeatDataProvider::reference_sphere(0);
        let grid = geometric_grid(1e-6, 80.0, 1500).unwrap();
        let curve = trace_curve(&pm, &pp, &grid).unwrap();
        analytic_torsion(&pm, &pp, &curve).unwrap()
    };
    let (t1, tc) = (run(1.0), run(c));
    // ζ_c'(0) = ζ'(0) − ln c · ζ(0), so ln T shifts by ln c · ζ(0)/2.
    let expected = c.ln() * t1.zeta.zeta_0() / 2.0;
    assert!((tc.ln_torsion - t1.ln_torsion - expected).abs() < 1e-6);
    assert!(tc.torsion > 0.0);
}

#[test]
fn selberg_k_tail_certificate() {
    let spectrum = LengthSpectrum::new(vec![2.0], vec![1]).unwrap();
    let a = selberg_zeta(2.0, &spectrum, 50, 1e-12).unwrap();
    let b = selberg_zeta(2.0, &spectrum, 100, 1e-12).unwrap();
    let direct: f64 = (0..200)
        .map(|k| (-(-(2.0 + k as f64) * 2.0f64).exp()).ln_1p())
        .sum();
    assert!((a.ln_value - direct).abs() < 1e-12);
    assert!((a.value - b.value).abs() <= a.k_tail_bound);
    let spectrum = LengthSpectrum::new(vec![1.0, 1.5, 2.5], vec![2, 1, 3]).unwrap();
    let small = selberg_zeta(0.3 + 1.0, &spectrum, 5, 1.0).unwrap();
    let doubled = selberg_zeta(1.3, &spectrum, 10, 1.0).unwrap();
    assert!((small.value - doubled.value).abs() <= small.k_tail_bound);
    let mut prev = 0.0;
    for s in [1.5, 2.0, 4.0, 8.0] {
        let v = selberg_zeta(s, &spectrum, 60, 1e-10).unwrap().value;
        assert!(v > prev && v < 1.0);
        prev = v;
    }
}

#[test]
fn gaussian_cusp_integral() {
    let eps = (-std::f64::consts::E).exp();
    let b = gaussian_cusp_bound(eps, 1.0, 0.5).unwrap();
    // In w = ln|ln r| the integral is 4π ∫_1^∞ e^{−w²/t} dw.
    let oracle = {
        let mut f = |w: f64| 4.0 * PI * (-w * w / 0.5).exp();
        cusp_torsion::quad::integrate(
            &mut f,
            1.0,
            12.0,
            cusp_torsion::quad::Tolerance::new(1e-15, 1e-13),
        )
        .value
    };
    assert!((b.integral - oracle).abs() < 1e-10 * oracle);
    assert!(b.ratio <= 1.0);
    let r: Vec<f64> = [0.5, 0.1, 0.02]
        .iter()
        .map(|&t| gaussian_cusp_bound(1e-3, 1.0, t).unwrap().integral)
        .collect();
    assert!(r[2] / r[0] < 1e-10);
    let fin = cusp_measure_integral(0.1, 0.5).unwrap();
    assert!((fin - 4.0 * PI * (-(0.1f64).ln()).powf(-0.5) / 0.5).abs() < 1e-8);
    assert!(cusp_measure_integral(0.1, 1.0).is_err());
}
