//! Heat kernels of the Kodaira Laplacian `□ = ½Δ_LB` (twisted by `ω^n`) on ℍ and
//! on the model cusp 𝔻* = ℍ/⟨U⟩.
//!
//! For `n = 0` the kernel on ℍ is the classical Laplace–Beltrami kernel at time
//! `t/2`, evaluated from McKean's integral. For general `n` a finite-order
//! parametrix is built from the radial transport recursion. Cusp kernels are deck
//! sums with a certified closed-form tail.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::cheb::Cheb;
use crate::error::{domain, Error, Result};
use crate::hyp_geometry::{dist_h, lift, orbit_count_within, CuspPoint, DeckIndex, HPoint};
use crate::metrics_flattenings::SmoothStep;
use crate::quad::{gauss_legendre, integrate_breaks, KahanSum, Tolerance};

/// Gaussian scale: kernels carry `exp(−d²/(2σt))`. Calibrated against the exact
/// `n = 0` kernel at small time and frozen.
pub const CALIBRATED_SIGMA: f64 = 1.0;

/// Highest parametrix order served.
pub const MAX_PARAMETRIX_ORDER: usize = 6;

/// Parametrix order used by cusp kernels for `n ≠ 0`.
pub const CUSP_PARAMETRIX_ORDER: usize = 3;

/// Safety factor applied to defect constants measured at `n = 0`.
const DEFECT_SAFETY: f64 = 10.0;

/// Chebyshev degree of radial profiles in `s = ρ²` on `[0, 1]`.
const PROFILE_DEGREE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Generator {
    Kodaira,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConvention {
    pub generator: Generator,
    pub sigma: f64,
}

impl Default for KernelConvention {
    fn default() -> Self {
        Self {
            generator: Generator::Kodaira,
            sigma: CALIBRATED_SIGMA,
        }
    }
}

/// `sinh(x)/x`, accurate near 0.
fn sinhc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 + x * x / 6.0
    } else {
        x.sinh() / x
    }
}

/// `ρ coth ρ`, accurate near 0.
fn rho_coth(rho: f64) -> f64 {
    if rho.abs() < 1e-4 {
        1.0 + rho * rho / 3.0
    } else {
        rho / rho.tanh()
    }
}

/// Van Vleck factor `(ρ / sinh ρ)^{1/2}`.
pub fn van_vleck(rho: f64) -> f64 {
    (1.0 / sinhc(rho)).sqrt()
}

/// Heat kernel of `Δ_LB` on ℍ at time `tau` and distance `rho`:
/// `√2 e^{−τ/4}(4πτ)^{−3/2} ∫_ρ^∞ s e^{−s²/4τ}(cosh s − cosh ρ)^{−1/2} ds`,
/// integrated after `s = ρ + x²`, which removes the endpoint singularity.
pub fn laplace_beltrami_kernel(tau: f64, rho: f64) -> f64 {
    assert!(tau > 0.0 && rho >= 0.0, "kernel needs tau > 0 and rho >= 0");
    // The factor e^{−ρ²/4τ} is pulled out; the remaining Gaussian is below e^{−800} past x_max.
    let x2max = -rho + (rho * rho + 3200.0 * tau).sqrt();
    let xmax = x2max.sqrt();
    let mut f = |x: f64| {
        let x2 = x * x;
        let rel = (2.0 * rho * x2 + x2 * x2) / (4.0 * tau);
        (rho + x2) * (-rel).exp() * 2.0 / ((rho + 0.5 * x2).sinh() * sinhc(0.5 * x2)).sqrt()
    };
    let brk = [0.0, xmax / 16.0, xmax / 8.0, xmax / 4.0, xmax / 2.0, xmax];
    let q = integrate_breaks(&mut f, &brk, Tolerance::new(1e-300, 1e-13));
    let pref =
        2f64.sqrt() * (-tau / 4.0 - rho * rho / (4.0 * tau)).exp() / (4.0 * PI * tau).powf(1.5);
    pref * q.value
}

/// Kernel of `exp(−t□)` on functions on ℍ: the Laplace–Beltrami kernel at time `t/2`.
pub fn exact_kernel_h_n0(t: f64, r: f64) -> f64 {
    laplace_beltrami_kernel(0.5 * t, r)
}

/// Exact `n = 0` kernel at a fixed time, tabulated as piecewise Chebyshev series of
/// `ln k(t, ρ) + ρ²/(2t)` on `[0, ρ_max]`; beyond `ρ_max` the kernel is below `1e-280`.
#[derive(Debug, Clone)]
pub struct ExactKernelTable {
    pub t: f64,
    rho_max: f64,
    panels: Vec<Cheb>,
}

const TABLE_PANELS: usize = 32;
const TABLE_DEGREE: usize = 20;

impl ExactKernelTable {
    pub fn new(t: f64) -> Self {
        assert!(t > 0.0, "kernel table needs t > 0");
        // Largest radius where the kernel is still a normal number well above underflow.
        let mut rho_max = (1400.0 * t).sqrt() + 2.0;
        while exact_kernel_h_n0(t, rho_max) < 1e-280 {
            rho_max *= 0.95;
        }
        let width = rho_max / TABLE_PANELS as f64;
        let panels = (0..TABLE_PANELS)
            .map(|p| {
                let (a, b) = (p as f64 * width, (p + 1) as f64 * width);
                Cheb::from_fn(a, b, TABLE_DEGREE, |r| {
                    exact_kernel_h_n0(t, r).ln() + r * r / (2.0 * t)
                })
            })
            .collect();
        Self { t, rho_max, panels }
    }

    /// Shared table for `t`, built on first use.
    pub fn cached(t: f64) -> Arc<Self> {
        static CACHE: OnceLock<Mutex<HashMap<u64, Arc<ExactKernelTable>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        if let Some(tab) = cache
            .lock()
            .expect("kernel cache poisoned")
            .get(&t.to_bits())
        {
            return Arc::clone(tab);
        }
        let tab = Arc::new(Self::new(t));
        cache
            .lock()
            .expect("kernel cache poisoned")
            .insert(t.to_bits(), Arc::clone(&tab));
        tab
    }

    pub fn eval(&self, rho: f64) -> f64 {
        if rho >= self.rho_max {
            return 0.0;
        }
        let width = self.rho_max / TABLE_PANELS as f64;
        let p = ((rho / width) as usize).min(TABLE_PANELS - 1);
        (self.panels[p].eval(rho) - rho * rho / (2.0 * self.t)).exp()
    }
}

/// Radial transport profiles `Φ_0..Φ_k` of the weight-`n` parametrix
/// `(2πt)^{−1} e^{−ρ²/(2σt)} Σ_j Φ_j(ρ) t^j`, stored as Chebyshev series in `s = ρ²`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParametrixCoeffs {
    pub n: i32,
    pub order: usize,
    pub profiles: Vec<Cheb>,
    /// `Φ_j(0)`.
    pub diagonal: Vec<f64>,
    pub convention: KernelConvention,
}

/// Radial potential of the twisted operator at `s = ρ²`: in the radial gauge the
/// weight-`n` Kodaira Laplacian is `½(−Δ_LB + n² tanh²(ρ/2) − n)` on radial sections.
fn twist_potential(n: i32, s: f64) -> f64 {
    let nf = f64::from(n);
    let th = (0.5 * s.sqrt()).tanh();
    nf * nf * th * th - nf
}

pub fn build_parametrix(n: i32, k: usize) -> Result<ParametrixCoeffs> {
    if k > MAX_PARAMETRIX_ORDER {
        return Err(Error::Unsupported(format!(
            "parametrix order {k} exceeds the supported maximum {MAX_PARAMETRIX_ORDER}"
        )));
    }
    let nodes = Cheb::nodes(0.0, 1.0, PROFILE_DEGREE);
    let phi0 = |s: f64| van_vleck(s.sqrt());
    let mut profiles = vec![Cheb::from_fn(0.0, 1.0, PROFILE_DEGREE, phi0)];
    let (gx, gw) = gauss_legendre(40);
    for j in 1..=k {
        let prev = &profiles[j - 1];
        let d1 = prev.derivative();
        let d2 = d1.derivative();
        // Radial Laplacian in s: Δf = 2F' + 4sF'' + 2ρ coth ρ F'.
        let source = Cheb::from_fn(0.0, 1.0, PROFILE_DEGREE, |s| {
            let lap =
                2.0 * d1.eval(s) + 4.0 * s * d2.eval(s) + 2.0 * rho_coth(s.sqrt()) * d1.eval(s);
            (lap - twist_potential(n, s) * prev.eval(s)) / (2.0 * phi0(s))
        });
        let vals: Vec<f64> = nodes
            .iter()
            .map(|&s| {
                let mut acc = 0.0;
                for (x, w) in gx.iter().zip(&gw) {
                    // Map Gauss nodes from [−1, 1] to [0, 1].
                    let xx = 0.5 * (x + 1.0);
                    acc += 0.5 * w * xx.powi(j as i32 - 1) * source.eval(s * xx * xx);
                }
                phi0(s) * acc
            })
            .collect();
        profiles.push(Cheb::from_values(0.0, 1.0, &vals));
    }
    let diagonal = profiles.iter().map(|p| p.eval(0.0)).collect();
    Ok(ParametrixCoeffs {
        n,
        order: k,
        profiles,
        diagonal,
        convention: KernelConvention::default(),
    })
}

impl ParametrixCoeffs {
    /// `Φ_i(ρ)` for `ρ ≤ 1`.
    pub fn profile(&self, i: usize, rho: f64) -> f64 {
        self.profiles[i].eval((rho * rho).min(1.0))
    }

    /// Parametrix value at distance `rho`, cut off by `ψ(ρ²)` beyond `ρ = 1/√2`.
    pub fn kernel(&self, t: f64, rho: f64) -> f64 {
        let s = rho * rho;
        let cut = SmoothStep::Psi.eval(s);
        if cut == 0.0 {
            return 0.0;
        }
        let mut series = 0.0;
        for p in self.profiles.iter().rev() {
            series = series * t + p.eval(s);
        }
        cut * (-s / (2.0 * self.convention.sigma * t)).exp() * series / (2.0 * PI * t)
    }

    /// Small-time coefficients `a_{−1}..a_{order−1}` of the diagonal `Σ a_j t^j`.
    pub fn diagonal_coefficients(&self) -> Vec<f64> {
        self.diagonal.iter().map(|d| d / (2.0 * PI)).collect()
    }
}

/// Measured `n = 0` diagonal defect constants `C_k = max |k_exact − k_par,k| / t^k`.
fn defect_constants() -> &'static [f64; MAX_PARAMETRIX_ORDER + 1] {
    static CELL: OnceLock<[f64; MAX_PARAMETRIX_ORDER + 1]> = OnceLock::new();
    CELL.get_or_init(|| {
        let par = build_parametrix(0, MAX_PARAMETRIX_ORDER).expect("order within range");
        let ts = [0.02, 0.05, 0.1, 0.2];
        let exact: Vec<f64> = ts.iter().map(|&t| exact_kernel_h_n0(t, 0.0)).collect();
        let mut out = [0.0; MAX_PARAMETRIX_ORDER + 1];
        for (k, slot) in out.iter_mut().enumerate() {
            *slot = ts
                .iter()
                .zip(&exact)
                .map(|(&t, &e)| {
                    let mut series = 0.0;
                    for j in (0..=k).rev() {
                        series = series * t + par.diagonal[j];
                    }
                    (e - series / (2.0 * PI * t)).abs() / t.powi(k as i32)
                })
                .fold(0.0, f64::max);
        }
        out
    })
}

/// Upper bound on the parametrix defect of order `k` at time `t`, including the safety factor.
pub fn parametrix_defect_bound(k: usize, t: f64) -> f64 {
    DEFECT_SAFETY * defect_constants()[k.min(MAX_PARAMETRIX_ORDER)] * t.powi(k as i32)
}

/// Kernel value on 𝔻* with its truncation certificate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CuspKernelValue {
    pub t: f64,
    pub u1: CuspPoint,
    pub u2: CuspPoint,
    pub value: f64,
    pub trunc_err: f64,
    pub trunc_terms: u64,
}

/// Bound on `e^{−z²}`-type tails: `erfc(z) ≤ e^{−z²} min(1, 1/(z√π))` for `z ≥ 0`.
fn erfc_upper(z: f64) -> f64 {
    if z <= 0.0 {
        2.0
    } else {
        (-z * z).exp() * (1.0 / (z * PI.sqrt())).min(1.0)
    }
}

/// Certified bound on the deck images `|m| > i` (offsets counted from the image
/// nearest `z1`) of the `n = 0` kernel at time `t`.
///
/// Uses `k_Δ(τ, ρ) ≤ e^{−τ/4 − ρ²/4τ}/(4πτ)`, the horizontal lower bound
/// `d_m ≥ 2 asinh((2π|m| − π)/(2√(y₁y₂)))` and an integral comparison.
pub fn deck_tail_bound(t: f64, z1: HPoint, z2: HPoint, i: u64) -> f64 {
    assert!(i >= 1, "deck tail bound starts at one image per side");
    let tau = 0.5 * t;
    let c = 2.0 * (z1.y * z2.y).sqrt();
    let d_i = 2.0 * ((2.0 * PI * (i as f64 - 0.5)) / c).asinh();
    let z0 = (d_i - tau) / (2.0 * tau.sqrt());
    c * erfc_upper(z0) / (8.0 * PI.powf(1.5) * tau.sqrt())
}

fn nearest_image(z1: HPoint, z2: HPoint) -> i64 {
    ((z1.x - z2.x) / (2.0 * PI)).round() as i64
}

/// Deck sum of a radial kernel over `|m| ≤ i` around the nearest image, in fixed order.
fn deck_sum(z1: HPoint, z2: HPoint, i: u64, kernel: impl Fn(f64) -> f64) -> f64 {
    let j0 = nearest_image(z1, z2);
    let mut acc = KahanSum::default();
    acc.add(kernel(dist_h(z1, z2.translate(DeckIndex(j0)))));
    for m in 1..=i as i64 {
        acc.add(kernel(dist_h(z1, z2.translate(DeckIndex(j0 + m)))));
        acc.add(kernel(dist_h(z1, z2.translate(DeckIndex(j0 - m)))));
    }
    acc.value()
}

/// Smallest `i ≥ 1` whose deck tail bound is below `eps`.
pub fn deck_terms_for(t: f64, z1: HPoint, z2: HPoint, eps: f64) -> u64 {
    let mut hi = 1u64;
    while deck_tail_bound(t, z1, z2, hi) >= eps {
        hi *= 2;
        assert!(
            hi < 1 << 40,
            "deck tail bound did not reach the requested tolerance"
        );
    }
    let mut lo = hi / 2;
    if lo == 0 || deck_tail_bound(t, z1, z2, lo) < eps {
        return lo.max(1);
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if deck_tail_bound(t, z1, z2, mid) < eps {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Kernel of `exp(−t□)` on the model cusp for weight `n`.
///
/// `n = 0` sums the exact kernel over deck images with a certified tail. For
/// `n ≠ 0` the order-3 parametrix is summed (it has compact support, so the deck
/// sum is finite) and `trunc_err` is the parametrix defect bound times the number
/// of contributing images; times where that exceeds `eps` are refused.
pub fn cusp_kernel(
    t: f64,
    u1: CuspPoint,
    u2: CuspPoint,
    n: i32,
    eps: f64,
) -> Result<CuspKernelValue> {
    if !(t > 0.0 && eps > 0.0) {
        return domain(format!(
            "cusp kernel needs t > 0 and eps > 0, got t = {t}, eps = {eps}"
        ));
    }
    let z1 = lift(u1)?;
    let z2 = lift(u2)?;
    if n == 0 {
        let i = deck_terms_for(t, z1, z2, eps);
        let table = ExactKernelTable::cached(t);
        let value = deck_sum(z1, z2, i, |d| table.eval(d));
        return Ok(CuspKernelValue {
            t,
            u1,
            u2,
            value,
            trunc_err: deck_tail_bound(t, z1, z2, i),
            trunc_terms: i,
        });
    }
    let k = CUSP_PARAMETRIX_ORDER;
    let images = orbit_count_within(z1, z2, 1.0).max(1);
    let err = parametrix_defect_bound(k, t) * images as f64;
    if err >= eps {
        let t_max = (eps / (images as f64 * parametrix_defect_bound(k, 1.0))).powf(1.0 / k as f64);
        return Err(Error::Range(format!(
            "weight {n} cusp kernel is validated for t < {t_max:.6e} at eps = {eps:e}; got t = {t}"
        )));
    }
    let par = build_parametrix(n, k)?;
    // Images beyond distance 1 lie outside the parametrix support.
    let reach = (1.0 / (2.0 * (z1.y * z2.y).sqrt())).sinh() * 2.0 * (z1.y * z2.y).sqrt();
    let i = ((reach / (2.0 * PI)).ceil() as u64 + 1).max(1);
    let value = deck_sum(z1, z2, i, |d| par.kernel(t, d));
    Ok(CuspKernelValue {
        t,
        u1,
        u2,
        value,
        trunc_err: err,
        trunc_terms: i,
    })
}

/// Small-time coefficients `a_{−1}..a_k` of the cusp diagonal. They do not depend
/// on the point: deck images only add terms that are exponentially small in `t`.
pub fn diagonal_small_time(u: CuspPoint, n: i32, k: usize) -> Result<Vec<f64>> {
    lift(u)?;
    if k + 1 > MAX_PARAMETRIX_ORDER {
        return Err(Error::Unsupported(format!(
            "small-time coefficients are available up to a_{}",
            MAX_PARAMETRIX_ORDER - 1
        )));
    }
    Ok(build_parametrix(n, k + 1)?.diagonal_coefficients())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transport_diagonals_match_curvature_values() {
        let p0 = build_parametrix(0, 3).unwrap();
        assert!((p0.diagonal[0] - 1.0).abs() < 1e-14);
        assert!((p0.diagonal[1] + 1.0 / 6.0).abs() < 1e-11);
        assert!((p0.diagonal[2] - 1.0 / 60.0).abs() < 1e-9);
        let p1 = build_parametrix(-1, 1).unwrap();
        assert_eq!(p1.diagonal[0], p0.diagonal[0]);
        assert!((p1.diagonal[1] - p0.diagonal[1] + 0.5).abs() < 1e-11);
    }

    #[test]
    fn table_matches_direct_evaluation() {
        for t in [1e-3, 0.5, 10.0] {
            let tab = ExactKernelTable::new(t);
            for k in 0..50 {
                let r = 0.37 * k as f64 * t.sqrt();
                let (a, b) = (tab.eval(r), exact_kernel_h_n0(t, r));
                assert!(
                    (a - b).abs() <= 1e-12 * b + 1e-300,
                    "t = {t}, r = {r}: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn order_limit() {
        assert!(build_parametrix(0, 7).is_err());
    }

    #[test]
    fn diagonal_leading_term() {
        let t = 1e-4;
        assert!((t * exact_kernel_h_n0(t, 0.0) - 1.0 / (2.0 * PI)).abs() < 1e-4);
    }

    #[test]
    fn exact_kernel_decreases_in_distance() {
        let mut prev = f64::INFINITY;
        for k in 0..20 {
            let v = exact_kernel_h_n0(1.0, 0.25 * k as f64);
            assert!(v > 0.0 && v < prev);
            prev = v;
        }
    }
}
