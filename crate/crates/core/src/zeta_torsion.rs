//! Zeta regularization through the Mellin transform of a regularized trace,
//! analytic torsion, Quillen norms, Takhtajan–Zograf torsion and the Selberg zeta
//! function.
//!
//! For `θ(t) ~ A_{−1}/t + A_0` at small time and exponential decay at large time,
//! `ζ'(0) = F_0 − A_{−1} + γA_0` with
//! `F_0 = ∫_0^1 (θ − A_{−1}/t − A_0) dt/t + ∫_1^∞ θ dt/t`.

use std::f64::consts::{LN_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::quad::{integrate_breaks, KahanSum, Tolerance};
use crate::reg_trace::{reference_weight, HeatDataProvider, TailModel, TraceCurve};
use crate::special_functions::{
    c_k, euler_gamma, exp_integral_e1, zeta_prime_minus1, HighPrecReal,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZetaResult {
    pub zeta_prime_0: f64,
    #[serde(rename = "F0")]
    pub f0: f64,
    #[serde(rename = "A_minus1")]
    pub a_minus1: f64,
    #[serde(rename = "A_0")]
    pub a_0: f64,
    pub quad_err: f64,
}

impl ZetaResult {
    pub(crate) fn assemble(f0: f64, a_minus1: f64, a_0: f64, quad_err: f64) -> Self {
        let zeta_prime_0 = f0 - a_minus1 + euler_gamma().value * a_0;
        Self {
            zeta_prime_0,
            f0,
            a_minus1,
            a_0,
            quad_err,
        }
    }

    /// `ζ(0)`, which equals `A_0`.
    pub fn zeta_0(&self) -> f64 {
        self.a_0
    }

    /// The constant term with the literal signs `F_0 + A_{−1} − Γ'(1)A_0`, for comparison output only.
    pub fn literal_constant_term(&self) -> f64 {
        self.f0 + self.a_minus1 + euler_gamma().value * self.a_0
    }
}

/// Composite Simpson rule on nonuniform nodes; a trailing odd panel uses the
/// three-point quadratic through the last nodes.
fn simpson_nonuniform(x: &[f64], f: &[f64]) -> (f64, f64) {
    let n = x.len();
    if n < 2 {
        return (0.0, 0.0);
    }
    let mut simpson = KahanSum::default();
    let mut trap = KahanSum::default();
    for i in 0..n - 1 {
        trap.add(0.5 * (x[i + 1] - x[i]) * (f[i] + f[i + 1]));
    }
    if n == 2 {
        return (trap.value(), 0.0);
    }
    let mut i = 0;
    while i + 2 < n {
        let h0 = x[i + 1] - x[i];
        let h1 = x[i + 2] - x[i + 1];
        let h = h0 + h1;
        simpson.add(
            h / 6.0
                * ((2.0 - h1 / h0) * f[i]
                    + h * h / (h0 * h1) * f[i + 1]
                    + (2.0 - h0 / h1) * f[i + 2]),
        );
        i += 2;
    }
    if i + 1 < n {
        // Last panel [x_{n−2}, x_{n−1}] from the quadratic through the final three nodes.
        let (a, b, c) = (x[n - 3], x[n - 2], x[n - 1]);
        let h0 = b - a;
        let h1 = c - b;
        let alpha = (2.0 * h1 * h1 + 3.0 * h0 * h1) / (6.0 * (h0 + h1));
        let beta = (h1 * h1 + 3.0 * h0 * h1) / (6.0 * h0);
        let eta = h1 * h1 * h1 / (6.0 * h0 * (h0 + h1));
        simpson.add(alpha * f[n - 1] + beta * f[n - 2] - eta * f[n - 3]);
    }
    let s = simpson.value();
    (s, (s - trap.value()).abs())
}

/// Tail `∫_{t_last}^∞ θ dt/t` for `θ ≈ v_last e^{−μ(t − t_last)}` and its certified bound `C E₁(μ t_last)`.
fn tail_integral(v_last: f64, t_last: f64, tail: &TailModel) -> (f64, f64) {
    let e1 = exp_integral_e1(tail.mu * t_last);
    let value = v_last * (tail.mu * t_last).exp() * e1;
    let bound = tail.c * e1;
    (value, bound + value.abs())
}

/// `ζ'(0)` from a sampled trace curve.
pub fn mellin_zeta_prime0(curve: &TraceCurve) -> Result<ZetaResult> {
    let tail = curve.tail_model.filter(|m| m.validated).ok_or_else(|| {
        Error::Capability("trace curve carries no validated large-time tail model".into())
    })?;
    let s = &curve.samples;
    if s.len() < 3 {
        return domain("Mellin transform needs at least three samples");
    }
    let (t_min, t_max) = (s[0].0, s[s.len() - 1].0);
    if !(t_min < 1.0 && t_max > 1.0) {
        return domain(format!(
            "samples must straddle t = 1, got [{t_min}, {t_max}]"
        ));
    }
    let (am1, a0) = (curve.a_minus1, curve.a_0);
    let xs: Vec<f64> = s.iter().map(|p| p.0.ln()).collect();
    let gs: Vec<f64> = s.iter().map(|&(t, v)| v - am1 / t - a0).collect();
    let (body, body_err) = simpson_nonuniform(&xs, &gs);
    // g = O(t) below t_min, so ∫_0^{t_min} g dt/t ≈ g(t_min).
    let head = gs[0];
    // Restore the subtraction on [1, t_max].
    let restore = am1 * (1.0 - 1.0 / t_max) + a0 * t_max.ln();
    let (tail_v, tail_err) = tail_integral(s[s.len() - 1].1, t_max, &tail);
    let f0 = head + body + restore + tail_v;
    Ok(ZetaResult::assemble(
        f0,
        am1,
        a0,
        body_err + 0.5 * head.abs() + tail_err,
    ))
}

/// Accuracy accepted from the adaptive Mellin integral.
const MELLIN_FN_TOL: f64 = 1e-8;

/// `ζ'(0)` from a trace available as a function, integrated adaptively in `ln t`.
pub fn mellin_zeta_prime0_fn(
    theta: &(dyn Fn(f64) -> f64 + Sync),
    a_minus1: f64,
    a_0: f64,
    tail: &TailModel,
) -> Result<ZetaResult> {
    let t_lo: f64 = 1e-7;
    // Beyond t_hi the tail model is below 1e-17 relative to C.
    let t_hi = ((tail.c.max(1.0)).ln() + 40.0) / tail.mu;
    let tol = Tolerance::new(1e-12, 1e-12).with_budget(4000);
    let mut low = |x: f64| {
        let t = x.exp();
        theta(t) - a_minus1 / t - a_0
    };
    let lo_pts: Vec<f64> = (0..=8)
        .map(|k| t_lo.ln() * (1.0 - k as f64 / 8.0))
        .collect();
    let q1 = integrate_breaks(&mut low, &lo_pts, tol);
    let head = low(t_lo.ln());
    let mut high = |x: f64| theta(x.exp());
    let hi_pts: Vec<f64> = (0..=8).map(|k| t_hi.ln() * k as f64 / 8.0).collect();
    let q2 = integrate_breaks(&mut high, &hi_pts, tol);
    let (tail_v, tail_err) = tail_integral(theta(t_hi), t_hi, tail);
    let f0 = head + q1.value + q2.value + tail_v;
    let err = q1.abs_err + q2.abs_err + 0.5 * head.abs() + tail_err;
    // Cancellation in θ − A_{−1}/t limits the attainable accuracy near t_lo.
    if !(q1.converged && q2.converged) && err > MELLIN_FN_TOL {
        return Err(Error::Tolerance {
            achieved: err,
            requested: MELLIN_FN_TOL,
        });
    }
    Ok(ZetaResult::assemble(f0, a_minus1, a_0, err))
}

/// `ln Z'_P(1) = 4ζ'(−1) + ln 2π + (10/9) ln 2` for the thrice-punctured sphere.
pub fn ln_zp_thrice_punctured() -> HighPrecReal {
    let zp = zeta_prime_minus1();
    HighPrecReal::new(
        4.0 * zp.value + (2.0 * PI).ln() + 10.0 / 9.0 * LN_2,
        4.0 * zp.abs_err + 1e-15,
    )
}

/// Takhtajan–Zograf torsion `exp(−c_{−n} χ/2) · Z`, where `Z = Z'(1)` for `n = 0`
/// and `Z(1 − n)` for `n < 0`.
pub fn t_tz(n: i32, z_value: f64, euler_char: f64) -> Result<f64> {
    if n > 0 {
        return domain(format!("Takhtajan–Zograf torsion needs n <= 0, got {n}"));
    }
    if !(z_value > 0.0 && z_value.is_finite()) {
        return domain(format!(
            "Selberg value must be positive and finite, got {z_value}"
        ));
    }
    Ok((-c_k(n.unsigned_abs()).value * euler_char / 2.0).exp() * z_value)
}

/// `ln T_TZ(P, n)` for the reference sphere; only `n = 0` has a closed form.
pub fn reference_ln_t_tz(n: i32) -> Result<f64> {
    if n != 0 {
        return Err(Error::Capability(format!(
            "no closed form for the reference Selberg value at n = {n}; supply it explicitly"
        )));
    }
    // χ(P) = −1.
    Ok(t_tz(0, ln_zp_thrice_punctured().value.exp(), -1.0)?.ln())
}

/// Analytic torsion with its ingredients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Torsion {
    pub zeta: ZetaResult,
    pub ln_t_tz_reference: f64,
    pub weight: f64,
    pub ln_torsion: f64,
    pub torsion: f64,
}

/// `T = exp(−ζ'(0)/2) · T_TZ(P, n)^{m·rank/3}` with the reference factor given in log form.
pub fn analytic_torsion_with(
    pm: &HeatDataProvider,
    curve: &TraceCurve,
    ln_t_tz_reference: f64,
) -> Result<Torsion> {
    let zeta = mellin_zeta_prime0(curve)?;
    let weight = reference_weight(pm);
    let ln_torsion = -0.5 * zeta.zeta_prime_0 + weight * ln_t_tz_reference;
    if !ln_torsion.is_finite() {
        return Err(Error::Finiteness(format!(
            "log torsion is not finite: {ln_torsion}"
        )));
    }
    Ok(Torsion {
        zeta,
        ln_t_tz_reference,
        weight,
        ln_torsion,
        torsion: ln_torsion.exp(),
    })
}

pub fn analytic_torsion(
    pm: &HeatDataProvider,
    pp: &HeatDataProvider,
    curve: &TraceCurve,
) -> Result<Torsion> {
    if pm.n != pp.n {
        return domain("providers must share the twist");
    }
    let ln_tz = if pm.m == 0 {
        0.0
    } else {
        reference_ln_t_tz(pp.n)?
    };
    analytic_torsion_with(pm, curve, ln_tz)
}

/// `exp(−ζ'(0))`, the torsion normalization of compact surfaces.
pub fn ray_singer_torsion(zeta: &ZetaResult) -> f64 {
    (-zeta.zeta_prime_0).exp()
}

/// Closed geodesic lengths with multiplicities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthSpectrum {
    pub lengths: Vec<f64>,
    pub multiplicities: Vec<u32>,
}

impl LengthSpectrum {
    pub fn new(lengths: Vec<f64>, multiplicities: Vec<u32>) -> Result<Self> {
        let s = Self {
            lengths,
            multiplicities,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lengths.len() != self.multiplicities.len() {
            return Err(Error::Input(
                "lengths and multiplicities differ in length".into(),
            ));
        }
        if self.lengths.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return domain("geodesic lengths must be positive and finite");
        }
        if self.lengths.windows(2).any(|w| w[1] < w[0]) {
            return domain("geodesic lengths must be sorted ascending");
        }
        if self.multiplicities.contains(&0) {
            return domain("multiplicities must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelbergValue {
    pub value: f64,
    pub ln_value: f64,
    /// Certified bound on `|Z_{k ≤ k_max} − Z_{all k}|` for the listed lengths.
    pub k_tail_bound: f64,
    /// Truncation of the length spectrum is not certified.
    pub length_truncation: String,
    pub l_max: f64,
}

/// `Π_γ Π_{k=0}^{k_max} (1 − e^{−(s+k)l(γ)})` with a certified bound on the omitted `k`.
pub fn selberg_zeta(
    s: f64,
    spectrum: &LengthSpectrum,
    k_max: u32,
    tail_tol: f64,
) -> Result<SelbergValue> {
    if !(s > 1.0) {
        return domain(format!("Selberg product needs s > 1, got {s}"));
    }
    spectrum.validate()?;
    let mut ln_z = KahanSum::default();
    let mut ln_tail = 0.0;
    for (&l, &mult) in spectrum.lengths.iter().zip(&spectrum.multiplicities) {
        let m = f64::from(mult);
        for k in 0..=k_max {
            ln_z.add(m * (-(-(s + f64::from(k)) * l).exp()).ln_1p());
        }
        // Σ_{k > k_max} |ln(1 − x_k)| ≤ x_{k_max+1} / ((1 − e^{−l})(1 − x_{k_max+1})).
        let x = (-(s + f64::from(k_max) + 1.0) * l).exp();
        ln_tail += m * x / ((1.0 - (-l).exp()) * (1.0 - x));
    }
    let ln_value = ln_z.value();
    let value = ln_value.exp();
    let k_tail_bound = value * ln_tail.exp_m1();
    if k_tail_bound > tail_tol {
        return Err(Error::Tolerance {
            achieved: k_tail_bound,
            requested: tail_tol,
        });
    }
    Ok(SelbergValue {
        value,
        ln_value,
        k_tail_bound,
        length_truncation: "uncontrolled beyond l_max".into(),
        l_max: spectrum.lengths.last().copied().unwrap_or(0.0),
    })
}

/// `ln det` of a symmetric positive-definite matrix by Cholesky.
pub fn ln_det_spd(a: &[Vec<f64>]) -> Result<f64> {
    let n = a.len();
    if a.iter().any(|row| row.len() != n) {
        return Err(Error::Input("Gram matrix must be square".into()));
    }
    let mut l = vec![vec![0.0; n]; n];
    let mut ln_det = 0.0;
    for i in 0..n {
        for j in 0..=i {
            if (a[i][j] - a[j][i]).abs() > 1e-12 * (a[i][j].abs() + a[j][i].abs()).max(1e-300) {
                return domain("Gram matrix must be symmetric");
            }
            let sum = a[i][j]
                - l[i][..j]
                    .iter()
                    .zip(&l[j][..j])
                    .map(|(x, y)| x * y)
                    .sum::<f64>();
            if i == j {
                if !(sum > 0.0) {
                    return domain("Gram matrix must be positive definite");
                }
                l[i][i] = sum.sqrt();
                ln_det += 2.0 * l[i][i].ln();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    Ok(ln_det)
}

/// L² norm on the determinant line from the Gram matrices of `H⁰` and `H¹`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetLineNorm {
    pub log_l2: f64,
    pub gram_h0: Vec<Vec<f64>>,
    pub gram_h1: Vec<Vec<f64>>,
}

impl DetLineNorm {
    /// `log_l2 = −½ ln det G₀ + ½ ln det G₁`: the `H⁰` top wedge enters inverted.
    pub fn new(gram_h0: Vec<Vec<f64>>, gram_h1: Vec<Vec<f64>>) -> Result<Self> {
        let log_l2 = -0.5 * ln_det_spd(&gram_h0)? + 0.5 * ln_det_spd(&gram_h1)?;
        Ok(Self {
            log_l2,
            gram_h0,
            gram_h1,
        })
    }

    /// Norm of a disjoint union: block-diagonal Gram matrices.
    pub fn disjoint_union(&self, other: &Self) -> Result<Self> {
        let block = |a: &[Vec<f64>], b: &[Vec<f64>]| {
            let (n, m) = (a.len(), b.len());
            let mut out = vec![vec![0.0; n + m]; n + m];
            for i in 0..n {
                out[i][..n].copy_from_slice(&a[i]);
            }
            for i in 0..m {
                out[n + i][n..].copy_from_slice(&b[i]);
            }
            out
        };
        Self::new(
            block(&self.gram_h0, &other.gram_h0),
            block(&self.gram_h1, &other.gram_h1),
        )
    }
}

/// `½ ln T + log_l2`.
pub fn quillen_log_norm(torsion: f64, det_norm: &DetLineNorm) -> Result<f64> {
    if !(torsion > 0.0 && torsion.is_finite()) {
        return domain(format!(
            "torsion must be positive and finite, got {torsion}"
        ));
    }
    Ok(0.5 * torsion.ln() + det_norm.log_l2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_is_exact_for_cubics_on_even_panels() {
        let x = [0.0, 0.3, 0.5, 1.1, 1.2];
        let f: Vec<f64> = x.iter().map(|x| x * x).collect();
        let (s, _) = simpson_nonuniform(&x, &f);
        assert!((s - 1.2f64.powi(3) / 3.0).abs() < 1e-14);
        let x = [0.0, 0.3, 0.5, 1.1];
        let f: Vec<f64> = x.iter().map(|x| x * x).collect();
        let (s, _) = simpson_nonuniform(&x, &f);
        assert!((s - 1.1f64.powi(3) / 3.0).abs() < 1e-14);
    }

    #[test]
    fn reference_selberg_constant() {
        assert!(ln_zp_thrice_punctured().contains(1.946_356_025_563_036_6, 1e-12));
    }

    #[test]
    fn t_tz_with_zero_euler_characteristic() {
        assert_eq!(t_tz(0, 3.5, 0.0).unwrap(), 3.5);
        assert!(t_tz(1, 1.0, 0.0).is_err());
    }

    #[test]
    fn empty_spectrum_is_one() {
        let v = selberg_zeta(
            2.0,
            &LengthSpectrum::new(vec![], vec![]).unwrap(),
            10,
            1e-12,
        )
        .unwrap();
        assert_eq!(v.value, 1.0);
        assert!(selberg_zeta(
            1.0,
            &LengthSpectrum::new(vec![], vec![]).unwrap(),
            10,
            1e-12
        )
        .is_err());
    }

    #[test]
    fn gram_determinants() {
        let d = DetLineNorm::new(vec![vec![4.0]], vec![vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
        assert!((d.log_l2 - (-0.5 * 4f64.ln() + 0.5 * 1.75f64.ln())).abs() < 1e-15);
        assert!(DetLineNorm::new(vec![vec![-1.0]], vec![]).is_err());
    }
}
