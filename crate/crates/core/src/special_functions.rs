//! Scalar constants and special functions behind the torsion constants:
//! ζ'(-1), Euler's γ, log-gamma, the exponential integral E₁, the Dedekind eta
//! function on the imaginary axis and the Selberg normalization constants `c_k`.

use std::f64::consts::{LN_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::quad::KahanSum;

/// A double-precision value together with a certified absolute error bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HighPrecReal {
    pub value: f64,
    pub abs_err: f64,
}

impl HighPrecReal {
    pub fn new(value: f64, abs_err: f64) -> Self {
        debug_assert!(abs_err >= 0.0);
        Self { value, abs_err }
    }

    /// True when `x` lies inside the error ball, widened by `slack`.
    pub fn contains(&self, x: f64, slack: f64) -> bool {
        (self.value - x).abs() <= self.abs_err + slack
    }
}

/// Bernoulli numbers `B_2, B_4, ..., B_20`.
const BERNOULLI_EVEN: [f64; 10] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
    43867.0 / 798.0,
    -174611.0 / 330.0,
];

/// Rounding allowance for the short compensated sums below.
const ROUNDING: f64 = 4.0 * f64::EPSILON;

/// Euler–Maclaurin cut point shared by the constant evaluations.
const EM_CUT: u32 = 10;

/// `ln A` for the Glaisher–Kinkelin constant from Euler–Maclaurin applied to `Σ k ln k`.
pub fn glaisher_log() -> HighPrecReal {
    let n = f64::from(EM_CUT);
    let mut acc: KahanSum = (1..=EM_CUT)
        .map(|k| f64::from(k) * f64::from(k).ln())
        .collect();
    acc.add(-(n * n / 2.0 + n / 2.0 + 1.0 / 12.0) * n.ln());
    acc.add(n * n / 4.0);
    let term = |j: usize| {
        let jj = j as f64;
        BERNOULLI_EVEN[j - 1]
            / ((2.0 * jj) * (2.0 * jj - 1.0) * (2.0 * jj - 2.0) * n.powf(2.0 * jj - 2.0))
    };
    for j in 2..=7 {
        acc.add(term(j));
    }
    // The asymptotic series is alternating with decreasing terms at this cut,
    // so the first omitted term bounds the truncation.
    HighPrecReal::new(acc.value(), term(8).abs() + ROUNDING * 30.0)
}

/// ζ'(-1) = 1/12 − ln A.
pub fn zeta_prime_minus1() -> HighPrecReal {
    let a = glaisher_log();
    HighPrecReal::new(1.0 / 12.0 - a.value, a.abs_err + ROUNDING)
}

/// Euler's constant from `H_N − ln N − 1/(2N) + Σ B_{2k}/(2k N^{2k})`.
pub fn euler_gamma() -> HighPrecReal {
    let n = f64::from(EM_CUT);
    let mut acc: KahanSum = (1..=EM_CUT).map(|k| 1.0 / f64::from(k)).collect();
    acc.add(-n.ln());
    acc.add(-0.5 / n);
    let term = |k: usize| BERNOULLI_EVEN[k - 1] / (2.0 * k as f64 * n.powi(2 * k as i32));
    for k in 1..=7 {
        acc.add(term(k));
    }
    HighPrecReal::new(acc.value(), term(8).abs() + ROUNDING * 10.0)
}

/// `ln Γ(x)` for `x > 0` by Stirling's series after shifting the argument above 15.
pub fn ln_gamma(x: f64) -> f64 {
    assert!(x > 0.0, "ln_gamma needs a positive argument");
    let mut z = x;
    let mut shift = KahanSum::default();
    while z < 15.0 {
        shift.add(-z.ln());
        z += 1.0;
    }
    let mut acc = KahanSum::default();
    acc.add((z - 0.5) * z.ln());
    acc.add(-z);
    acc.add(0.5 * (2.0 * PI).ln());
    let mut zpow = z;
    let z2 = z * z;
    for (k, b) in BERNOULLI_EVEN.iter().enumerate().take(8) {
        let kk = (k + 1) as f64;
        acc.add(b / (2.0 * kk * (2.0 * kk - 1.0) * zpow));
        zpow *= z2;
    }
    acc.add(shift.value());
    acc.value()
}

/// Exponential integral `E₁(x) = ∫_x^∞ e^{-s}/s ds` for `x > 0`.
pub fn exp_integral_e1(x: f64) -> f64 {
    assert!(x > 0.0, "E1 needs a positive argument");
    if x <= 1.0 {
        // Convergent power series.
        let mut acc = KahanSum::default();
        acc.add(-euler_gamma().value - x.ln());
        let mut term = 1.0;
        for k in 1..60 {
            term *= -x / k as f64;
            let t = -term / k as f64;
            acc.add(t);
            if t.abs() < 1e-18 {
                break;
            }
        }
        acc.value()
    } else {
        // Modified Lentz evaluation of the continued fraction.
        let tiny = 1e-300;
        let mut b = x + 1.0;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let a = -((i * i) as f64);
            b += 2.0;
            d = 1.0 / (a * d + b);
            c = b + a / c;
            let del = c * d;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        h * (-x).exp()
    }
}

/// Selberg normalization constant `c_k`; `k = 0` uses its own closed form.
pub fn c_k(k: u32) -> HighPrecReal {
    let zp = zeta_prime_minus1();
    let ln2pi = (2.0 * PI).ln();
    if k == 0 {
        return HighPrecReal::new(
            4.0 * zp.value - 0.5 + ln2pi,
            4.0 * zp.abs_err + ROUNDING * 4.0,
        );
    }
    let kf = f64::from(k);
    let mut acc = KahanSum::default();
    for l in 0..k {
        let lf = f64::from(l);
        let arg = 2.0 * kf + 2.0 * kf * lf - lf * lf - lf;
        acc.add((2.0 * kf - 2.0 * lf - 1.0) * (arg.ln() - LN_2));
    }
    acc.add((1.0 / 3.0 + kf + kf * kf) * LN_2);
    acc.add((2.0 * kf + 1.0) * ln2pi);
    acc.add(4.0 * zp.value);
    acc.add(-2.0 * (kf + 0.5) * (kf + 0.5));
    let mut ln_fact = 0.0;
    for l in 1..k {
        ln_fact += f64::from(l).ln();
        acc.add(-4.0 * ln_fact);
    }
    ln_fact += kf.ln();
    acc.add(-2.0 * ln_fact);
    let scale = (kf + 1.0).powi(3);
    HighPrecReal::new(acc.value(), 4.0 * zp.abs_err + ROUNDING * scale * 10.0)
}

/// Dedekind eta `η(i·tau_im)` from its q-product with a certified tail bound.
/// Moduli below 1 are first mapped through `η(i/τ) = √τ η(iτ)`.
pub fn dedekind_eta(tau_im: f64) -> Result<HighPrecReal> {
    if !(tau_im > 0.0) || !tau_im.is_finite() {
        return domain(format!(
            "eta needs a positive finite imaginary modulus, got {tau_im}"
        ));
    }
    if tau_im < 1.0 {
        let inner = eta_product(1.0 / tau_im);
        let s = 1.0 / tau_im.sqrt();
        return Ok(HighPrecReal::new(s * inner.value, s * inner.abs_err));
    }
    Ok(eta_product(tau_im))
}

fn eta_product(tau_im: f64) -> HighPrecReal {
    let q = (-2.0 * PI * tau_im).exp();
    let mut log_prod = KahanSum::default();
    log_prod.add(-2.0 * PI * tau_im / 24.0);
    let mut qn = q;
    let mut n = 1;
    // |ln Π_{k>n}(1 − q^k)| ≤ q^{n+1} / ((1 − q)(1 − q^{n+1})).
    loop {
        log_prod.add((-qn).ln_1p());
        let next = qn * q;
        let tail = next / ((1.0 - q) * (1.0 - next));
        n += 1;
        if tail < 1e-17 || n > 10_000 {
            let value = log_prod.value().exp();
            return HighPrecReal::new(value, value * (tail + ROUNDING * f64::from(n).sqrt() * 4.0));
        }
        qn = next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glaisher_matches_reference() {
        // ln A to 20 digits.
        let a = glaisher_log();
        assert!(a.contains(0.248_754_477_033_784_262_5, 1e-16));
        assert!(a.abs_err < 1e-13);
    }

    #[test]
    fn gamma_bracket() {
        let g = euler_gamma();
        assert!(g.value > 0.5 && g.value < 0.6);
        assert!(g.abs_err < 1e-12);
    }

    #[test]
    fn ln_gamma_small_integers() {
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!(ln_gamma(2.0).abs() < 1e-14);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-13);
        assert!((ln_gamma(0.5) - 0.5 * PI.ln()).abs() < 1e-14);
    }

    #[test]
    fn e1_branches_agree_at_switch() {
        let below = exp_integral_e1(1.0);
        assert!((below - 0.219_383_934_395_520_27).abs() < 1e-15);
        assert!((exp_integral_e1(1.000_000_1) - below).abs() < 1e-7);
        assert!((exp_integral_e1(5.0) - 0.001_148_295_591_275_325_5).abs() < 1e-17);
    }

    #[test]
    fn c_zero_is_three_term_formula() {
        let c0 = c_k(0);
        let literal = 4.0 * zeta_prime_minus1().value - 0.5 + (2.0 * PI).ln();
        assert_eq!(c0.value, literal);
    }

    #[test]
    fn eta_rejects_nonpositive_modulus() {
        assert!(dedekind_eta(0.0).is_err());
        assert!(dedekind_eta(-1.0).is_err());
    }
}
