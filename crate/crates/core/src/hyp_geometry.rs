//! Upper half-plane ℍ, the punctured disc 𝔻*, the covering `z ↦ e^{iz}`,
//! distances, volume densities and the cusp weight.

use std::f64::consts::{LN_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Point of the upper half-plane; invariant `y > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HPoint {
    pub x: f64,
    pub y: f64,
}

impl HPoint {
    pub fn new(x: f64, y: f64) -> Result<Self> {
        if !(y > 0.0) || !x.is_finite() || !y.is_finite() {
            return domain(format!(
                "half-plane point needs finite x and y > 0, got ({x}, {y})"
            ));
        }
        Ok(Self { x, y })
    }

    /// Image under the deck generator `z ↦ z + 2π i_deck`.
    pub fn translate(self, deck: DeckIndex) -> Self {
        Self {
            x: self.x + 2.0 * PI * deck.0 as f64,
            y: self.y,
        }
    }
}

/// Point of the punctured unit disc; invariant `0 < |u| < 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CuspPoint {
    pub u_re: f64,
    pub u_im: f64,
}

impl CuspPoint {
    pub fn new(u_re: f64, u_im: f64) -> Result<Self> {
        let r = u_re.hypot(u_im);
        if !(r > 0.0 && r < 1.0) {
            return domain(format!("cusp point needs 0 < |u| < 1, got |u| = {r}"));
        }
        Ok(Self { u_re, u_im })
    }

    /// Point with modulus `r` and argument `arg`.
    pub fn polar(r: f64, arg: f64) -> Result<Self> {
        if !(r > 0.0 && r < 1.0) {
            return domain(format!("cusp point needs 0 < |u| < 1, got |u| = {r}"));
        }
        Ok(Self {
            u_re: r * arg.cos(),
            u_im: r * arg.sin(),
        })
    }

    pub fn modulus(&self) -> f64 {
        self.u_re.hypot(self.u_im)
    }

    pub fn arg(&self) -> f64 {
        self.u_im.atan2(self.u_re)
    }
}

/// Power of the deck generator `U: z ↦ z + 2π`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DeckIndex(pub i64);

/// Hyperbolic distance on ℍ for the metric `(dx² + dy²)/y²`.
pub fn dist_h(z1: HPoint, z2: HPoint) -> f64 {
    let dx = z1.x - z2.x;
    let dy = z1.y - z2.y;
    let chord = dx.hypot(dy);
    2.0 * (chord / (2.0 * (z1.y * z2.y).sqrt())).asinh()
}

/// The covering `ρ(z) = e^{iz}`, so `|ρ(z)| = e^{-y}`.
pub fn covering_rho(z: HPoint) -> CuspPoint {
    let r = (-z.y).exp();
    CuspPoint {
        u_re: r * z.x.cos(),
        u_im: r * z.x.sin(),
    }
}

/// Lift of `u` with `x ∈ [0, 2π)`.
pub fn lift(u: CuspPoint) -> Result<HPoint> {
    let r = u.modulus();
    if !(r > 0.0 && r < 1.0) {
        return domain(format!("lift needs 0 < |u| < 1, got |u| = {r}"));
    }
    let mut x = u.arg();
    if x < 0.0 {
        x += 2.0 * PI;
    }
    if x >= 2.0 * PI {
        x = 0.0;
    }
    Ok(HPoint { x, y: -r.ln() })
}

/// Distance between the circles `|u| = r1` and `|u| = r2` in the cusp metric.
pub fn dist_cusp_radial(r1: f64, r2: f64) -> f64 {
    ((-r1.ln()).ln() - (-r2.ln()).ln()).abs()
}

/// Cusp weight `max(1, √|ln|u||)`, proportional to the inverse injectivity radius
/// deep in the cusp and clamped to 1 near the chart boundary.
pub fn rho_weight(u: CuspPoint) -> f64 {
    (-u.modulus().ln()).sqrt().max(1.0)
}

/// Density of the cusp metric against Lebesgue measure `du_re du_im`: `(|u| |ln|u||)^{-2}`.
pub fn volume_density_cusp(u: CuspPoint) -> f64 {
    let r = u.modulus();
    let l = r * r.ln();
    1.0 / (l * l)
}

/// Volume of `{0 < |u| < r_out}` in the cusp metric: `2π / |ln r_out|`.
pub fn cusp_volume(r_out: f64) -> Result<f64> {
    if !(r_out > 0.0 && r_out < 1.0) {
        return domain(format!("cusp volume needs 0 < r < 1, got {r_out}"));
    }
    Ok(2.0 * PI / (-r_out.ln()))
}

/// Term of the deck majorant `exp(−(ln(i²/(y₁y₂)))²/t)`.
fn deck_majorant_term(i: f64, ln_y1y2: f64, t: f64) -> f64 {
    let l = 2.0 * i.ln() - ln_y1y2;
    (-(l * l) / t).exp()
}

/// Certified bound on `Σ_{i > k} exp(−(2 ln i − c)²/t)` for `2 ln k > c`,
/// from the integral comparison and `erfc(x) ≤ e^{-x²}/(x√π)`.
fn deck_majorant_integral_tail(k: f64, ln_y1y2: f64, t: f64) -> f64 {
    let s = 2.0 * k.ln() - ln_y1y2;
    let x = (s - t / 4.0) / t.sqrt();
    if x <= 0.0 {
        return f64::INFINITY;
    }
    // ∫_k^∞ = (e^{c/2}/2) e^{t/16} (√(πt)/2) erfc(x).
    let log_pref = 0.5 * ln_y1y2 + t / 16.0 + (PI * t).sqrt().ln() - 2.0 * LN_2;
    let log_erfc_bound = -x * x - (x * PI.sqrt()).ln();
    (log_pref + log_erfc_bound).exp()
}

/// Smallest `I` with `Σ_{|i| > I} exp(−(ln(i²/(y₁y₂)))²/t) < eps`.
///
/// The terms are summed explicitly up to a cut `K` and the rest is bounded by the
/// integral majorant, so the returned `I` is certified for this series.
pub fn deck_truncation_bound(z1: HPoint, z2: HPoint, t: f64, eps: f64) -> u64 {
    assert!(
        t > 0.0 && eps > 0.0,
        "deck truncation needs t > 0 and eps > 0"
    );
    let c = (z1.y * z2.y).ln();
    let mut k = ((0.5 * c).exp().ceil() as u64).max(1) * 2;
    // Both sides of the orbit contribute, hence the factor 2 on one-sided tails.
    while 2.0 * deck_majorant_integral_tail(k as f64, c, t) >= eps {
        k *= 2;
        assert!(k < 1 << 50, "deck truncation bound did not converge");
    }
    let mut tail = 2.0 * deck_majorant_integral_tail(k as f64, c, t);
    let mut i = k;
    while i > 0 {
        let next = tail + 2.0 * deck_majorant_term(i as f64, c, t);
        if next >= eps {
            break;
        }
        tail = next;
        i -= 1;
    }
    i
}

/// Number of deck images `Uⁱ z2` within hyperbolic distance `radius` of `z1`.
pub fn orbit_count_within(z1: HPoint, z2: HPoint, radius: f64) -> u64 {
    // d < R  ⟺  |Δx + 2πi| < 2√(y₁y₂) sinh(R/2) when Δy = 0; in general use the chord.
    let chord_max = 2.0 * (z1.y * z2.y).sqrt() * (radius / 2.0).sinh();
    let dy = z1.y - z2.y;
    if chord_max <= dy.abs() {
        return 0;
    }
    let half_width = (chord_max * chord_max - dy * dy).sqrt();
    let dx = z2.x - z1.x;
    let lo = ((-half_width - dx) / (2.0 * PI)).ceil() as i64;
    let hi = ((half_width - dx) / (2.0 * PI)).floor() as i64;
    (lo..=hi)
        .filter(|&i| dist_h(z1, z2.translate(DeckIndex(i))) < radius)
        .count() as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(x: f64, y: f64) -> HPoint {
        HPoint::new(x, y).unwrap()
    }

    #[test]
    fn distance_on_imaginary_axis_is_log_ratio() {
        assert_eq!(dist_h(h(0.0, 1.0), h(0.0, 1.0)), 0.0);
        assert!((dist_h(h(0.0, 1.0), h(0.0, 2.0)) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn horizontal_distance_is_twice_log_golden_ratio() {
        let golden = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((dist_h(h(0.0, 1.0), h(1.0, 1.0)) - 2.0 * golden.ln()).abs() < 1e-15);
    }

    #[test]
    fn lift_of_positive_real_point() {
        let z = lift(CuspPoint::new((-1f64).exp(), 0.0).unwrap()).unwrap();
        assert_eq!(z.x, 0.0);
        assert!((z.y - 1.0).abs() < 1e-15);
    }

    #[test]
    fn covering_of_pi_two() {
        let u = covering_rho(h(PI, 2.0));
        assert!((u.modulus() - (-2f64).exp()).abs() < 1e-16);
        assert!((u.arg().abs() - PI).abs() < 1e-15);
    }

    #[test]
    fn radial_distance_example() {
        assert!(
            (dist_cusp_radial((-1f64).exp(), (-std::f64::consts::E).exp()) - 1.0).abs() < 1e-15
        );
        assert_eq!(dist_cusp_radial(0.3, 0.3), 0.0);
    }

    #[test]
    fn weight_examples() {
        assert!((rho_weight(CuspPoint::new((-4f64).exp(), 0.0).unwrap()) - 2.0).abs() < 1e-15);
        assert_eq!(rho_weight(CuspPoint::new(0.9, 0.0).unwrap()), 1.0);
    }

    #[test]
    fn cusp_volume_of_half_disc() {
        assert!((cusp_volume(0.5).unwrap() - 2.0 * PI / 2f64.ln()).abs() < 1e-13);
        assert!(cusp_volume(1.0).is_err());
        let d = volume_density_cusp(CuspPoint::new((-1f64).exp(), 0.0).unwrap());
        assert!((d - 1f64.exp().powi(2)).abs() < 1e-12);
    }

    #[test]
    fn invalid_points_are_rejected() {
        assert!(HPoint::new(0.0, 0.0).is_err());
        assert!(CuspPoint::new(1.0, 0.0).is_err());
        assert!(lift(CuspPoint {
            u_re: 1.5,
            u_im: 0.0
        })
        .is_err());
    }

    #[test]
    fn truncation_monotone_in_eps() {
        let z = h(0.0, 1.0);
        let mut prev = u64::MAX;
        for eps in [1e-12, 1e-8, 1e-4, 1e-1] {
            let i = deck_truncation_bound(z, z, 1.0, eps);
            assert!(i <= prev);
            prev = i;
        }
    }
}
