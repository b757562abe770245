//! Smooth cutoffs, metric and norm descriptors on cusp charts, the anomaly and
//! tight flattening families, Wolpert norms and compatibility checks.
//!
//! Profiles are stored relative to the Poincaré cusp: a metric is `e^{2λ}` times
//! `|dz|²/(|z| ln|z|)²` and a norm is recorded as `ln‖dz ⊗ s/z‖`, which equals
//! `ln|ln r|` for the exact cusp.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::profile_dsl::{self, ProfileExpr, RadialPoint};
use crate::quad::{integrate, Tolerance};

// ---------------------------------------------------------------- smooth steps

/// `σ(x) = e^{-1/x}` for `x > 0` with its first two derivatives.
fn sigma3(x: f64) -> [f64; 3] {
    if x <= 0.0 {
        return [0.0; 3];
    }
    let s = (-1.0 / x).exp();
    let x2 = x * x;
    [s, s / x2, s * (1.0 / (x2 * x2) - 2.0 / (x2 * x))]
}

/// `S(x) = σ(x)/(σ(x) + σ(1−x))`: exactly 0 for `x ≤ 0`, exactly 1 for `x ≥ 1`.
fn mollifier3(x: f64) -> [f64; 3] {
    if x <= 0.0 {
        return [0.0, 0.0, 0.0];
    }
    if x >= 1.0 {
        return [1.0, 0.0, 0.0];
    }
    let [a, da, dda] = sigma3(x);
    let [b0, db0, ddb0] = sigma3(1.0 - x);
    let (b, db, ddb) = (b0, -db0, ddb0);
    let d = a + b;
    let num = da * b - a * db;
    let dnum = dda * b - a * ddb;
    let s = a / d;
    let s1 = num / (d * d);
    let s2 = dnum / (d * d) - 2.0 * num * (da + db) / (d * d * d);
    [s, s1, s2]
}

/// The four shared cutoffs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothStep {
    /// Even; 1 on `|u| ≤ 1/2`, 0 on `|u| ≥ 1`.
    Psi,
    /// Decreasing; 1 on `u ≤ 5/4`, 0 on `u ≥ 7/4`.
    Phi,
    /// Increasing; 0 on `x ≤ 1/2`, 1 on `x ≥ 3/4`.
    Chi,
    /// Bump; 1 on `[2, 3]`, 0 outside `(1, 4)`.
    G,
}

impl SmoothStep {
    pub const ALL: [SmoothStep; 4] = [
        SmoothStep::Psi,
        SmoothStep::Phi,
        SmoothStep::Chi,
        SmoothStep::G,
    ];

    pub fn eval(self, u: f64) -> f64 {
        self.derivs(u)[0]
    }

    /// Value, first and second derivative.
    pub fn derivs(self, u: f64) -> [f64; 3] {
        match self {
            SmoothStep::Psi => {
                let [s, s1, s2] = mollifier3(2.0 * (1.0 - u.abs()));
                [s, -2.0 * u.signum() * s1, 4.0 * s2]
            }
            SmoothStep::Phi => {
                let [s, s1, s2] = mollifier3(2.0 * (1.75 - u));
                [s, -2.0 * s1, 4.0 * s2]
            }
            SmoothStep::Chi => {
                let [s, s1, s2] = mollifier3(4.0 * (u - 0.5));
                [s, 4.0 * s1, 16.0 * s2]
            }
            SmoothStep::G => {
                let [a, a1, a2] = mollifier3(u - 1.0);
                let [b0, b1, b2] = mollifier3(4.0 - u);
                let (b, db, ddb) = (b0, -b1, b2);
                [a * b, a1 * b + a * db, a2 * b + 2.0 * a1 * db + a * ddb]
            }
        }
    }

    /// Transition interval outside which the step is constant.
    pub fn transition(self) -> (f64, f64) {
        match self {
            SmoothStep::Psi => (0.5, 1.0),
            SmoothStep::Phi => (1.25, 1.75),
            SmoothStep::Chi => (0.5, 0.75),
            SmoothStep::G => (1.0, 4.0),
        }
    }
}

/// The five cutoff integrals over `[1/2, 1]` and the combination entering the cusp limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffIntegrals {
    /// ∫ψ' = −1.
    pub d_psi: f64,
    /// ∫uψ'' = 1.
    pub u_dd_psi: f64,
    /// ∫ψ'ψ = −1/2.
    pub d_psi_psi: f64,
    /// ∫(uψ''ψ + uψ'²) = 1/2.
    pub u_dd_psi_psi_plus_u_d_psi_sq: f64,
    /// ∫(u²ψ'ψ'' + uψ'²) = 0.
    pub u2_d_psi_dd_psi_plus_u_d_psi_sq: f64,
    /// ∫(−ψ' + ψ'ψ + uψ'² − uψ''/2 + uψ''ψ/2 + u²ψ'ψ''/2) = 1/4.
    pub lemma_combination: f64,
    pub max_quad_err: f64,
}

pub fn cutoff_integrals() -> CutoffIntegrals {
    let tol = Tolerance::new(1e-14, 1e-14);
    let mut max_err: f64 = 0.0;
    let mut int = |f: &dyn Fn(f64, [f64; 3]) -> f64| {
        let r = integrate(|u| f(u, SmoothStep::Psi.derivs(u)), 0.5, 1.0, tol);
        max_err = max_err.max(r.abs_err);
        r.value
    };
    let d_psi = int(&|_, [_, p1, _]| p1);
    let u_dd_psi = int(&|u, [_, _, p2]| u * p2);
    let d_psi_psi = int(&|_, [p, p1, _]| p1 * p);
    let a = int(&|u, [p, p1, p2]| u * p2 * p + u * p1 * p1);
    let b = int(&|u, [_, p1, p2]| u * u * p1 * p2 + u * p1 * p1);
    let lemma = int(&|u, [p, p1, p2]| {
        -p1 + p1 * p + u * p1 * p1 - 0.5 * u * p2 + 0.5 * u * p2 * p + 0.5 * u * u * p1 * p2
    });
    CutoffIntegrals {
        d_psi,
        u_dd_psi,
        d_psi_psi,
        u_dd_psi_psi_plus_u_d_psi_sq: a,
        u2_d_psi_dd_psi_plus_u_d_psi_sq: b,
        lemma_combination: lemma,
        max_quad_err: max_err,
    }
}

// ---------------------------------------------------------------- descriptors

/// One cusp chart of a metric: `g = e^{2λ} g_Poincaré` for `r < radius`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricChart {
    pub id: usize,
    pub radius: f64,
    pub log_conformal: ProfileExpr,
    /// Derivative at 0 of the germ relating this chart to a Poincaré-compatible one.
    pub h_prime_at_zero: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDescriptor {
    pub charts: Vec<MetricChart>,
    pub interior_volume: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormChart {
    pub id: usize,
    /// `ln‖dz ⊗ s/z‖` as a function of `r`.
    pub log_norm: ProfileExpr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormDescriptor {
    pub charts: Vec<NormChart>,
}

/// Chart record of the surface-descriptor JSON format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartSpec {
    pub id: usize,
    pub radius: f64,
    pub log_conformal: ProfileExpr,
    pub log_norm: ProfileExpr,
    #[serde(default = "identity_germ")]
    pub h_prime_at_zero: [f64; 2],
}

fn identity_germ() -> [f64; 2] {
    [1.0, 0.0]
}

/// Surface descriptor as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceDescriptor {
    pub charts: Vec<ChartSpec>,
    pub interior_volume: f64,
}

impl SurfaceDescriptor {
    pub fn split(&self) -> (MetricDescriptor, NormDescriptor) {
        let metric = MetricDescriptor {
            charts: self
                .charts
                .iter()
                .map(|c| MetricChart {
                    id: c.id,
                    radius: c.radius,
                    log_conformal: c.log_conformal.clone(),
                    h_prime_at_zero: c.h_prime_at_zero,
                })
                .collect(),
            interior_volume: self.interior_volume,
        };
        let norm = NormDescriptor {
            charts: self
                .charts
                .iter()
                .map(|c| NormChart {
                    id: c.id,
                    log_norm: c.log_norm.clone(),
                })
                .collect(),
        };
        (metric, norm)
    }

    pub fn join(metric: &MetricDescriptor, norm: &NormDescriptor) -> Result<Self> {
        let charts = metric
            .charts
            .iter()
            .map(|m| {
                let n =
                    norm.charts.iter().find(|n| n.id == m.id).ok_or_else(|| {
                        Error::Input(format!("norm descriptor lacks chart {}", m.id))
                    })?;
                Ok(ChartSpec {
                    id: m.id,
                    radius: m.radius,
                    log_conformal: m.log_conformal.clone(),
                    log_norm: n.log_norm.clone(),
                    h_prime_at_zero: m.h_prime_at_zero,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            charts,
            interior_volume: metric.interior_volume,
        })
    }
}

/// Exact Poincaré cusp on a single chart of the given radius.
pub fn poincare_descriptors(radius: f64) -> (MetricDescriptor, NormDescriptor) {
    let metric = MetricDescriptor {
        charts: vec![MetricChart {
            id: 0,
            radius,
            log_conformal: profile_dsl::parse("0").expect("literal parses"),
            h_prime_at_zero: identity_germ(),
        }],
        interior_volume: 0.0,
    };
    let norm = NormDescriptor {
        charts: vec![NormChart {
            id: 0,
            log_norm: profile_dsl::parse("ln(abs(ln(r)))").expect("literal parses"),
        }],
    };
    (metric, norm)
}

// ---------------------------------------------------------------- flattening families

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlatteningKind {
    Anomaly,
    Tight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Poincare,
    Band,
    Flat,
}

/// Radial band `[inner, outer)` with its regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub inner: f64,
    pub outer: f64,
    pub regime: Regime,
}

/// Request format `{"kind": "anomaly" | "tight", "theta": …, "n": …}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlatteningRequest {
    pub kind: FlatteningKind,
    pub theta: f64,
    #[serde(default)]
    pub n: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatteningFamily {
    pub kind: FlatteningKind,
    pub theta: f64,
    pub n: i32,
    pub bands: Vec<Band>,
}

const E_MINUS_3: f64 = 0.049_787_068_367_863_944;

impl FlatteningFamily {
    /// Anomaly family: Poincaré for `r ≥ θ^{1/2}`, Euclidean for `r ≤ θ`.
    pub fn anomaly(theta: f64) -> Result<Self> {
        if !(theta > 0.0 && theta <= E_MINUS_3 * (1.0 + 1e-15)) {
            return domain(format!(
                "anomaly flattening needs 0 < theta <= e^-3, got {theta}"
            ));
        }
        let half = theta.sqrt();
        Ok(Self {
            kind: FlatteningKind::Anomaly,
            theta,
            n: 0,
            bands: vec![
                Band {
                    inner: half,
                    outer: 1.0,
                    regime: Regime::Poincare,
                },
                Band {
                    inner: theta,
                    outer: half,
                    regime: Regime::Band,
                },
                Band {
                    inner: 0.0,
                    outer: theta,
                    regime: Regime::Flat,
                },
            ],
        })
    }

    /// Tight family of weight `n ≤ 0`: norm flat below `θ^{7/4}`, metric flat below `θ⁴/√2`.
    pub fn tight(theta: f64, n: i32) -> Result<Self> {
        if !(theta > 0.0 && theta <= 0.5) {
            return domain(format!(
                "tight flattening needs 0 < theta <= 1/2, got {theta}"
            ));
        }
        if n > 0 {
            return Err(Error::Unsupported(format!(
                "tight flattenings are built for n <= 0, got n = {n}"
            )));
        }
        let core = theta.powi(4) / 2f64.sqrt();
        Ok(Self {
            kind: FlatteningKind::Tight,
            theta,
            n,
            bands: vec![
                Band {
                    inner: theta,
                    outer: 1.0,
                    regime: Regime::Poincare,
                },
                Band {
                    inner: core,
                    outer: theta,
                    regime: Regime::Band,
                },
                Band {
                    inner: 0.0,
                    outer: core,
                    regime: Regime::Flat,
                },
            ],
        })
    }

    pub fn from_request(req: &FlatteningRequest) -> Result<Self> {
        match req.kind {
            FlatteningKind::Anomaly => Self::anomaly(req.theta),
            FlatteningKind::Tight => Self::tight(req.theta, req.n),
        }
    }

    pub fn regime(&self, r: f64) -> Regime {
        self.bands
            .iter()
            .find(|b| r >= b.inner && r < b.outer)
            .map(|b| b.regime)
            .unwrap_or(Regime::Poincare)
    }

    /// `λ` with `g_f = e^{2λ} g_Poincaré`.
    pub fn log_conformal_at(&self, p: &RadialPoint) -> f64 {
        let s = -p.ln_r;
        let big_t = -self.theta.ln();
        let u = s / big_t;
        match self.kind {
            FlatteningKind::Anomaly => {
                let psi = SmoothStep::Psi.eval(u);
                (1.0 - psi) * (s.ln() - s)
            }
            FlatteningKind::Tight => {
                let n = f64::from(self.n);
                // χ argument r²/θ⁸ in log form.
                let chi = SmoothStep::Chi.eval((-2.0 * s + 8.0 * big_t).exp());
                let band = n * (1.0 - SmoothStep::Phi.eval(u)) * u.ln();
                if chi == 1.0 {
                    return band;
                }
                // ln(θ⁸ |ln θ⁴|²) − 2 ln(r |ln r|).
                let b = -8.0 * big_t + 2.0 * (4.0 * big_t).ln() + 2.0 * s - 2.0 * s.ln();
                chi * band + 0.5 * (chi - 1.0) * b
            }
        }
    }

    /// `ln‖dz ⊗ s/z‖_f`.
    pub fn log_norm_at(&self, p: &RadialPoint) -> f64 {
        let s = -p.ln_r;
        let big_t = -self.theta.ln();
        let u = s / big_t;
        match self.kind {
            FlatteningKind::Anomaly => SmoothStep::Psi.eval(u) * s.ln(),
            FlatteningKind::Tight => {
                let phi = SmoothStep::Phi.eval(u);
                if phi == 1.0 {
                    s.ln()
                } else {
                    big_t.ln() + phi * u.ln()
                }
            }
        }
    }

    /// Metric density against Lebesgue measure in the chart.
    pub fn metric_density(&self, r: f64) -> Result<f64> {
        let p = RadialPoint::from_r(r)?;
        let l = r * r.ln();
        Ok((2.0 * self.log_conformal_at(&p)).exp() / (l * l))
    }

    /// `(log_conformal, log_norm)` as profile-language source.
    pub fn profile_sources(&self) -> (String, String) {
        let c = self.theta.ln();
        match self.kind {
            FlatteningKind::Anomaly => (
                format!("(1 - psi(ln(r)/{c:?}))*(ln(r) + ln(abs(ln(r))))"),
                format!("psi(ln(r)/{c:?})*ln(abs(ln(r)))"),
            ),
            FlatteningKind::Tight => {
                let big_t = -c;
                let theta8 = self.theta.powi(8);
                let lb = -8.0 * big_t + 2.0 * (4.0 * big_t).ln();
                let n = f64::from(self.n);
                (
                    format!(
                        "chi(r^2/{theta8:?})*{n:?}*(1 - phi_step(ln(r)/{c:?}))*ln(ln(r)/{c:?}) \
                         + 0.5*(chi(r^2/{theta8:?}) - 1)*({lb:?} - 2*ln(r*abs(ln(r))))"
                    ),
                    format!("ln({big_t:?}) + phi_step(ln(r)/{c:?})*ln(ln(r)/{c:?})"),
                )
            }
        }
    }

    /// Single-chart descriptors (chart radius 1, identity germ).
    pub fn descriptors(&self) -> Result<(MetricDescriptor, NormDescriptor)> {
        let (lc, ln) = self.profile_sources();
        let metric = MetricDescriptor {
            charts: vec![MetricChart {
                id: 0,
                radius: 1.0,
                log_conformal: profile_dsl::parse(&lc)?,
                h_prime_at_zero: identity_germ(),
            }],
            interior_volume: 0.0,
        };
        let norm = NormDescriptor {
            charts: vec![NormChart {
                id: 0,
                log_norm: profile_dsl::parse(&ln)?,
            }],
        };
        Ok((metric, norm))
    }
}

pub fn anomaly_flattening(theta: f64) -> Result<(MetricDescriptor, NormDescriptor)> {
    FlatteningFamily::anomaly(theta)?.descriptors()
}

pub fn tight_flattening(theta: f64, n: i32) -> Result<(MetricDescriptor, NormDescriptor)> {
    FlatteningFamily::tight(theta, n)?.descriptors()
}

// ---------------------------------------------------------------- tight sandwich

/// θ-independent lower envelope for the tight family of weight `n`:
/// returns `(λ_sm, ln‖·‖_sm)` at `s = |ln r|`. Poincaré for `s ≤ 3/2`,
/// flat (`40^{2n}|dz|²`, unit norm) for `s ≥ 40`.
pub fn tight_lower_envelope(s: f64, n: i32) -> (f64, f64) {
    let n = f64::from(n);
    let p3 = SmoothStep::Psi.eval(s / 3.0);
    let p10 = SmoothStep::Psi.eval(s / 10.0);
    let p40 = SmoothStep::Psi.eval(s / 40.0);
    let h = (1.0 - p3) * s.ln() * p40 + (1.0 - p40) * 40f64.ln();
    let lam = (1.0 - p10) * (s.ln() - s) + n * h;
    (lam, p3 * s.ln())
}

/// Largest violations (in log units) of the four sandwich inequalities; `≤ 0` means satisfied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub theta: f64,
    pub n: i32,
    pub samples: usize,
    /// `ln(g_f‖·‖_f^{2n}) − ln(g‖·‖^{2n})`.
    pub upper_product_excess: f64,
    /// `ln‖·‖_f − ln‖·‖`.
    pub upper_norm_excess: f64,
    /// `ln(g_sm‖·‖_sm^{2n}) − ln(g_f‖·‖_f^{2n})`.
    pub lower_product_excess: f64,
    /// `ln‖·‖_sm − ln‖·‖_f`.
    pub lower_norm_excess: f64,
    /// Radius where the upper product inequality is worst.
    pub worst_upper_radius_log: f64,
    pub holds: bool,
}

/// Sample the sandwich inequalities on `samples` log-spaced radii reaching well
/// inside the flat core.
pub fn tight_sandwich(theta: f64, n: i32, samples: usize) -> Result<SandwichReport> {
    let fam = FlatteningFamily::tight(theta, n)?;
    let big_t = -theta.ln();
    let (s_lo, s_hi) = (1e-3f64, 12.0 * big_t.max(40.0));
    let nf = f64::from(n);
    let mut rep = SandwichReport {
        theta,
        n,
        samples,
        upper_product_excess: f64::NEG_INFINITY,
        upper_norm_excess: f64::NEG_INFINITY,
        lower_product_excess: f64::NEG_INFINITY,
        lower_norm_excess: f64::NEG_INFINITY,
        worst_upper_radius_log: 0.0,
        holds: false,
    };
    for k in 0..samples {
        let s = s_lo * (s_hi / s_lo).powf(k as f64 / (samples - 1) as f64);
        let p = RadialPoint {
            r: (-s).exp(),
            ln_r: -s,
        };
        let lam_f = fam.log_conformal_at(&p);
        let norm_f = fam.log_norm_at(&p);
        let norm_p = s.ln();
        let (lam_sm, norm_sm) = tight_lower_envelope(s, n);
        let prod_f = 2.0 * lam_f + 2.0 * nf * (norm_f - norm_p);
        let prod_sm = 2.0 * lam_sm + 2.0 * nf * (norm_sm - norm_p);
        if prod_f > rep.upper_product_excess {
            rep.upper_product_excess = prod_f;
            rep.worst_upper_radius_log = -s;
        }
        rep.upper_norm_excess = rep.upper_norm_excess.max(norm_f - norm_p);
        rep.lower_product_excess = rep.lower_product_excess.max(prod_sm - prod_f);
        rep.lower_norm_excess = rep.lower_norm_excess.max(norm_sm - norm_f);
    }
    let slack = 1e-12;
    rep.holds = rep.upper_product_excess <= slack
        && rep.upper_norm_excess <= slack
        && rep.lower_product_excess <= slack
        && rep.lower_norm_excess <= slack;
    Ok(rep)
}

// ---------------------------------------------------------------- Wolpert norms and compatibility

/// `Σ ln|h_i'(0)|` for the chart germs.
pub fn wolpert_log_ratio(h_primes: &[[f64; 2]]) -> Result<f64> {
    h_primes
        .iter()
        .map(|h| {
            let m = h[0].hypot(h[1]);
            if m == 0.0 || !m.is_finite() {
                domain(format!(
                    "germ derivative must be finite and nonzero, got {h:?}"
                ))
            } else {
                Ok(m.ln())
            }
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompatibilityReport {
    pub compatible: bool,
    pub max_deviation: f64,
    /// `ln r` where the deviation peaks.
    pub worst_ln_r: f64,
}

/// Compare two families chart-to-chart on the union of their non-Poincaré bands.
/// Charts are related by a rotation, under which radial profiles pull back to themselves.
pub fn check_compatibility(fa: &FlatteningFamily, fb: &FlatteningFamily) -> CompatibilityReport {
    let outer = |f: &FlatteningFamily| {
        f.bands
            .iter()
            .filter(|b| b.regime != Regime::Poincare)
            .map(|b| b.outer)
            .fold(0.0, f64::max)
    };
    let r_hi = outer(fa).max(outer(fb)).min(0.999);
    let s_lo = -r_hi.ln();
    let deepest = |f: &FlatteningFamily| -f.theta.ln() * 6.0;
    let s_hi = deepest(fa).max(deepest(fb));
    let samples = 4000;
    let mut max_dev: f64 = 0.0;
    let mut worst = -s_lo;
    for k in 0..samples {
        let s = s_lo * (s_hi / s_lo).powf(k as f64 / (samples - 1) as f64);
        let p = RadialPoint {
            r: (-s).exp(),
            ln_r: -s,
        };
        let d = (fa.log_conformal_at(&p) - fb.log_conformal_at(&p))
            .abs()
            .max((fa.log_norm_at(&p) - fb.log_norm_at(&p)).abs());
        if d > max_dev {
            max_dev = d;
            worst = -s;
        }
    }
    CompatibilityReport {
        compatible: max_dev < 1e-10,
        max_deviation: max_dev,
        worst_ln_r: worst,
    }
}

/// `ln 2`, the Wolpert ratio of the doubling germ, exposed for the cusp-limit checks.
pub const LN_DOUBLING_GERM: f64 = LN_2;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psi_plateaus_and_evenness() {
        assert_eq!(SmoothStep::Psi.eval(0.3), 1.0);
        assert_eq!(SmoothStep::Psi.eval(1.2), 0.0);
        for u in [0.6, 0.9] {
            assert_eq!(SmoothStep::Psi.eval(u), SmoothStep::Psi.eval(-u));
        }
    }

    #[test]
    fn step_plateaus_are_exact() {
        assert_eq!(SmoothStep::Phi.eval(1.1), 1.0);
        assert_eq!(SmoothStep::Phi.eval(1.8), 0.0);
        assert_eq!(SmoothStep::Chi.eval(0.4), 0.0);
        assert_eq!(SmoothStep::Chi.eval(0.8), 1.0);
        assert_eq!(SmoothStep::G.eval(2.5), 1.0);
        assert_eq!(SmoothStep::G.eval(0.9), 0.0);
        assert_eq!(SmoothStep::G.eval(4.1), 0.0);
    }

    #[test]
    fn analytic_derivatives_match_differences() {
        for step in SmoothStep::ALL {
            let (a, b) = step.transition();
            for k in 1..10 {
                let u = a + (b - a) * k as f64 / 10.0;
                let h = 1e-5;
                let [_, d1, d2] = step.derivs(u);
                let fd1 = (step.eval(u + h) - step.eval(u - h)) / (2.0 * h);
                let fd2 = (step.derivs(u + h)[1] - step.derivs(u - h)[1]) / (2.0 * h);
                assert!(
                    (d1 - fd1).abs() < 1e-7 * (1.0 + d1.abs()),
                    "{step:?} at {u}"
                );
                assert!(
                    (d2 - fd2).abs() < 1e-5 * (1.0 + d2.abs()),
                    "{step:?} at {u}"
                );
            }
        }
    }

    #[test]
    fn cutoff_identities() {
        let c = cutoff_integrals();
        assert!((c.d_psi + 1.0).abs() < 1e-10);
        assert!((c.u_dd_psi - 1.0).abs() < 1e-10);
        assert!((c.d_psi_psi + 0.5).abs() < 1e-10);
        assert!((c.u_dd_psi_psi_plus_u_d_psi_sq - 0.5).abs() < 1e-10);
        assert!(c.u2_d_psi_dd_psi_plus_u_d_psi_sq.abs() < 1e-10);
        assert!((c.lemma_combination - 0.25).abs() < 1e-10);
    }

    #[test]
    fn tight_sandwich_weight_zero_holds() {
        for theta in [1e-2, 1e-3] {
            let rep = tight_sandwich(theta, 0, 10_000).unwrap();
            assert!(rep.holds, "{rep:?}");
        }
    }

    #[test]
    fn dsl_sources_match_closed_forms() {
        for fam in [
            FlatteningFamily::anomaly(1e-3).unwrap(),
            FlatteningFamily::tight(1e-2, -1).unwrap(),
            FlatteningFamily::tight(1e-3, -2).unwrap(),
        ] {
            let (m, n) = fam.descriptors().unwrap();
            for k in 1..200 {
                let s = 0.05 * 1.05f64.powi(k);
                let p = RadialPoint {
                    r: (-s).exp(),
                    ln_r: -s,
                };
                let lc = m.charts[0].log_conformal.eval_at(&p).unwrap();
                let ln = n.charts[0].log_norm.eval_at(&p).unwrap();
                assert!(
                    (lc - fam.log_conformal_at(&p)).abs() < 1e-9 * (1.0 + lc.abs()),
                    "{fam:?} s={s}"
                );
                assert!(
                    (ln - fam.log_norm_at(&p)).abs() < 1e-9 * (1.0 + ln.abs()),
                    "{fam:?} s={s}"
                );
            }
        }
    }

    #[test]
    fn wolpert_examples() {
        assert_eq!(wolpert_log_ratio(&[[1.0, 0.0]]).unwrap(), 0.0);
        assert!((wolpert_log_ratio(&[[2.0, 0.0]]).unwrap() - LN_2).abs() < 1e-15);
        assert!(wolpert_log_ratio(&[[0.0, 0.0]]).is_err());
    }

    #[test]
    fn family_parameter_checks() {
        assert!(FlatteningFamily::anomaly(0.1).is_err());
        assert!(FlatteningFamily::tight(1e-3, 1).is_err());
        assert!(FlatteningFamily::tight(0.6, 0).is_err());
    }

    #[test]
    fn tight_norm_is_constant_deep_inside() {
        let f = FlatteningFamily::tight(1e-2, -1).unwrap();
        let r: f64 = 1e-4;
        let p = RadialPoint::from_r(r).unwrap();
        assert!((f.log_norm_at(&p) - (-(1e-2f64).ln()).ln()).abs() < 1e-15);
    }
}
