//! Regularized heat traces of surfaces with cusps, assembled from heat-data
//! providers, with small-time coefficients and a large-time tail model.
//!
//! With `w = m·rank/3` the regularized trace at core radius `η` is
//! `core_M(η) − w·core_P(η) + Σ_i ∫_{D*(η)} (diag_{M,i} − rank·diag_P) dv`,
//! where `core(η)` integrates the diagonal outside the charts of radius `η`.
//! Moving `η` shifts each core term by chart integrals that cancel exactly
//! against the cusp sum because `P` has three cusps.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::heat_kernel::cusp_kernel;
use crate::hyp_geometry::CuspPoint;
use crate::quad::{integrate, integrate_to_inf, KahanSum, Tolerance};

/// Diagonal tolerance handed to model-cusp kernel evaluations.
const CUSP_KERNEL_EPS: f64 = 1e-13;

fn quad_tol() -> Tolerance {
    Tolerance::new(1e-11, 1e-11)
}

/// Trace of the heat kernel over the core region outside charts of radius `core_radius`.
#[derive(Clone)]
pub enum CoreTrace {
    /// Full spectrum with multiplicity; the trace is `Σ e^{−λt}`.
    Eigenvalues(Vec<f64>),
    /// Samples `(t, value)` with `t` increasing, interpolated linearly in `ln t`.
    Samples(Vec<(f64, f64)>),
    Function(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for CoreTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreTrace::Eigenvalues(v) => write!(f, "Eigenvalues({} values)", v.len()),
            CoreTrace::Samples(v) => write!(f, "Samples({} points)", v.len()),
            CoreTrace::Function(_) => write!(f, "Function"),
        }
    }
}

impl CoreTrace {
    pub fn eval(&self, t: f64) -> Result<f64> {
        match self {
            CoreTrace::Eigenvalues(ev) => Ok(ev
                .iter()
                .map(|l| (-l * t).exp())
                .collect::<KahanSum>()
                .value()),
            CoreTrace::Samples(s) => {
                let (t0, t1) = (s[0].0, s[s.len() - 1].0);
                if !(t >= t0 && t <= t1) {
                    return Err(Error::Range(format!(
                        "core trace sampled on [{t0}, {t1}], requested t = {t}"
                    )));
                }
                let k = s.partition_point(|p| p.0 <= t).clamp(1, s.len() - 1);
                let ((ta, va), (tb, vb)) = (s[k - 1], s[k]);
                let x = (t.ln() - ta.ln()) / (tb.ln() - ta.ln());
                Ok(va + x * (vb - va))
            }
            CoreTrace::Function(f) => Ok(f(t)),
        }
    }
}

/// Diagonal heat-kernel values on cusp charts, `(t, chart, r) ↦ value`, rank included.
#[derive(Clone)]
pub enum CuspDiagonal {
    /// Exact model cusp of the provider's weight, times the rank.
    ModelCusp,
    /// No cusp contribution (compact or synthetic data).
    Zero,
    Custom(Arc<dyn Fn(f64, usize, f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for CuspDiagonal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CuspDiagonal::ModelCusp => write!(f, "ModelCusp"),
            CuspDiagonal::Zero => write!(f, "Zero"),
            CuspDiagonal::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// Pointwise small-time coefficients `(a_{−1}, a_0)` per unit rank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalCoefficients {
    /// Curvature −1: `a_{−1} = 1/(2π)`, `a_0 = −1/(12π) + n/(4π)`.
    Hyperbolic,
    /// Flat: `a_{−1} = 1/(2π)`, `a_0 = 0`.
    Flat,
    Custom {
        a_minus1: f64,
        a_0: f64,
    },
    Unknown,
}

impl LocalCoefficients {
    pub fn values(&self, n: i32) -> Result<(f64, f64)> {
        let lead = 1.0 / (2.0 * PI);
        match *self {
            LocalCoefficients::Hyperbolic => {
                Ok((lead, -1.0 / (12.0 * PI) + f64::from(n) / (4.0 * PI)))
            }
            LocalCoefficients::Flat => Ok((lead, 0.0)),
            LocalCoefficients::Custom { a_minus1, a_0 } => Ok((a_minus1, a_0)),
            LocalCoefficients::Unknown => Err(Error::Capability(
                "provider carries no small-time coefficients".into(),
            )),
        }
    }
}

/// Source of heat data for one surface.
#[derive(Debug, Clone)]
pub struct HeatDataProvider {
    pub m: usize,
    pub n: i32,
    pub rank: usize,
    pub dim_h0: usize,
    pub mu: f64,
    pub volume: f64,
    /// Chart radius `η_0` at which `core` is measured.
    pub core_radius: f64,
    pub core: CoreTrace,
    pub cusp: CuspDiagonal,
    pub coefficients: LocalCoefficients,
}

/// JSON form of a provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderSpec {
    #[serde(default)]
    pub m: usize,
    #[serde(default)]
    pub n: i32,
    #[serde(default = "one")]
    pub rank_xi: usize,
    #[serde(rename = "dim_H0", default)]
    pub dim_h0: usize,
    pub mu: f64,
    #[serde(default)]
    pub eigenvalues: Option<Vec<f64>>,
    #[serde(default)]
    pub core_trace_samples: Option<Vec<(f64, f64)>>,
    pub volume: f64,
    #[serde(default = "default_core_radius")]
    pub core_radius: f64,
    /// `"model"` or `"zero"`; defaults to `"model"` when `m > 0`.
    #[serde(default)]
    pub cusp: Option<String>,
    #[serde(default)]
    pub coefficients: Option<LocalCoefficients>,
}

fn one() -> usize {
    1
}

fn default_core_radius() -> f64 {
    0.1
}

impl HeatDataProvider {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0) {
            return domain(format!("spectral gap must be positive, got {}", self.mu));
        }
        if self.n > 0 {
            return domain(format!("twist must be nonpositive, got {}", self.n));
        }
        if self.rank == 0 {
            return domain("rank must be positive");
        }
        if !(self.volume > 0.0) {
            return domain(format!("volume must be positive, got {}", self.volume));
        }
        if self.m > 0 && !(self.core_radius > 0.0 && self.core_radius < 1.0) {
            return domain(format!(
                "core radius must lie in (0, 1), got {}",
                self.core_radius
            ));
        }
        match &self.core {
            CoreTrace::Samples(s)
                if s.len() < 2 || s.windows(2).any(|w| !(w[0].0 > 0.0 && w[1].0 > w[0].0)) =>
            {
                domain("core trace samples need at least two strictly increasing positive times")
            }
            CoreTrace::Eigenvalues(ev) if ev.iter().any(|l| !(l.is_finite() && *l >= 0.0)) => {
                domain("eigenvalues must be finite and nonnegative")
            }
            _ => Ok(()),
        }
    }

    pub fn from_spec(spec: &ProviderSpec) -> Result<Self> {
        let core = match (&spec.eigenvalues, &spec.core_trace_samples) {
            (Some(ev), None) => CoreTrace::Eigenvalues(ev.clone()),
            (None, Some(s)) => CoreTrace::Samples(s.clone()),
            _ => {
                return Err(Error::Input(
                    "provider needs exactly one of eigenvalues or core_trace_samples".into(),
                ))
            }
        };
        let cusp = match spec.cusp.as_deref() {
            None if spec.m > 0 => CuspDiagonal::ModelCusp,
            None | Some("zero") => CuspDiagonal::Zero,
            Some("model") => CuspDiagonal::ModelCusp,
            Some(other) => return Err(Error::Input(format!("unknown cusp model {other:?}"))),
        };
        let p = Self {
            m: spec.m,
            n: spec.n,
            rank: spec.rank_xi,
            dim_h0: spec.dim_h0,
            mu: spec.mu,
            volume: spec.volume,
            core_radius: spec.core_radius,
            core,
            cusp,
            coefficients: spec.coefficients.unwrap_or(if spec.m > 0 {
                LocalCoefficients::Hyperbolic
            } else {
                LocalCoefficients::Unknown
            }),
        };
        p.validate()?;
        Ok(p)
    }

    /// Compact surface known through its spectrum (`m = 0`).
    pub fn spectral(
        eigenvalues: Vec<f64>,
        volume: f64,
        coefficients: LocalCoefficients,
    ) -> Result<Self> {
        let dim_h0 = eigenvalues.iter().filter(|&&l| l == 0.0).count();
        let mu = eigenvalues
            .iter()
            .copied()
            .filter(|&l| l > 0.0)
            .fold(f64::INFINITY, f64::min);
        let p = Self {
            m: 0,
            n: 0,
            rank: 1,
            dim_h0,
            mu: if mu.is_finite() { mu } else { 1.0 },
            volume,
            core_radius: default_core_radius(),
            core: CoreTrace::Eigenvalues(eigenvalues),
            cusp: CuspDiagonal::Zero,
            coefficients,
        };
        p.validate()?;
        Ok(p)
    }

    /// Square flat torus of area `e^{2c}`: spectrum `2π²|k|² e^{−2c}` of `□ = Δ/2`,
    /// trace `ϑ(t e^{−2c}/2)²` with `ϑ(τ) = Σ e^{−4π²k²τ}`.
    pub fn flat_torus(log_scale: f64) -> Self {
        let s = (-2.0 * log_scale).exp();
        Self {
            m: 0,
            n: 0,
            rank: 1,
            dim_h0: 1,
            mu: 2.0 * PI * PI * s,
            volume: 1.0 / s,
            core_radius: default_core_radius(),
            core: CoreTrace::Function(Arc::new(move |t| {
                let th = jacobi_theta(0.5 * t * s);
                th * th
            })),
            cusp: CuspDiagonal::Zero,
            coefficients: LocalCoefficients::Flat,
        }
    }

    /// Reference thrice-punctured sphere with exact model cusps and a synthetic
    /// core trace. Its eigen-data has no closed form; only cancellations and
    /// η-independence use it.
    pub fn reference_sphere(n: i32) -> Self {
        let core_radius = default_core_radius();
        // Volume outside the charts: 2π minus three cusp areas.
        let core_vol = 2.0 * PI - 3.0 * 2.0 * PI / (-core_radius.ln());
        let (a_m1, a_0) = LocalCoefficients::Hyperbolic
            .values(n)
            .expect("hyperbolic coefficients");
        let dim_h0 = usize::from(n == 0);
        let mu = 0.25;
        Self {
            m: 3,
            n,
            rank: 1,
            dim_h0,
            mu,
            volume: 2.0 * PI,
            core_radius,
            core: CoreTrace::Function(Arc::new(move |t| {
                core_vol * (a_m1 / t + a_0) * (-mu * t).exp() + dim_h0 as f64
            })),
            cusp: CuspDiagonal::ModelCusp,
            coefficients: LocalCoefficients::Hyperbolic,
        }
    }

    /// Disjoint union of three copies.
    pub fn triplicate(&self) -> Self {
        let core = self.core.clone();
        Self {
            m: 3 * self.m,
            dim_h0: 3 * self.dim_h0,
            volume: 3.0 * self.volume,
            core: CoreTrace::Function(Arc::new(move |t| {
                3.0 * core.eval(t).expect("core trace evaluates")
            })),
            ..self.clone()
        }
    }

    /// Diagonal trace at radius `r` in chart `i`, rank included.
    pub fn cusp_diagonal(&self, t: f64, chart: usize, r: f64) -> Result<f64> {
        match &self.cusp {
            CuspDiagonal::Zero => Ok(0.0),
            CuspDiagonal::Custom(f) => Ok(f(t, chart, r)),
            CuspDiagonal::ModelCusp => {
                let u = CuspPoint::polar(r, 0.0)?;
                Ok(self.rank as f64 * cusp_kernel(t, u, u, self.n, CUSP_KERNEL_EPS)?.value)
            }
        }
    }

    /// Core trace measured outside charts of radius `eta`.
    pub fn core_trace(&self, t: f64, eta: f64) -> Result<f64> {
        let mut acc = KahanSum::default();
        acc.add(self.core.eval(t)?);
        if self.m > 0 && eta != self.core_radius {
            for chart in 0..self.m {
                acc.add(self.chart_integral(t, chart, eta, self.core_radius)?);
            }
        }
        Ok(acc.value())
    }

    /// `∫_{inner < r < outer} diag dv` in chart `i`, signed if `inner > outer`.
    fn chart_integral(&self, t: f64, chart: usize, inner: f64, outer: f64) -> Result<f64> {
        let (w_in, w_out) = (w_of(inner), w_of(outer));
        let mut err = None;
        let q = integrate(
            |w| match self.cusp_diagonal(t, chart, r_of(w)) {
                Ok(v) => 2.0 * PI * (-w).exp() * v,
                Err(e) => {
                    err.get_or_insert(e);
                    0.0
                }
            },
            w_out,
            w_in,
            quad_tol(),
        );
        if let Some(e) = err {
            return Err(e);
        }
        q.require(quad_tol().abs.max(quad_tol().rel * q.value.abs()))
    }
}

/// `ϑ(τ) = Σ_k e^{−4π²k²τ}`, switched to its Poisson dual `(4πτ)^{−1/2} Σ e^{−k²/(4τ)}` for small `τ`.
pub fn jacobi_theta(tau: f64) -> f64 {
    let direct = tau >= 1.0 / (4.0 * PI);
    let mut acc = KahanSum::default();
    let term = |k: f64| {
        if direct {
            (-4.0 * PI * PI * k * k * tau).exp()
        } else {
            (-k * k / (4.0 * tau)).exp()
        }
    };
    acc.add(term(0.0));
    let mut k = 1.0;
    loop {
        let v = term(k);
        acc.add(2.0 * v);
        if v < 1e-18 {
            break;
        }
        k += 1.0;
    }
    if direct {
        acc.value()
    } else {
        acc.value() / (4.0 * PI * tau).sqrt()
    }
}

/// `w = ln|ln r|`.
fn w_of(r: f64) -> f64 {
    (-r.ln()).ln()
}

fn r_of(w: f64) -> f64 {
    (-w.exp()).exp()
}

/// Weight `m·rank/3` of the reference surface.
pub fn reference_weight(pm: &HeatDataProvider) -> f64 {
    (pm.m * pm.rank) as f64 / 3.0
}

fn check_pair(pm: &HeatDataProvider, pp: &HeatDataProvider) -> Result<()> {
    pm.validate()?;
    pp.validate()?;
    if pm.n != pp.n {
        return domain(format!(
            "providers must share the twist, got {} and {}",
            pm.n, pp.n
        ));
    }
    if pp.m != 3 {
        return domain(format!(
            "reference provider must have three cusps, got {}",
            pp.m
        ));
    }
    Ok(())
}

/// Regularized trace of `exp(−t□)` with charts cut at radius `eta`.
pub fn regularized_trace(
    pm: &HeatDataProvider,
    pp: &HeatDataProvider,
    t: f64,
    eta: f64,
) -> Result<f64> {
    check_pair(pm, pp)?;
    if !(t > 0.0) {
        return domain(format!("trace needs t > 0, got {t}"));
    }
    if !(eta > 0.0 && eta < 1.0) {
        return domain(format!("chart radius must lie in (0, 1), got {eta}"));
    }
    let w = reference_weight(pm);
    let mut acc = KahanSum::default();
    acc.add(pm.core_trace(t, eta)?);
    if w != 0.0 {
        acc.add(-w * pp.core_trace(t, eta)?);
    }
    let both_model =
        matches!(pm.cusp, CuspDiagonal::ModelCusp) && matches!(pp.cusp, CuspDiagonal::ModelCusp);
    if pm.m > 0 && !both_model {
        let rank = pm.rank as f64;
        for chart in 0..pm.m {
            let mut err = None;
            let q = integrate_to_inf(
                |x| {
                    let r = r_of(x);
                    let v = pm
                        .cusp_diagonal(t, chart, r)
                        .and_then(|a| Ok(a - rank * pp.cusp_diagonal(t, 0, r)?));
                    match v {
                        Ok(v) => 2.0 * PI * (-x).exp() * v,
                        Err(e) => {
                            err.get_or_insert(e);
                            0.0
                        }
                    }
                },
                w_of(eta),
                quad_tol(),
            );
            if let Some(e) = err {
                return Err(e);
            }
            acc.add(q.require(quad_tol().abs.max(quad_tol().rel * q.value.abs()))?);
        }
    }
    Ok(acc.value())
}

/// Regularized trace with the zero modes removed:
/// `Tr^r[exp] − dim H⁰(M) + (m·rank/3)·dim H⁰(P)`.
pub fn regularized_trace_perp(
    pm: &HeatDataProvider,
    pp: &HeatDataProvider,
    t: f64,
    eta: f64,
) -> Result<f64> {
    Ok(regularized_trace(pm, pp, t, eta)? - pm.dim_h0 as f64
        + reference_weight(pm) * pp.dim_h0 as f64)
}

/// Small-time coefficients `(A_{−1}, A_0)` of the zero-mode-free regularized trace.
pub fn small_time_coeffs(pm: &HeatDataProvider, pp: &HeatDataProvider) -> Result<(f64, f64)> {
    check_pair(pm, pp)?;
    let w = reference_weight(pm);
    let (am1, am0) = pm.coefficients.values(pm.n)?;
    let rank = pm.rank as f64;
    let (mut a_m1, mut a_0) = (rank * am1 * pm.volume, rank * am0 * pm.volume);
    if w != 0.0 {
        let (pm1, p0) = pp.coefficients.values(pp.n)?;
        a_m1 -= w * pm1 * pp.volume;
        a_0 -= w * p0 * pp.volume;
    }
    a_0 += -(pm.dim_h0 as f64) + w * pp.dim_h0 as f64;
    Ok((a_m1, a_0))
}

/// Large-time model `|Tr^r[exp^⊥]| ≤ C e^{−μt}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailModel {
    pub mu: f64,
    pub c: f64,
    /// First time of the fitting window.
    pub t_fit: f64,
    /// `|value|·e^{μt}` is nonincreasing across the fitting window.
    pub validated: bool,
}

/// Sampled zero-mode-free regularized trace with its small- and large-time models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceCurve {
    pub samples: Vec<(f64, f64)>,
    pub tail_model: Option<TailModel>,
    pub a_minus1: f64,
    pub a_0: f64,
}

/// Absolute noise allowed in trace values when validating the tail.
const TAIL_NOISE: f64 = 1e-12;

impl TailModel {
    /// Fit on the last decade of `samples` and check monotone decay of `|v| e^{μt}`.
    pub fn fit(samples: &[(f64, f64)], mu: f64) -> Option<Self> {
        let t_last = samples.last()?.0;
        let mut start = samples.partition_point(|p| p.0 < t_last / 10.0);
        if samples.len() - start < 2 {
            start = samples.len().checked_sub(2)?;
        }
        let window = &samples[start..];
        let scaled: Vec<f64> = window
            .iter()
            .map(|&(t, v)| v.abs() * (mu * t).exp())
            .collect();
        let noise: Vec<f64> = window
            .iter()
            .map(|&(t, _)| TAIL_NOISE * (mu * t).exp())
            .collect();
        let c = scaled.iter().copied().fold(0.0, f64::max);
        let validated = scaled
            .windows(2)
            .zip(noise.windows(2))
            .all(|(s, e)| s[1] <= s[0] * (1.0 + 1e-9) + e[1]);
        Some(Self {
            mu,
            c,
            t_fit: window[0].0,
            validated,
        })
    }
}

pub fn trace_curve(
    pm: &HeatDataProvider,
    pp: &HeatDataProvider,
    t_grid: &[f64],
) -> Result<TraceCurve> {
    if t_grid.is_empty() || t_grid.windows(2).any(|w| !(w[1] > w[0])) || !(t_grid[0] > 0.0) {
        return domain("time grid must be positive and strictly increasing");
    }
    let (a_minus1, a_0) = small_time_coeffs(pm, pp)?;
    let eta = if pm.m > 0 {
        pm.core_radius
    } else {
        default_core_radius()
    };
    let values: Vec<f64> = t_grid
        .par_iter()
        .map(|&t| regularized_trace_perp(pm, pp, t, eta))
        .collect::<Result<_>>()?;
    let samples: Vec<(f64, f64)> = t_grid.iter().copied().zip(values).collect();
    let tail_model = TailModel::fit(&samples, pm.mu);
    Ok(TraceCurve {
        samples,
        tail_model,
        a_minus1,
        a_0,
    })
}

/// Geometric grid of `points` times from `t_min` to `t_max`.
pub fn geometric_grid(t_min: f64, t_max: f64, points: usize) -> Result<Vec<f64>> {
    if !(t_min > 0.0 && t_max > t_min && points >= 2) {
        return domain(format!(
            "grid needs 0 < t_min < t_max and at least two points, got {t_min}:{t_max}:{points}"
        ));
    }
    let ratio = (t_max / t_min).ln() / (points - 1) as f64;
    Ok((0..points)
        .map(|k| {
            if k + 1 == points {
                t_max
            } else {
                t_min * (ratio * k as f64).exp()
            }
        })
        .collect())
}

/// Cusp Gaussian integral `∫_{D(ε)} e^{−c'(ln|ln|u||)²/t} i du dū/(|u|²|ln|u||)` and its envelope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianCuspBound {
    pub integral: f64,
    /// `C √t e^{−(c'/2)(ln|ln ε|)²/t}` with `C = 2π^{3/2}/√c'`.
    pub envelope: f64,
    pub ratio: f64,
}

pub fn gaussian_cusp_bound(eps_radius: f64, c_prime: f64, t: f64) -> Result<GaussianCuspBound> {
    if !(eps_radius > 0.0 && eps_radius < (-1f64).exp()) {
        return domain(format!(
            "the Gaussian cusp bound needs 0 < eps < e^-1, got {eps_radius}"
        ));
    }
    if !(c_prime > 0.0 && t > 0.0) {
        return domain("the Gaussian cusp bound needs c' > 0 and t > 0");
    }
    let w_eps = w_of(eps_radius);
    // In w = ln|ln r| the measure i du dū/(|u|²|ln|u||) is 4π dw.
    let q = integrate_to_inf(
        |w| 4.0 * PI * (-c_prime * w * w / t).exp(),
        w_eps,
        Tolerance::new(1e-300, 1e-12),
    );
    let integral = q.require(1e-10 * q.value.abs().max(1e-300))?;
    let envelope =
        2.0 * PI.powf(1.5) / c_prime.sqrt() * t.sqrt() * (-0.5 * c_prime * w_eps * w_eps / t).exp();
    Ok(GaussianCuspBound {
        integral,
        envelope,
        ratio: integral / envelope,
    })
}

/// `∫_{D(ε)} i du dū/(|u|²|ln|u||^{2−ς})`, finite exactly when `ς < 1`.
pub fn cusp_measure_integral(eps_radius: f64, varsigma: f64) -> Result<f64> {
    if !(eps_radius > 0.0 && eps_radius < 1.0) {
        return domain(format!("radius must lie in (0, 1), got {eps_radius}"));
    }
    if varsigma >= 1.0 {
        return Err(Error::Finiteness(format!(
            "the cusp measure integral diverges for varsigma = {varsigma} >= 1"
        )));
    }
    // In s = |ln r| the integrand is 4π s^{ς−2} ds; with s = s₀e^v it decays exponentially in v.
    let s0 = -eps_radius.ln();
    let q = integrate_to_inf(
        |v| 4.0 * PI * s0.powf(varsigma - 1.0) * ((varsigma - 1.0) * v).exp(),
        0.0,
        Tolerance::new(1e-300, 1e-10),
    );
    q.require(1e-8 * q.value.abs())
}
