//! First Chern forms, Bott–Chern secondary forms and the right-hand sides of
//! the anomaly formulas and the compact-perturbation formula on radial cusp charts.
//!
//! Every chart integral runs in `w = ln|ln r|`. A Hermitian line metric is
//! recorded as `ν = ln‖s‖` for a holomorphic frame `s`; its first Chern form is
//! `−(1/2π) Δ_euc ν dx dy`, which per unit `w` has density `−(ν_ww − ν_w) e^{−w}`.
//! Harmonic terms such as `ln r` never enter a density, so the tangent line is
//! carried by `ln‖z∂_z‖`, which differs from `ln‖∂_z‖` by `−ln r`.
//!
//! Metric and norm profiles are read in their own Poincaré-compatible chart
//! `z₀ = a z` (linear germs), while bundle metrics on `ξ` are read in the
//! reference chart `z`. Both frames `dz ⊗ s/z` and `z∂_z` are germ-invariant.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cheb::Cheb;
use crate::error::{domain, Error, Result};
use crate::metrics_flattenings::{
    FlatteningFamily, MetricChart, MetricDescriptor, NormChart, NormDescriptor,
};
use crate::profile_dsl::{self, Jet as PathJet, ProfileExpr, RadialPoint};
use crate::quad::{gauss_legendre, KahanSum};

/// Gauss–Legendre points per grid panel.
const PANEL_ORDER: usize = 16;
/// Chebyshev degree used to decide whether a panel resolves the profiles.
const PROBE_DEGREE: usize = 16;
/// Widest and narrowest panels produced by the adaptive grid.
const MAX_PANEL: f64 = 0.5;
const MIN_PANEL: f64 = 1e-3;

// ---------------------------------------------------------------- grid and samples

/// Quadrature carrier on a radial chart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartGrid {
    pub w_nodes: Vec<f64>,
    /// Radial problems use a single angular node.
    pub angular_nodes: usize,
    /// Quadrature weights in `w`; all strictly positive.
    pub jacobians: Vec<f64>,
    pub panels: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridStats {
    pub nodes: usize,
    pub panels: usize,
    pub w_min: f64,
    pub w_max: f64,
    pub min_spacing: f64,
    pub max_spacing: f64,
}

impl ChartGrid {
    pub fn from_panels(panels: Vec<[f64; 2]>) -> Result<Self> {
        if panels.is_empty()
            || panels
                .iter()
                .any(|p| !(p[1] > p[0] && p[0].is_finite() && p[1].is_finite()))
        {
            return domain("grid panels must be nonempty finite intervals");
        }
        if panels.windows(2).any(|w| w[1][0] < w[0][1]) {
            return domain("grid panels must be increasing and non-overlapping");
        }
        let (x, wt) = gauss_legendre(PANEL_ORDER);
        let mut w_nodes = Vec::with_capacity(panels.len() * PANEL_ORDER);
        let mut jacobians = Vec::with_capacity(panels.len() * PANEL_ORDER);
        for p in &panels {
            let (c, h) = (0.5 * (p[0] + p[1]), 0.5 * (p[1] - p[0]));
            // Ascending node order.
            let mut pairs: Vec<(f64, f64)> = x
                .iter()
                .zip(&wt)
                .map(|(xi, wi)| (c + h * xi, h * wi))
                .collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            for (n, j) in pairs {
                w_nodes.push(n);
                jacobians.push(j);
            }
        }
        Ok(Self {
            w_nodes,
            angular_nodes: 1,
            jacobians,
            panels,
        })
    }

    /// Panels of width at most `max_spacing` on `[w_lo, w_hi]`.
    pub fn uniform(w_lo: f64, w_hi: f64, max_spacing: f64) -> Result<Self> {
        if !(w_hi > w_lo && max_spacing > 0.0) {
            return domain(format!(
                "invalid uniform grid [{w_lo}, {w_hi}] with spacing {max_spacing}"
            ));
        }
        let k = ((w_hi - w_lo) / max_spacing).ceil().max(1.0) as usize;
        let h = (w_hi - w_lo) / k as f64;
        Self::from_panels(
            (0..k)
                .map(|i| {
                    [
                        w_lo + i as f64 * h,
                        if i + 1 == k {
                            w_hi
                        } else {
                            w_lo + (i + 1) as f64 * h
                        },
                    ]
                })
                .collect(),
        )
    }

    /// Bisects panels until a degree-16 Chebyshev interpolant of `probe` has
    /// trailing coefficients below `tol`.
    pub fn adaptive(
        w_lo: f64,
        w_hi: f64,
        probe: &(dyn Fn(f64) -> f64 + Sync),
        tol: f64,
    ) -> Result<Self> {
        let start = Self::uniform(w_lo, w_hi, MAX_PANEL)?.panels;
        let resolved = |p: &[f64; 2]| {
            let c = Cheb::from_fn(p[0], p[1], PROBE_DEGREE, probe);
            let scale = c.coeffs.iter().fold(1.0f64, |m, x| m.max(x.abs()));
            let t = c.tail_magnitude();
            t.is_finite() && t <= tol * scale
        };
        let mut out = Vec::new();
        let mut stack: Vec<[f64; 2]> = start.into_iter().rev().collect();
        while let Some(p) = stack.pop() {
            if p[1] - p[0] <= MIN_PANEL || resolved(&p) {
                out.push(p);
            } else {
                let m = 0.5 * (p[0] + p[1]);
                stack.push([m, p[1]]);
                stack.push([p[0], m]);
            }
        }
        Self::from_panels(out)
    }

    /// Every panel split in two.
    pub fn refine(&self) -> Self {
        let panels = self
            .panels
            .iter()
            .flat_map(|p| {
                let m = 0.5 * (p[0] + p[1]);
                [[p[0], m], [m, p[1]]]
            })
            .collect();
        Self::from_panels(panels).expect("refinement of a valid grid is valid")
    }

    pub fn stats(&self) -> GridStats {
        let widths = self.panels.iter().map(|p| p[1] - p[0]);
        GridStats {
            nodes: self.w_nodes.len(),
            panels: self.panels.len(),
            w_min: self.panels[0][0],
            w_max: self.panels[self.panels.len() - 1][1],
            min_spacing: widths.clone().fold(f64::INFINITY, f64::min),
            max_spacing: widths.fold(0.0, f64::max),
        }
    }
}

/// Form restricted to a chart: degree 0 as values, degree 2 as densities per unit `w`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormSample {
    pub degree: u8,
    pub values: Vec<f64>,
}

impl FormSample {
    /// `∫ density · jacobian` in node order.
    pub fn integrate(&self, grid: &ChartGrid) -> Result<f64> {
        if self.degree != 2 {
            return domain("only degree-2 forms integrate over a chart");
        }
        if self.values.len() != grid.jacobians.len() {
            return Err(Error::Input("form and grid sizes differ".into()));
        }
        Ok(self
            .values
            .iter()
            .zip(&grid.jacobians)
            .map(|(v, j)| v * j)
            .collect::<KahanSum>()
            .value())
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            degree: self.degree,
            values: self.values.iter().map(|v| k * v).collect(),
        }
    }

    /// Pointwise sum of two forms of the same degree.
    pub fn plus(&self, other: &Self) -> Result<Self> {
        if self.degree != other.degree || self.values.len() != other.values.len() {
            return Err(Error::Input("forms differ in degree or size".into()));
        }
        Ok(Self {
            degree: self.degree,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }
}

/// A value with its quadrature error and the grids used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Integral {
    pub value: f64,
    pub quad_err: f64,
    pub grid_stats: Vec<GridStats>,
}

// ---------------------------------------------------------------- radial fields

/// Line log-norm along `w` with exact first and second `w`-derivatives.
type Field<'a> = Box<dyn Fn(f64) -> Result<PathJet> + Sync + 'a>;

/// Value and first Chern density of a line metric at one node.
#[derive(Debug, Clone, Copy, Default)]
struct Jet {
    v: f64,
    c: f64,
}

/// `c₁` per unit `w` is `−(ν_ww − ν_w) e^{−w}`.
fn jet(f: &(dyn Fn(f64) -> Result<PathJet> + Sync), w: f64) -> Result<Jet> {
    let j = f(w)?;
    Ok(Jet {
        v: j.v,
        c: -(j.d2 - j.d1) * (-w).exp(),
    })
}

/// `ln r` of the chart `z₀ = a z` over `w` in the reference chart, as a jet in `w`.
fn pulled_ln_r(w: f64, ln_a: f64) -> Result<PathJet> {
    let e = w.exp();
    let ln_r = -e + ln_a;
    if !(ln_r < 0.0) {
        return domain(format!(
            "w = {w} lies outside the chart rescaled by e^{ln_a}"
        ));
    }
    Ok(PathJet {
        v: ln_r,
        d1: -e,
        d2: -e,
    })
}

/// Point of the chart `z₀ = a z` lying over `w` in the reference chart.
fn pulled_point(w: f64, ln_a: f64) -> Result<RadialPoint> {
    let ln_r = pulled_ln_r(w, ln_a)?.v;
    Ok(RadialPoint {
        r: ln_r.exp(),
        ln_r,
    })
}

fn ln_abs_germ(h: [f64; 2]) -> Result<f64> {
    let m = h[0].hypot(h[1]);
    if !(m > 0.0 && m.is_finite()) {
        return domain(format!(
            "germ derivative must be finite and nonzero, got {h:?}"
        ));
    }
    Ok(m.ln())
}

fn sample(f: &(dyn Fn(f64) -> Result<PathJet> + Sync), grid: &ChartGrid) -> Result<Vec<Jet>> {
    grid.w_nodes.par_iter().map(|&w| jet(f, w)).collect()
}

/// Profile read in the chart `z₀ = a z`.
fn pulled_field(e: &ProfileExpr, ln_a: f64) -> impl Fn(f64) -> Result<PathJet> + Sync + '_ {
    move |w| e.eval_jet(pulled_ln_r(w, ln_a)?)
}

fn profile_field(e: &ProfileExpr) -> impl Fn(f64) -> Result<PathJet> + Sync + '_ {
    pulled_field(e, 0.0)
}

// ---------------------------------------------------------------- forms

/// `c₁ = −(1/2π) Δ_euc ν` as a density per unit `w`, with `ν` the log-norm of a holomorphic frame.
pub fn c1_radial(log_norm: &ProfileExpr, grid: &ChartGrid) -> Result<FormSample> {
    let f = profile_field(log_norm);
    let jets = sample(&f, grid)?;
    Ok(FormSample {
        degree: 2,
        values: jets.iter().map(|j| j.c).collect(),
    })
}

/// `ch̃^{[0]} = 2 Td̃^{[0]} = ln det(h₁/h₂) = 2·rank·(ν₁ − ν₂)` for `ξ = rank` copies of one line metric.
pub fn bott_chern_deg0(
    h1_log: &ProfileExpr,
    h2_log: &ProfileExpr,
    rank: usize,
    grid: &ChartGrid,
) -> Result<FormSample> {
    let values = grid
        .w_nodes
        .iter()
        .map(|&w| Ok(2.0 * rank as f64 * (h1_log.eval_w(w)? - h2_log.eval_w(w)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(FormSample { degree: 0, values })
}

/// `ch̃^{[2]} = ln(h₁/h₂)(c₁(h₁) + c₁(h₂))/2` for a line bundle; `Td̃^{[2]}` is a sixth of it.
pub fn bott_chern_deg2(
    h1_log: &ProfileExpr,
    h2_log: &ProfileExpr,
    grid: &ChartGrid,
) -> Result<FormSample> {
    let (f1, f2) = (profile_field(h1_log), profile_field(h2_log));
    let (j1, j2) = (sample(&f1, grid)?, sample(&f2, grid)?);
    let values = j1
        .iter()
        .zip(&j2)
        .map(|(a, b)| (a.v - b.v) * (a.c + b.c))
        .collect();
    Ok(FormSample { degree: 2, values })
}

// ---------------------------------------------------------------- anomaly functionals

/// Hermitian metric on `ξ = rank` copies of a line metric, one log-norm profile per chart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XiMetric {
    pub rank: usize,
    pub charts: Vec<ProfileExpr>,
}

impl XiMetric {
    /// Flat metric `h^ξ = Id` on every chart.
    pub fn trivial(rank: usize, charts: usize) -> Self {
        Self {
            rank,
            charts: vec![profile_dsl::parse("0").expect("literal parses"); charts],
        }
    }
}

/// One side of an anomaly comparison.
#[derive(Debug, Clone, Copy)]
pub struct MetricData<'a> {
    pub metric: &'a MetricDescriptor,
    pub norm: &'a NormDescriptor,
    pub xi: &'a XiMetric,
}

/// Chart range and caller-supplied contributions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhsSettings {
    /// Outer chart radius in the reference coordinate; defaults to 0.9 of the smallest rescaled chart.
    pub r_outer: Option<f64>,
    /// Innermost `w`; the forms must vanish beyond it.
    pub w_max: f64,
    /// Contribution of the region outside the charts.
    pub interior: f64,
    /// Chebyshev tail threshold for the adaptive grid.
    pub grid_tol: f64,
}

impl RhsSettings {
    /// Smooth metrics: everything is flat well before `w = 12`.
    pub fn smooth() -> Self {
        Self {
            r_outer: None,
            w_max: 12.0,
            interior: 0.0,
            grid_tol: 1e-10,
        }
    }

    /// Cusp metrics: integrands decay like `e^{−w}`, negligible at `w = 40`.
    pub fn cusp() -> Self {
        Self {
            r_outer: None,
            w_max: 40.0,
            interior: 0.0,
            grid_tol: 1e-10,
        }
    }
}

/// Which line carries the Todd forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ToddLine {
    /// `ω^{-1}` with the norm induced by the metric.
    Tangent,
    /// `ω(D)^{-1}` dual to the recorded norm.
    TwistedDual,
}

/// Per-chart line fields of one side.
struct SideFields<'a> {
    todd: Field<'a>,
    twist: Field<'a>,
    xi: Field<'a>,
    ln_a: f64,
}

fn side_fields<'a>(side: &MetricData<'a>, chart: usize, todd: ToddLine) -> Result<SideFields<'a>> {
    let mc: &'a MetricChart = &side.metric.charts[chart];
    let nc: &'a NormChart = &side.norm.charts[chart];
    let xi: &'a ProfileExpr = &side.xi.charts[chart];
    let ln_a = ln_abs_germ(mc.h_prime_at_zero)?;
    let todd: Field<'a> = match todd {
        ToddLine::Tangent => Box::new(move |w| {
            let l = pulled_ln_r(w, ln_a)?;
            Ok(mc.log_conformal.eval_jet(l)? - l.ln_abs())
        }),
        ToddLine::TwistedDual => {
            Box::new(move |w| Ok(-nc.log_norm.eval_jet(pulled_ln_r(w, ln_a)?)?))
        }
    };
    let twist: Field<'a> = Box::new(pulled_field(&nc.log_norm, ln_a));
    let xi: Field<'a> = Box::new(profile_field(xi));
    Ok(SideFields {
        todd,
        twist,
        xi,
        ln_a,
    })
}

fn check_sides(a: &MetricData, b: &MetricData) -> Result<usize> {
    let m = a.metric.charts.len();
    let counts = [
        a.norm.charts.len(),
        a.xi.charts.len(),
        b.metric.charts.len(),
        b.norm.charts.len(),
        b.xi.charts.len(),
    ];
    if counts.iter().any(|&c| c != m) {
        return Err(Error::Input(
            "descriptors disagree on the number of charts".into(),
        ));
    }
    if a.xi.rank != b.xi.rank || a.xi.rank == 0 {
        return domain("both sides need the same positive rank");
    }
    Ok(m)
}

/// Degree-2 part of `Td̃(1,2)ch(ξ,1)ch(L^n,1) + Td(2)ch̃(ξ,1,2)ch(L^n,1) + Td(2)ch(ξ,2)ch̃(L^n,1,2)`
/// from the jets of the Todd line `T`, the twist line `L` and `ξ` on both sides.
fn bracket(rank: f64, n: f64, t: [Jet; 2], l: [Jet; 2], x: [Jet; 2]) -> f64 {
    let td0 = t[0].v - t[1].v;
    let td2 = (t[0].v - t[1].v) * (t[0].c + t[1].c) / 6.0;
    let xc0 = 2.0 * rank * (x[0].v - x[1].v);
    let xc2 = rank * (x[0].v - x[1].v) * (x[0].c + x[1].c);
    let yc0 = 2.0 * n * (l[0].v - l[1].v);
    let yc2 = n * n * (l[0].v - l[1].v) * (l[0].c + l[1].c);
    let a = td2 * rank + td0 * rank * (x[0].c + n * l[0].c);
    let b = xc2 + xc0 * (0.5 * t[1].c + n * l[0].c);
    let c = yc2 * rank + yc0 * rank * (0.5 * t[1].c + x[1].c);
    a + b + c
}

/// Outer chart radius in the reference coordinate.
fn outer_radius(
    a: &MetricData,
    b: &MetricData,
    chart: usize,
    settings: &RhsSettings,
) -> Result<f64> {
    let mut r = f64::INFINITY;
    for s in [a, b] {
        let c = &s.metric.charts[chart];
        r = r.min(c.radius / ln_abs_germ(c.h_prime_at_zero)?.exp());
    }
    let r = settings.r_outer.unwrap_or(0.9 * r.min(1.0));
    if !(r > 0.0 && r < 1.0) {
        return domain(format!("outer radius must lie in (0, 1), got {r}"));
    }
    Ok(r)
}

/// Integral of the bracket over one chart on `[w_lo, w_max]`, with the refinement difference as error.
fn chart_bracket(
    a: &SideFields,
    b: &SideFields,
    rank: f64,
    n: f64,
    w_lo: f64,
    settings: &RhsSettings,
) -> Result<(Integral, Vec<f64>, ChartGrid)> {
    if !(settings.w_max > w_lo) {
        return domain(format!(
            "w_max = {} must exceed the chart edge w = {w_lo}",
            settings.w_max
        ));
    }
    let at = |w: f64| -> Result<f64> {
        let t = [jet(&a.todd, w)?, jet(&b.todd, w)?];
        let l = [jet(&a.twist, w)?, jet(&b.twist, w)?];
        let x = [jet(&a.xi, w)?, jet(&b.xi, w)?];
        Ok(bracket(rank, n, t, l, x))
    };
    let probe = |w: f64| at(w).unwrap_or(f64::NAN);
    let grid = ChartGrid::adaptive(w_lo, settings.w_max, &probe, settings.grid_tol)?;
    let eval =
        |g: &ChartGrid| -> Result<Vec<f64>> { g.w_nodes.par_iter().map(|&w| at(w)).collect() };
    let sum = |vals: &[f64], g: &ChartGrid| {
        vals.iter()
            .zip(&g.jacobians)
            .map(|(v, j)| v * j)
            .collect::<KahanSum>()
            .value()
    };
    let coarse = eval(&grid)?;
    let fine_grid = grid.refine();
    let fine = eval(&fine_grid)?;
    let (v0, v1) = (sum(&coarse, &grid), sum(&fine, &fine_grid));
    if !(v0.is_finite() && v1.is_finite()) {
        return Err(Error::Finiteness("chart integrand is not finite".into()));
    }
    Ok((
        Integral {
            value: v1,
            quad_err: (v1 - v0).abs(),
            grid_stats: vec![fine_grid.stats()],
        },
        fine,
        fine_grid,
    ))
}

/// Breakdown of an anomaly right-hand side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhsReport {
    pub value: f64,
    pub integral: f64,
    pub interior: f64,
    pub wolpert_term: f64,
    pub puncture_term: f64,
    pub quad_err: f64,
    pub grid_stats: Vec<GridStats>,
}

/// Fails unless `f` is constant on the last unit of `w`, i.e. the data is smooth at the puncture.
fn require_constant_near_puncture(
    f: &(dyn Fn(f64) -> Result<PathJet> + Sync),
    w_max: f64,
    what: &str,
) -> Result<()> {
    let (x, y) = (f(w_max)?.v, f(w_max - 1.0)?.v);
    if !((x - y).abs() <= 1e-8 * (1.0 + x.abs())) {
        return domain(format!(
            "{what} is not constant near the puncture (changes by {:.3e})",
            x - y
        ));
    }
    Ok(())
}

/// Bismut–Gillet–Soulé right-hand side `2 ln(‖·‖_Q(2)/‖·‖_Q(1))` for smooth data on the
/// compactified surface, with `E = ξ ⊗ ω(D)^n` varied slot by slot.
pub fn anomaly_rhs_bgs(
    s1: &MetricData,
    s2: &MetricData,
    n: i32,
    settings: &RhsSettings,
) -> Result<RhsReport> {
    let m = check_sides(s1, s2)?;
    let rank = s1.xi.rank as f64;
    let mut integral = KahanSum::default();
    let mut err = 0.0;
    let mut stats = Vec::new();
    for i in 0..m {
        let a = side_fields(s1, i, ToddLine::Tangent)?;
        let b = side_fields(s2, i, ToddLine::Tangent)?;
        for (s, f) in [(&a, s1), (&b, s2)] {
            let mc = &f.metric.charts[i];
            let ln_a = s.ln_a;
            // ln‖∂_{z₀}‖ must be constant where the flattened metric is Euclidean.
            let density = move |w: f64| -> Result<PathJet> {
                let l = pulled_ln_r(w, ln_a)?;
                Ok(mc.log_conformal.eval_jet(l)? - l - l.ln_abs())
            };
            require_constant_near_puncture(&density, settings.w_max, "metric density")?;
            require_constant_near_puncture(&s.twist, settings.w_max, "twist norm")?;
            require_constant_near_puncture(&s.xi, settings.w_max, "bundle metric")?;
        }
        let w_lo = (-outer_radius(s1, s2, i, settings)?.ln()).ln();
        let (c, _, _) = chart_bracket(&a, &b, rank, f64::from(n), w_lo, settings)?;
        integral.add(c.value);
        err += c.quad_err;
        stats.extend(c.grid_stats);
    }
    let integral = integral.value();
    Ok(RhsReport {
        value: integral + settings.interior,
        integral,
        interior: settings.interior,
        wolpert_term: 0.0,
        puncture_term: 0.0,
        quad_err: err,
        grid_stats: stats,
    })
}

/// Cusp anomaly right-hand side `2 ln(‖·‖_Q(g₀)/‖·‖_Q(g))`: the bracket with `ω(D)^{-1}` Todd
/// forms over the charts, minus `(rank/6) ln(‖·‖^W/‖·‖^W_0)`, plus `½ Σ ln det(h^ξ/h^ξ_0)` at the punctures.
pub fn anomaly_rhs_cusp(
    g: &MetricData,
    g0: &MetricData,
    n: i32,
    settings: &RhsSettings,
) -> Result<RhsReport> {
    let m = check_sides(g, g0)?;
    let rank = g.xi.rank as f64;
    let mut integral = KahanSum::default();
    let mut err = 0.0;
    let mut stats = Vec::new();
    let mut wolpert = 0.0;
    let mut puncture = 0.0;
    for i in 0..m {
        let a = side_fields(g, i, ToddLine::TwistedDual)?;
        let b = side_fields(g0, i, ToddLine::TwistedDual)?;
        require_constant_near_puncture(&a.xi, settings.w_max, "bundle metric")?;
        require_constant_near_puncture(&b.xi, settings.w_max, "bundle metric")?;
        let w_lo = (-outer_radius(g, g0, i, settings)?.ln()).ln();
        let (c, dens, grid) = chart_bracket(&a, &b, rank, f64::from(n), w_lo, settings)?;
        // Absolute convergence: the last decade of w must carry a negligible share.
        let tail: f64 = dens
            .iter()
            .zip(&grid.jacobians)
            .zip(&grid.w_nodes)
            .filter(|(_, &w)| w >= settings.w_max - std::f64::consts::LN_10)
            .map(|((d, j), _)| (d * j).abs())
            .sum();
        if !(tail <= 1e-9 * (1.0 + c.value.abs())) {
            return Err(Error::Finiteness(format!(
                "integrand does not decay: last decade carries {tail:.3e}"
            )));
        }
        integral.add(c.value);
        err += c.quad_err;
        stats.extend(c.grid_stats);
        // Wolpert norms: ‖dz‖^W = 1 in each Poincaré-compatible chart, z₀ = (a₀/a) z relative to g.
        wolpert += b.ln_a - a.ln_a;
        puncture += 0.5 * 2.0 * rank * ((a.xi)(settings.w_max)?.v - (b.xi)(settings.w_max)?.v);
    }
    let integral = integral.value();
    let wolpert_term = -rank / 6.0 * wolpert;
    Ok(RhsReport {
        value: integral + settings.interior + wolpert_term + puncture,
        integral,
        interior: settings.interior,
        wolpert_term,
        puncture_term: puncture,
        quad_err: err,
        grid_stats: stats,
    })
}

/// Band integral of the anomaly-family flattenings of a cusp and of its
/// reparameterization `z₀ = a z`, over `r ≤ θ^{1/2} max(1, 1/|a|)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandLimit {
    pub theta: f64,
    pub value: f64,
    /// `−(rank/6) ln|a|`, the limit as `θ → 0`.
    pub limit: f64,
    pub ratio: f64,
    pub quad_err: f64,
}

pub fn cusp_limit_band(theta: f64, h_prime: [f64; 2], rank: usize, n: i32) -> Result<BandLimit> {
    let fam = FlatteningFamily::anomaly(theta)?;
    let (mut g, norm) = fam.descriptors()?;
    let (mut g0, norm0) = fam.descriptors()?;
    // Keep the rescaled chart radius above the band.
    g.charts[0].radius = 0.999;
    g0.charts[0].radius = 0.999;
    g0.charts[0].h_prime_at_zero = h_prime;
    let xi = XiMetric::trivial(rank, 1);
    let ln_a = ln_abs_germ(h_prime)?;
    let r_outer = theta.sqrt() * (-ln_a).exp().max(1.0);
    let settings = RhsSettings {
        r_outer: Some(r_outer),
        ..RhsSettings::smooth()
    };
    let rep = anomaly_rhs_bgs(
        &MetricData {
            metric: &g,
            norm: &norm,
            xi: &xi,
        },
        &MetricData {
            metric: &g0,
            norm: &norm0,
            xi: &xi,
        },
        n,
        &settings,
    )?;
    let limit = -(rank as f64) / 6.0 * ln_a;
    Ok(BandLimit {
        theta,
        value: rep.value,
        limit,
        ratio: rep.value / limit,
        quad_err: rep.quad_err,
    })
}

// ---------------------------------------------------------------- compact perturbation

/// `∫ c₁(ξ)(2n ln(‖·‖_f/‖·‖) + ln(g_f/g))` over one chart from sampled `c₁(ξ)`.
pub fn compact_perturbation_chart(
    g: &MetricChart,
    g_f: &MetricChart,
    norm: &NormChart,
    norm_f: &NormChart,
    c1_xi: &FormSample,
    grid: &ChartGrid,
    n: i32,
) -> Result<f64> {
    if g.h_prime_at_zero != g_f.h_prime_at_zero {
        return domain("a flattening shares the chart of the metric it flattens");
    }
    let ln_a = ln_abs_germ(g.h_prime_at_zero)?;
    let nf = f64::from(n);
    let weights = grid
        .w_nodes
        .iter()
        .map(|&w| {
            let p = pulled_point(w, ln_a)?;
            let norm_ratio = norm_f.log_norm.eval_at(&p)? - norm.log_norm.eval_at(&p)?;
            let metric_ratio =
                2.0 * (g_f.log_conformal.eval_at(&p)? - g.log_conformal.eval_at(&p)?);
            Ok(2.0 * nf * norm_ratio + metric_ratio)
        })
        .collect::<Result<Vec<_>>>()?;
    let weighted = FormSample {
        degree: 2,
        values: c1_xi
            .values
            .iter()
            .zip(&weights)
            .map(|(c, k)| c * k)
            .collect(),
    };
    weighted.integrate(grid)
}

/// Compact-perturbation right-hand side with `c₁(ξ) = rank · c₁(ν_ξ)` sampled on an adaptive grid per chart.
pub fn compact_perturbation_rhs(
    g: &MetricDescriptor,
    g_f: &MetricDescriptor,
    norm: &NormDescriptor,
    norm_f: &NormDescriptor,
    xi: &XiMetric,
    n: i32,
    settings: &RhsSettings,
) -> Result<Integral> {
    let m = g.charts.len();
    if [
        g_f.charts.len(),
        norm.charts.len(),
        norm_f.charts.len(),
        xi.charts.len(),
    ]
    .iter()
    .any(|&c| c != m)
    {
        return Err(Error::Input(
            "descriptors disagree on the number of charts".into(),
        ));
    }
    let mut total = KahanSum::default();
    let mut err = 0.0;
    let mut stats = Vec::new();
    for i in 0..m {
        let r_outer = settings
            .r_outer
            .unwrap_or(0.9 * g.charts[i].radius.min(1.0));
        let w_lo = (-r_outer.ln()).ln();
        let ln_a = ln_abs_germ(g.charts[i].h_prime_at_zero)?;
        let xi_field = profile_field(&xi.charts[i]);
        let probe = |w: f64| -> f64 {
            let density = || -> Result<f64> {
                let p = pulled_point(w, ln_a)?;
                let norm_ratio =
                    norm_f.charts[i].log_norm.eval_at(&p)? - norm.charts[i].log_norm.eval_at(&p)?;
                let metric_ratio = g_f.charts[i].log_conformal.eval_at(&p)?
                    - g.charts[i].log_conformal.eval_at(&p)?;
                Ok(jet(&xi_field, w)?.c * (2.0 * f64::from(n) * norm_ratio + 2.0 * metric_ratio))
            };
            density().unwrap_or(f64::NAN)
        };
        let grid = ChartGrid::adaptive(w_lo, settings.w_max, &probe, settings.grid_tol)?;
        let eval = |grid: &ChartGrid| -> Result<f64> {
            let c1 = c1_radial(&xi.charts[i], grid)?.scaled(xi.rank as f64);
            compact_perturbation_chart(
                &g.charts[i],
                &g_f.charts[i],
                &norm.charts[i],
                &norm_f.charts[i],
                &c1,
                grid,
                n,
            )
        };
        let fine_grid = grid.refine();
        let (v0, v1) = (eval(&grid)?, eval(&fine_grid)?);
        total.add(v1);
        err += (v1 - v0).abs();
        stats.push(fine_grid.stats());
    }
    Ok(Integral {
        value: total.value() + settings.interior,
        quad_err: err,
        grid_stats: stats,
    })
}

// ---------------------------------------------------------------- ω versus ω(D)

/// Residuals of the three identities relating the `ω` and `ω(D)` forms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    /// `max |Td̃^{[0]}(ω^{-1}) − Td̃^{[0]}(ω(D)^{-1})|` over the grid nodes.
    pub identity1_residual: f64,
    /// `|ch̃^{[0]}(ω(D)^n)|` per unit `n` at `w = 40`, i.e. `|ln r| = e^{40}`.
    pub identity3_deep: f64,
    /// The same at `r = e^{−40}`, where the `O(1/|ln r|)` decay has barely started.
    pub identity3_at_r: f64,
    /// `∫_{r<ε} Td(ω^{-1})^{[2]} − ∫_{r<ε} Td(ω(D)^{-1})^{[2]}` at `ε = e^{−20}` by boundary flux.
    pub identity2_flux: f64,
}

/// Checks the `ω`/`ω(D)` identities for two cusp metrics with their induced norms on chart 0.
pub fn ch_similarity_check(
    g: &MetricDescriptor,
    norm: &NormDescriptor,
    g0: &MetricDescriptor,
    norm0: &NormDescriptor,
    grid: &ChartGrid,
) -> Result<SimilarityReport> {
    let (mc, nc) = (&g.charts[0], &norm.charts[0]);
    let (mc0, nc0) = (&g0.charts[0], &norm0.charts[0]);
    let (la, la0) = (
        ln_abs_germ(mc.h_prime_at_zero)?,
        ln_abs_germ(mc0.h_prime_at_zero)?,
    );
    // ln‖∂_z‖ up to the common −ln r, and ln‖z∂_z‖ as the dual of the recorded norm.
    let tangent = |c: &MetricChart, l: f64, w: f64| -> Result<f64> {
        let p = pulled_point(w, l)?;
        Ok(c.log_conformal.eval_at(&p)? - p.w())
    };
    let dual = |c: &NormChart, l: f64, w: f64| -> Result<f64> {
        Ok(-c.log_norm.eval_at(&pulled_point(w, l)?)?)
    };
    let mut id1 = 0.0f64;
    for &w in &grid.w_nodes {
        let omega = tangent(mc, la, w)? - tangent(mc0, la0, w)?;
        let omega_d = dual(nc, la, w)? - dual(nc0, la0, w)?;
        id1 = id1.max((omega - omega_d).abs());
    }
    let twist_gap = |w: f64| -> Result<f64> {
        Ok(2.0
            * (nc.log_norm.eval_at(&pulled_point(w, la)?)?
                - nc0.log_norm.eval_at(&pulled_point(w, la0)?)?))
    };
    let identity3_deep = twist_gap(40.0)?.abs();
    let identity3_at_r = twist_gap(40f64.ln())?.abs();
    // ∫_{r<ε} c₁ = ½ e^{−w} κ_w for a log-metric κ; Td^{[2]} = c₁/2. For ω^{-1} the frame ∂_z adds
    // the harmonic −2 ln r = 2e^w to κ, whose flux carries the puncture.
    let w_eps = 20f64.ln();
    let l = pulled_ln_r(w_eps, la0)?;
    let kappa_omega_w = 2.0 * ((mc0.log_conformal.eval_jet(l)? - l.ln_abs()).d1 + w_eps.exp());
    let kappa_omega_d_w = -2.0 * nc0.log_norm.eval_jet(l)?.d1;
    let identity2_flux = 0.5 * 0.5 * (-w_eps).exp() * (kappa_omega_w - kappa_omega_d_w);
    Ok(SimilarityReport {
        identity1_residual: id1,
        identity3_deep,
        identity3_at_r,
        identity2_flux,
    })
}

/// `∫_{r<ε} c₁` of a log-norm profile by boundary flux: `e^{−w} ν_w` at `w = ln|ln ε|`.
pub fn c1_flux_inside(log_norm: &ProfileExpr, eps: f64) -> Result<f64> {
    let w = RadialPoint::from_r(eps)?.w();
    Ok((-w).exp() * log_norm.eval_jet_w(w)?.d1)
}

/// `∫_{r<ε} dA` of the Poincaré cusp in `w`: `2π/|ln ε|`.
pub fn poincare_area_inside(eps: f64) -> Result<f64> {
    Ok(2.0 * PI / -RadialPoint::from_r(eps)?.ln_r)
}
