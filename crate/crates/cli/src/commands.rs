//! Command bodies. Each returns the text to emit and whether every tolerance held.

use std::path::Path;

use cusp_torsion::acceptance::run_battery;
use cusp_torsion::chern_anomaly::{
    anomaly_rhs_bgs, anomaly_rhs_cusp, compact_perturbation_rhs, cusp_limit_band, MetricData,
    RhsSettings, XiMetric,
};
use cusp_torsion::heat_kernel::cusp_kernel;
use cusp_torsion::hyp_geometry::CuspPoint;
use cusp_torsion::metrics_flattenings::{
    cutoff_integrals, tight_sandwich, FlatteningFamily, FlatteningKind, FlatteningRequest,
    SurfaceDescriptor,
};
use cusp_torsion::reg_trace::{
    geometric_grid, regularized_trace, trace_curve, HeatDataProvider, ProviderSpec,
};
use cusp_torsion::special_functions::{c_k, euler_gamma, glaisher_log, zeta_prime_minus1};
use cusp_torsion::zeta_torsion::{
    analytic_torsion, ln_zp_thrice_punctured, ray_singer_torsion, selberg_zeta, LengthSpectrum,
};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Map, Value};

use crate::output::{to_csv, to_json};
use crate::Failure;

/// Options shared by every command.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub config: Option<serde_json::Value>,
    pub tol: Option<f64>,
    pub theta: Option<Vec<f64>>,
    pub t_grid: Option<TimeGrid>,
    pub paper_constants: bool,
    pub header: bool,
}

/// Geometric time grid `t_min:t_max:points`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t_min: f64,
    pub t_max: f64,
    pub points: usize,
}

impl TimeGrid {
    pub fn parse(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let [a, b, n] = parts[..] else {
            return Err(format!("expected a:b:n, got {s:?}"));
        };
        let t_min: f64 = a
            .trim()
            .parse()
            .map_err(|e| format!("bad t_min {a:?}: {e}"))?;
        let t_max: f64 = b
            .trim()
            .parse()
            .map_err(|e| format!("bad t_max {b:?}: {e}"))?;
        let points: usize = n
            .trim()
            .parse()
            .map_err(|e| format!("bad point count {n:?}: {e}"))?;
        if !(t_min > 0.0 && t_max > t_min && points >= 2) {
            return Err(format!(
                "need 0 < t_min < t_max and at least 2 points, got {s:?}"
            ));
        }
        Ok(Self {
            t_min,
            t_max,
            points,
        })
    }

    fn times(&self) -> Result<Vec<f64>, Failure> {
        Ok(geometric_grid(self.t_min, self.t_max, self.points)?)
    }
}

/// Comma-separated positive values, e.g. `1e-3,1e-4`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaList(pub Vec<f64>);

pub fn parse_list(s: &str) -> Result<ThetaList, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .map_err(|e| format!("bad number {x:?}: {e}"))
        })
        .collect::<Result<_, _>>()?;
    if v.is_empty() || v.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
        return Err(format!("expected positive finite numbers, got {s:?}"));
    }
    Ok(ThetaList(v))
}

pub fn parse_tol(s: &str) -> Result<f64, String> {
    let t: f64 = s
        .trim()
        .parse()
        .map_err(|e| format!("bad tolerance {s:?}: {e}"))?;
    if !(t > 0.0 && t.is_finite()) {
        return Err(format!("tolerance must be positive, got {s:?}"));
    }
    Ok(t)
}

pub fn read_config(path: &Path) -> Result<Value, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Input(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

/// Output of one command.
pub struct Emitted {
    pub text: String,
    /// False when a tolerance check inside the command failed.
    pub ok: bool,
}

fn emit_json(v: &impl serde::Serialize) -> Result<Emitted, Failure> {
    Ok(Emitted {
        text: to_json(v).map_err(|e| Failure::Internal(e.to_string()))?,
        ok: true,
    })
}

fn section<T: DeserializeOwned>(cfg: &RunConfig, what: &str) -> Result<T, Failure> {
    let v = cfg
        .config
        .clone()
        .ok_or_else(|| Failure::Input(format!("{what} needs --config")))?;
    serde_json::from_value(v).map_err(|e| Failure::Input(format!("{what} config: {e}")))
}

fn optional_section<T: DeserializeOwned + Default>(
    cfg: &RunConfig,
    what: &str,
) -> Result<T, Failure> {
    match &cfg.config {
        None => Ok(T::default()),
        Some(_) => section(cfg, what),
    }
}

// ---------------------------------------------------------------- constants, psi-check

pub fn constants(cfg: &RunConfig) -> Result<Emitted, Failure> {
    let mut out = Map::new();
    out.insert("zeta_prime_minus1".into(), json!(zeta_prime_minus1().value));
    out.insert("euler_gamma".into(), json!(euler_gamma().value));
    out.insert("glaisher_log".into(), json!(glaisher_log().value));
    for k in 0..=4u32 {
        out.insert(format!("c_{k}"), json!(c_k(k).value));
    }
    out.insert("ln_Zp_P_1".into(), json!(ln_zp_thrice_punctured().value));
    let mut notes = Map::new();
    notes.insert("c_0".into(), json!("4 zeta'(-1) - 1/2 + ln(2 pi)"));
    notes.insert(
        "c_k".into(),
        json!("closed-form sum for k >= 1, evaluated directly"),
    );
    notes.insert(
        "ln_Zp_P_1".into(),
        json!("4 zeta'(-1) + ln(2 pi) + (10/9) ln 2"),
    );
    notes.insert("zeta_prime_0".into(), json!("F_0 - A_{-1} + gamma A_0"));
    out.insert("notes".into(), Value::Object(notes));
    if cfg.paper_constants {
        out.insert(
            "literal_constant_term".into(),
            json!({
                "printed": "F_0 + A_{-1} - Gamma'(-1) A_0",
                "as_evaluated": "F_0 + A_{-1} + gamma A_0, reading Gamma'(-1) as Gamma'(1) = -gamma",
                "validated": "F_0 - A_{-1} + gamma A_0",
            }),
        );
    }
    emit_json(&out)
}

pub fn psi_check(cfg: &RunConfig) -> Result<Emitted, Failure> {
    let c = cutoff_integrals();
    let tol = cfg.tol.unwrap_or(1e-8);
    let targets = [
        ("d_psi", c.d_psi, -1.0),
        ("u_dd_psi", c.u_dd_psi, 1.0),
        ("d_psi_psi", c.d_psi_psi, -0.5),
        (
            "u_dd_psi_psi_plus_u_d_psi_sq",
            c.u_dd_psi_psi_plus_u_d_psi_sq,
            0.5,
        ),
        (
            "u2_d_psi_dd_psi_plus_u_d_psi_sq",
            c.u2_d_psi_dd_psi_plus_u_d_psi_sq,
            0.0,
        ),
        ("lemma_combination", c.lemma_combination, 0.25),
    ];
    let ok = targets.iter().all(|(_, v, t)| (v - t).abs() <= tol);
    let rows: Vec<Value> =
        targets.iter().map(|(n, v, t)| json!({"name": n, "value": v, "expected": t, "passed": (v - t).abs() <= tol})).collect();
    let mut e = emit_json(
        &json!({"tolerance": tol, "integrals": rows, "max_quad_err": c.max_quad_err, "passed": ok}),
    )?;
    e.ok = ok;
    Ok(e)
}

// ---------------------------------------------------------------- kernel

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelConfig {
    #[serde(default)]
    t: Option<f64>,
    /// Points of the punctured disc as `[re, im]`.
    u1: [f64; 2],
    u2: [f64; 2],
    #[serde(default)]
    n: i32,
    #[serde(default)]
    eps: Option<f64>,
}

pub fn kernel(cfg: &RunConfig) -> Result<Emitted, Failure> {
    let k: KernelConfig = section(cfg, "kernel")?;
    let eps = k.eps.or(cfg.tol).unwrap_or(1e-10);
    let (u1, u2) = (
        CuspPoint::new(k.u1[0], k.u1[1])?,
        CuspPoint::new(k.u2[0], k.u2[1])?,
    );
    match (&cfg.t_grid, k.t) {
        (Some(grid), _) => {
            let rows = grid
                .times()?
                .iter()
                .map(|&t| {
                    let v = cusp_kernel(t, u1, u2, k.n, eps)?;
                    Ok(vec![t, v.value, v.trunc_err])
                })
                .collect::<Result<Vec<_>, Failure>>()?;
            Ok(Emitted {
                text: to_csv(&["t", "kernel", "trunc_err"], &rows, cfg.header),
                ok: true,
            })
        }
        (None, Some(t)) => emit_json(&cusp_kernel(t, u1, u2, k.n, eps)?),
        (None, None) => Err(Failure::Input(
            "kernel needs \"t\" in the config or --t-grid".into(),
        )),
    }
}

// ---------------------------------------------------------------- trace, torsion

/// A provider given inline or by name.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ProviderInput {
    Named(String),
    Spec(Box<ProviderSpec>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceConfig {
    provider: ProviderInput,
    #[serde(default)]
    reference: Option<ProviderInput>,
    /// Chart radius used to split cusp and core contributions.
    #[serde(default)]
    eta: Option<f64>,
    /// Log-scale of the built-in flat torus.
    #[serde(default)]
    log_scale: f64,
}

fn provider(input: &ProviderInput, n: i32, log_scale: f64) -> Result<HeatDataProvider, Failure> {
    match input {
        ProviderInput::Spec(spec) => Ok(HeatDataProvider::from_spec(spec)?),
        ProviderInput::Named(name) => match name.as_str() {
            "reference_sphere" => Ok(HeatDataProvider::reference_sphere(n)),
            "reference_triplicate" => Ok(HeatDataProvider::reference_sphere(n).triplicate()),
            "flat_torus" => Ok(HeatDataProvider::flat_torus(log_scale)),
            other => Err(Failure::Input(format!(
                "unknown provider {other:?}; expected reference_sphere, reference_triplicate or flat_torus"
            ))),
        },
    }
}

fn providers(
    cfg: &RunConfig,
) -> Result<(HeatDataProvider, HeatDataProvider, Option<f64>), Failure> {
    let c: TraceConfig = section(cfg, "trace")?;
    let pm = provider(&c.provider, 0, c.log_scale)?;
    let pp = match &c.reference {
        Some(r) => provider(r, pm.n, c.log_scale)?,
        None => HeatDataProvider::reference_sphere(pm.n),
    };
    // Named reference providers follow the twist of the surface.
    let pm = match &c.provider {
        ProviderInput::Named(_) if pp.n != pm.n => provider(&c.provider, pp.n, c.log_scale)?,
        _ => pm,
    };
    Ok((pm, pp, c.eta))
}

/// `t,trace` rows of the regularized heat trace.
pub fn trace(cfg: &RunConfig) -> Result<Emitted, Failure> {
    let (pm, pp, eta) = providers(cfg)?;
    let grid = cfg
        .t_grid
        .unwrap_or(TimeGrid {
            t_min: 1e-3,
            t_max: 10.0,
            points: 20,
        })
        .times()?;
    let eta = eta.unwrap_or(if pm.m > 0 { pm.core_radius } else { 0.1 });
    let rows = grid
        .iter()
        .map(|&t| Ok(vec![t, regularized_trace(&pm, &pp, t, eta)?]))
        .collect::<Result<Vec<_>, Failure>>()?;
    Ok(Emitted {
        text: to_csv(&["t", "trace"], &rows, cfg.header),
        ok: true,
    })
}

pub fn torsion(cfg: &RunConfig) -> Result<Emitted, Failure> {
    let (pm, pp, _) = providers(cfg)?;
    let grid = cfg
        .t_grid
        .unwrap_or(TimeGrid {
            t_min: 1e-5,
            t_max: 30.0,
            points: 1500,
        })
        .times()?;
    let curve = trace_curve(&pm, &pp, &grid)?;
    let t = analytic_torsion(&pm, &pp, &curve)?;
    let mut out = Map::new();
    out.insert("zeta_prime_0".into(), json!(t.zeta.zeta_prime_0));
    out.insert("zeta_0".into(), json!(t.zeta.zeta_0()));
    out.insert("F0".into(), json!(t.zeta.f0));
    out.insert("A_minus1".into(), json!(t.zeta.a_minus1));
    out.insert("A_0".into(), json!(t.zeta.a_0));
    out.insert("quad_err".into(), json!(t.zeta.quad_err));
    out.insert("ln_torsion".into(), json!(t.ln_torsion));
    out.insert("torsion".into(), json!(t.torsion));
    out.insert("ln_t_tz_reference".into(), json!(t.ln_t_tz_reference));
    out.insert("reference_weight".into(), json!(t.weight));
    out.insert(
        "ray_singer_torsion".into(),
        json!(ray_singer_torsion(&t.zeta)),
    );
    out.insert(
        "tail_model".into(),
        serde_json::to_value(curve.tail_model).map_err(|e| Failure::Internal(e.to_string()))?,
    );
    if cfg.paper_constants {
        out.insert(
            "literal_constant_term".into(),
            json!(t.zeta.literal_constant_term()),
        );
    }
    emit_json(&out)
}

// ---------------------------------------------------------------- selberg

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SelbergConfig {
    lengths: Vec<f64>,
    multiplicities: Vec<u32>,
    s: f64,
    #[serde(default = "default_k_max")]
    k_max: u32,
}

fn default_k_max() -> u32 {
    50
}

pub fn selberg(cfg: &RunConfig) -> Result<Emitted, Failure> {
    let c: SelbergConfig = section(cfg, "selberg")?;
    let spectrum = LengthSpectrum::new(c.lengths, c.multiplicities)?;
    let tol = cfg.tol.unwrap_or(1e-12);
    let v = selberg_zeta(c.s, &spectrum, c.k_max, tol)?;
    let ok = v.k_tail_bound <= tol;
    let mut e = emit_json(&v)?;
    e.ok = ok;
    Ok(e)
}

// ---------------------------------------------------------------- anomaly

#[derive(Debug, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
enum AnomalyConfig {
    /// Band integrals of a germ reparameterization against `−(rank/6) ln|h'(0)|`.
    CuspLimit {
        h_prime: [f64; 2],
        #[serde(default = "one")]
        rank: usize,
        #[serde(default)]
        n: i32,
    },
    /// Cusp anomaly `2 ln(‖·‖_Q(g0)/‖·‖_Q(g))`.
    Cusp {
        g: SurfaceDescriptor,
        g0: SurfaceDescriptor,
        xi: XiPair,
        #[serde(default)]
        n: i32,
        #[serde(default)]
        settings: Option<RhsSettings>,
    },
    /// Smooth anomaly `2 ln(‖·‖_Q(2)/‖·‖_Q(1))`.
    Bgs {
        g1: SurfaceDescriptor,
        g2: SurfaceDescriptor,
        xi: XiPair,
        #[serde(default)]
        n: i32,
        #[serde(default)]
        settings: Option<RhsSettings>,
    },
    /// Compact-perturbation right-hand side for a flattening `g_f` of `g`.
    Compact {
        g: SurfaceDescriptor,
        g_f: SurfaceDescriptor,
        xi: XiMetric,
        #[serde(default)]
        n: i32,
        #[serde(default)]
        settings: Option<RhsSettings>,
    },
}

/// Bundle metrics for the two sides; `second` defaults to `first`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct XiPair {
    first: XiMetric,
    #[serde(default)]
    second: Option<XiMetric>,
}

fn one() -> usize {
    1
}

pub fn anomaly(cfg: &RunConfig) -> Result<Emitted, Failure> {
    match section::<AnomalyConfig>(cfg, "anomaly")? {
        AnomalyConfig::CuspLimit { h_prime, rank, n } => {
            let thetas = cfg.theta.clone().unwrap_or_else(|| vec![1e-3, 1e-4, 1e-5]);
            let bands = thetas
                .iter()
                .map(|&t| cusp_limit_band(t, h_prime, rank, n))
                .collect::<Result<Vec<_>, _>>()?;
            let limit = bands.first().map_or(f64::NAN, |b| b.limit);
            let mut out = Map::new();
            out.insert("limit".into(), json!(limit));
            out.insert(
                "bands".into(),
                serde_json::to_value(&bands).map_err(|e| Failure::Internal(e.to_string()))?,
            );
            let ok = match cfg.tol {
                Some(tol) => bands.iter().all(|b| (b.ratio - 1.0).abs() <= tol),
                None => true,
            };
            let mut e = emit_json(&out)?;
            e.ok = ok;
            Ok(e)
        }
        AnomalyConfig::Cusp {
            g,
            g0,
            xi,
            n,
            settings,
        } => {
            let (m, nd) = g.split();
            let (m0, nd0) = g0.split();
            let second = xi.second.as_ref().unwrap_or(&xi.first);
            let rep = anomaly_rhs_cusp(
                &MetricData {
                    metric: &m,
                    norm: &nd,
                    xi: &xi.first,
                },
                &MetricData {
                    metric: &m0,
                    norm: &nd0,
                    xi: second,
                },
                n,
                &settings.unwrap_or_else(RhsSettings::cusp),
            )?;
            emit_json(&rep)
        }
        AnomalyConfig::Bgs {
            g1,
            g2,
            xi,
            n,
            settings,
        } => {
            let (m1, n1) = g1.split();
            let (m2, n2) = g2.split();
            let second = xi.second.as_ref().unwrap_or(&xi.first);
            let rep = anomaly_rhs_bgs(
                &MetricData {
                    metric: &m1,
                    norm: &n1,
                    xi: &xi.first,
                },
                &MetricData {
                    metric: &m2,
                    norm: &n2,
                    xi: second,
                },
                n,
                &settings.unwrap_or_else(RhsSettings::smooth),
            )?;
            emit_json(&rep)
        }
        AnomalyConfig::Compact {
            g,
            g_f,
            xi,
            n,
            settings,
        } => {
            let (m, nd) = g.split();
            let (mf, ndf) = g_f.split();
            let v = compact_perturbation_rhs(
                &m,
                &mf,
                &nd,
                &ndf,
                &xi,
                n,
                &settings.unwrap_or_else(RhsSettings::smooth),
            )?;
            emit_json(&v)
        }
    }
}

// ---------------------------------------------------------------- flatten

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlattenConfig {
    #[serde(default)]
    kind: Option<FlatteningKind>,
    #[serde(default)]
    theta: Option<f64>,
    #[serde(default)]
    n: i32,
    /// Sandwich samples for the tight family.
    #[serde(default)]
    samples: Option<usize>,
}

pub fn flatten(cfg: &RunConfig) -> Result<Emitted, Failure> {
    let c: FlattenConfig = optional_section(cfg, "flatten")?;
    let kind = c.kind.unwrap_or(FlatteningKind::Anomaly);
    let thetas = match (&cfg.theta, c.theta) {
        (Some(list), _) => list.clone(),
        (None, Some(t)) => vec![t],
        (None, None) => {
            return Err(Failure::Input(
                "flatten needs --theta or \"theta\" in the config".into(),
            ))
        }
    };
    let mut families = Vec::new();
    let mut ok = true;
    for theta in thetas {
        let fam = FlatteningFamily::from_request(&FlatteningRequest {
            kind,
            theta,
            n: c.n,
        })?;
        let (log_conformal, log_norm) = fam.profile_sources();
        let mut entry = Map::new();
        entry.insert(
            "family".into(),
            serde_json::to_value(&fam).map_err(|e| Failure::Internal(e.to_string()))?,
        );
        entry.insert("log_conformal".into(), json!(log_conformal));
        entry.insert("log_norm".into(), json!(log_norm));
        if kind == FlatteningKind::Tight {
            let s = tight_sandwich(theta, c.n, c.samples.unwrap_or(10_000))?;
            ok &= s.holds;
            entry.insert(
                "sandwich".into(),
                serde_json::to_value(s).map_err(|e| Failure::Internal(e.to_string()))?,
            );
        }
        families.push(Value::Object(entry));
    }
    let mut e = emit_json(&families)?;
    e.ok = ok;
    Ok(e)
}

// ---------------------------------------------------------------- verify

/// Runs the acceptance battery; the one-line summaries go to stderr.
pub fn verify(_cfg: &RunConfig) -> Result<Emitted, Failure> {
    let reports = run_battery();
    for r in &reports {
        eprintln!("{}", r.summary_line());
    }
    let ok = reports.iter().all(|r| r.passed);
    let failed: Vec<u8> = reports.iter().filter(|r| !r.passed).map(|r| r.id).collect();
    let mut e = emit_json(&json!({"passed": ok, "failed": failed, "criteria": reports}))?;
    e.ok = ok;
    Ok(e)
}
