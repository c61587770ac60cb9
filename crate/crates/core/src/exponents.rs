//! Finite-time Lyapunov exponents, `Σ_d(t, x)` and the grid estimate of
//! `𝚺_d = inf_t max_x Σ_d(t, x)`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::certificate::{CertificateGrid, ContractionCertificate, CriterionMethod, Margins, Verdict};
use crate::error::{Error, Result};
use crate::flow::{compound_log_norms_at, variational_flow_at, DynamicalSystem, IntegratorOptions};
use crate::linalg::{singular_values, FractionalDimension};
use crate::region::{GridMeta, Region};

/// Above this condition number of `X(t, x)` the exponents are recomputed
/// from the compound flows instead of the SVD of `X`.
pub const COND_SWITCH: f64 = 1e8;

/// Per-horizon maxima may increase by this much before being flagged.
pub const MONOTONICITY_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExponentRecord {
    pub x: Vec<f64>,
    pub t: f64,
    /// `Λ₁ ≥ … ≥ Λₙ`.
    pub exponents: Vec<f64>,
    pub sigma_d: f64,
    /// Exponents came from the compound flows.
    pub via_compounds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct HorizonSummary {
    pub t: f64,
    pub max_sigma_d: f64,
    pub argmax: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExponentReport {
    pub d: f64,
    pub per_point: Vec<ExponentRecord>,
    pub per_horizon: Vec<HorizonSummary>,
    pub bold_sigma_estimate: f64,
    pub flags: Vec<String>,
    pub grid: GridMeta,
}

impl ExponentReport {
    /// CSV `x1..xn,t,Lambda1..Lambdan,Sigma_d`.
    pub fn to_csv(&self) -> String {
        use crate::report::fmt17;
        let n = self.per_point.first().map_or(0, |r| r.x.len());
        let mut out = String::new();
        let mut head: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        head.push("t".into());
        head.extend((1..=n).map(|i| format!("Lambda{i}")));
        head.push("Sigma_d".into());
        out.push_str(&head.join(","));
        out.push('\n');
        for r in &self.per_point {
            let mut row: Vec<String> = r.x.iter().map(|v| fmt17(*v)).collect();
            row.push(fmt17(r.t));
            row.extend(r.exponents.iter().map(|v| fmt17(*v)));
            row.push(fmt17(r.sigma_d));
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// CSV `t,max_Sigma_d` for plotting the per-horizon maxima.
    pub fn horizon_csv(&self) -> String {
        use crate::report::fmt17;
        let mut out = String::from("t,max_Sigma_d\n");
        for h in &self.per_horizon {
            out.push_str(&format!("{},{}\n", fmt17(h.t), fmt17(h.max_sigma_d)));
        }
        out
    }
}

fn check_horizons(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::input("at least one horizon is required"));
    }
    let mut prev = 0.0;
    for &t in times {
        if !(t > prev) || !t.is_finite() {
            return Err(Error::input("horizons must be positive, finite and increasing"));
        }
        prev = t;
    }
    Ok(())
}

/// Exponents `Λ₁..Λₙ` at each horizon, plus whether the compound route
/// was used.
pub fn exponents_at(
    sys: &DynamicalSystem,
    x0: &DVector<f64>,
    times: &[f64],
    opts: &IntegratorOptions,
) -> Result<Vec<(Vec<f64>, bool)>> {
    check_horizons(times)?;
    let states = variational_flow_at(sys, x0, times, opts)?;
    let mut out = Vec::with_capacity(times.len());
    let mut ill = false;
    for st in &states {
        let sv = singular_values(&st.x_jac)?;
        let cond = sv[0] / sv[sv.len() - 1];
        if !(cond <= COND_SWITCH) {
            ill = true;
            break;
        }
        let ex = sv.iter().map(|s| (s.ln() + st.log_scale) / st.t).collect();
        out.push((ex, false));
    }
    if !ill {
        return Ok(out);
    }
    let rows = compound_log_norms_at(sys, x0, times, opts)?;
    Ok(rows
        .into_iter()
        .zip(times)
        .map(|(c, &t)| {
            let mut prev = 0.0;
            let mut ex: Vec<f64> = c
                .iter()
                .map(|&ck| {
                    let v = (ck - prev) / t;
                    prev = ck;
                    v
                })
                .collect();
            ex.sort_by(|a, b| b.total_cmp(a));
            (ex, true)
        })
        .collect())
}

/// `Λᵢ(t, x0) = t⁻¹ ln αᵢ(t, x0)`, descending.
pub fn finite_time_exponents(
    sys: &DynamicalSystem,
    x0: &DVector<f64>,
    t: f64,
    opts: &IntegratorOptions,
) -> Result<Vec<f64>> {
    Ok(exponents_at(sys, x0, &[t], opts)?.pop().expect("one horizon").0)
}

/// `Σ_d(t, x0) = Λ₁ + … + Λ_{d0} + s·Λ_{d0+1}`.
pub fn sigma_d(
    sys: &DynamicalSystem,
    x0: &DVector<f64>,
    t: f64,
    dim: &FractionalDimension,
    opts: &IntegratorOptions,
) -> Result<f64> {
    check_dim(sys, dim)?;
    Ok(dim.top_sum(&finite_time_exponents(sys, x0, t, opts)?))
}

fn check_dim(sys: &DynamicalSystem, dim: &FractionalDimension) -> Result<()> {
    if dim.n() != sys.dim() {
        return Err(Error::input(format!(
            "dimension refers to n = {} but the system has n = {}",
            dim.n(),
            sys.dim()
        )));
    }
    Ok(())
}

/// Geometric horizon schedule `1, 2, 4, …` capped by (and ending at) `t_max`.
pub fn default_horizons(t_max: f64) -> Result<Vec<f64>> {
    if !(t_max > 0.0 && t_max.is_finite()) {
        return Err(Error::input("t_max must be positive"));
    }
    let mut out = Vec::new();
    let mut t = 1.0;
    while t < t_max {
        out.push(t);
        t *= 2.0;
    }
    out.push(t_max);
    Ok(out)
}

/// Max over the admissible grid of `Σ_d(t, ·)` for each horizon, and the
/// minimum of those maxima.
pub fn estimate_bold_sigma_d(
    sys: &DynamicalSystem,
    region: &Region,
    dim: &FractionalDimension,
    horizons: &[f64],
    opts: &IntegratorOptions,
) -> Result<ExponentReport> {
    check_dim(sys, dim)?;
    check_horizons(horizons)?;
    if region.dim() != sys.dim() {
        return Err(Error::input("region and system dimensions differ"));
    }
    let points = region.points()?;
    let results = crate::par_map(&points, |x| exponents_at(sys, x, horizons, opts));
    let mut per_point = Vec::with_capacity(points.len() * horizons.len());
    let mut per_horizon: Vec<HorizonSummary> = horizons
        .iter()
        .map(|&t| HorizonSummary {
            t,
            max_sigma_d: f64::NEG_INFINITY,
            argmax: Vec::new(),
        })
        .collect();
    let mut compound_points = 0;
    for (x, res) in points.iter().zip(results) {
        let rows = res?;
        if rows.iter().any(|r| r.1) {
            compound_points += 1;
        }
        for ((ex, via), h) in rows.into_iter().zip(per_horizon.iter_mut()) {
            let sd = dim.top_sum(&ex);
            if sd > h.max_sigma_d {
                h.max_sigma_d = sd;
                h.argmax = x.iter().copied().collect();
            }
            per_point.push(ExponentRecord {
                x: x.iter().copied().collect(),
                t: h.t,
                exponents: ex,
                sigma_d: sd,
                via_compounds: via,
            });
        }
    }
    let mut flags = Vec::new();
    for w in per_horizon.windows(2) {
        if w[1].max_sigma_d > w[0].max_sigma_d + MONOTONICITY_TOL {
            flags.push(format!(
                "per-horizon maximum increases from t = {} ({:.6e}) to t = {} ({:.6e})",
                w[0].t, w[0].max_sigma_d, w[1].t, w[1].max_sigma_d
            ));
        }
    }
    if compound_points > 0 {
        flags.push(format!(
            "{compound_points} point(s) had cond(X) > {COND_SWITCH:e}; exponents taken from compound flows"
        ));
    }
    let bold = per_horizon
        .iter()
        .map(|h| h.max_sigma_d)
        .fold(f64::INFINITY, f64::min);
    Ok(ExponentReport {
        d: dim.d(),
        per_point,
        per_horizon,
        bold_sigma_estimate: bold,
        flags,
        grid: region.meta()?,
    })
}

/// First-method verdict on an exponent report.
pub fn first_method_verdict(report: &ExponentReport, margin: f64) -> ContractionCertificate {
    let best = report
        .per_horizon
        .iter()
        .min_by(|a, b| a.max_sigma_d.total_cmp(&b.max_sigma_d));
    let mut notes = vec![
        "grid estimate of the infimum over t of the maximum over x; evidence modulo grid and integration error, not a proof"
            .to_string(),
    ];
    notes.extend(report.flags.iter().cloned());
    ContractionCertificate {
        method: CriterionMethod::First,
        d: report.d,
        bound: report.bold_sigma_estimate,
        reverse_bound: None,
        decay_rate: None,
        verdict: Verdict::from_bound(report.bold_sigma_estimate, margin),
        grid: CertificateGrid {
            region: report.grid.clone(),
            horizons: report.per_horizon.iter().map(|h| h.t).collect(),
            argmax: best.map(|h| h.argmax.clone()).unwrap_or_default(),
        },
        margins: Margins { verdict: margin },
        tool_version: crate::TOOL_VERSION.to_string(),
        offending_point: None,
        notes,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InvarianceCheck {
    pub horizon: f64,
    pub checked: usize,
    pub escapes: Vec<Vec<f64>>,
}

/// Integrates the boundary samples of the region for one horizon and lists
/// those that end up outside the box or the indicator.
pub fn check_positive_invariance(
    sys: &DynamicalSystem,
    region: &Region,
    horizon: f64,
    opts: &IntegratorOptions,
) -> Result<InvarianceCheck> {
    let pts = region.boundary_points()?;
    let finals = crate::par_map(&pts, |x| crate::flow::flow_map(sys, x, horizon, opts));
    let mut escapes = Vec::new();
    for (x, end) in pts.iter().zip(finals) {
        let end = end?;
        let in_box = (0..region.dim()).all(|a| {
            region.counts()[a] == 1 || (end[a] >= region.lo()[a] && end[a] <= region.hi()[a])
        });
        if !in_box || !region.contains(&end) {
            escapes.push(x.iter().copied().collect());
        }
    }
    Ok(InvarianceCheck {
        horizon,
        checked: pts.len(),
        escapes,
    })
}
