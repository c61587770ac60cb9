//! Second method: roots of `det[AᵀP + PA + Ṗ − λP] = 0`, the functionals
//! `Ξ_d` and their grid suprema.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::certificate::{CertificateGrid, ContractionCertificate, CriterionMethod, Margins, Verdict, DEFAULT_MARGIN};
use crate::error::{Error, Result};
use crate::flow::{flow_map, variational_flow, DynamicalSystem, IntegratorOptions};
use crate::linalg::{additive_compound, log_norm2, omega_d, spd_inverse_sqrt, spd_sqrt, sym_eigenvalues_desc, FractionalDimension, SpdMatrix};
use crate::region::Region;

pub type MatrixField = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// State-dependent metric `P(x)` with an optional analytic orbital
/// derivative `Ṗ(x)`.
#[derive(Clone)]
pub struct MetricField {
    description: String,
    p: MatrixField,
    pdot: Option<MatrixField>,
}

impl fmt::Debug for MetricField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MetricField")
            .field("description", &self.description)
            .field("analytic_pdot", &self.pdot.is_some())
            .finish()
    }
}

impl MetricField {
    pub fn new(
        description: impl Into<String>,
        p: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            description: description.into(),
            p: Arc::new(p),
            pdot: None,
        }
    }

    pub fn with_orbital_derivative(
        mut self,
        pdot: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.pdot = Some(Arc::new(pdot));
        self
    }

    /// Constant metric with `Ṗ = 0`.
    pub fn constant(p: SpdMatrix) -> Self {
        let n = p.dim();
        let m = p.into_inner();
        Self::new("constant", move |_| m.clone()).with_orbital_derivative(move |_| DMatrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        Self::constant(SpdMatrix::identity(n))
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn has_analytic_derivative(&self) -> bool {
        self.pdot.is_some()
    }

    pub fn raw(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.p)(x)
    }

    /// `P(x)`, validated.
    pub fn at(&self, x: &DVector<f64>) -> Result<SpdMatrix> {
        SpdMatrix::new((self.p)(x))
    }

    /// Drops the analytic derivative, forcing the flow-based one.
    pub fn without_derivative(&self) -> Self {
        Self {
            description: self.description.clone(),
            p: self.p.clone(),
            pdot: None,
        }
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// `Ṗ(x)`: the analytic derivative when present, otherwise the central
/// difference `(P(φʰx) − P(φ⁻ʰx)) / 2h` with
/// `h = 1e-5·(1 + ‖x‖∞) / (1 + ‖f(x)‖∞)`.
pub fn orbital_derivative(
    field: &MetricField,
    sys: &DynamicalSystem,
    x: &DVector<f64>,
    opts: &IntegratorOptions,
) -> Result<DMatrix<f64>> {
    sys.check_state(x)?;
    if let Some(pd) = &field.pdot {
        return Ok(symmetrize(pd(x)));
    }
    let h = 1e-5 * (1.0 + x.amax()) / (1.0 + sys.rhs(x).amax());
    let fwd = flow_map(sys, x, h, opts);
    let bwd = flow_map(sys, x, -h, opts);
    match (fwd, bwd) {
        (Ok(xp), Ok(xm)) => Ok(symmetrize((field.raw(&xp) - field.raw(&xm)) / (2.0 * h))),
        (Err(e), _) | (_, Err(e)) => Err(Error::numeric(format!(
            "orbital derivative: integration over ±{h:e} failed: {e}"
        ))),
    }
}

/// Roots `λ₁ ≥ … ≥ λₙ` of the criterion pencil at one state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionRoots {
    pub lambdas: Vec<f64>,
}

/// Roots of `det[AᵀP + PA + Ṗ − λP] = 0` by Cholesky reduction `P = LLᵀ`.
pub fn criterion_roots(a: &DMatrix<f64>, p: &SpdMatrix, pdot: &DMatrix<f64>) -> Result<CriterionRoots> {
    let n = p.dim();
    if a.shape() != (n, n) || pdot.shape() != (n, n) {
        return Err(Error::input("criterion_roots: matrix sizes differ"));
    }
    if a.iter().chain(pdot.iter()).any(|v| !v.is_finite()) {
        return Err(Error::input("criterion_roots: non-finite entries"));
    }
    let pm = p.as_matrix();
    let g = a.transpose() * pm + pm * a + pdot;
    let g = symmetrize(g);
    let l = p.cholesky_factor();
    // C = L⁻¹ G L⁻ᵀ
    let y = l
        .solve_lower_triangular(&g)
        .ok_or_else(|| Error::numeric("singular Cholesky factor"))?;
    let c = l
        .solve_lower_triangular(&y.transpose())
        .ok_or_else(|| Error::numeric("singular Cholesky factor"))?;
    Ok(CriterionRoots {
        lambdas: sym_eigenvalues_desc(&c),
    })
}

/// `(Ξ_d, Ξ_{d,←})`: weighted sums from the top and from the bottom.
pub fn xi_d(roots: &CriterionRoots, dim: &FractionalDimension) -> Result<(f64, f64)> {
    if roots.lambdas.len() != dim.n() {
        return Err(Error::input("root count differs from dimension"));
    }
    Ok((dim.top_sum(&roots.lambdas), dim.bottom_sum(&roots.lambdas)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SecondMethodOptions {
    pub margin: f64,
    pub integrator: IntegratorOptions,
}

impl Default for SecondMethodOptions {
    fn default() -> Self {
        Self {
            margin: DEFAULT_MARGIN,
            integrator: IntegratorOptions::certification(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RootRecord {
    pub x: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub xi_forward: f64,
    pub xi_reverse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SecondMethodReport {
    pub certificate: ContractionCertificate,
    pub points: Vec<RootRecord>,
}

impl SecondMethodReport {
    /// CSV `x1..xn,lambda1..lambdan,xi_forward,xi_reverse`.
    pub fn to_csv(&self) -> String {
        use crate::report::fmt17;
        let n = self.points.first().map_or(0, |r| r.x.len());
        let mut head: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        head.extend((1..=n).map(|i| format!("lambda{i}")));
        head.push("xi_forward".into());
        head.push("xi_reverse".into());
        let mut out = head.join(",");
        out.push('\n');
        for r in &self.points {
            let row: Vec<String> = r
                .x
                .iter()
                .chain(&r.lambdas)
                .chain([&r.xi_forward, &r.xi_reverse])
                .map(|v| fmt17(*v))
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

enum PointOutcome {
    Roots(RootRecord),
    NotPd(Vec<f64>),
}

/// Evaluates the roots over the region and assembles the certificate.
pub fn evaluate_second_method(
    sys: &DynamicalSystem,
    field: &MetricField,
    region: &Region,
    dim: &FractionalDimension,
    opts: &SecondMethodOptions,
) -> Result<SecondMethodReport> {
    if dim.n() != sys.dim() || region.dim() != sys.dim() {
        return Err(Error::input("system, region and dimension sizes differ"));
    }
    let points = region.points()?;
    let outcomes = crate::par_map(&points, |x| -> Result<PointOutcome> {
        let xv: Vec<f64> = x.iter().copied().collect();
        let p = match field.at(x) {
            Ok(p) => p,
            Err(_) => return Ok(PointOutcome::NotPd(xv)),
        };
        let pdot = orbital_derivative(field, sys, x, &opts.integrator)?;
        let roots = criterion_roots(&sys.jacobian(x), &p, &pdot)?;
        let (fw, rv) = xi_d(&roots, dim)?;
        Ok(PointOutcome::Roots(RootRecord {
            x: xv,
            lambdas: roots.lambdas,
            xi_forward: fw,
            xi_reverse: rv,
        }))
    });
    let mut records = Vec::with_capacity(points.len());
    for o in outcomes {
        match o? {
            PointOutcome::Roots(r) => records.push(r),
            PointOutcome::NotPd(x) => {
                return Ok(SecondMethodReport {
                    certificate: ContractionCertificate {
                        method: CriterionMethod::Second,
                        d: dim.d(),
                        bound: f64::NAN,
                        reverse_bound: None,
                        decay_rate: None,
                        verdict: Verdict::InvalidMetric,
                        grid: CertificateGrid {
                            region: region.meta()?,
                            horizons: Vec::new(),
                            argmax: Vec::new(),
                        },
                        margins: Margins { verdict: opts.margin },
                        tool_version: crate::TOOL_VERSION.to_string(),
                        offending_point: Some(x),
                        notes: vec![format!("metric '{}' is not positive definite", field.description)],
                    },
                    points: records,
                })
            }
        }
    }
    let (mut lam, mut lam_minus) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut argmax = Vec::new();
    for r in &records {
        if r.xi_forward > lam {
            lam = r.xi_forward;
            argmax = r.x.clone();
        }
        lam_minus = lam_minus.min(r.xi_reverse);
    }
    let certificate = ContractionCertificate {
        method: CriterionMethod::Second,
        d: dim.d(),
        bound: lam,
        reverse_bound: Some(lam_minus),
        decay_rate: Some(lam / 2.0),
        verdict: Verdict::from_bound(lam, opts.margin),
        grid: CertificateGrid {
            region: region.meta()?,
            horizons: Vec::new(),
            argmax,
        },
        margins: Margins { verdict: opts.margin },
        tool_version: crate::TOOL_VERSION.to_string(),
        offending_point: None,
        notes: vec![format!(
            "metric '{}', orbital derivative {}",
            field.description,
            if field.has_analytic_derivative() { "analytic" } else { "flow-based central difference" }
        )],
    };
    Ok(SecondMethodReport {
        certificate,
        points: records,
    })
}

/// `Λ = max Ξ_d`, `Λ₋ = min Ξ_{d,←}` over the region and the verdict.
pub fn certify_second_method(
    sys: &DynamicalSystem,
    field: &MetricField,
    region: &Region,
    dim: &FractionalDimension,
    opts: &SecondMethodOptions,
) -> Result<ContractionCertificate> {
    Ok(evaluate_second_method(sys, field, region, dim, opts)?.certificate)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct WeightedExpansion {
    pub t: f64,
    /// `max_x ω_d(Y_x(t))`, the area factor `Ω` of the map `φᵗ`.
    pub max_omega: f64,
    pub max_log_omega: f64,
    pub argmax: Vec<f64>,
    /// `e^{Λt/2}` when `Λ` was supplied.
    pub bound: Option<f64>,
    /// `ln bound − ln max_omega` (nonnegative when the bound holds).
    pub log_gap: Option<f64>,
    pub holds: Option<bool>,
}

/// `ln ω_d(Y_x(t))` with `Y_x(t) = S(φᵗx)·X(t,x)·S(x)⁻¹`, `S = √P`.
pub fn weighted_log_omega(
    sys: &DynamicalSystem,
    field: &MetricField,
    x: &DVector<f64>,
    dim: &FractionalDimension,
    t: f64,
    opts: &IntegratorOptions,
) -> Result<f64> {
    let st = variational_flow(sys, x, t, opts)?;
    let s_end = spd_sqrt(&field.at(&st.x)?)?;
    let s_inv = spd_inverse_sqrt(&field.at(x)?)?;
    let y = s_end.as_matrix() * &st.x_jac * s_inv.as_matrix();
    Ok(omega_d(&y, dim)?.ln() + dim.d() * st.log_scale)
}

/// Largest `ω_d(Y_x(t))` over the region, checked against `e^{Λt/2}`.
pub fn weighted_flow_expansion(
    sys: &DynamicalSystem,
    field: &MetricField,
    region: &Region,
    dim: &FractionalDimension,
    t: f64,
    lambda: Option<f64>,
    opts: &IntegratorOptions,
) -> Result<WeightedExpansion> {
    if !(t > 0.0) {
        return Err(Error::input("horizon must be positive"));
    }
    let points = region.points()?;
    let logs = crate::par_map(&points, |x| weighted_log_omega(sys, field, x, dim, t, opts));
    let mut best = f64::NEG_INFINITY;
    let mut argmax = Vec::new();
    for (x, l) in points.iter().zip(logs) {
        let l = l?;
        if l > best {
            best = l;
            argmax = x.iter().copied().collect();
        }
    }
    let log_bound = lambda.map(|l| l * t / 2.0);
    Ok(WeightedExpansion {
        t,
        max_omega: best.exp(),
        max_log_omega: best,
        argmax,
        bound: log_bound.map(f64::exp),
        log_gap: log_bound.map(|b| b - best),
        holds: log_bound.map(|b| best <= b + (1e-6f64).ln_1p()),
    })
}

/// Sup over the grid of `ν₂(Df(x)^{[k]})`, with the second method at
/// `P = I, d = k` for comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct KCompoundReport {
    pub k: usize,
    pub sup_log_norm: f64,
    pub argmax: Vec<f64>,
    /// `sup ν < 0`: the sufficient k-contraction condition holds on the grid.
    pub holds: bool,
    pub identity_metric: ContractionCertificate,
}

pub fn kcompound_check(sys: &DynamicalSystem, k: usize, region: &Region) -> Result<KCompoundReport> {
    let n = sys.dim();
    if k < 1 || k > n {
        return Err(Error::input(format!("k = {k} outside [1, {n}]")));
    }
    let points = region.points()?;
    let norms = crate::par_map(&points, |x| log_norm2(&additive_compound(&sys.jacobian(x), k)?));
    let mut sup = f64::NEG_INFINITY;
    let mut argmax = Vec::new();
    for (x, v) in points.iter().zip(norms) {
        let v = v?;
        if v > sup {
            sup = v;
            argmax = x.iter().copied().collect();
        }
    }
    let dim = FractionalDimension::new(k as f64, n)?;
    let identity_metric = certify_second_method(sys, &MetricField::identity(n), region, &dim, &SecondMethodOptions::default())?;
    Ok(KCompoundReport {
        k,
        sup_log_norm: sup,
        argmax,
        holds: sup < 0.0,
        identity_metric,
    })
}

#[cfg(test)]
mod tests {

    #[test]
    fn kcompound_examples() {
        let sys = DynamicalSystem::linear("diag", diag3()).unwrap();
        let region = Region::new(vec![-1.0; 3], vec![1.0; 3], vec![2; 3]).unwrap();
        let r = kcompound_check(&sys, 2, &region).unwrap();
        assert!((r.sup_log_norm + 3.0).abs() < 1e-12 && r.holds);
        // with P = I the roots are twice the eigenvalues, so Λ = 2·ν
        assert!((r.identity_metric.bound + 6.0).abs() < 1e-12);
        assert!(kcompound_check(&sys, 4, &region).is_err());
    }
    use super::*;

    fn diag3() -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0, -3.0]))
    }

    #[test]
    fn roots_of_identity_metric_are_twice_a() {
        let r = criterion_roots(&diag3(), &SpdMatrix::identity(3), &DMatrix::zeros(3, 3)).unwrap();
        assert_eq!(r.lambdas.len(), 3);
        for (a, b) in r.lambdas.iter().zip([-2.0, -4.0, -6.0]) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn xi_examples() {
        let d = FractionalDimension::new(2.5, 3).unwrap();
        let r = CriterionRoots { lambdas: vec![-2.0, -4.0, -6.0] };
        assert_eq!(xi_d(&r, &d).unwrap(), (-9.0, -11.0));
        let d2 = FractionalDimension::new(2.0, 3).unwrap();
        let r = CriterionRoots { lambdas: vec![1.0, 0.0, -1.0] };
        assert_eq!(xi_d(&r, &d2).unwrap(), (1.0, -1.0));
        let r = CriterionRoots { lambdas: vec![0.7; 3] };
        let (f, b) = xi_d(&r, &d).unwrap();
        assert!((f - 2.5 * 0.7).abs() < 1e-15 && (b - 2.5 * 0.7).abs() < 1e-15);
    }

    #[test]
    fn roots_sum_to_trace() {
        let a = DMatrix::from_row_slice(3, 3, &[0.1, -1.0, 2.0, 0.5, -0.3, 0.0, 1.0, 0.2, -2.0]);
        let p = SpdMatrix::new(DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 0.5])).unwrap();
        let pd = DMatrix::from_row_slice(3, 3, &[0.1, 0.2, 0.0, 0.2, -0.3, 0.1, 0.0, 0.1, 0.4]);
        let r = criterion_roots(&a, &p, &pd).unwrap();
        let g = a.transpose() * p.as_matrix() + p.as_matrix() * &a + &pd;
        let tr = (p.inverse() * g).trace();
        assert!((r.lambdas.iter().sum::<f64>() - tr).abs() < 1e-10);
    }

    #[test]
    fn constant_metric_has_zero_derivative() {
        let sys = DynamicalSystem::linear("d", diag3()).unwrap();
        let f = MetricField::identity(3).without_derivative();
        let pd = orbital_derivative(&f, &sys, &DVector::from_vec(vec![1.0, 2.0, 3.0]), &IntegratorOptions::default()).unwrap();
        assert!(pd.amax() < 1e-9);
    }

    #[test]
    fn linear_certificate() {
        let sys = DynamicalSystem::linear("d", diag3()).unwrap();
        let region = Region::new(vec![-1.0; 3], vec![1.0; 3], vec![3; 3]).unwrap();
        let d = FractionalDimension::new(2.5, 3).unwrap();
        let rep = evaluate_second_method(&sys, &MetricField::identity(3), &region, &d, &SecondMethodOptions::default()).unwrap();
        let c = &rep.certificate;
        assert_eq!(c.verdict, Verdict::Contractive);
        assert!((c.bound + 9.0).abs() < 1e-12);
        assert_eq!(c.reverse_bound, Some(-11.0));
        assert_eq!(c.decay_rate, Some(-4.5));
        assert!(rep.to_csv().starts_with("x1,x2,x3,lambda1,lambda2,lambda3,xi_forward,xi_reverse\n"));
    }

    #[test]
    fn invalid_metric_reported() {
        let sys = DynamicalSystem::linear("d", diag3()).unwrap();
        let region = Region::new(vec![-1.0; 3], vec![1.0; 3], vec![2; 3]).unwrap();
        let bad = MetricField::new("flat", |_| DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 0.0])));
        let d = FractionalDimension::new(2.0, 3).unwrap();
        let c = certify_second_method(&sys, &bad, &region, &d, &SecondMethodOptions::default()).unwrap();
        assert_eq!(c.verdict, Verdict::InvalidMetric);
        assert!(c.offending_point.is_some());
    }

    #[test]
    fn weighted_expansion_examples() {
        let zero = DynamicalSystem::new("zero", 3, |x| DVector::zeros(x.len()));
        let region = Region::new(vec![-1.0; 3], vec![1.0; 3], vec![2; 3]).unwrap();
        let d = FractionalDimension::new(2.5, 3).unwrap();
        let w = weighted_flow_expansion(&zero, &MetricField::identity(3), &region, &d, 1.0, Some(0.0), &IntegratorOptions::default()).unwrap();
        assert!((w.max_omega - 1.0).abs() < 1e-12);
        assert_eq!(w.holds, Some(true));
        let sys = DynamicalSystem::linear("d", diag3()).unwrap();
        let w = weighted_flow_expansion(&sys, &MetricField::identity(3), &region, &d, 1.0, Some(-9.0), &IntegratorOptions::default()).unwrap();
        assert!((w.max_omega - (-4.5f64).exp()).abs() < 1e-9);
        assert_eq!(w.holds, Some(true));
    }
}
