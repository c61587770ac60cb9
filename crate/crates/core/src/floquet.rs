//! Orbital stability of periodic solutions: Floquet multipliers, the
//! Andronov–Witt test and the explicit periodic contraction metric
//! `P(t) = X(t)⁻ᵀ e^{Ξt} X(t)⁻¹` with `Ξ = T⁻¹ Ln(MᵀM)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{find_periodic_orbit, flow_map, monodromy, variational_flow, DynamicalSystem, IntegratorOptions};
use crate::linalg::{singular_values, spd_log, sym_eigenvalues_desc, sym_exp, SpdMatrix};
use crate::metric::{criterion_roots, MetricField};
use crate::region::Region;

/// Margin below 1 required of `|ρ₂|` for the Andronov–Witt condition.
pub const TOL_AW: f64 = 1e-9;
/// Half-width of the band around `|ρ₂| = 1` reported as critical.
pub const TOL_CRITICAL: f64 = 1e-6;
/// `MᵀM` condition number above which the logarithm is refused.
pub const MAX_GRAM_COND: f64 = 1e14;
/// Default number of lattice samples per period.
pub const LATTICE: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Multiplier {
    pub re: f64,
    pub im: f64,
    pub modulus: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING-KEBAB-CASE")]
pub enum OrbitalVerdict {
    OrbitallyStable,
    NotOrbitallyStable,
    InconclusiveCritical,
    /// Andronov–Witt holds but the metric check failed.
    Inconclusive,
}

/// Multipliers of a monodromy matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FloquetSpectrum {
    /// Sorted by descending modulus; ties keep eigensolver order.
    pub multipliers: Vec<Multiplier>,
    /// Distance from 1 of the closest multiplier.
    pub trivial_residual: f64,
    pub andronov_witt: bool,
    /// `|ρ₂|` inside `[1 − TOL_CRITICAL, 1 + TOL_CRITICAL]`.
    pub critical: bool,
}

impl FloquetSpectrum {
    pub fn moduli(&self) -> Vec<f64> {
        self.multipliers.iter().map(|m| m.modulus).collect()
    }

    /// `|ρ₂|`, or 0 in dimension one.
    pub fn second_modulus(&self) -> f64 {
        self.multipliers.get(1).map_or(0.0, |m| m.modulus)
    }
}

/// Eigenvalues of `M` sorted by modulus and the Andronov–Witt flag.
pub fn floquet_multipliers(m: &DMatrix<f64>) -> Result<FloquetSpectrum> {
    if !m.is_square() || m.nrows() == 0 {
        return Err(Error::input("monodromy matrix must be square and nonempty"));
    }
    let sv = singular_values(m)?;
    if sv[sv.len() - 1] <= 1e-14 * sv[0] {
        return Err(Error::input("monodromy matrix is singular"));
    }
    let eig = m.complex_eigenvalues();
    let mut multipliers: Vec<Multiplier> = eig
        .iter()
        .map(|z| Multiplier {
            re: z.re,
            im: z.im,
            modulus: z.norm(),
        })
        .collect();
    multipliers.sort_by(|a, b| b.modulus.total_cmp(&a.modulus));
    let trivial_residual = multipliers
        .iter()
        .map(|z| ((z.re - 1.0).powi(2) + z.im * z.im).sqrt())
        .fold(f64::INFINITY, f64::min);
    let rho2 = multipliers.get(1).map_or(0.0, |z| z.modulus);
    Ok(FloquetSpectrum {
        multipliers,
        trivial_residual,
        andronov_witt: rho2 < 1.0 - TOL_AW,
        critical: (rho2 - 1.0).abs() <= TOL_CRITICAL,
    })
}

/// Normalizes a standardized 2×2 Schur block to a normal matrix; returns the
/// similarity `W` with `W B W⁻¹` normal.
fn normalize_block(b: &DMatrix<f64>) -> DMatrix<f64> {
    let (p, q, r, s) = (b[(0, 0)], b[(0, 1)], b[(1, 0)], b[(1, 1)]);
    // rotation equalizing the diagonal
    let theta = 0.5 * (-(p - s)).atan2(q + r);
    let (c, sn) = (theta.cos(), theta.sin());
    let rot = DMatrix::from_row_slice(2, 2, &[c, sn, -sn, c]);
    let rb = &rot * b * rot.transpose();
    let (bq, br) = (rb[(0, 1)], rb[(1, 0)]);
    if bq * br < 0.0 {
        let alpha = (br / bq).abs().sqrt();
        DMatrix::from_row_slice(2, 2, &[alpha, 0.0, 0.0, 1.0]) * rot
    } else {
        rot
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preconditioner {
    pub q: DMatrix<f64>,
    pub kappa: f64,
    /// `max |σᵢ(QGQ⁻¹) − |η|ᵢ|` with both lists sorted descending.
    pub deviation: f64,
}

/// Similarity `Q` from the real Schur basis of `G` with blockwise scaling by
/// powers of `κ`, so that `QGQ⁻¹` approaches a normal matrix as `κ → 0`.
pub fn precondition_similarity(g: &DMatrix<f64>, kappa: f64) -> Result<Preconditioner> {
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(Error::input("kappa must lie in (0, 1)"));
    }
    if !g.is_square() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("matrix must be square and finite"));
    }
    let n = g.nrows();
    let schur = nalgebra::linalg::Schur::try_new(g.clone(), f64::EPSILON, 0)
        .ok_or_else(|| Error::input("real Schur decomposition failed"))?;
    let (u, t) = schur.unpack();
    if u.iter().chain(t.iter()).any(|v| !v.is_finite()) {
        return Err(Error::input("real Schur decomposition is not finite"));
    }
    // block structure and per-block normalization
    let mut w = DMatrix::identity(n, n);
    let mut block_of = vec![0usize; n];
    let mut i = 0;
    let mut block = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)].abs() > 0.0 {
            let b = t.view((i, i), (2, 2)).into_owned();
            w.view_mut((i, i), (2, 2)).copy_from(&normalize_block(&b));
            block_of[i] = block;
            block_of[i + 1] = block;
            i += 2;
        } else {
            block_of[i] = block;
            i += 1;
        }
        block += 1;
    }
    // rows of later blocks are amplified, so strictly upper entries shrink
    let scale = DMatrix::from_diagonal(&DVector::from_iterator(n, block_of.iter().map(|&b| kappa.powi(-(b as i32)))));
    let q = scale * w * u.transpose();
    let qinv = q
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::input("preconditioner is singular"))?;
    let sim = &q * g * qinv;
    let sv = singular_values(&sim)?;
    let mut moduli: Vec<f64> = g.complex_eigenvalues().iter().map(|z| z.norm()).collect();
    moduli.sort_by(|a, b| b.total_cmp(a));
    let deviation = sv.iter().zip(&moduli).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(Preconditioner { q, kappa, deviation })
}

struct LatticePoint {
    t: f64,
    x: DVector<f64>,
    jac: DMatrix<f64>,
}

/// The periodic metric of a hyperbolic orbit. Samples on the lattice are
/// cached; other times are integrated from the preceding lattice point.
pub struct PeriodicMetric {
    sys: DynamicalSystem,
    period: f64,
    monodromy: DMatrix<f64>,
    q: DMatrix<f64>,
    kappa: Option<f64>,
    xi: DMatrix<f64>,
    root_constants: Vec<f64>,
    lattice: Vec<LatticePoint>,
    opts: IntegratorOptions,
}

impl std::fmt::Debug for PeriodicMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PeriodicMetric")
            .field("period", &self.period)
            .field("kappa", &self.kappa)
            .field("root_constants", &self.root_constants)
            .finish()
    }
}

fn sigma12(m: &DMatrix<f64>) -> Result<f64> {
    let sv = singular_values(m)?;
    Ok(sv.iter().take(2).product())
}

impl PeriodicMetric {
    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn xi(&self) -> &DMatrix<f64> {
        &self.xi
    }

    /// Eigenvalues of `Ξ`, descending.
    pub fn root_constants(&self) -> &[f64] {
        &self.root_constants
    }

    pub fn monodromy(&self) -> &DMatrix<f64> {
        &self.monodromy
    }

    /// `κ` of the preconditioner, when one was applied.
    pub fn kappa(&self) -> Option<f64> {
        self.kappa
    }

    pub fn preconditioner(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn lattice_times(&self) -> Vec<f64> {
        self.lattice.iter().map(|p| p.t).collect()
    }

    fn base_index(&self, t: f64) -> usize {
        let k = (t / self.period * LATTICE as f64).floor();
        (k.max(0.0) as usize).min(self.lattice.len() - 1)
    }

    /// Orbit point and `X(t)` for `t ∈ [0, T]`, integrated from lattice point `k`.
    fn state_from(&self, k: usize, t: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let base = &self.lattice[k];
        let dt = t - base.t;
        if dt.abs() <= 1e-14 * self.period {
            return Ok((base.x.clone(), base.jac.clone()));
        }
        let st = variational_flow(&self.sys, &base.x, dt, &self.opts)?;
        let jac = st.jacobian() * &base.jac;
        Ok((st.x, jac))
    }

    /// Orbit point and `X(t)`; `t` is reduced modulo the period, except that
    /// `t = T` itself returns the monodromy.
    pub fn state_at(&self, t: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
        if (t - self.period).abs() <= 1e-14 * self.period {
            return Ok((self.lattice[0].x.clone(), self.monodromy.clone()));
        }
        let tm = t.rem_euclid(self.period);
        self.state_from(self.base_index(tm), tm)
    }

    fn assemble(&self, t: f64, jac: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let xinv = jac
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::numeric("fundamental matrix lost invertibility"))?;
        let core = self.q.transpose() * sym_exp(&(&self.xi * t)) * &self.q;
        let p = xinv.transpose() * core * xinv;
        Ok((&p + p.transpose()) * 0.5)
    }

    /// `P(t)`. For `t ∈ [0, T]` the fundamental matrix is not reduced, so
    /// `P(T)` is assembled from the monodromy itself.
    pub fn p_at(&self, t: f64) -> Result<SpdMatrix> {
        let (_, jac) = self.state_at(t)?;
        let tm = if (t - self.period).abs() <= 1e-14 * self.period { t } else { t.rem_euclid(self.period) };
        SpdMatrix::new(self.assemble(tm, &jac)?)
    }

    /// `dP/dt` by central differences, both sides integrated from the same
    /// lattice point.
    pub fn pdot_at(&self, t: f64) -> Result<DMatrix<f64>> {
        let tm = t.rem_euclid(self.period);
        let k = self.base_index(tm);
        let h = 1e-5 * self.period;
        let (_, jp) = self.state_from(k, tm + h)?;
        let (_, jm) = self.state_from(k, tm - h)?;
        Ok((self.assemble(tm + h, &jp)? - self.assemble(tm - h, &jm)?) / (2.0 * h))
    }

    /// Orbit time of the nearest orbit point: nearest lattice sample, then
    /// Newton on `⟨x*(t) − x, f(x*(t))⟩ = 0`.
    pub fn project(&self, x: &DVector<f64>) -> Result<f64> {
        let k0 = self
            .lattice
            .iter()
            .enumerate()
            .min_by(|a, b| (&a.1.x - x).norm_squared().total_cmp(&(&b.1.x - x).norm_squared()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let mut t = self.lattice[k0].t;
        let step = self.period / LATTICE as f64;
        for _ in 0..20 {
            let tm = t.rem_euclid(self.period);
            let xs = flow_map(&self.sys, &self.lattice[self.base_index(tm)].x, tm - self.lattice[self.base_index(tm)].t, &self.opts)?;
            let f = self.sys.rhs(&xs);
            let diff = &xs - x;
            let g = diff.dot(&f);
            let dg = f.norm_squared() + diff.dot(&(self.sys.jacobian(&xs) * &f));
            if !(dg > 0.0) {
                break;
            }
            let dt = (-g / dg).clamp(-step, step);
            t += dt;
            if dt.abs() <= 1e-13 * self.period {
                break;
            }
        }
        Ok(t.rem_euclid(self.period))
    }

    /// Extension to a tube: `P(x) = P(τ(x))` with `τ` the orbit-time
    /// projection; the orbital derivative is left to the flow.
    pub fn tube_field(self: &std::sync::Arc<Self>) -> MetricField {
        let me = self.clone();
        let n = self.sys.dim();
        MetricField::new("periodic metric on tube", move |x| {
            me.project(x)
                .and_then(|t| me.p_at(t))
                .map(SpdMatrix::into_inner)
                .unwrap_or_else(|_| DMatrix::from_element(n, n, f64::NAN))
        })
    }

    /// Tube samples: `rings` orbit points, each with `2(n−1)` offsets of
    /// length `radius` in the plane normal to the flow.
    pub fn tube_region(&self, radius: f64, rings: usize) -> Result<Region> {
        if !(radius >= 0.0) || rings == 0 {
            return Err(Error::input("tube radius must be nonnegative and rings positive"));
        }
        let n = self.sys.dim();
        let mut pts = Vec::new();
        for r in 0..rings {
            let t = self.period * r as f64 / rings as f64;
            let (x, _) = self.state_at(t)?;
            let f = self.sys.rhs(&x).normalize();
            // orthonormal complement of f by Gram–Schmidt on the unit basis
            let mut basis: Vec<DVector<f64>> = vec![f.clone()];
            for i in 0..n {
                let mut e = DVector::zeros(n);
                e[i] = 1.0;
                for b in &basis {
                    let c = e.dot(b);
                    e -= b * c;
                }
                if e.norm() > 1e-8 {
                    basis.push(e.normalize());
                }
            }
            pts.push(x.clone());
            for b in basis.iter().skip(1) {
                pts.push(&x + b * radius);
                pts.push(&x - b * radius);
            }
        }
        let first = pts.remove(0);
        Region::point(&first)?.with_anchors(pts)
    }
}

/// Builds the periodic metric of the orbit through `x0`, preconditioning
/// automatically when `σ₁σ₂(M) ≥ 1` although `|ρ₁ρ₂| < 1`.
pub fn construct_periodic_metric(
    sys: &DynamicalSystem,
    x0: &DVector<f64>,
    period: f64,
    opts: &IntegratorOptions,
) -> Result<PeriodicMetric> {
    let n = sys.dim();
    let times: Vec<f64> = (0..LATTICE).map(|k| period * k as f64 / LATTICE as f64).collect();
    // fan out from the start of the orbit; each sample is independent
    let samples = crate::par_map(&times, |&t| -> Result<LatticePoint> {
        if t == 0.0 {
            return Ok(LatticePoint {
                t,
                x: x0.clone(),
                jac: DMatrix::identity(n, n),
            });
        }
        let st = variational_flow(sys, x0, t, opts)?;
        Ok(LatticePoint { t, jac: st.jacobian(), x: st.x })
    });
    let lattice = samples.into_iter().collect::<Result<Vec<_>>>()?;
    let m = monodromy(sys, x0, period, opts)?;

    let mut q = DMatrix::identity(n, n);
    let mut kappa = None;
    if n >= 2 {
        let spec = floquet_multipliers(&m)?;
        let rho12 = spec.multipliers[0].modulus * spec.multipliers[1].modulus;
        if sigma12(&m)? >= 1.0 && rho12 < 1.0 {
            let mut k = 0.5;
            while k >= 1e-8 {
                let pre = precondition_similarity(&m, k)?;
                let qinv = pre.q.clone().try_inverse().ok_or_else(|| Error::numeric("singular preconditioner"))?;
                q = pre.q;
                kappa = Some(k);
                if sigma12(&(&q * &m * qinv))? < 1.0 {
                    break;
                }
                k *= 0.5;
            }
        }
    }
    let qinv = q.clone().try_inverse().ok_or_else(|| Error::numeric("singular preconditioner"))?;
    let mt = &q * &m * qinv;
    let gram = mt.transpose() * &mt;
    let gram_eigs = sym_eigenvalues_desc(&gram);
    let cond = gram_eigs[0] / gram_eigs[n - 1];
    if !(cond.is_finite() && cond <= MAX_GRAM_COND && gram_eigs[n - 1] > 0.0) {
        return Err(Error::PreconditioningRequired { cond });
    }
    let xi = spd_log(&SpdMatrix::new(gram)?) / period;
    let root_constants = sym_eigenvalues_desc(&xi);
    Ok(PeriodicMetric {
        sys: sys.clone(),
        period,
        monodromy: m,
        q,
        kappa,
        xi,
        root_constants,
        lattice,
        opts: *opts,
    })
}

/// Roots of the criterion along the orbit under the periodic metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OrbitRootScan {
    pub times: Vec<f64>,
    /// Row per sample time, descending roots.
    pub roots: Vec<Vec<f64>>,
    pub lambda12_max: f64,
    /// Standard deviation of each root over the samples.
    pub root_stddev: Vec<f64>,
    /// `max(‖P(0) − P(T)‖, ‖P(0) − QᵀQ‖)` in the max-abs norm.
    pub periodicity_error: f64,
}

/// Roots along the orbit at `samples` evenly spaced lattice times.
pub fn scan_orbit_roots(metric: &PeriodicMetric, samples: usize) -> Result<OrbitRootScan> {
    let samples = samples.clamp(1, LATTICE);
    let stride = LATTICE / samples;
    let times: Vec<f64> = (0..samples).map(|i| metric.lattice[i * stride].t).collect();
    let rows = crate::par_map(&times, |&t| -> Result<Vec<f64>> {
        let (x, _) = metric.state_at(t)?;
        let p = metric.p_at(t)?;
        let pdot = metric.pdot_at(t)?;
        Ok(criterion_roots(&metric.sys.jacobian(&x), &p, &pdot)?.lambdas)
    });
    let roots = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let n = metric.sys.dim();
    let lambda12_max = roots
        .iter()
        .map(|r| r.iter().take(2).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max);
    let root_stddev = (0..n)
        .map(|i| {
            let mean = roots.iter().map(|r| r[i]).sum::<f64>() / roots.len() as f64;
            (roots.iter().map(|r| (r[i] - mean).powi(2)).sum::<f64>() / roots.len() as f64).sqrt()
        })
        .collect();
    let p0 = metric.p_at(0.0)?;
    let pt = metric.p_at(metric.period)?;
    let qtq = metric.q.transpose() * &metric.q;
    let periodicity_error = (p0.as_matrix() - pt.as_matrix()).amax().max((p0.as_matrix() - qtq).amax());
    Ok(OrbitRootScan {
        times,
        roots,
        lambda12_max,
        root_stddev,
        periodicity_error,
    })
}

/// Combined orbital stability report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FloquetReport {
    pub x0: Vec<f64>,
    #[serde(rename = "T")]
    pub period: f64,
    pub shooting_residual: f64,
    /// Row-major.
    #[serde(rename = "M")]
    pub monodromy: Vec<f64>,
    pub multipliers: Vec<Multiplier>,
    pub trivial_residual: f64,
    pub andronov_witt: bool,
    #[serde(rename = "XiEigenvalues")]
    pub xi_eigenvalues: Option<Vec<f64>>,
    pub lambda12_max: Option<f64>,
    pub root_stddev: Option<Vec<f64>>,
    pub periodicity_error: Option<f64>,
    pub kappa: Option<f64>,
    /// Item i): the Andronov–Witt condition.
    pub item_i: bool,
    /// Item ii): `λ₁ + λ₂ < 0` along the orbit; absent when not attempted.
    pub item_ii: Option<bool>,
    pub agreement: bool,
    pub verdict: OrbitalVerdict,
}

/// Options for [`orbital_stability_report`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitalOptions {
    pub integrator: IntegratorOptions,
    /// Orbit samples for the root scan.
    pub samples: usize,
}

impl Default for OrbitalOptions {
    fn default() -> Self {
        Self {
            integrator: IntegratorOptions::tight(),
            samples: 64,
        }
    }
}

/// Shooting, monodromy, multipliers and, when Andronov–Witt holds, the
/// periodic metric with its root scan. Returns the metric when built.
pub fn orbital_analysis(
    sys: &DynamicalSystem,
    x_guess: &DVector<f64>,
    t_guess: f64,
    opts: &OrbitalOptions,
) -> Result<(FloquetReport, Option<PeriodicMetric>)> {
    let orbit = find_periodic_orbit(sys, x_guess, t_guess, &opts.integrator)?;
    let x0 = DVector::from_vec(orbit.x0.clone());
    let m = monodromy(sys, &x0, orbit.period, &opts.integrator)?;
    let spec = floquet_multipliers(&m)?;
    let item_i = spec.andronov_witt;
    let mut report = FloquetReport {
        x0: orbit.x0.clone(),
        period: orbit.period,
        shooting_residual: orbit.residual,
        monodromy: m.transpose().iter().copied().collect(),
        multipliers: spec.multipliers.clone(),
        trivial_residual: spec.trivial_residual,
        andronov_witt: item_i,
        xi_eigenvalues: None,
        lambda12_max: None,
        root_stddev: None,
        periodicity_error: None,
        kappa: None,
        item_i,
        item_ii: None,
        agreement: true,
        verdict: if spec.critical {
            OrbitalVerdict::InconclusiveCritical
        } else if item_i {
            OrbitalVerdict::Inconclusive
        } else {
            OrbitalVerdict::NotOrbitallyStable
        },
    };
    if !item_i || spec.critical {
        return Ok((report, None));
    }
    let metric = construct_periodic_metric(sys, &x0, orbit.period, &opts.integrator)?;
    let scan = scan_orbit_roots(&metric, opts.samples)?;
    let item_ii = scan.lambda12_max < 0.0;
    report.xi_eigenvalues = Some(metric.root_constants().to_vec());
    report.lambda12_max = Some(scan.lambda12_max);
    report.root_stddev = Some(scan.root_stddev);
    report.periodicity_error = Some(scan.periodicity_error);
    report.kappa = metric.kappa();
    report.item_ii = Some(item_ii);
    report.agreement = item_ii == item_i;
    report.verdict = if item_ii {
        OrbitalVerdict::OrbitallyStable
    } else {
        OrbitalVerdict::Inconclusive
    };
    Ok((report, Some(metric)))
}

pub fn orbital_stability_report(
    sys: &DynamicalSystem,
    x_guess: &DVector<f64>,
    t_guess: f64,
    opts: &OrbitalOptions,
) -> Result<FloquetReport> {
    Ok(orbital_analysis(sys, x_guess, t_guess, opts)?.0)
}

/// Bisection for the parameter where the Andronov–Witt condition switches,
/// given a family returning `(system, orbit guess, period guess)`. The
/// condition must hold at exactly one end of `[lo, hi]`.
pub fn andronov_witt_boundary<F>(family: F, mut lo: f64, mut hi: f64, tol: f64, opts: &IntegratorOptions) -> Result<f64>
where
    F: Fn(f64) -> Result<(DynamicalSystem, DVector<f64>, f64)>,
{
    let aw = |a: f64| -> Result<bool> {
        let (sys, x, t) = family(a)?;
        let orbit = find_periodic_orbit(&sys, &x, t, opts)?;
        let m = monodromy(&sys, &DVector::from_vec(orbit.x0), orbit.period, opts)?;
        Ok(floquet_multipliers(&m)?.andronov_witt)
    };
    let at_lo = aw(lo)?;
    if at_lo == aw(hi)? {
        return Err(Error::input("Andronov–Witt flag does not change over the bracket"));
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if aw(mid)? == at_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{harmonic_oscillator, langford_system, LangfordParams};

    #[test]
    fn identity_monodromy_is_not_aw() {
        let s = floquet_multipliers(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(s.moduli(), vec![1.0; 3]);
        assert_eq!(s.trivial_residual, 0.0);
        assert!(!s.andronov_witt && s.critical);
    }

    #[test]
    fn diagonal_monodromy() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![0.2, 1.0, 0.5]));
        let s = floquet_multipliers(&m).unwrap();
        assert_eq!(s.moduli(), vec![1.0, 0.5, 0.2]);
        assert!(s.andronov_witt);
        assert!(floquet_multipliers(&DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]))).is_err());
    }

    #[test]
    fn preconditioning_examples() {
        let sym = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        assert!(precondition_similarity(&sym, 0.5).unwrap().deviation < 1e-12);
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 100.0, 0.0, 0.5]);
        assert!(precondition_similarity(&g, 1e-3).unwrap().deviation < 1e-2);
        let j = DMatrix::from_row_slice(2, 2, &[0.9, 1.0, 0.0, 0.9]);
        assert!(precondition_similarity(&j, 1e-4).unwrap().deviation < 1e-3);
        let rot = DMatrix::from_row_slice(3, 3, &[0.3, -2.0, 5.0, 0.5, 0.3, 1.0, 0.0, 0.0, 0.7]);
        let pre = precondition_similarity(&rot, 1e-6).unwrap();
        assert!(pre.deviation < 1e-4, "{}", pre.deviation);
        assert!(precondition_similarity(&g, 1.0).is_err());
    }

    #[test]
    fn symmetric_linear_flow_gives_flat_metric() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.3, 0.3, -0.5]);
        let sys = DynamicalSystem::linear("sym", a.clone()).unwrap();
        let pm = construct_periodic_metric(&sys, &DVector::zeros(2), 1.3, &IntegratorOptions::tight()).unwrap();
        assert!((pm.xi() - &a * 2.0).amax() < 1e-8);
        for t in [0.0, 0.4, 1.0] {
            assert!((pm.p_at(t).unwrap().as_matrix() - DMatrix::identity(2, 2)).amax() < 1e-8);
        }
    }

    #[test]
    fn harmonic_is_critical() {
        let r = orbital_stability_report(&harmonic_oscillator(), &DVector::from_vec(vec![1.0, 0.0]), 6.0, &OrbitalOptions::default()).unwrap();
        assert!(!r.andronov_witt);
        assert_eq!(r.verdict, OrbitalVerdict::InconclusiveCritical);
        assert!((r.period - 2.0 * std::f64::consts::PI).abs() < 1e-8);
    }

    #[test]
    fn langford_report() {
        let p = LangfordParams { a: 0.6 };
        let (sys, _) = langford_system(p).unwrap();
        let r = orbital_stability_report(&sys, &p.orbit_point(0.3), 6.0, &OrbitalOptions::default()).unwrap();
        assert!(r.item_i && r.item_ii == Some(true) && r.agreement);
        assert_eq!(r.verdict, OrbitalVerdict::OrbitallyStable);
        assert!((r.multipliers[1].modulus - (-0.2 * std::f64::consts::PI).exp()).abs() < 1e-6);
    }
}
