//! Search over exponential metric families `P(x) = P₀·e^{γ v(x)}` for the
//! smallest certifiable fractional dimension.
//!
//! For this family `Ṗ = γ v̇ P`, so every root is `η_i(x) + γ v̇(x)` where
//! `η` are the roots for the constant metric `P₀`. With `P₀ = LLᵀ`, `η` are
//! the eigenvalues of `B + Bᵀ`, `B = Lᵀ A L⁻ᵀ`, which do not depend on `γ`;
//! the worst `Ξ_d` is then convex piecewise-linear in `γ` and is minimized
//! exactly for each candidate `L`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::DynamicalSystem;
use crate::linalg::{jacobi_eigenvalues, FractionalDimension, SpdMatrix};
use crate::metric::{criterion_roots, xi_d};
use crate::optim::{golden_section, nelder_mead, NelderMeadOptions};
use crate::region::{GridMeta, Region};
use crate::systems::Potential;

/// Objective value used when the reconstructed `P₀` is numerically degenerate.
const DEGENERATE_PENALTY: f64 = 1e6;
const MAX_P0_COND: f64 = 1e12;

/// `P(x) = P₀ e^{γ v(x)}` with `P₀ = LLᵀ` scaled to trace `n`; `L` is
/// lower-triangular with log-parametrized diagonal.
#[derive(Debug, Clone)]
pub struct MetricFamily {
    n: usize,
    params: Vec<f64>,
    pub gamma: f64,
    pub potential: Potential,
}

fn lower_from_params(n: usize, params: &[f64]) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in 0..=i {
            l[(i, j)] = if i == j { params[k].exp() } else { params[k] };
            k += 1;
        }
    }
    l
}

impl MetricFamily {
    pub fn param_len(n: usize) -> usize {
        n * (n + 1) / 2
    }

    pub fn new(n: usize, params: Vec<f64>, gamma: f64, potential: Potential) -> Result<Self> {
        if params.len() != Self::param_len(n) {
            return Err(Error::input(format!(
                "metric family for n = {n} needs {} parameters",
                Self::param_len(n)
            )));
        }
        if !(gamma >= 0.0) || params.iter().any(|p| !p.is_finite()) {
            return Err(Error::input("family parameters must be finite with gamma >= 0"));
        }
        Ok(Self {
            n,
            params,
            gamma,
            potential,
        })
    }

    /// `P₀ = I`.
    pub fn identity(n: usize, gamma: f64, potential: Potential) -> Result<Self> {
        Self::new(n, vec![0.0; Self::param_len(n)], gamma, potential)
    }

    /// Parameters reproducing a given `P₀` (up to the trace scaling).
    pub fn from_p0(p0: &SpdMatrix, gamma: f64, potential: Potential) -> Result<Self> {
        let n = p0.dim();
        let l = p0.cholesky_factor();
        let mut params = Vec::with_capacity(Self::param_len(n));
        for i in 0..n {
            for j in 0..=i {
                params.push(if i == j { l[(i, j)].ln() } else { l[(i, j)] });
            }
        }
        Self::new(n, params, gamma, potential)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn lower_factor(&self) -> DMatrix<f64> {
        lower_from_params(self.n, &self.params)
    }

    /// Trace-normalized `P₀`.
    pub fn p0(&self) -> Result<SpdMatrix> {
        let l = self.lower_factor();
        let p = &l * l.transpose();
        let tr = p.trace();
        SpdMatrix::new(p * (self.n as f64 / tr))
    }

    pub fn metric(&self) -> Result<crate::metric::MetricField> {
        Ok(self.potential.exponential_metric(&self.p0()?, self.gamma))
    }
}

/// Max over the region of `Ξ_d` for the family (negative means feasible).
/// Roots are computed pointwise by the general Cholesky route.
pub fn feasibility(
    sys: &DynamicalSystem,
    family: &MetricFamily,
    region: &Region,
    dim: &FractionalDimension,
) -> Result<f64> {
    if family.dim() != sys.dim() || dim.n() != sys.dim() {
        return Err(Error::input("family, system and dimension sizes differ"));
    }
    let p0 = family.p0()?;
    let mut worst = f64::NEG_INFINITY;
    for x in region.points()? {
        // the scalar factor e^{γv} cancels in the roots; keep it anyway so
        // this stays a literal evaluation of the family
        let scale = (family.gamma * (family.potential.v)(&x)).exp();
        let p = SpdMatrix::new(p0.as_matrix() * scale)?;
        let pdot = p.as_matrix() * (family.gamma * (family.potential.vdot)(&x));
        let roots = criterion_roots(&sys.jacobian(&x), &p, &pdot)?;
        worst = worst.max(xi_d(&roots, dim)?.0);
    }
    Ok(worst)
}

/// Jacobians and potential rates cached on the grid.
struct GridCache {
    n: usize,
    jac: Vec<f64>,
    vdot: Vec<f64>,
}

impl GridCache {
    fn new(sys: &DynamicalSystem, region: &Region, potential: &Potential) -> Result<Self> {
        let n = sys.dim();
        let pts = region.points()?;
        let mut jac = Vec::with_capacity(pts.len() * n * n);
        let mut vdot = Vec::with_capacity(pts.len());
        for x in &pts {
            let a = sys.jacobian(x);
            for i in 0..n {
                for j in 0..n {
                    jac.push(a[(i, j)]);
                }
            }
            vdot.push((potential.vdot)(x));
        }
        Ok(Self { n, jac, vdot })
    }

    fn len(&self) -> usize {
        self.vdot.len()
    }

    /// Descending `η` per point for the factor `L`, row-major `len × n`.
    fn etas(&self, l: &DMatrix<f64>, out: &mut Vec<f64>) -> bool {
        let n = self.n;
        let linv = match l.clone().try_inverse() {
            Some(m) => m,
            None => return false,
        };
        // B = Lᵀ A L⁻ᵀ, formed with plain loops
        let lt: Vec<f64> = (0..n * n).map(|k| l[(k % n, k / n)]).collect();
        let lit: Vec<f64> = (0..n * n).map(|k| linv[(k % n, k / n)]).collect();
        out.clear();
        out.resize(self.len() * n, 0.0);
        let mut t = vec![0.0; n * n];
        let mut b = vec![0.0; n * n];
        let mut eig = vec![0.0; n];
        for p in 0..self.len() {
            let a = &self.jac[p * n * n..(p + 1) * n * n];
            for i in 0..n {
                for j in 0..n {
                    let mut acc = 0.0;
                    for k in 0..n {
                        acc += lt[i * n + k] * a[k * n + j];
                    }
                    t[i * n + j] = acc;
                }
            }
            for i in 0..n {
                for j in 0..n {
                    let mut acc = 0.0;
                    for k in 0..n {
                        acc += t[i * n + k] * lit[k * n + j];
                    }
                    b[i * n + j] = acc;
                }
            }
            for i in 0..n {
                for j in 0..i {
                    let v = b[i * n + j] + b[j * n + i];
                    b[i * n + j] = v;
                    b[j * n + i] = v;
                }
                b[i * n + i] *= 2.0;
            }
            jacobi_eigenvalues(&mut b, n, &mut eig);
            out[p * n..(p + 1) * n].copy_from_slice(&eig);
        }
        out.iter().all(|v| v.is_finite())
    }
}

/// `max_x [Ξ_d(η_x) + d·γ·v̇_x]` for a fixed `γ`.
fn worst_at_gamma(base: &[f64], vdot: &[f64], d: f64, gamma: f64) -> f64 {
    base.iter()
        .zip(vdot)
        .map(|(b, v)| b + d * gamma * v)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Best `γ ∈ [0, γ_max]` and the worst `Ξ_d` there.
fn best_gamma(base: &[f64], vdot: &[f64], d: f64, gamma_max: f64) -> (f64, f64) {
    if gamma_max <= 0.0 {
        return (0.0, worst_at_gamma(base, vdot, d, 0.0));
    }
    let (g, w) = golden_section(|g| worst_at_gamma(base, vdot, d, g), 0.0, gamma_max, 1e-10 * gamma_max);
    let w0 = worst_at_gamma(base, vdot, d, 0.0);
    if w0 <= w {
        (0.0, w0)
    } else {
        (g, w)
    }
}

struct Evaluator<'a> {
    cache: &'a GridCache,
    gamma_max: f64,
    etas: Vec<f64>,
    base: Vec<f64>,
}

impl<'a> Evaluator<'a> {
    fn new(cache: &'a GridCache, gamma_max: f64) -> Self {
        Self {
            cache,
            gamma_max,
            etas: Vec::new(),
            base: Vec::new(),
        }
    }

    /// Returns `(worst Ξ, γ)`, or the penalty for a degenerate factor.
    fn eval(&mut self, params: &[f64], dim: &FractionalDimension) -> (f64, f64) {
        let n = self.cache.n;
        let l = lower_from_params(n, params);
        let diag: Vec<f64> = (0..n).map(|i| l[(i, i)]).collect();
        let (dmax, dmin) = diag.iter().fold((0.0f64, f64::INFINITY), |(a, b), v| (a.max(*v), b.min(*v)));
        // cond(P₀) ≥ (dmax/dmin)²; reject clearly degenerate factors cheaply
        if !(dmin > 0.0) || (dmax / dmin).powi(2) > MAX_P0_COND || params.iter().any(|p| !p.is_finite()) {
            return (DEGENERATE_PENALTY, 0.0);
        }
        if !self.cache.etas(&l, &mut self.etas) {
            return (DEGENERATE_PENALTY, 0.0);
        }
        self.base.clear();
        self.base.extend(self.etas.chunks(n).map(|e| dim.top_sum(e)));
        let (g, w) = best_gamma(&self.base, &self.cache.vdot, dim.d(), self.gamma_max);
        (w, g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct SynthesisOptions {
    /// Bisection tolerance on `s`.
    pub s_tol: f64,
    pub seeds: Vec<u64>,
    pub nelder_mead: NelderMeadOptions,
    /// Standard deviation of the random restart perturbation.
    pub perturbation: f64,
    pub gamma_max: f64,
    /// `worstXi` must be below `−margin` to count as feasible.
    pub margin: f64,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            s_tol: 1e-4,
            seeds: (0..10).collect(),
            nelder_mead: NelderMeadOptions {
                max_evals: 2000,
                ..Default::default()
            },
            perturbation: 0.5,
            gamma_max: 10.0,
            margin: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BisectionStep {
    pub s: f64,
    pub worst_xi: f64,
    pub feasible: bool,
    pub restarts_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SynthesisResult {
    pub d0: usize,
    pub s_star: f64,
    /// False when no `s ∈ [0, 1]` was certified at this `d0`.
    pub feasible: bool,
    /// Row-major, trace-normalized.
    #[serde(rename = "P0")]
    pub p0: Vec<f64>,
    pub params: Vec<f64>,
    pub gamma: f64,
    pub worst_xi: f64,
    pub restarts: usize,
    pub seeds: Vec<u64>,
    pub trace: Vec<BisectionStep>,
    pub grid_meta: GridMeta,
    pub verify_grid_meta: Option<GridMeta>,
}

impl SynthesisResult {
    pub fn d(&self) -> f64 {
        self.d0 as f64 + self.s_star
    }

    pub fn family(&self, potential: Potential) -> Result<MetricFamily> {
        let n = (self.p0.len() as f64).sqrt() as usize;
        MetricFamily::new(n, self.params.clone(), self.gamma, potential)
    }
}

struct RestartOutcome {
    worst: f64,
    params: Vec<f64>,
    gamma: f64,
    used: usize,
}

/// Multi-start Nelder–Mead on the `L` parameters at a fixed dimension;
/// returns as soon as one restart is feasible.
fn search_at(
    cache: &GridCache,
    dim: &FractionalDimension,
    start: &[f64],
    opts: &SynthesisOptions,
    stop_when_feasible: bool,
) -> RestartOutcome {
    let mut ev = Evaluator::new(cache, opts.gamma_max);
    let nm = NelderMeadOptions {
        target: if stop_when_feasible { Some(-2.0 * opts.margin) } else { opts.nelder_mead.target },
        ..opts.nelder_mead
    };
    let mut best = RestartOutcome {
        worst: f64::INFINITY,
        params: start.to_vec(),
        gamma: 0.0,
        used: 0,
    };
    let normal = Normal::new(0.0, opts.perturbation.max(1e-12)).expect("positive deviation");
    let seeds: Vec<Option<u64>> = std::iter::once(None).chain(opts.seeds.iter().copied().map(Some)).collect();
    for seed in seeds {
        let x0: Vec<f64> = match seed {
            None => start.to_vec(),
            Some(s) => {
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                start.iter().map(|v| v + normal.sample(&mut rng)).collect()
            }
        };
        let res = nelder_mead(|p| ev.eval(p, dim).0, &x0, &nm);
        best.used += 1;
        if res.f < best.worst {
            let (w, g) = ev.eval(&res.x, dim);
            best.worst = w;
            best.params = res.x;
            best.gamma = g;
        }
        if stop_when_feasible && best.worst < -opts.margin {
            break;
        }
    }
    best
}

/// Smallest `s` on the region's grid for fixed `(L, γ)`: every point needs
/// `α + sβ < 0` with `α = Σ_{i≤d0} λ_i`, `β = λ_{d0+1}`.
fn required_s(cache: &GridCache, params: &[f64], gamma: f64, d0: usize) -> Option<f64> {
    let n = cache.n;
    let mut etas = Vec::new();
    if !cache.etas(&lower_from_params(n, params), &mut etas) {
        return None;
    }
    let (mut s_lo, mut s_hi) = (0.0f64, f64::INFINITY);
    for (e, v) in etas.chunks(n).zip(&cache.vdot) {
        let shift = gamma * v;
        let alpha: f64 = e[..d0].iter().map(|x| x + shift).sum();
        let beta = e[d0] + shift;
        if beta < 0.0 {
            s_lo = s_lo.max(alpha / -beta);
        } else if alpha >= 0.0 {
            return None;
        } else if beta > 0.0 {
            s_hi = s_hi.min(-alpha / beta);
        }
    }
    if s_lo >= s_hi {
        return None;
    }
    Some(s_lo)
}

/// Bisection on `s ∈ [0, 1]` at integer part `d0`, each step a multi-start
/// search over `(P₀, γ)`. When `verify` is given the witness is re-checked
/// there and `s` is raised to the smallest value it certifies on that grid.
pub fn minimize_fractional_s(
    sys: &DynamicalSystem,
    d0: usize,
    region: &Region,
    potential: &Potential,
    verify: Option<&Region>,
    opts: &SynthesisOptions,
) -> Result<SynthesisResult> {
    let n = sys.dim();
    if d0 < 1 || d0 >= n {
        return Err(Error::input(format!("d0 = {d0} outside [1, {}]", n - 1)));
    }
    if !(opts.s_tol > 0.0) {
        return Err(Error::input("bisection tolerance must be positive"));
    }
    let cache = GridCache::new(sys, region, potential)?;
    let dim_at = |s: f64| FractionalDimension::new(d0 as f64 + s, n);
    let mut trace = Vec::new();
    let mut restarts = 0;
    let identity = vec![0.0; MetricFamily::param_len(n)];

    let record = |s: f64, out: &RestartOutcome, trace: &mut Vec<BisectionStep>| {
        trace.push(BisectionStep {
            s,
            worst_xi: out.worst,
            feasible: out.worst < -opts.margin,
            restarts_used: out.used,
        });
    };

    let top = search_at(&cache, &dim_at(1.0 - 1e-12)?, &identity, opts, true);
    restarts += top.used;
    record(1.0, &top, &mut trace);
    if top.worst >= -opts.margin {
        return finish(n, d0, 1.0, false, top, restarts, opts, trace, region, verify, sys, potential);
    }
    let mut witness = top;
    let floor = search_at(&cache, &dim_at(0.0)?, &witness.params, opts, true);
    restarts += floor.used;
    record(0.0, &floor, &mut trace);
    if floor.worst < -opts.margin {
        return finish(n, d0, 0.0, true, floor, restarts, opts, trace, region, verify, sys, potential);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while hi - lo > opts.s_tol {
        let mid = 0.5 * (lo + hi);
        let out = search_at(&cache, &dim_at(mid)?, &witness.params, opts, true);
        restarts += out.used;
        record(mid, &out, &mut trace);
        if out.worst < -opts.margin {
            hi = mid;
            witness = out;
        } else {
            lo = mid;
        }
    }
    finish(n, d0, hi, true, witness, restarts, opts, trace, region, verify, sys, potential)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    n: usize,
    d0: usize,
    mut s: f64,
    feasible: bool,
    witness: RestartOutcome,
    restarts: usize,
    opts: &SynthesisOptions,
    trace: Vec<BisectionStep>,
    region: &Region,
    verify: Option<&Region>,
    sys: &DynamicalSystem,
    potential: &Potential,
) -> Result<SynthesisResult> {
    let mut worst = witness.worst;
    let mut verify_meta = None;
    if let (true, Some(vr)) = (feasible, verify) {
        let vcache = GridCache::new(sys, vr, potential)?;
        match required_s(&vcache, &witness.params, witness.gamma, d0) {
            Some(req) if req < 1.0 => {
                // land strictly inside the feasible side on the fine grid
                let need = req + opts.margin.max(1e-9);
                if need > s {
                    s = need.min(1.0);
                }
            }
            _ => s = 1.0,
        }
        let dim = FractionalDimension::new(d0 as f64 + s.min(1.0 - 1e-12), n)?;
        let mut etas = Vec::new();
        vcache.etas(&lower_from_params(n, &witness.params), &mut etas);
        let base: Vec<f64> = etas.chunks(n).map(|e| dim.top_sum(e)).collect();
        worst = worst_at_gamma(&base, &vcache.vdot, dim.d(), witness.gamma);
        verify_meta = Some(vr.meta()?);
    }
    let family = MetricFamily::new(n, witness.params.clone(), witness.gamma, potential.clone())?;
    let p0 = family.p0()?;
    Ok(SynthesisResult {
        d0,
        s_star: s,
        feasible: feasible && worst < 0.0,
        p0: p0.as_matrix().transpose().iter().copied().collect(),
        params: witness.params,
        gamma: witness.gamma,
        worst_xi: worst,
        restarts,
        seeds: opts.seeds.clone(),
        trace,
        grid_meta: region.meta()?,
        verify_grid_meta: verify_meta,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FixedDimensionResult {
    pub d: f64,
    pub feasible: bool,
    #[serde(rename = "P0")]
    pub p0: Vec<f64>,
    pub params: Vec<f64>,
    pub gamma: f64,
    pub worst_xi: f64,
    pub restarts: usize,
    pub seeds: Vec<u64>,
    pub grid_meta: GridMeta,
}

impl FixedDimensionResult {
    pub fn family(&self, potential: Potential) -> Result<MetricFamily> {
        let n = (self.p0.len() as f64).sqrt() as usize;
        MetricFamily::new(n, self.params.clone(), self.gamma, potential)
    }
}

/// Minimizes the worst `Ξ_d` over `(P₀, γ)` at a fixed `d`, starting from
/// `start` (identity when absent) plus seeded perturbations.
pub fn synthesize_fixed_d(
    sys: &DynamicalSystem,
    dim: &FractionalDimension,
    region: &Region,
    potential: &Potential,
    start: Option<&MetricFamily>,
    opts: &SynthesisOptions,
) -> Result<FixedDimensionResult> {
    let n = sys.dim();
    if dim.n() != n {
        return Err(Error::input("dimension and system sizes differ"));
    }
    let cache = GridCache::new(sys, region, potential)?;
    let x0 = start.map_or_else(|| vec![0.0; MetricFamily::param_len(n)], |f| f.params().to_vec());
    let out = search_at(&cache, dim, &x0, opts, false);
    let family = MetricFamily::new(n, out.params.clone(), out.gamma, potential.clone())?;
    Ok(FixedDimensionResult {
        d: dim.d(),
        feasible: out.worst < -opts.margin,
        p0: family.p0()?.as_matrix().transpose().iter().copied().collect(),
        params: out.params,
        gamma: out.gamma,
        worst_xi: out.worst,
        restarts: out.used,
        seeds: opts.seeds.clone(),
        grid_meta: region.meta()?,
    })
}

/// Worst `Ξ_d` over `γ ∈ [0, γ_max]` for a fixed `P₀`, sampled on `gammas`.
pub fn gamma_profile(
    sys: &DynamicalSystem,
    p0: &SpdMatrix,
    potential: &Potential,
    region: &Region,
    dim: &FractionalDimension,
    gammas: &[f64],
) -> Result<Vec<f64>> {
    let cache = GridCache::new(sys, region, potential)?;
    let mut etas = Vec::new();
    if !cache.etas(&p0.cholesky_factor(), &mut etas) {
        return Err(Error::numeric("degenerate metric factor"));
    }
    let base: Vec<f64> = etas.chunks(sys.dim()).map(|e| dim.top_sum(e)).collect();
    Ok(gammas.iter().map(|&g| worst_at_gamma(&base, &cache.vdot, dim.d(), g)).collect())
}

/// Convenience: the state vector of a point on the grid.
pub fn grid_points(region: &Region) -> Result<Vec<DVector<f64>>> {
    region.points()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{rossler_reference_metric, rossler_system, RosslerParams};

    fn diag_sys() -> DynamicalSystem {
        DynamicalSystem::linear("diag", DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0, -3.0]))).unwrap()
    }

    #[test]
    fn family_reconstruction() {
        let p = SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 2.0])).unwrap();
        let fam = MetricFamily::from_p0(&p, 0.5, Potential::zero()).unwrap();
        let p0 = fam.p0().unwrap();
        assert!((p0.as_matrix().trace() - 2.0).abs() < 1e-12);
        assert!((p0.as_matrix() * 3.0 - p.as_matrix()).amax() < 1e-12);
        assert!(MetricFamily::new(2, vec![0.0; 2], 0.0, Potential::zero()).is_err());
        assert!(MetricFamily::new(2, vec![0.0; 3], -1.0, Potential::zero()).is_err());
    }

    #[test]
    fn linear_feasibility() {
        let region = Region::new(vec![-1.0; 3], vec![1.0; 3], vec![2; 3]).unwrap();
        let fam = MetricFamily::identity(3, 0.0, Potential::zero()).unwrap();
        let d = FractionalDimension::new(2.5, 3).unwrap();
        assert!((feasibility(&diag_sys(), &fam, &region, &d).unwrap() + 9.0).abs() < 1e-12);
    }

    #[test]
    fn fast_path_matches_general_route() {
        let p = RosslerParams::default();
        let (sys, _) = rossler_system(p).unwrap();
        let reference = rossler_reference_metric();
        let fam = MetricFamily::from_p0(&reference.p_star, reference.tau_star, p.potential()).unwrap();
        let region = p.y_region(20.0, 0.5).unwrap();
        let d = FractionalDimension::new(2.60557, 3).unwrap();
        let general = feasibility(&sys, &fam, &region, &d).unwrap();
        let cache = GridCache::new(&sys, &region, &p.potential()).unwrap();
        let mut ev = Evaluator::new(&cache, 0.0);
        let mut etas = Vec::new();
        cache.etas(&fam.lower_factor(), &mut etas);
        let base: Vec<f64> = etas.chunks(3).map(|e| d.top_sum(e)).collect();
        let fast = worst_at_gamma(&base, &cache.vdot, d.d(), reference.tau_star);
        assert!((general - fast).abs() < 1e-10, "{general} vs {fast}");
        let _ = ev.eval(fam.params(), &d);
    }

    #[test]
    fn identity_metric_fails_for_rossler() {
        let p = RosslerParams::default();
        let (sys, _) = rossler_system(p).unwrap();
        let fam = MetricFamily::identity(3, 0.0, p.potential()).unwrap();
        let d = FractionalDimension::new(2.60557, 3).unwrap();
        let w = feasibility(&sys, &fam, &p.y_region(20.0, 0.5).unwrap(), &d).unwrap();
        assert!(w > 0.0);
    }

    #[test]
    fn linear_synthesis_returns_floor() {
        let region = Region::new(vec![-1.0; 3], vec![1.0; 3], vec![2; 3]).unwrap();
        let res = minimize_fractional_s(&diag_sys(), 2, &region, &Potential::zero(), None, &SynthesisOptions::default()).unwrap();
        assert!(res.feasible);
        assert_eq!(res.s_star, 0.0);
        assert!(minimize_fractional_s(&diag_sys(), 3, &region, &Potential::zero(), None, &SynthesisOptions::default()).is_err());
    }

    #[test]
    fn scaling_factor_does_not_change_worst() {
        let p = RosslerParams::default();
        let (sys, _) = rossler_system(p).unwrap();
        let region = p.y_region(20.0, 1.0).unwrap();
        let cache = GridCache::new(&sys, &region, &p.potential()).unwrap();
        let mut ev = Evaluator::new(&cache, 1.0);
        let d = FractionalDimension::new(2.6, 3).unwrap();
        let params = vec![0.1, 0.3, -0.2, 0.5, -0.4, 0.2];
        let (w1, _) = ev.eval(&params, &d);
        // adding ln c to every log-diagonal entry and scaling off-diagonals by c
        let c: f64 = 3.7;
        let scaled = vec![0.1 + c.ln(), 0.3 * c, -0.2 + c.ln(), 0.5 * c, -0.4 * c, 0.2 + c.ln()];
        let (w2, _) = ev.eval(&scaled, &d);
        assert!((w1 - w2).abs() < 1e-10);
    }
}
