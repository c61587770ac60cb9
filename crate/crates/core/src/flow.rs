//! Trajectories, the variational flow, periodic-orbit shooting and monodromy.

use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{additive_compound_into, k_subsets};

pub type VectorField = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type JacobianField = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Default tolerance for the analytic-vs-numeric Jacobian check.
pub const JACOBIAN_TOL: f64 = 1e-4;

/// Smooth autonomous system `ẋ = f(x)` on `ℝⁿ`.
#[derive(Clone)]
pub struct DynamicalSystem {
    name: String,
    n: usize,
    f: VectorField,
    jacobian: Option<JacobianField>,
}

impl fmt::Debug for DynamicalSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DynamicalSystem")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("analytic_jacobian", &self.jacobian.is_some())
            .finish()
    }
}

impl DynamicalSystem {
    pub fn new(
        name: impl Into<String>,
        n: usize,
        f: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        assert!(n > 0, "state dimension must be positive");
        Self {
            name: name.into(),
            n,
            f: Arc::new(f),
            jacobian: None,
        }
    }

    pub fn with_jacobian(
        mut self,
        jac: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.jacobian = Some(Arc::new(jac));
        self
    }

    /// `ẋ = A x`.
    pub fn linear(name: impl Into<String>, a: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(Error::input("linear system matrix must be square and nonempty"));
        }
        let n = a.nrows();
        let af = a.clone();
        Ok(Self::new(name, n, move |x| &af * x).with_jacobian(move |_| a.clone()))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    pub fn rhs(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.f)(x)
    }

    /// `Df(x)`: analytic when provided, else central differences with
    /// `h = 1e-6·(1 + ‖x‖∞)`.
    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match &self.jacobian {
            Some(j) => j(x),
            None => self.numeric_jacobian(x),
        }
    }

    pub fn numeric_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let h = 1e-6 * (1.0 + x.amax());
        let mut jac = DMatrix::zeros(self.n, self.n);
        let mut xp = x.clone();
        for i in 0..self.n {
            xp[i] = x[i] + h;
            let fp = self.rhs(&xp);
            xp[i] = x[i] - h;
            let fm = self.rhs(&xp);
            xp[i] = x[i];
            jac.set_column(i, &((fp - fm) / (2.0 * h)));
        }
        jac
    }

    /// Largest column-wise discrepancy between the Jacobian and central
    /// differences of `f` over the samples; errors above `tol`.
    pub fn verify_jacobian(&self, samples: &[DVector<f64>], tol: f64) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for x in samples {
            self.check_state(x)?;
            let diff = (self.jacobian(x) - self.numeric_jacobian(x)).amax();
            worst = worst.max(diff);
        }
        if worst > tol {
            return Err(Error::input(format!(
                "Jacobian of '{}' disagrees with finite differences by {worst:e}",
                self.name
            )));
        }
        Ok(worst)
    }

    pub(crate) fn check_state(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::input(format!(
                "state has length {} but '{}' has dimension {}",
                x.len(),
                self.name,
                self.n
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("state has non-finite entries"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Rk4Fixed,
    Rk45Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct IntegratorOptions {
    pub method: Method,
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Also the step of the fixed-step method.
    pub max_step: f64,
    pub min_step: f64,
    pub max_steps: usize,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self::certification()
    }
}

impl IntegratorOptions {
    /// Tolerances used when a certificate depends on the result.
    pub fn certification() -> Self {
        Self {
            method: Method::Rk45Adaptive,
            abs_tol: 1e-10,
            rel_tol: 1e-10,
            max_step: 1.0,
            min_step: 1e-13,
            max_steps: 20_000_000,
        }
    }

    pub fn sweep() -> Self {
        Self {
            abs_tol: 1e-8,
            rel_tol: 1e-8,
            ..Self::certification()
        }
    }

    pub fn tight() -> Self {
        Self {
            abs_tol: 1e-12,
            rel_tol: 1e-12,
            ..Self::certification()
        }
    }

    pub fn rk4(step: f64) -> Self {
        Self {
            method: Method::Rk4Fixed,
            max_step: step,
            ..Self::certification()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.abs_tol > 0.0
            && self.rel_tol > 0.0
            && self.min_step > 0.0
            && self.max_step.is_finite()
            && self.min_step <= self.max_step
            && self.max_steps > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::input(format!("invalid integrator options {self:?}")))
        }
    }
}

/// Hooks invoked by the stepper.
pub(crate) trait Observer {
    /// Called after every accepted step; may rescale `y` in place and must
    /// then return `true`.
    fn after_step(&mut self, _t: f64, _y: &mut [f64]) -> bool {
        false
    }
    /// Called when `t` reaches the `idx`-th requested stop.
    fn at_stop(&mut self, _idx: usize, _t: f64, _y: &[f64]) {}
}

/// State layout for error control: components inside `linear_blocks` are
/// measured relative to the largest entry of their block, so a linear
/// block keeps its relative accuracy regardless of scale.
#[derive(Debug, Clone, Default)]
pub(crate) struct Layout {
    pub linear_blocks: Vec<Range<usize>>,
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct SolveStats {
    pub steps: usize,
    pub rejected: usize,
    pub error_estimate: f64,
}

const DP_A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// difference between the 5th and embedded 4th order weights
const DP_E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

fn divergence(t: f64, reason: impl Into<String>, y: &[f64]) -> Error {
    Error::Divergence {
        t,
        reason: reason.into(),
        last_state: y.to_vec(),
    }
}

/// Integrates `y' = rhs(y)` from `t = 0` through the given stops (all of
/// one sign, monotone in that direction). Steps are truncated to land on
/// every stop exactly.
pub(crate) fn solve<F>(
    mut rhs: F,
    y0: &[f64],
    stops: &[f64],
    opts: &IntegratorOptions,
    layout: &Layout,
    obs: &mut dyn Observer,
) -> Result<SolveStats>
where
    F: FnMut(&[f64], &mut [f64]),
{
    opts.validate()?;
    let dir = match stops.iter().find(|s| **s != 0.0) {
        Some(s) => s.signum(),
        None => 1.0,
    };
    let mut prev = 0.0;
    for &s in stops {
        if !s.is_finite() || (s - prev) * dir < 0.0 {
            return Err(Error::input("integration horizons must be finite and monotone"));
        }
        prev = s;
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("initial state has non-finite entries"));
    }
    match opts.method {
        Method::Rk45Adaptive => dopri(&mut rhs, y0, stops, dir, opts, layout, obs),
        Method::Rk4Fixed => rk4(&mut rhs, y0, stops, dir, opts, obs),
    }
}

fn block_max(y: &[f64], r: &Range<usize>) -> f64 {
    y[r.clone()].iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn error_norm(y: &[f64], y_new: &[f64], err: &[f64], opts: &IntegratorOptions, layout: &Layout) -> f64 {
    let m = y.len();
    let mut abs_scale = vec![1.0; m];
    for r in &layout.linear_blocks {
        let s = block_max(y, r).max(block_max(y_new, r)).max(f64::MIN_POSITIVE);
        for v in &mut abs_scale[r.clone()] {
            *v = s;
        }
    }
    let mut acc = 0.0;
    for i in 0..m {
        let sc = opts.abs_tol * abs_scale[i] + opts.rel_tol * y[i].abs().max(y_new[i].abs());
        let r = err[i] / sc;
        acc += r * r;
    }
    (acc / m as f64).sqrt()
}

fn dopri(
    rhs: &mut dyn FnMut(&[f64], &mut [f64]),
    y0: &[f64],
    stops: &[f64],
    dir: f64,
    opts: &IntegratorOptions,
    layout: &Layout,
    obs: &mut dyn Observer,
) -> Result<SolveStats> {
    let m = y0.len();
    let mut y = y0.to_vec();
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; m]; 7];
    let mut tmp = vec![0.0; m];
    let mut y_new = vec![0.0; m];
    let mut err = vec![0.0; m];
    let mut stats = SolveStats::default();
    let mut t = 0.0;
    rhs(&y, &mut k[0]);

    // initial step from the scaled size of y and f
    let d0 = error_norm(&y, &y, &y, opts, layout);
    let d1 = error_norm(&y, &y, &k[0], opts, layout);
    let mut h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h = h.min(opts.max_step).max(opts.min_step);

    let mut stop_idx = 0;
    while stop_idx < stops.len() && stops[stop_idx] == 0.0 {
        obs.at_stop(stop_idx, 0.0, &y);
        stop_idx += 1;
    }
    while stop_idx < stops.len() {
        let target = stops[stop_idx];
        let remaining = (target - t) * dir;
        let mut step = h.min(remaining);
        let lands = step >= remaining * (1.0 - 1e-12);
        if lands {
            step = remaining;
        }
        if stats.steps >= opts.max_steps {
            return Err(divergence(t, "maximum number of steps exceeded", &y));
        }
        let hs = step * dir;
        for stage in 1..7 {
            for i in 0..m {
                let mut acc = 0.0;
                for j in 0..stage {
                    acc += DP_A[stage - 1][j] * k[j][i];
                }
                tmp[i] = y[i] + hs * acc;
            }
            if stage < 6 {
                rhs(&tmp, &mut k[stage]);
            } else {
                y_new.copy_from_slice(&tmp);
                rhs(&y_new, &mut k[6]);
            }
        }
        for i in 0..m {
            let mut acc = 0.0;
            for j in 0..7 {
                acc += DP_E[j] * k[j][i];
            }
            err[i] = hs * acc;
        }
        let finite = y_new.iter().all(|v| v.is_finite()) && k[6].iter().all(|v| v.is_finite());
        let en = if finite {
            error_norm(&y, &y_new, &err, opts, layout)
        } else {
            f64::INFINITY
        };
        if en <= 1.0 {
            stats.steps += 1;
            stats.error_estimate += err.iter().fold(0.0f64, |a, e| a.max(e.abs()));
            t = if lands { target } else { t + hs };
            std::mem::swap(&mut y, &mut y_new);
            k.swap(0, 6);
            if obs.after_step(t, &mut y) {
                rhs(&y, &mut k[0]);
            }
            let fac = if en == 0.0 { 5.0 } else { (0.9 * en.powf(-0.2)).clamp(0.2, 5.0) };
            // a truncated landing step should not shrink the next proposal
            h = if lands { h.max(step * fac) } else { step * fac };
            h = h.min(opts.max_step);
            if lands {
                obs.at_stop(stop_idx, t, &y);
                stop_idx += 1;
            }
        } else {
            stats.rejected += 1;
            let fac = if en.is_finite() { (0.9 * en.powf(-0.2)).clamp(0.1, 0.9) } else { 0.1 };
            h = step * fac;
            if h < opts.min_step {
                let reason = if finite {
                    "step size underflow"
                } else {
                    "state became non-finite"
                };
                return Err(divergence(t, reason, &y));
            }
        }
    }
    Ok(stats)
}

fn rk4(
    rhs: &mut dyn FnMut(&[f64], &mut [f64]),
    y0: &[f64],
    stops: &[f64],
    dir: f64,
    opts: &IntegratorOptions,
    obs: &mut dyn Observer,
) -> Result<SolveStats> {
    let m = y0.len();
    let mut y = y0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    let mut tmp = vec![0.0; m];
    let mut stats = SolveStats::default();
    let mut t = 0.0;
    for (idx, &target) in stops.iter().enumerate() {
        loop {
            let remaining = (target - t) * dir;
            if remaining <= 0.0 {
                break;
            }
            if stats.steps >= opts.max_steps {
                return Err(divergence(t, "maximum number of steps exceeded", &y));
            }
            let lands = opts.max_step >= remaining * (1.0 - 1e-12);
            let hs = if lands { remaining } else { opts.max_step } * dir;
            rhs(&y, &mut k1);
            for i in 0..m {
                tmp[i] = y[i] + 0.5 * hs * k1[i];
            }
            rhs(&tmp, &mut k2);
            for i in 0..m {
                tmp[i] = y[i] + 0.5 * hs * k2[i];
            }
            rhs(&tmp, &mut k3);
            for i in 0..m {
                tmp[i] = y[i] + hs * k3[i];
            }
            rhs(&tmp, &mut k4);
            for i in 0..m {
                y[i] += hs / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            if y.iter().any(|v| !v.is_finite()) {
                return Err(divergence(t, "state became non-finite", &tmp));
            }
            stats.steps += 1;
            t = if lands { target } else { t + hs };
            obs.after_step(t, &mut y);
        }
        obs.at_stop(idx, t, &y);
    }
    Ok(stats)
}

/// Sampled trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// Sum over steps of the max-abs local error estimate (zero for RK4).
    pub error_estimate: f64,
    pub steps: usize,
}

impl Trajectory {
    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory is never empty")
    }

    /// CSV with header `t,x1,...,xn`.
    pub fn to_csv(&self) -> String {
        let n = self.states.first().map_or(0, |s| s.len());
        let mut out = String::from("t");
        for i in 1..=n {
            out.push_str(&format!(",x{i}"));
        }
        out.push('\n');
        for (t, x) in self.times.iter().zip(&self.states) {
            out.push_str(&crate::report::fmt17(*t));
            for v in x.iter() {
                out.push(',');
                out.push_str(&crate::report::fmt17(*v));
            }
            out.push('\n');
        }
        out
    }
}

struct Recorder<'a> {
    every_step: bool,
    times: &'a mut Vec<f64>,
    states: &'a mut Vec<DVector<f64>>,
}

impl Observer for Recorder<'_> {
    fn after_step(&mut self, t: f64, y: &mut [f64]) -> bool {
        if self.every_step {
            self.times.push(t);
            self.states.push(DVector::from_column_slice(y));
        }
        false
    }

    fn at_stop(&mut self, _idx: usize, t: f64, y: &[f64]) {
        if !self.every_step {
            self.times.push(t);
            self.states.push(DVector::from_column_slice(y));
        }
    }
}

fn plain_rhs(sys: &DynamicalSystem) -> impl FnMut(&[f64], &mut [f64]) + '_ {
    move |y, dy| {
        let fx = sys.rhs(&DVector::from_column_slice(y));
        dy.copy_from_slice(fx.as_slice());
    }
}

/// Integrates to `t` (negative `t` runs backwards), recording every
/// accepted step.
pub fn integrate(sys: &DynamicalSystem, x0: &DVector<f64>, t: f64, opts: &IntegratorOptions) -> Result<Trajectory> {
    sys.check_state(x0)?;
    let mut times = vec![0.0];
    let mut states = vec![x0.clone()];
    let mut rec = Recorder {
        every_step: true,
        times: &mut times,
        states: &mut states,
    };
    let stats = solve(plain_rhs(sys), x0.as_slice(), &[t], opts, &Layout::default(), &mut rec)?;
    Ok(Trajectory {
        times,
        states,
        error_estimate: stats.error_estimate,
        steps: stats.steps,
    })
}

/// States at the requested times (monotone, same sign).
pub fn integrate_at(
    sys: &DynamicalSystem,
    x0: &DVector<f64>,
    times: &[f64],
    opts: &IntegratorOptions,
) -> Result<Trajectory> {
    sys.check_state(x0)?;
    let mut ts = Vec::with_capacity(times.len());
    let mut states = Vec::with_capacity(times.len());
    let mut rec = Recorder {
        every_step: false,
        times: &mut ts,
        states: &mut states,
    };
    let stats = solve(plain_rhs(sys), x0.as_slice(), times, opts, &Layout::default(), &mut rec)?;
    Ok(Trajectory {
        times: ts,
        states,
        error_estimate: stats.error_estimate,
        steps: stats.steps,
    })
}

/// `φᵗ(x0)`.
pub fn flow_map(sys: &DynamicalSystem, x0: &DVector<f64>, t: f64, opts: &IntegratorOptions) -> Result<DVector<f64>> {
    Ok(integrate_at(sys, x0, &[t], opts)?.states.pop().expect("one stop"))
}

/// Flow Jacobian `X(t, x0) = e^{log_scale}·x_jac`.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState {
    pub t: f64,
    pub x: DVector<f64>,
    pub x_jac: DMatrix<f64>,
    pub log_scale: f64,
}

impl VariationalState {
    /// The unscaled Jacobian; may overflow for long horizons.
    pub fn jacobian(&self) -> DMatrix<f64> {
        &self.x_jac * self.log_scale.exp()
    }

    /// Header `t,x1..xn,X11..Xnn,logScale` (row-major X).
    pub fn csv_header(n: usize) -> String {
        let mut h = String::from("t");
        for i in 1..=n {
            h.push_str(&format!(",x{i}"));
        }
        for i in 1..=n {
            for j in 1..=n {
                h.push_str(&format!(",X{i}{j}"));
            }
        }
        h.push_str(",logScale");
        h
    }

    pub fn csv_row(&self) -> String {
        use crate::report::fmt17;
        let n = self.x.len();
        let mut row = fmt17(self.t);
        for v in self.x.iter() {
            row.push(',');
            row.push_str(&fmt17(*v));
        }
        for i in 0..n {
            for j in 0..n {
                row.push(',');
                row.push_str(&fmt17(self.x_jac[(i, j)]));
            }
        }
        row.push(',');
        row.push_str(&fmt17(self.log_scale));
        row
    }
}

const RENORM_HIGH: f64 = 1e100;
const RENORM_LOW: f64 = 1e-100;

struct BlockRenormalizer {
    blocks: Vec<Range<usize>>,
    log_scales: Vec<f64>,
    snapshots: Vec<(f64, Vec<f64>, Vec<f64>)>,
}

impl BlockRenormalizer {
    fn new(blocks: Vec<Range<usize>>) -> Self {
        let k = blocks.len();
        Self {
            blocks,
            log_scales: vec![0.0; k],
            snapshots: Vec::new(),
        }
    }
}

impl Observer for BlockRenormalizer {
    fn after_step(&mut self, _t: f64, y: &mut [f64]) -> bool {
        let mut changed = false;
        for (b, r) in self.blocks.iter().enumerate() {
            let m = block_max(y, r);
            if m > RENORM_HIGH || (m < RENORM_LOW && m > 0.0) {
                for v in &mut y[r.clone()] {
                    *v /= m;
                }
                self.log_scales[b] += m.ln();
                changed = true;
            }
        }
        changed
    }

    fn at_stop(&mut self, _idx: usize, t: f64, y: &[f64]) {
        self.snapshots.push((t, y.to_vec(), self.log_scales.clone()));
    }
}

fn variational_rhs(sys: &DynamicalSystem) -> impl FnMut(&[f64], &mut [f64]) + '_ {
    let n = sys.dim();
    move |y, dy| {
        let x = DVector::from_column_slice(&y[..n]);
        dy[..n].copy_from_slice(sys.rhs(&x).as_slice());
        let jac = sys.jacobian(&x);
        let xm = DMatrix::from_column_slice(n, n, &y[n..]);
        dy[n..].copy_from_slice((jac * xm).as_slice());
    }
}

/// Variational states at the requested times (monotone, same sign).
pub fn variational_flow_at(
    sys: &DynamicalSystem,
    x0: &DVector<f64>,
    times: &[f64],
    opts: &IntegratorOptions,
) -> Result<Vec<VariationalState>> {
    sys.check_state(x0)?;
    let n = sys.dim();
    let mut y0 = x0.as_slice().to_vec();
    y0.extend(DMatrix::<f64>::identity(n, n).iter());
    let block = n..n + n * n;
    let layout = Layout {
        linear_blocks: vec![block.clone()],
    };
    let mut obs = BlockRenormalizer::new(vec![block]);
    solve(variational_rhs(sys), &y0, times, opts, &layout, &mut obs)?;
    Ok(obs
        .snapshots
        .into_iter()
        .map(|(t, y, ls)| VariationalState {
            t,
            x: DVector::from_column_slice(&y[..n]),
            x_jac: DMatrix::from_column_slice(n, n, &y[n..]),
            log_scale: ls[0],
        })
        .collect())
}

/// Jointly integrates `ẋ = f(x)`, `Ẋ = Df(x)X` with `X(0) = I`.
pub fn variational_flow(
    sys: &DynamicalSystem,
    x0: &DVector<f64>,
    t: f64,
    opts: &IntegratorOptions,
) -> Result<VariationalState> {
    Ok(variational_flow_at(sys, x0, &[t], opts)?.pop().expect("one stop"))
}

/// `ln σ₁(X^(k)(t, x0))` for `k = 1..n` at each requested time, obtained by
/// integrating `Ẏ_k = Df^[k] Y_k` for `k < n` and `∫ tr Df` for `k = n`.
/// Each compound has its own scalar renormalization, so the result keeps
/// full relative accuracy even when `X` itself is badly conditioned.
pub fn compound_log_norms_at(
    sys: &DynamicalSystem,
    x0: &DVector<f64>,
    times: &[f64],
    opts: &IntegratorOptions,
) -> Result<Vec<Vec<f64>>> {
    sys.check_state(x0)?;
    let n = sys.dim();
    let subsets: Vec<Vec<Vec<usize>>> = (1..n).map(|k| k_subsets(n, k)).collect();
    let mut blocks = Vec::new();
    let mut y0 = x0.as_slice().to_vec();
    y0.push(0.0); // ∫ tr Df
    for sets in &subsets {
        let c = sets.len();
        let start = y0.len();
        y0.extend(DMatrix::<f64>::identity(c, c).iter());
        blocks.push(start..start + c * c);
    }
    let layout = Layout {
        linear_blocks: blocks.clone(),
    };
    let mut compounds: Vec<DMatrix<f64>> = subsets.iter().map(|s| DMatrix::zeros(s.len(), s.len())).collect();
    let rhs = {
        let blocks = blocks.clone();
        move |y: &[f64], dy: &mut [f64]| {
            let x = DVector::from_column_slice(&y[..n]);
            dy[..n].copy_from_slice(sys.rhs(&x).as_slice());
            let jac = sys.jacobian(&x);
            dy[n] = jac.trace();
            for (b, r) in blocks.iter().enumerate() {
                let c = subsets[b].len();
                additive_compound_into(&jac, &subsets[b], &mut compounds[b]);
                let ym = DMatrix::from_column_slice(c, c, &y[r.clone()]);
                dy[r.clone()].copy_from_slice((&compounds[b] * ym).as_slice());
            }
        }
    };
    let mut obs = BlockRenormalizer::new(blocks.clone());
    solve(rhs, &y0, times, opts, &layout, &mut obs)?;
    let mut out = Vec::with_capacity(times.len());
    for (_, y, ls) in obs.snapshots {
        let mut row = Vec::with_capacity(n);
        for (b, r) in blocks.iter().enumerate() {
            let c = (r.end - r.start) as f64;
            let c = c.sqrt() as usize;
            let ym = DMatrix::from_column_slice(c, c, &y[r.clone()]);
            let top = crate::linalg::singular_values(&ym)?[0];
            row.push(top.ln() + ls[b]);
        }
        row.push(y[n]);
        out.push(row);
    }
    Ok(out)
}

/// Result of periodic-orbit shooting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicOrbit {
    pub x0: Vec<f64>,
    pub period: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// Newton shooting on the hyperplane through `x_guess` with normal
/// `f(x_guess)`. The bordered system is solved in the least-squares sense,
/// which tolerates families of orbits (a singular `M − I`).
/// The period is confined to `(T_guess/2, 2·T_guess)`; a period-only step
/// competes with the full step each iteration.
pub fn find_periodic_orbit(
    sys: &DynamicalSystem,
    x_guess: &DVector<f64>,
    t_guess: f64,
    opts: &IntegratorOptions,
) -> Result<PeriodicOrbit> {
    sys.check_state(x_guess)?;
    if !(t_guess > 0.0 && t_guess.is_finite()) {
        return Err(Error::input("period guess must be positive"));
    }
    let n = sys.dim();
    let normal = sys.rhs(x_guess);
    if normal.norm() == 0.0 {
        return Err(Error::input("guess is an equilibrium; the section is undefined"));
    }
    const MAX_ITER: usize = 50;
    let mut x = x_guess.clone();
    let mut period = t_guess;
    let residual_of = |x: &DVector<f64>, period: f64| -> Result<(f64, VariationalState)> {
        let st = variational_flow(sys, x, period, opts)?;
        Ok(((&st.x - x).norm(), st))
    };
    let (mut res, mut st) = residual_of(&x, period)?;
    for iter in 0..MAX_ITER {
        if res <= 1e-9 * (1.0 + x.norm()) {
            return Ok(PeriodicOrbit {
                x0: x.iter().copied().collect(),
                period,
                residual: res,
                iterations: iter,
            });
        }
        let m = st.jacobian();
        let f_end = sys.rhs(&st.x);
        let mut a = DMatrix::zeros(n + 1, n + 1);
        a.view_mut((0, 0), (n, n)).copy_from(&(m - DMatrix::identity(n, n)));
        a.view_mut((0, n), (n, 1)).copy_from(&f_end);
        a.view_mut((n, 0), (1, n)).copy_from(&normal.transpose());
        let mut rhs = DVector::zeros(n + 1);
        rhs.rows_mut(0, n).copy_from(&(&x - &st.x));
        rhs[n] = -normal.dot(&(&x - x_guess));
        let svd = a.svd(true, true);
        let tol = 1e-10 * svd.singular_values.max();
        let delta = svd
            .solve(&rhs, tol)
            .map_err(|e| Error::numeric(format!("shooting solve failed: {e}")))?;
        let f_scale = normal.norm();
        let admissible = |xn: &DVector<f64>, tn: f64| {
            // the trivial solution T → 0 always has zero residual, and so does
            // any equilibrium; keep T near the guess and stay off equilibria
            tn > 0.5 * t_guess && tn < 2.0 * t_guess && sys.rhs(xn).norm() >= 1e-3 * f_scale
        };
        let mut best: Option<(f64, DVector<f64>, f64, VariationalState)> = None;
        // damped update: the first step length that reduces the residual
        let mut lambda = 1.0;
        for _ in 0..12 {
            let xn = &x + delta.rows(0, n) * lambda;
            let tn = period + delta[n] * lambda;
            if admissible(&xn, tn) {
                if let Ok((rn, sn)) = residual_of(&xn, tn) {
                    if rn < res {
                        best = Some((rn, xn, tn, sn));
                        break;
                    }
                }
            }
            lambda *= 0.5;
        }
        // period-only Gauss–Newton step; wins on isochronous families where
        // the full step heads for an equilibrium
        let fe2 = f_end.norm_squared();
        if fe2 > 0.0 {
            let tn = period - f_end.dot(&(&st.x - &x)) / fe2;
            if admissible(&x, tn) {
                if let Ok((rn, sn)) = residual_of(&x, tn) {
                    if rn < res && best.as_ref().is_none_or(|b| rn < b.0) {
                        best = Some((rn, x.clone(), tn, sn));
                    }
                }
            }
        }
        let accepted = best.is_some();
        if let Some((rn, xn, tn, sn)) = best {
            x = xn;
            period = tn;
            res = rn;
            st = sn;
        }
        if !accepted {
            return Err(Error::NoConvergence {
                iterations: iter + 1,
                residual: res,
                best: x.iter().copied().chain([period]).collect(),
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: MAX_ITER,
        residual: res,
        best: x.iter().copied().chain([period]).collect(),
    })
}

/// Monodromy matrix `X(T, x0)` of an orbit point.
pub fn monodromy(sys: &DynamicalSystem, x0: &DVector<f64>, period: f64, opts: &IntegratorOptions) -> Result<DMatrix<f64>> {
    if !(period > 0.0) {
        return Err(Error::input("period must be positive"));
    }
    let st = variational_flow(sys, x0, period, opts)?;
    let gap = (&st.x - x0).norm();
    if gap > 1e-6 * (1.0 + x0.norm()) {
        return Err(Error::input(format!(
            "x0 is not on a {period}-periodic orbit (return gap {gap:e})"
        )));
    }
    Ok(st.jacobian())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn harmonic() -> DynamicalSystem {
        DynamicalSystem::linear("harmonic", DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])).unwrap()
    }

    #[test]
    fn zero_field_is_stationary() {
        let sys = DynamicalSystem::new("zero", 3, |x| DVector::zeros(x.len()));
        let x0 = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        let tr = integrate(&sys, &x0, 5.0, &IntegratorOptions::default()).unwrap();
        assert_eq!(tr.final_state(), &x0);
        let st = variational_flow(&sys, &x0, 5.0, &IntegratorOptions::default()).unwrap();
        assert_eq!(st.x_jac, DMatrix::identity(3, 3));
        assert_eq!(st.log_scale, 0.0);
    }

    #[test]
    fn exponential_decay() {
        let sys = DynamicalSystem::new("decay", 1, |x| -x);
        let x = flow_map(&sys, &DVector::from_element(1, 1.0), 1.0, &IntegratorOptions::default()).unwrap();
        assert!((x[0] - (-1.0f64).exp()).abs() < 1e-9);
        let back = flow_map(&sys, &DVector::from_element(1, 1.0), -1.0, &IntegratorOptions::default()).unwrap();
        assert!((back[0] - 1.0f64.exp()).abs() < 1e-8);
        let rk = flow_map(&sys, &DVector::from_element(1, 1.0), 1.0, &IntegratorOptions::rk4(1e-3)).unwrap();
        assert!((rk[0] - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn harmonic_period() {
        let x = flow_map(
            &harmonic(),
            &DVector::from_vec(vec![1.0, 0.0]),
            2.0 * std::f64::consts::PI,
            &IntegratorOptions::tight(),
        )
        .unwrap();
        assert!((x[0] - 1.0).abs() < 1e-8 && x[1].abs() < 1e-8);
    }

    #[test]
    fn diagonal_variational() {
        let sys = DynamicalSystem::linear("diag", DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0, -3.0]))).unwrap();
        let st = variational_flow(&sys, &DVector::from_vec(vec![1.0, 1.0, 1.0]), 1.0, &IntegratorOptions::default()).unwrap();
        let x = st.jacobian();
        for (i, rate) in [-1.0f64, -2.0, -3.0].iter().enumerate() {
            assert!((x[(i, i)] - rate.exp()).abs() < 1e-8);
        }
    }

    #[test]
    fn renormalization_keeps_log_scale() {
        let sys = DynamicalSystem::linear("grow", DMatrix::from_diagonal(&DVector::from_vec(vec![50.0, 49.0]))).unwrap();
        let st = variational_flow(&sys, &DVector::from_vec(vec![0.0, 0.0]), 10.0, &IntegratorOptions::default()).unwrap();
        assert!(st.log_scale > 0.0);
        let l1 = (st.x_jac[(0, 0)].ln() + st.log_scale) / 10.0;
        let l2 = (st.x_jac[(1, 1)].ln() + st.log_scale) / 10.0;
        assert!((l1 - 50.0).abs() < 1e-8 && (l2 - 49.0).abs() < 1e-8);
    }

    #[test]
    fn compound_norms_match_linear_exponents() {
        let sys = DynamicalSystem::linear("diag", DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0, -30.0]))).unwrap();
        let rows = compound_log_norms_at(&sys, &DVector::zeros(3), &[10.0], &IntegratorOptions::default()).unwrap();
        let expected = [-10.0, -30.0, -330.0];
        for (a, b) in rows[0].iter().zip(expected) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
    }

    #[test]
    fn numeric_jacobian_agrees() {
        let sys = DynamicalSystem::new("quad", 2, |x| DVector::from_vec(vec![x[0] * x[1], x[0] * x[0] - x[1]]));
        let x = DVector::from_vec(vec![0.7, -1.3]);
        let exact = DMatrix::from_row_slice(2, 2, &[x[1], x[0], 2.0 * x[0], -1.0]);
        assert!((sys.jacobian(&x) - exact).amax() < 1e-8);
        let wrong = sys.clone().with_jacobian(|_| DMatrix::identity(2, 2));
        assert!(wrong.verify_jacobian(&[x.clone()], JACOBIAN_TOL).is_err());
    }

    #[test]
    fn shooting_finds_harmonic_period() {
        let orbit = find_periodic_orbit(&harmonic(), &DVector::from_vec(vec![1.1, 0.0]), 6.0, &IntegratorOptions::tight()).unwrap();
        assert!((orbit.period - 2.0 * std::f64::consts::PI).abs() < 1e-8, "{orbit:?}");
    }

    #[test]
    fn shooting_fails_without_orbit() {
        let sys = DynamicalSystem::new("decay", 2, |x| -x);
        let err = find_periodic_orbit(&sys, &DVector::from_vec(vec![1.0, 0.5]), 3.0, &IntegratorOptions::default()).unwrap_err();
        assert!(matches!(err, Error::NoConvergence { .. }));
    }

    #[test]
    fn monodromy_of_linear_system() {
        let a = DMatrix::from_row_slice(2, 2, &[-0.5, 1.0, 0.0, -0.2]);
        let sys = DynamicalSystem::linear("lin", a.clone()).unwrap();
        let m = monodromy(&sys, &DVector::zeros(2), 2.0, &IntegratorOptions::tight()).unwrap();
        assert!((m - (a * 2.0).exp()).amax() < 1e-8);
        let zero = DynamicalSystem::new("zero", 2, |x| DVector::zeros(x.len()));
        assert_eq!(monodromy(&zero, &DVector::zeros(2), 3.0, &IntegratorOptions::default()).unwrap(), DMatrix::identity(2, 2));
        assert!(monodromy(&harmonic(), &DVector::from_vec(vec![1.0, 0.0]), 1.0, &IntegratorOptions::default()).unwrap_err().is_input());
    }

    #[test]
    fn blow_up_reports_divergence() {
        let sys = DynamicalSystem::new("blowup", 1, |x| x.map(|v| v * v));
        let err = integrate(&sys, &DVector::from_element(1, 1.0), 2.0, &IntegratorOptions::default()).unwrap_err();
        match err {
            Error::Divergence { last_state, .. } => assert!(last_state[0] > 1.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_header_shapes() {
        assert_eq!(VariationalState::csv_header(2), "t,x1,x2,X11,X12,X21,X22,logScale");
        let tr = integrate_at(&harmonic(), &DVector::from_vec(vec![1.0, 0.0]), &[0.0, 1.0], &IntegratorOptions::default()).unwrap();
        let csv = tr.to_csv();
        assert!(csv.starts_with("t,x1,x2\n"));
        assert_eq!(csv.lines().count(), 3);
    }
}
