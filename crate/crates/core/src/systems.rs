//! Benchmark systems with their closed-form side data.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::DynamicalSystem;
use crate::linalg::SpdMatrix;
use crate::metric::MetricField;
use crate::region::Region;

pub type ScalarField = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;

/// Scalar potential `v` with its analytic orbital derivative `v̇`.
#[derive(Clone)]
pub struct Potential {
    pub label: String,
    pub v: ScalarField,
    pub vdot: ScalarField,
}

impl std::fmt::Debug for Potential {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Potential").field("label", &self.label).finish()
    }
}

impl Potential {
    pub fn new(
        label: impl Into<String>,
        v: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        vdot: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            v: Arc::new(v),
            vdot: Arc::new(vdot),
        }
    }

    pub fn zero() -> Self {
        Self::new("0", |_| 0.0, |_| 0.0)
    }

    /// `P(x) = P₀·e^{γ v(x)}` with `Ṗ = γ v̇(x) P(x)`.
    pub fn exponential_metric(&self, p0: &SpdMatrix, gamma: f64) -> MetricField {
        let p0a = p0.as_matrix().clone();
        let p0b = p0a.clone();
        let (v1, v2, vd) = (self.v.clone(), self.v.clone(), self.vdot.clone());
        MetricField::new(format!("P0*exp({gamma}*({}))", self.label), move |x| &p0a * (gamma * v1(x)).exp())
            .with_orbital_derivative(move |x| &p0b * (gamma * vd(x) * (gamma * v2(x)).exp()))
    }
}

/// `ẋ = 0` on `ℝⁿ`.
pub fn zero_system(n: usize) -> DynamicalSystem {
    DynamicalSystem::new("zero", n, |x| DVector::zeros(x.len())).with_jacobian(move |x| DMatrix::zeros(x.len(), x.len()))
}

/// `ẋ = y, ẏ = −x`.
pub fn harmonic_oscillator() -> DynamicalSystem {
    DynamicalSystem::linear("harmonic", DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])).expect("valid matrix")
}

// ---------------------------------------------------------------- rigid body

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RigidBodyParams {
    pub j1: f64,
    pub j2: f64,
    pub j3: f64,
    pub delta: f64,
    pub tau: f64,
}

impl Default for RigidBodyParams {
    fn default() -> Self {
        Self {
            j1: 1.0,
            j2: 2.0,
            j3: 3.0,
            delta: 1.0,
            tau: 0.0,
        }
    }
}

impl RigidBodyParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.j1 > 0.0
            && self.j1 < self.j2
            && self.j2 < self.j3
            && self.delta > 0.0
            && self.tau.is_finite()
            && self.j3.is_finite()
            && self.delta.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::input(format!("rigid body needs 0 < J1 < J2 < J3 and delta > 0, got {self:?}")))
        }
    }

    /// `ϱ = √((J₃−J₂)(J₂−J₁)/(J₁J₃))`.
    pub fn rho(&self) -> f64 {
        ((self.j3 - self.j2) * (self.j2 - self.j1) / (self.j1 * self.j3)).sqrt()
    }

    /// Torque threshold `2δ²J₂/ϱ` for uniform 2-contraction.
    pub fn tau_bound(&self) -> f64 {
        2.0 * self.delta * self.delta * self.j2 / self.rho()
    }

    /// `W(ω) = ½(J₁ω₁² + J₂ω₂² + J₃ω₃²)`.
    pub fn energy(&self, w: &DVector<f64>) -> f64 {
        0.5 * (self.j1 * w[0] * w[0] + self.j2 * w[1] * w[1] + self.j3 * w[2] * w[2])
    }

    /// `Ẇ = −δ(J₁ω₁² + J₂ω₂² + J₃ω₃²) + τω₂`.
    pub fn energy_rate(&self, w: &DVector<f64>) -> f64 {
        -self.delta * (self.j1 * w[0] * w[0] + self.j2 * w[1] * w[1] + self.j3 * w[2] * w[2]) + self.tau * w[1]
    }

    /// `β⋆ = τ²/(2δJ₂)`, so that `Ẇ ≤ −δW + β⋆`.
    pub fn beta_star(&self) -> f64 {
        self.tau * self.tau / (2.0 * self.delta * self.j2)
    }

    /// `P₀ = diag(1, J₂(J₃−J₂)/(J₁(J₃−J₁)), J₃(J₃−J₂)/(J₁(J₂−J₁)))`.
    pub fn p0(&self) -> SpdMatrix {
        let (j1, j2, j3) = (self.j1, self.j2, self.j3);
        let d = DVector::from_vec(vec![
            1.0,
            j2 * (j3 - j2) / (j1 * (j3 - j1)),
            j3 * (j3 - j2) / (j1 * (j2 - j1)),
        ]);
        SpdMatrix::new(DMatrix::from_diagonal(&d)).expect("positive diagonal")
    }

    pub fn energy_potential(&self) -> Potential {
        let (p1, p2) = (*self, *self);
        Potential::new("W", move |w| p1.energy(w), move |w| p2.energy_rate(w))
    }

    pub fn equilibrium(&self) -> DVector<f64> {
        DVector::from_vec(vec![0.0, self.tau / (self.j2 * self.delta), 0.0])
    }

    /// `{δ(2u−1), −δ, −δ(1+2u)}` with `u = |τ|/τ_bound`.
    pub fn equilibrium_eigs(&self) -> [f64; 3] {
        let u = self.tau.abs() / self.tau_bound();
        [self.delta * (2.0 * u - 1.0), -self.delta, -self.delta * (1.0 + 2.0 * u)]
    }

    /// Roots with `P₀` and `Ṗ = 0` at `ω = (·, ω₂, ·)`, descending.
    pub fn chi_roots(&self, omega2: f64) -> [f64; 3] {
        let r = 2.0 * omega2.abs() * self.rho();
        [-2.0 * self.delta + r, -2.0 * self.delta, -2.0 * self.delta - r]
    }

    /// Energy level `β/δ` of the trapping ellipsoid for `β = factor·β⋆`.
    pub fn trapping_level(&self, beta_factor: f64) -> Result<f64> {
        if !(beta_factor > 1.0) {
            return Err(Error::input("trapping ellipsoid needs beta > beta_star (factor > 1)"));
        }
        let level = beta_factor * self.beta_star() / self.delta;
        if !(level > 0.0) {
            return Err(Error::input("torque is zero: the trapping ellipsoid degenerates to a point"));
        }
        Ok(level)
    }

    /// Box lattice around `{W ≤ level}` filtered to the ellipsoid; the
    /// equilibrium is always included as an anchor.
    pub fn trapping_region(&self, level: f64, counts: usize) -> Result<Region> {
        if !(level > 0.0) {
            return Err(Error::input("energy level must be positive"));
        }
        let r: Vec<f64> = [self.j1, self.j2, self.j3].iter().map(|j| (2.0 * level / j).sqrt()).collect();
        let p = *self;
        Region::new(r.iter().map(|v| -v).collect(), r.clone(), vec![counts; 3])?
            .with_indicator(format!("W <= {level}"), move |w| p.energy(w) <= level * (1.0 + 1e-12))
            .with_anchors(vec![self.equilibrium()])
    }
}

/// Closed-form data attached to the rigid body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RigidBodyBundle {
    pub params: RigidBodyParams,
    pub rho: f64,
    pub tau_bound: f64,
    pub u: f64,
    pub beta_star: f64,
    pub equilibrium: Vec<f64>,
    pub equilibrium_eigs: [f64; 3],
    pub sources: Vec<String>,
}

pub fn rigid_body_system(p: RigidBodyParams) -> Result<(DynamicalSystem, RigidBodyBundle)> {
    p.validate()?;
    let RigidBodyParams { j1, j2, j3, delta, tau } = p;
    let sys = DynamicalSystem::new("rigid-body", 3, move |w| {
        DVector::from_vec(vec![
            ((j2 - j3) * w[1] * w[2]) / j1 - delta * w[0],
            ((j3 - j1) * w[0] * w[2] + tau) / j2 - delta * w[1],
            ((j1 - j2) * w[0] * w[1]) / j3 - delta * w[2],
        ])
    })
    .with_jacobian(move |w| {
        DMatrix::from_row_slice(
            3,
            3,
            &[
                -delta,
                (j2 - j3) / j1 * w[2],
                (j2 - j3) / j1 * w[1],
                (j3 - j1) / j2 * w[2],
                -delta,
                (j3 - j1) / j2 * w[0],
                (j1 - j2) / j3 * w[1],
                (j1 - j2) / j3 * w[0],
                -delta,
            ],
        )
    });
    let bundle = RigidBodyBundle {
        params: p,
        rho: p.rho(),
        tau_bound: p.tau_bound(),
        u: tau.abs() / p.tau_bound(),
        beta_star: p.beta_star(),
        equilibrium: p.equilibrium().iter().copied().collect(),
        equilibrium_eigs: p.equilibrium_eigs(),
        sources: vec![
            "Euler rotation equations with linear friction and torque on the middle axis".into(),
            "torque threshold 2*delta^2*J2/rho from the discriminant of the energy-weighted metric family".into(),
            "equilibrium spectrum from the characteristic polynomial (l+delta)((l+delta)^2-(2u*delta)^2)".into(),
            "trapping ellipsoid W <= beta/delta from dW/dt <= -delta*W + beta_star".into(),
        ],
    };
    Ok((sys, bundle))
}

// ---------------------------------------------------------------- Rössler

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RosslerParams {
    pub a: f64,
    pub b: f64,
}

impl Default for RosslerParams {
    fn default() -> Self {
        Self { a: 0.386, b: 0.2 }
    }
}

impl RosslerParams {
    pub fn validate(&self) -> Result<()> {
        if self.a > 0.0 && self.b > 0.0 && self.a.is_finite() && self.b.is_finite() {
            Ok(())
        } else {
            Err(Error::input("Rossler parameters must be positive"))
        }
    }

    /// Jacobian, which depends on `y` only.
    pub fn jacobian_at_y(&self, y: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 3, &[0.0, -1.0, -1.0, 1.0, 0.0, 0.0, 0.0, self.a - 2.0 * self.a * y, -self.b])
    }

    /// `v = z − b x`, `v̇ = (a+b)y − a y²`.
    pub fn potential(&self) -> Potential {
        let RosslerParams { a, b } = *self;
        Potential::new("z - b*x", move |x| x[2] - b * x[0], move |x| (a + b) * x[1] - a * x[1] * x[1])
    }

    /// The `y`-slice `y ∈ [−y_max, y_max]` at `x = z = 0` with the given step;
    /// the roots of the exponential metric family depend on `y` only.
    pub fn y_region(&self, y_max: f64, step: f64) -> Result<Region> {
        Region::with_step(vec![0.0, -y_max, 0.0], vec![0.0, y_max, 0.0], step)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RosslerBundle {
    pub params: RosslerParams,
    /// `−γ` is the real root of `λ³ + bλ² + λ + (a+b)`.
    pub gamma: f64,
    /// Real part of the complex pair.
    pub sigma: f64,
    /// Imaginary part of the complex pair.
    pub omega: f64,
    pub d_lower: f64,
    pub cubic_residual: f64,
    pub saddle_focus: bool,
    pub equilibria: [Vec<f64>; 2],
    pub sources: Vec<String>,
}

fn cubic(p: &RosslerParams, l: f64) -> (f64, f64) {
    let (a, b) = (p.a, p.b);
    (((l + b) * l + 1.0) * l + (a + b), (3.0 * l + 2.0 * b) * l + 1.0)
}

/// Real root of `λ³ + bλ² + λ + (a+b)` by Newton steps safeguarded with a
/// bisection bracket.
fn real_cubic_root(p: &RosslerParams) -> Result<f64> {
    let mut lo = -1.0;
    let mut k = 0;
    while cubic(p, lo).0 > 0.0 {
        lo *= 2.0;
        k += 1;
        if k > 200 {
            return Err(Error::numeric("cubic root: no sign change found"));
        }
    }
    let mut hi = 0.0;
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (fx, dfx) = cubic(p, x);
        if fx == 0.0 {
            return Ok(x);
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let newton = x - fx / dfx;
        let next = if dfx != 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (next - x).abs() <= 1e-16 * (1.0 + x.abs()) || hi - lo <= 1e-16 {
            return Ok(next);
        }
        x = next;
    }
    Err(Error::numeric("cubic root did not converge"))
}

pub fn rossler_system(p: RosslerParams) -> Result<(DynamicalSystem, RosslerBundle)> {
    p.validate()?;
    let RosslerParams { a, b } = p;
    let sys = DynamicalSystem::new("rossler", 3, move |v| {
        DVector::from_vec(vec![-v[1] - v[2], v[0], -b * v[2] + a * (v[1] - v[1] * v[1])])
    })
    .with_jacobian(move |v| p.jacobian_at_y(v[1]));
    let root = real_cubic_root(&p)?;
    let gamma = -root;
    let sigma = (gamma - b) / 2.0;
    let omega2 = (a + b) / gamma - sigma * sigma;
    let e = 1.0 + b / a;
    let bundle = RosslerBundle {
        params: p,
        gamma,
        sigma,
        omega: omega2.max(0.0).sqrt(),
        d_lower: 3.0 - b / gamma,
        cubic_residual: cubic(&p, root).0.abs(),
        saddle_focus: gamma > 0.0 && sigma > 0.0 && omega2 > 0.0,
        equilibria: [vec![0.0, 0.0, 0.0], vec![0.0, e, -e]],
        sources: vec![
            "x' = -y - z, y' = x, z' = -b z + a (y - y^2)".into(),
            "characteristic polynomial of A(0): l^3 + b l^2 + l + (a+b)".into(),
            "Sigma_d(t, E0) = -b + (1-s) gamma for d > 2, so d_L = 3 - b/gamma".into(),
        ],
    };
    Ok((sys, bundle))
}

/// Reference metric for the classical Rössler parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RosslerReference {
    pub p_star: SpdMatrix,
    pub tau_star: f64,
    pub s_star: f64,
}

impl RosslerReference {
    pub fn d_star(&self) -> f64 {
        2.0 + self.s_star
    }

    pub fn metric(&self, p: &RosslerParams) -> MetricField {
        p.potential().exponential_metric(&self.p_star, self.tau_star)
    }
}

pub fn rossler_reference_metric() -> RosslerReference {
    #[rustfmt::skip]
    let p = DMatrix::from_row_slice(3, 3, &[
         0.50578332, -0.03189052, -0.15406100,
        -0.03189052,  0.36983503,  0.26733901,
        -0.15406100,  0.26733901,  0.52428427,
    ]);
    RosslerReference {
        p_star: SpdMatrix::new(p).expect("reference metric is SPD"),
        tau_star: 0.25,
        s_star: 0.60557,
    }
}

// ---------------------------------------------------------------- Langford

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LangfordParams {
    pub a: f64,
}

impl Default for LangfordParams {
    fn default() -> Self {
        Self { a: 0.6 }
    }
}

impl LangfordParams {
    pub fn validate(&self) -> Result<()> {
        if self.a > 0.5 && self.a < 1.0 {
            Ok(())
        } else {
            Err(Error::input(format!("Langford orbit needs 1/2 < a < 1, got a = {}", self.a)))
        }
    }

    /// `R = √((1−a)(2a−1))`.
    pub fn radius(&self) -> f64 {
        ((1.0 - self.a) * (2.0 * self.a - 1.0)).sqrt()
    }

    pub fn orbit_point(&self, t: f64) -> DVector<f64> {
        let r = self.radius();
        DVector::from_vec(vec![r * t.cos(), r * t.sin(), 1.0 - self.a])
    }

    pub fn orbit_velocity(&self, t: f64) -> DVector<f64> {
        let r = self.radius();
        DVector::from_vec(vec![-r * t.sin(), r * t.cos(), 0.0])
    }

    /// Rotating-frame matrix `[[0, R], [−2R, 3a−2]]`.
    pub fn a2(&self) -> DMatrix<f64> {
        let r = self.radius();
        DMatrix::from_row_slice(2, 2, &[0.0, r, -2.0 * r, 3.0 * self.a - 2.0])
    }

    /// Roots of `λ² − (3a−2)λ + 2R²` as `(re, im)` pairs, larger real part
    /// (then larger imaginary part) first.
    pub fn a2_eigs(&self) -> [(f64, f64); 2] {
        let tr = 3.0 * self.a - 2.0;
        let det = 2.0 * self.radius().powi(2);
        let disc = tr * tr - 4.0 * det;
        if disc >= 0.0 {
            let s = disc.sqrt();
            [((tr + s) / 2.0, 0.0), ((tr - s) / 2.0, 0.0)]
        } else {
            let s = (-disc).sqrt();
            [(tr / 2.0, s / 2.0), (tr / 2.0, -s / 2.0)]
        }
    }

    pub fn hurwitz(&self) -> bool {
        self.a < 2.0 / 3.0
    }

    /// Closed-form nontrivial multiplier moduli `e^{2π Re λ(A₂)}`.
    pub fn multiplier_moduli(&self) -> [f64; 3] {
        let e = self.a2_eigs();
        let mut m = [1.0, (2.0 * PI * e[0].0).exp(), (2.0 * PI * e[1].0).exp()];
        m.sort_by(|x, y| y.total_cmp(x));
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LangfordBundle {
    pub params: LangfordParams,
    pub radius: f64,
    pub period: f64,
    pub a2: Vec<f64>,
    pub a2_eigs: [(f64, f64); 2],
    pub hurwitz: bool,
    pub sources: Vec<String>,
}

/// Langford vector field; valid for any `a`, unlike the bundle.
pub fn langford_field(a: f64) -> DynamicalSystem {
    DynamicalSystem::new("langford", 3, move |v| {
        let (x, y, z) = (v[0], v[1], v[2]);
        DVector::from_vec(vec![
            (a - 1.0) * x - y + x * z,
            x + (a - 1.0) * y + y * z,
            a * z - (x * x + y * y + z * z),
        ])
    })
    .with_jacobian(move |v| {
        let (x, y, z) = (v[0], v[1], v[2]);
        DMatrix::from_row_slice(
            3,
            3,
            &[a - 1.0 + z, -1.0, x, 1.0, a - 1.0 + z, y, -2.0 * x, -2.0 * y, a - 2.0 * z],
        )
    })
}

pub fn langford_system(p: LangfordParams) -> Result<(DynamicalSystem, LangfordBundle)> {
    p.validate()?;
    let bundle = LangfordBundle {
        params: p,
        radius: p.radius(),
        period: 2.0 * PI,
        a2: p.a2().transpose().iter().copied().collect(),
        a2_eigs: p.a2_eigs(),
        hurwitz: p.hurwitz(),
        sources: vec![
            "x' = (a-1)x - y + xz, y' = x + (a-1)y + yz, z' = az - (x^2+y^2+z^2)".into(),
            "explicit orbit (R cos t, R sin t, 1-a), R = sqrt((1-a)(2a-1))".into(),
            "rotating-frame reduction to diag(0, A2), A2 = [[0, R], [-2R, 3a-2]]".into(),
        ],
    };
    Ok((langford_field(p.a), bundle))
}
