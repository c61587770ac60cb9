//! Dense small-matrix kernels.
//!
//! Everything here is a pure function of its inputs. Matrices are
//! `nalgebra::DMatrix<f64>`; the sizes of interest are tiny (n ≤ 8 in
//! practice, n ≤ 64 supported).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative symmetry tolerance for SPD inputs.
const SYMMETRY_TOL: f64 = 1e-12;

/// A dimension `d ∈ (0, n]` split into integer part `d0 = ⌊d⌋` and
/// fractional part `s = d − d0 ∈ [0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FractionalDimension {
    d: f64,
    d0: usize,
    s: f64,
    n: usize,
}

impl FractionalDimension {
    pub fn new(d: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::input("ambient dimension must be positive"));
        }
        if !d.is_finite() || d <= 0.0 || d > n as f64 {
            return Err(Error::input(format!("dimension d = {d} outside (0, {n}]")));
        }
        let d0 = d.floor() as usize;
        let s = d - d0 as f64;
        Ok(Self { d, d0, s, n })
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn d0(&self) -> usize {
        self.d0
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `v[0] + … + v[d0−1] + s·v[d0]` for a descending list `v`.
    ///
    /// The fractional term is skipped when `s = 0`, so `v[d0]` is never
    /// touched for integer `d` (in particular for `d = n`).
    pub fn top_sum(&self, v: &[f64]) -> f64 {
        debug_assert_eq!(v.len(), self.n);
        let head: f64 = v[..self.d0].iter().sum();
        if self.s > 0.0 {
            head + self.s * v[self.d0]
        } else {
            head
        }
    }

    /// `v[n−1] + … + v[n−d0] + s·v[n−d0−1]`: the same weights applied from
    /// the bottom of a descending list.
    pub fn bottom_sum(&self, v: &[f64]) -> f64 {
        debug_assert_eq!(v.len(), self.n);
        let n = self.n;
        let tail: f64 = v[n - self.d0..].iter().sum();
        if self.s > 0.0 {
            tail + self.s * v[n - self.d0 - 1]
        } else {
            tail
        }
    }

    /// `σ1···σ_{d0}·σ_{d0+1}^s` for descending nonnegative values.
    pub fn weighted_product(&self, sv: &[f64]) -> f64 {
        debug_assert_eq!(sv.len(), self.n);
        let head: f64 = sv[..self.d0].iter().product();
        if self.s > 0.0 {
            head * sv[self.d0].powf(self.s)
        } else {
            head
        }
    }
}

/// Symmetric positive definite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix(DMatrix<f64>);

impl SpdMatrix {
    /// Validates symmetry (1e-12 relative) and positive definiteness.
    /// The stored matrix is the exact symmetrization of the input.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::input("SPD matrix must be square"));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("SPD matrix has non-finite entries"));
        }
        let scale = m.amax().max(f64::MIN_POSITIVE);
        let asym = (&m - m.transpose()).amax();
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::input(format!(
                "matrix is not symmetric (asymmetry {asym:e})"
            )));
        }
        let sym = (&m + m.transpose()) * 0.5;
        if sym.clone().cholesky().is_none() {
            return Err(Error::input("matrix is not positive definite"));
        }
        Ok(Self(sym))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// Lower Cholesky factor `L` with `P = L Lᵀ`.
    pub fn cholesky_factor(&self) -> DMatrix<f64> {
        self.0
            .clone()
            .cholesky()
            .expect("validated at construction")
            .unpack()
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.0
            .clone()
            .cholesky()
            .expect("validated at construction")
            .inverse()
    }
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// descending order (ties keep the solver's order).
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        vectors.set_column(col, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

/// Descending eigenvalues of a symmetric matrix.
pub fn sym_eigenvalues_desc(m: &DMatrix<f64>) -> Vec<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let mut v: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// `U f(Λ) Uᵀ` for a symmetric matrix.
pub fn sym_apply(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let (vals, vecs) = sym_eigen_desc(m);
    let diag = DMatrix::from_diagonal(&DVector::from_iterator(
        vals.len(),
        vals.iter().map(|&v| f(v)),
    ));
    &vecs * diag * vecs.transpose()
}

fn check_finite(a: &DMatrix<f64>, what: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::input(format!("{what} has non-finite entries")))
    }
}

fn check_square(a: &DMatrix<f64>, what: &str) -> Result<()> {
    if a.is_square() {
        Ok(())
    } else {
        Err(Error::input(format!(
            "{what} must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )))
    }
}

/// Singular values in descending order.
pub fn singular_values(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_finite(a, "matrix")?;
    let svd = a.clone().svd(false, false);
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    Ok(sv)
}

/// Fractional volume-growth functional `ω_d(A) = σ1···σ_{d0}·σ_{d0+1}^s`.
pub fn omega_d(a: &DMatrix<f64>, dim: &FractionalDimension) -> Result<f64> {
    check_square(a, "matrix")?;
    if a.nrows() != dim.n() {
        return Err(Error::input(format!(
            "matrix is {0}x{0} but dimension refers to n = {1}",
            a.nrows(),
            dim.n()
        )));
    }
    Ok(dim.weighted_product(&singular_values(a)?))
}

/// `ω_d` evaluated in the metric of `P`: `ω_d(S A S⁻¹)` with `S = √P`.
pub fn omega_d_weighted(a: &DMatrix<f64>, p: &SpdMatrix, dim: &FractionalDimension) -> Result<f64> {
    let s = spd_sqrt(p)?;
    let s_inv = spd_inverse_sqrt(p)?;
    omega_d(&(s.as_matrix() * a * s_inv.as_matrix()), dim)
}

/// Ellipsoid `{x : (x − c)ᵀ Q⁻¹ (x − c) ≤ 1}` stored by its shape matrix `Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    center: DVector<f64>,
    shape: SpdMatrix,
}

impl Ellipsoid {
    pub fn new(center: DVector<f64>, shape: SpdMatrix) -> Result<Self> {
        if center.len() != shape.dim() {
            return Err(Error::input("ellipsoid center and shape sizes differ"));
        }
        Ok(Self { center, shape })
    }

    pub fn ball(center: DVector<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::input("ball radius must be positive"));
        }
        let n = center.len();
        let shape = SpdMatrix::new(DMatrix::identity(n, n) * (radius * radius))?;
        Self::new(center, shape)
    }

    /// The image `c + A·B(0,1)` of the unit ball.
    pub fn from_map(center: DVector<f64>, a: &DMatrix<f64>) -> Result<Self> {
        check_square(a, "map")?;
        Self::new(center, SpdMatrix::new(a * a.transpose())?)
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn shape(&self) -> &SpdMatrix {
        &self.shape
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// Linear image `A·E`.
    pub fn image(&self, a: &DMatrix<f64>) -> Result<Self> {
        let shape = a * self.shape.as_matrix() * a.transpose();
        let shape = (&shape + shape.transpose()) * 0.5;
        Self::new(a * &self.center, SpdMatrix::new(shape)?)
    }

    /// `x + c·E` (the center moves to `x + c·center`).
    pub fn translate_scale(&self, x: &DVector<f64>, c: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(Error::input("scale factor must be positive"));
        }
        Self::new(
            x + &self.center * c,
            SpdMatrix::new(self.shape.as_matrix() * (c * c))?,
        )
    }

    /// Semi-axes `ς1 ≥ … ≥ ςn > 0`.
    pub fn semi_axes(&self) -> Vec<f64> {
        sym_eigenvalues_desc(self.shape.as_matrix())
            .into_iter()
            .map(|v| v.max(0.0).sqrt())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipsoidProfile {
    pub varpi: f64,
    pub ecc: f64,
    pub semi_axes: Vec<f64>,
}

/// `ϖ_d`, eccentricity and semi-axes of `E`, in the plain metric or in the
/// metric of `P` (computed as the plain quantities of `√P·E`).
pub fn ellipsoid_profile(
    e: &Ellipsoid,
    dim: &FractionalDimension,
    p: Option<&SpdMatrix>,
) -> Result<EllipsoidProfile> {
    if e.dim() != dim.n() {
        return Err(Error::input("ellipsoid and dimension sizes differ"));
    }
    let axes = match p {
        None => e.semi_axes(),
        Some(p) => {
            if p.dim() != e.dim() {
                return Err(Error::input("metric and ellipsoid sizes differ"));
            }
            e.image(spd_sqrt(p)?.as_matrix())?.semi_axes()
        }
    };
    let last = *axes.last().expect("n > 0");
    if !(last > 0.0) {
        return Err(Error::input("degenerate ellipsoid"));
    }
    Ok(EllipsoidProfile {
        varpi: dim.weighted_product(&axes),
        ecc: axes[0] / last,
        semi_axes: axes,
    })
}

/// Symmetric positive definite square root.
pub fn spd_sqrt(p: &SpdMatrix) -> Result<SpdMatrix> {
    SpdMatrix::new(sym_apply(p.as_matrix(), f64::sqrt))
}

pub fn spd_inverse_sqrt(p: &SpdMatrix) -> Result<SpdMatrix> {
    SpdMatrix::new(sym_apply(p.as_matrix(), |v| 1.0 / v.sqrt()))
}

/// Principal logarithm of an SPD matrix (symmetric result).
pub fn spd_log(p: &SpdMatrix) -> DMatrix<f64> {
    let m = sym_apply(p.as_matrix(), f64::ln);
    (&m + m.transpose()) * 0.5
}

/// Exponential of a symmetric matrix.
pub fn sym_exp(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = sym_apply(m, f64::exp);
    (&e + e.transpose()) * 0.5
}

/// Lexicographically ordered `k`-subsets of `0..n`.
pub fn k_subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        // advance the rightmost index that can still move
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] < n - k + i {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k == 0 || k > n {
        Err(Error::input(format!("compound order k = {k} outside [1, {n}]")))
    } else {
        Ok(())
    }
}

/// Multiplicative compound `A^(k)`: all `k×k` minors, rows and columns
/// indexed by lexicographically ordered `k`-subsets.
pub fn multiplicative_compound(a: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    check_square(a, "matrix")?;
    let n = a.nrows();
    check_k(n, k)?;
    let sets = k_subsets(n, k);
    let m = sets.len();
    let mut out = DMatrix::zeros(m, m);
    let mut sub = DMatrix::zeros(k, k);
    for (r, rows) in sets.iter().enumerate() {
        for (c, cols) in sets.iter().enumerate() {
            for (i, &ri) in rows.iter().enumerate() {
                for (j, &cj) in cols.iter().enumerate() {
                    sub[(i, j)] = a[(ri, cj)];
                }
            }
            out[(r, c)] = sub.clone().determinant();
        }
    }
    Ok(out)
}

/// Additive compound `B^[k] = d/dε (I + εB)^(k)` at `ε = 0`, in closed form.
pub fn additive_compound(b: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    check_square(b, "matrix")?;
    let n = b.nrows();
    check_k(n, k)?;
    let sets = k_subsets(n, k);
    let m = sets.len();
    let mut out = DMatrix::zeros(m, m);
    additive_compound_into(b, &sets, &mut out);
    Ok(out)
}

/// Fills `out` with `B^[k]` for the precomputed subsets (no validation).
pub(crate) fn additive_compound_into(b: &DMatrix<f64>, sets: &[Vec<usize>], out: &mut DMatrix<f64>) {
    out.fill(0.0);
    for (r, rows) in sets.iter().enumerate() {
        for (c, cols) in sets.iter().enumerate() {
            if r == c {
                out[(r, c)] = rows.iter().map(|&i| b[(i, i)]).sum();
                continue;
            }
            // subsets must differ in exactly one element
            let mut only_row = None;
            let mut only_col = None;
            let mut differ = 0;
            for (pos, i) in rows.iter().enumerate() {
                if !cols.contains(i) {
                    differ += 1;
                    only_row = Some((pos, *i));
                }
            }
            if differ != 1 {
                continue;
            }
            for (pos, j) in cols.iter().enumerate() {
                if !rows.contains(j) {
                    only_col = Some((pos, *j));
                }
            }
            let ((pr, i), (pc, j)) = (only_row.unwrap(), only_col.unwrap());
            let sign = if (pr + pc) % 2 == 0 { 1.0 } else { -1.0 };
            out[(r, c)] = sign * b[(i, j)];
        }
    }
}

/// Logarithmic norm induced by the spectral norm: the top eigenvalue of the
/// symmetric part.
pub fn log_norm2(a: &DMatrix<f64>) -> Result<f64> {
    check_square(a, "matrix")?;
    check_finite(a, "matrix")?;
    Ok(sym_eigenvalues_desc(&((a + a.transpose()) * 0.5))[0])
}

/// Eigenvalues of a small symmetric matrix stored row-major in `a` (which is
/// destroyed), written in descending order to `out`. Cyclic Jacobi; no
/// allocation, intended for hot loops.
pub(crate) fn jacobi_eigenvalues(a: &mut [f64], n: usize, out: &mut [f64]) {
    debug_assert!(a.len() >= n * n && out.len() >= n);
    for _sweep in 0..50 {
        let mut off = 0.0;
        let mut diag = 0.0;
        for i in 0..n {
            diag += a[i * n + i] * a[i * n + i];
            for j in i + 1..n {
                off += a[i * n + j] * a[i * n + j];
            }
        }
        if off <= 1e-30 * diag || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    for i in 0..n {
        out[i] = a[i * n + i];
    }
    out[..n].sort_by(|x, y| y.total_cmp(x));
}
