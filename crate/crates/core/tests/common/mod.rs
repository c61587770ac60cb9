//! Reference implementations used as test oracles. None of them call into
//! the library's linear algebra.

#![allow(dead_code)]

use contracta::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix. Eigenvalues are
/// returned in descending order with matching eigenvector columns.
pub fn jacobi_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut m = (a + a.transpose()) * 0.5;
    let mut v = DMatrix::<f64>::identity(n, n);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum();
        let scale: f64 = m.iter().map(|x| x * x).sum::<f64>().max(f64::MIN_POSITIVE);
        if off <= 1e-32 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[(p, q)] == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * m[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[(k, p)], m[(k, q)]);
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[(p, k)], m[(q, k)]);
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));
    let vals = idx.iter().map(|&i| m[(i, i)]).collect();
    let vecs = DMatrix::from_fn(n, n, |r, c| v[(r, idx[c])]);
    (vals, vecs)
}

pub fn sym_eigs(a: &DMatrix<f64>) -> Vec<f64> {
    jacobi_eigen(a).0
}

/// Singular values as square roots of the eigenvalues of `AᵀA`, descending.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    sym_eigs(&(a.transpose() * a)).into_iter().map(|v| v.max(0.0).sqrt()).collect()
}

/// `σ1···σ_{d0}·σ_{d0+1}^s` from a descending list.
pub fn weighted_product(sv: &[f64], d: f64) -> f64 {
    let d0 = d.floor() as usize;
    let s = d - d0 as f64;
    let mut w: f64 = sv[..d0.min(sv.len())].iter().product();
    if d0 < sv.len() && s > 0.0 {
        w *= sv[d0].powf(s);
    }
    w
}

pub fn omega(a: &DMatrix<f64>, d: f64) -> f64 {
    weighted_product(&singular_values(a), d)
}

/// `λ1 + … + λ_{d0} + s·λ_{d0+1}` of a descending list.
pub fn top_sum(v: &[f64], d: f64) -> f64 {
    let d0 = d.floor() as usize;
    let s = d - d0 as f64;
    let mut t: f64 = v[..d0].iter().sum();
    if d0 < v.len() {
        t += s * v[d0];
    }
    t
}

/// The same weights applied from the smallest value upward.
pub fn bottom_sum(v: &[f64], d: f64) -> f64 {
    let rev: Vec<f64> = v.iter().rev().copied().collect();
    top_sum(&rev, d)
}

pub fn spd_sqrt(p: &DMatrix<f64>) -> DMatrix<f64> {
    let (vals, v) = jacobi_eigen(p);
    let d = DMatrix::from_diagonal(&DVector::from_iterator(vals.len(), vals.iter().map(|x| x.sqrt())));
    &v * d * v.transpose()
}

/// Roots of `det[AᵀP + PA + Ṗ − λP] = 0` as the eigenvalues of `F + Fᵀ`
/// with `S = √P`, `F = SAS⁻¹ + ṠS⁻¹` and `SṠ + ṠS = Ṗ` solved in the
/// eigenbasis of `S`.
pub fn roots_dual(a: &DMatrix<f64>, p: &DMatrix<f64>, pdot: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let (pv, v) = jacobi_eigen(p);
    let s_diag: Vec<f64> = pv.iter().map(|x| x.sqrt()).collect();
    let s = &v * DMatrix::from_diagonal(&DVector::from_vec(s_diag.clone())) * v.transpose();
    let s_inv = &v * DMatrix::from_diagonal(&DVector::from_iterator(n, s_diag.iter().map(|x| 1.0 / x))) * v.transpose();
    let pd = v.transpose() * pdot * &v;
    let sd = DMatrix::from_fn(n, n, |i, j| pd[(i, j)] / (s_diag[i] + s_diag[j]));
    let sdot = &v * sd * v.transpose();
    let f = &s * a * &s_inv + sdot * &s_inv;
    sym_eigs(&(&f + f.transpose()))
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn det(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut a = m.clone();
    let mut d = 1.0;
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[(i, c)].abs().total_cmp(&a[(j, c)].abs())).unwrap();
        if a[(piv, c)] == 0.0 {
            return 0.0;
        }
        if piv != c {
            a.swap_rows(piv, c);
            d = -d;
        }
        d *= a[(c, c)];
        for r in c + 1..n {
            let f = a[(r, c)] / a[(c, c)];
            for k in c..n {
                a[(r, k)] -= f * a[(c, k)];
            }
        }
    }
    d
}

/// Lexicographic `k`-subsets of `0..n`.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize == k {
            out.push((0..n).filter(|i| mask & (1 << i) != 0).collect::<Vec<_>>());
        }
    }
    out.sort();
    out
}

/// Matrix of `k×k` minors.
pub fn compound(a: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let sets = subsets(a.nrows(), k);
    DMatrix::from_fn(sets.len(), sets.len(), |r, c| {
        det(&DMatrix::from_fn(k, k, |i, j| a[(sets[r][i], sets[c][j])]))
    })
}

/// `d/dε (I + εB)^(k)` at zero by a central difference of minors.
pub fn additive_compound_fd(b: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let n = b.nrows();
    let h = 1e-5;
    let i = DMatrix::<f64>::identity(n, n);
    (compound(&(&i + b * h), k) - compound(&(&i - b * h), k)) / (2.0 * h)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

/// `I + 0.4·G` style matrices stay comfortably invertible.
pub fn well_conditioned(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    DMatrix::<f64>::identity(n, n) + gaussian_matrix(rng, n, n) * 0.4 / (n as f64).sqrt()
}

pub fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let g = gaussian_matrix(rng, n, n);
    (&g + g.transpose()) * 0.5
}

/// SPD with eigenvalues in `[lo, hi]`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let q = gaussian_matrix(rng, n, n).qr().q();
    let d = DVector::from_iterator(n, (0..n).map(|_| rng.random_range(lo..hi)));
    &q * DMatrix::from_diagonal(&d) * q.transpose()
}

/// Classical RK4 for `ẏ = g(y)` with a fixed step.
pub fn rk4(g: impl Fn(&[f64]) -> Vec<f64>, y0: &[f64], t: f64, steps: usize) -> Vec<f64> {
    let h = t / steps as f64;
    let mut y = y0.to_vec();
    let axpy = |y: &[f64], k: &[f64], c: f64| -> Vec<f64> { y.iter().zip(k).map(|(a, b)| a + c * b).collect() };
    for _ in 0..steps {
        let k1 = g(&y);
        let k2 = g(&axpy(&y, &k1, h / 2.0));
        let k3 = g(&axpy(&y, &k2, h / 2.0));
        let k4 = g(&axpy(&y, &k3, h));
        for i in 0..y.len() {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    y
}

/// Langford rotating-frame data at parameter `a`: the nontrivial multiplier
/// moduli `e^{2π Re μ}` for the roots `μ` of `μ² − (3a−2)μ + 2R²`.
pub fn langford_moduli(a: f64) -> (f64, f64) {
    let r2 = (1.0 - a) * (2.0 * a - 1.0);
    let tr = 3.0 * a - 2.0;
    let disc = tr * tr - 8.0 * r2;
    let (re1, re2) = if disc >= 0.0 {
        ((tr + disc.sqrt()) / 2.0, (tr - disc.sqrt()) / 2.0)
    } else {
        (tr / 2.0, tr / 2.0)
    };
    let tau = 2.0 * std::f64::consts::PI;
    ((tau * re1).exp(), (tau * re2).exp())
}

pub fn langford_orbit_point(a: f64, t: f64) -> DVector<f64> {
    let r = ((1.0 - a) * (2.0 * a - 1.0)).sqrt();
    DVector::from_vec(vec![r * t.cos(), r * t.sin(), 1.0 - a])
}

pub fn rel_err(x: f64, y: f64) -> f64 {
    (x - y).abs() / y.abs().max(f64::MIN_POSITIVE)
}
