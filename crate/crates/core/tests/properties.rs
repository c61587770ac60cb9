mod common;

use contracta::exponents::{estimate_bold_sigma_d, finite_time_exponents};
use contracta::flow::{flow_map, variational_flow};
use contracta::linalg::{omega_d, singular_values, spd_sqrt};
use contracta::metric::{certify_second_method, criterion_roots, SecondMethodOptions};
use contracta::report::{canonical_json, fmt17};
use contracta::systems::{
    langford_system, rigid_body_system, rossler_system, LangfordParams, RigidBodyParams, RosslerParams,
};
use contracta::{
    DMatrix, DVector, DynamicalSystem, FractionalDimension, IntegratorOptions, MetricField, Region, SpdMatrix, Verdict,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn matrix(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-2.0..2.0f64, n * n).prop_map(move |v| DMatrix::from_row_slice(n, n, &v))
}

fn sized_matrix() -> impl Strategy<Value = DMatrix<f64>> {
    (2usize..=5).prop_flat_map(matrix)
}

fn spd(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (matrix(n), prop::collection::vec(0.3..3.0f64, n)).prop_map(move |(g, d)| {
        let q = g.qr().q();
        &q * DMatrix::from_diagonal(&DVector::from_vec(d)) * q.transpose()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn omega_is_homogeneous_and_submultiplicative(
        (a, b) in (2usize..=5).prop_flat_map(|n| (matrix(n), matrix(n))),
        frac in 0.0..1.0f64,
        c in 0.1..5.0f64,
    ) {
        let n = a.nrows();
        let dim = FractionalDimension::new(frac * n as f64, n).unwrap();
        let wa = omega_d(&a, &dim).unwrap();
        let scaled = omega_d(&(&a * c), &dim).unwrap();
        prop_assert!((scaled - c.powf(dim.d()) * wa).abs() <= 1e-10 * (1.0 + scaled.abs()));
        let wab = omega_d(&(&a * &b), &dim).unwrap();
        prop_assert!(wab <= wa * omega_d(&b, &dim).unwrap() * (1.0 + 1e-10) + 1e-14);
        prop_assert!((wa - common::omega(&a, dim.d())).abs() <= 1e-8 * (1.0 + wa));
    }

    #[test]
    fn singular_values_descend_and_match_gram(a in sized_matrix()) {
        let sv = singular_values(&a).unwrap();
        prop_assert!(sv.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!((sv[0] - common::singular_values(&a)[0]).abs() <= 1e-10 * (1.0 + sv[0]));
    }

    #[test]
    fn roots_match_square_root_route(
        (a, p, pd) in (2usize..=5).prop_flat_map(|n| (matrix(n), spd(n), matrix(n))),
    ) {
        let pdot = (&pd + pd.transpose()) * 0.5;
        let lib = criterion_roots(&a, &SpdMatrix::new(p.clone()).unwrap(), &pdot).unwrap().lambdas;
        let oracle = common::roots_dual(&a, &p, &pdot);
        let scale = 1.0 + oracle.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for (x, y) in lib.iter().zip(&oracle) {
            prop_assert!((x - y).abs() <= 1e-9 * scale, "{lib:?} vs {oracle:?}");
        }
    }

    #[test]
    fn spd_sqrt_squares_back(p in (2usize..=5).prop_flat_map(spd)) {
        let s = spd_sqrt(&SpdMatrix::new(p.clone()).unwrap()).unwrap();
        let sq = s.as_matrix() * s.as_matrix();
        prop_assert!((sq - &p).amax() <= 1e-12 * (1.0 + p.amax()));
    }

    #[test]
    fn fractional_sums_are_monotone_in_d(
        mut v in prop::collection::vec(-3.0..3.0f64, 4),
        d0 in 0usize..4,
        s1 in 0.0..1.0f64,
        s2 in 0.0..1.0f64,
    ) {
        v.sort_by(|x, y| y.total_cmp(x));
        let (lo, hi) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
        let dl = FractionalDimension::new(d0 as f64 + lo, 4).unwrap();
        let dh = FractionalDimension::new(d0 as f64 + hi, 4).unwrap();
        if v[d0] <= 0.0 {
            prop_assert!(dh.top_sum(&v) <= dl.top_sum(&v) + 1e-12);
        }
        prop_assert!((dl.top_sum(&v) - common::top_sum(&v, dl.d())).abs() <= 1e-12);
        prop_assert!((dl.bottom_sum(&v) - common::bottom_sum(&v, dl.d())).abs() <= 1e-12);
    }

    #[test]
    fn rigid_body_roots_on_the_middle_axis(w2 in -10.0..10.0f64, tau in -5.0..5.0f64) {
        let p = RigidBodyParams { tau, ..Default::default() };
        let (sys, _) = rigid_body_system(p).unwrap();
        let rho = ((3.0f64 - 2.0) * (2.0 - 1.0) / (1.0 * 3.0)).sqrt();
        let x = DVector::from_vec(vec![0.0, w2, 0.0]);
        let got = criterion_roots(&sys.jacobian(&x), &p.p0(), &DMatrix::zeros(3, 3)).unwrap().lambdas;
        let r = 2.0 * w2.abs() * rho;
        let mut want = [-2.0 + r, -2.0, -2.0 - r];
        want.sort_by(|a, b| b.total_cmp(a));
        for (g, w) in got.iter().zip(want) {
            prop_assert!((g - w).abs() <= 1e-9, "{got:?} vs {want:?}");
        }
    }

    #[test]
    fn rigid_body_energy_dissipates(w in prop::collection::vec(-5.0..5.0f64, 3), u in 0.0..2.0f64) {
        let base = RigidBodyParams::default();
        let p = RigidBodyParams { tau: u * base.tau_bound(), ..base };
        let (sys, _) = rigid_body_system(p).unwrap();
        let x = DVector::from_vec(w);
        let grad = DVector::from_vec(vec![p.j1 * x[0], p.j2 * x[1], p.j3 * x[2]]);
        let wdot = grad.dot(&sys.rhs(&x));
        prop_assert!((wdot - p.energy_rate(&x)).abs() <= 1e-9 * (1.0 + wdot.abs()));
        let beta = p.tau * p.tau / (2.0 * p.delta * p.j2);
        prop_assert!(wdot <= -p.delta * p.energy(&x) + beta + 1e-9);
    }

    #[test]
    fn langford_orbit_solves_the_field(a in 0.51..0.99f64, t in 0.0..7.0f64) {
        let p = LangfordParams { a };
        let (sys, _) = langford_system(p).unwrap();
        let x = common::langford_orbit_point(a, t);
        prop_assert!((sys.rhs(&x) - p.orbit_velocity(t)).amax() <= 1e-12);
        prop_assert!((p.orbit_point(t) - x).amax() <= 1e-15);
    }

    #[test]
    fn rossler_vieta(a in 0.1..0.6f64, b in 0.1..0.6f64) {
        let (_, bundle) = rossler_system(RosslerParams { a, b }).unwrap();
        prop_assert!((-bundle.gamma + 2.0 * bundle.sigma + b).abs() <= 1e-10);
        prop_assert!(bundle.cubic_residual <= 1e-12);
    }

    #[test]
    fn fmt17_round_trips(x in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
        prop_assert_eq!(fmt17(x).parse::<f64>().unwrap(), x);
        let text = canonical_json(&serde_json::json!({ "v": x }));
        let back: serde_json::Value = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back["v"].as_f64().unwrap(), x);
    }

    #[test]
    fn verdict_bands_are_consistent(bound in -1.0..1.0f64, margin in 0.0..0.1f64) {
        let v = Verdict::from_bound(bound, margin);
        prop_assert_eq!(v == Verdict::Contractive, bound < -margin);
        prop_assert_eq!(v == Verdict::NotContractive, bound > margin);
    }

    #[test]
    fn grid_points_stay_in_the_box(
        lo in prop::collection::vec(-3.0..0.0f64, 3),
        width in prop::collection::vec(0.1..3.0f64, 3),
        counts in prop::collection::vec(1usize..6, 3),
    ) {
        let hi: Vec<f64> = lo.iter().zip(&width).zip(&counts)
            .map(|((l, w), &c)| if c == 1 { *l } else { l + w })
            .collect();
        let region = Region::new(lo.clone(), hi.clone(), counts.clone()).unwrap();
        let pts = region.points().unwrap();
        prop_assert_eq!(pts.len(), counts.iter().product::<usize>());
        for p in &pts {
            for i in 0..3 {
                prop_assert!(p[i] >= lo[i] - 1e-12 && p[i] <= hi[i] + 1e-12);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// `t·Σ` numerators are subadditive along the flow.
    #[test]
    fn cocycle_is_subadditive(
        which in 0usize..3,
        t1 in 0.2..3.0f64,
        t2 in 0.2..3.0f64,
        d in 0.5..3.0f64,
        dx in prop::collection::vec(-0.05..0.05f64, 3),
    ) {
        let (sys, x) = demo(which);
        let x = &x + DVector::from_vec(dx);
        let opts = IntegratorOptions::tight();
        let dim = FractionalDimension::new(d, 3).unwrap();
        let psi = |x: &DVector<f64>, t: f64| {
            let st = variational_flow(&sys, x, t, &opts).unwrap();
            omega_d(&st.x_jac, &dim).unwrap().ln() + d * st.log_scale
        };
        let mid = flow_map(&sys, &x, t1, &opts).unwrap();
        prop_assert!(psi(&x, t1 + t2) <= psi(&x, t1) + psi(&mid, t2) + 1e-6);
    }

    /// On symmetric linear systems the two criteria agree exactly.
    #[test]
    fn methods_agree_on_symmetric_linear_systems(
        a in matrix(3),
        frac in 0.1..1.0f64,
    ) {
        let a = (&a + a.transpose()) * 0.5;
        let sys = DynamicalSystem::linear("sym", a.clone()).unwrap();
        let dim = FractionalDimension::new(3.0 * frac, 3).unwrap();
        let region = Region::new(vec![-1.0; 3], vec![1.0; 3], vec![2; 3]).unwrap();
        let rep = estimate_bold_sigma_d(&sys, &region, &dim, &[1.0, 2.0], &IntegratorOptions::tight()).unwrap();
        let cert = certify_second_method(&sys, &MetricField::identity(3), &region, &dim, &SecondMethodOptions::default()).unwrap();
        prop_assert!((rep.bold_sigma_estimate - cert.bound / 2.0).abs() <= 1e-8);
        let want = common::top_sum(&common::sym_eigs(&a), dim.d());
        prop_assert!((cert.bound / 2.0 - want).abs() <= 1e-10);
    }
}

fn demo(which: usize) -> (DynamicalSystem, DVector<f64>) {
    match which {
        0 => {
            let p = RigidBodyParams { tau: 5.0, ..Default::default() };
            (rigid_body_system(p).unwrap().0, DVector::from_vec(vec![0.5, 1.0, -0.5]))
        }
        1 => (rossler_system(RosslerParams::default()).unwrap().0, DVector::from_vec(vec![0.1, 0.1, 0.0])),
        _ => (langford_system(LangfordParams { a: 0.6 }).unwrap().0, common::langford_orbit_point(0.6, 1.0)),
    }
}

#[test]
fn finite_time_exponents_of_a_diagonal_system() {
    let sys = DynamicalSystem::linear("diag", DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, -1.0, -2.0]))).unwrap();
    let ex = finite_time_exponents(&sys, &DVector::from_vec(vec![1.0, 0.0, 0.0]), 3.0, &IntegratorOptions::tight()).unwrap();
    for (x, y) in ex.iter().zip([0.5, -1.0, -2.0]) {
        assert!((x - y).abs() < 1e-9, "{ex:?}");
    }
}

#[test]
fn jacobi_oracle_agrees_with_gram_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for n in 2..6 {
        let s = common::random_symmetric(&mut rng, n);
        let (vals, v) = common::jacobi_eigen(&s);
        let back = &v * DMatrix::from_diagonal(&DVector::from_vec(vals)) * v.transpose();
        assert!((back - &s).amax() < 1e-12);
    }
}
