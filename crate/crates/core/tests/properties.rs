use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ehyp_core::classifier::{
    build_example_theorem3, cylinder_identities, example_algebraic_laws, base_samples, stencil_margin, ExampleTheorem3Spec,
};
use ehyp_core::curvature::{
    build_mwp_metric, curvature_oracle_with, mwp_sectional_closed_form, orthonormal_frame, sectional_curvature,
    CoordinateMetric, Extrapolation, FiberSpec, MwpSpec, PlaneClass, DEFAULT_STEP,
};
use ehyp_core::grid::SampleGrid;
use ehyp_core::hypersurface::{decompose, ricci_corollary_consistency, structure_residuals, CheckConfig};
use ehyp_core::report::ResidualReport;
use ehyp_core::scalarfun::{f_ode_residual, solve_f_ode, Expr, IntervalDomain, SlopeBranch, SmoothFn};
use ehyp_core::spaceform::{space_form_metric, SpaceFormChart};

fn random_point(rng: &mut ChaCha8Rng, bounds: &[(f64, f64)], inset: f64) -> Vec<f64> {
    bounds.iter().map(|&(lo, hi)| rng.gen_range(lo + inset..hi - inset)).collect()
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Positive polynomial `α + β (s - s0)^2` or sinusoidal `α + β sin(γ s)` warping.
fn warping(rng: &mut ChaCha8Rng) -> SmoothFn {
    let (alpha, beta) = (rng.gen_range(1.2..2.0), rng.gen_range(0.1..1.0));
    if rng.gen_bool(0.5) {
        let shift = Expr::sub(Expr::var(), Expr::constant(rng.gen_range(-0.5..0.5)));
        SmoothFn::new(Expr::add(Expr::constant(alpha), Expr::mul(Expr::constant(beta), Expr::powi(shift, 2))))
    } else {
        let arg = Expr::mul(Expr::constant(rng.gen_range(0.5..2.0)), Expr::var());
        SmoothFn::new(Expr::add(Expr::constant(alpha), Expr::mul(Expr::constant(beta), Expr::sin(arg))))
    }
}

fn random_mwp(rng: &mut ChaCha8Rng) -> MwpSpec {
    let lo = rng.gen_range(-1.0..0.5);
    let base = IntervalDomain::open(lo, lo + rng.gen_range(0.8..1.6)).unwrap();
    let fibers = (0..2)
        .map(|_| FiberSpec::new(rng.gen_range(2..=3), rng.gen_range(-1.5..1.5), warping(rng)))
        .collect();
    MwpSpec { base, fibers }
}

fn cfg() -> CheckConfig {
    CheckConfig::default()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn space_form_sectional_is_constant(k in prop::sample::select(vec![-1.0, 0.0, 1.0]), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let metric = CoordinateMetric::space_form(SpaceFormChart::new(4, k).unwrap()).unwrap();
        let x = random_point(&mut rng, metric.bounds(), stencil_margin(DEFAULT_STEP));
        let b = curvature_oracle_with(&metric, &x, DEFAULT_STEP, Extrapolation::Richardson).unwrap();
        let (u, v) = (random_vec(&mut rng, 4), random_vec(&mut rng, 4));
        let sec = sectional_curvature(&b, &b.metric, &u, &v).unwrap();
        prop_assert!((sec - k).abs() < 1e-6, "sec {} vs {}", sec, k);
    }

    #[test]
    fn space_form_metric_is_rotation_invariant(k in -2.0f64..2.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let chart = SpaceFormChart::new(3, k).unwrap();
        let r = chart.radius * 0.9;
        let x = DVector::from_vec(random_vec(&mut rng, 3)).normalize() * rng.gen_range(0.0..r);
        let q = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0)).qr().q();
        let rx = &q * &x;
        let g = space_form_metric(&chart, x.as_slice()).unwrap();
        let gr = space_form_metric(&chart, rx.as_slice()).unwrap();
        prop_assert!((g - gr).abs().max() < 1e-12);
    }

    #[test]
    fn mwp_closed_form_matches_oracle(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = random_mwp(&mut rng);
        let metric = build_mwp_metric(&spec).unwrap();
        let x = random_point(&mut rng, metric.bounds(), stencil_margin(DEFAULT_STEP) + 0.01);
        let b = curvature_oracle_with(&metric, &x, DEFAULT_STEP, Extrapolation::Richardson).unwrap();
        let e = |i: usize| {
            let mut v = vec![0.0; x.len()];
            v[i] = 1.0;
            v
        };
        let (o1, o2) = (spec.fiber_offset(0), spec.fiber_offset(1));
        for (class, i, j) in [
            (PlaneClass::BaseFiber(0), 0, o1),
            (PlaneClass::BaseFiber(1), 0, o2),
            (PlaneClass::WithinFiber(0), o1, o1 + 1),
            (PlaneClass::WithinFiber(1), o2, o2 + 1),
            (PlaneClass::Mixed, o1, o2),
        ] {
            let closed = mwp_sectional_closed_form(&spec, x[0], class).unwrap();
            let oracle = sectional_curvature(&b, &b.metric, &e(i), &e(j)).unwrap();
            prop_assert!((closed - oracle).abs() < 1e-5, "{:?}: {} vs {}", class, closed, oracle);
        }
    }

    #[test]
    fn oracle_symmetries_and_traces(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = random_mwp(&mut rng);
        let metric = build_mwp_metric(&spec).unwrap();
        let x = random_point(&mut rng, metric.bounds(), stencil_margin(DEFAULT_STEP) + 0.01);
        let b = curvature_oracle_with(&metric, &x, DEFAULT_STEP, Extrapolation::Richardson).unwrap();
        prop_assert!(b.symmetry_residual() < 1e-6);
        prop_assert!(b.bianchi_residual() < 1e-6);
        let trace = (&b.metric_inv * &b.ricci).trace();
        prop_assert!((trace - b.scalar).abs() < 1e-8);
        // Ricci as the frame trace of R(e_i, Y, Z, e_i).
        let frame = orthonormal_frame(&b.metric).unwrap();
        let n = x.len();
        let (y, z) = (random_vec(&mut rng, n), random_vec(&mut rng, n));
        let mut sum = 0.0;
        for i in 0..n {
            let ei: Vec<f64> = frame.column(i).iter().copied().collect();
            sum += b.riemann_form(&ei, &y, &z, &ei);
        }
        prop_assert!((sum - b.ricci_form(&y, &z)).abs() < 1e-8);
    }

    #[test]
    fn principal_clusters_are_frame_invariant(seed in any::<u64>(), m1 in 1usize..3, m2 in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = m1 + m2 + 1;
        let raw = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-0.3..0.3));
        let g = DMatrix::identity(n, n) + &raw * raw.transpose();
        let e = orthonormal_frame(&g).unwrap();
        let values: Vec<f64> = std::iter::once(0.0)
            .chain(std::iter::repeat(-1.3).take(m1))
            .chain(std::iter::repeat(0.7).take(m2))
            .collect();
        let a = &e * DMatrix::from_diagonal(&DVector::from_vec(values)) * e.clone().try_inverse().unwrap();
        let t = e.column(0).into_owned();
        let s = decompose(&g, &a, Some(&t), None).unwrap();
        // Change of coordinates x = P x': g' = P^T g P, A' = P^{-1} A P, T' = P^{-1} T.
        let p = DMatrix::identity(n, n) + DMatrix::from_fn(n, n, |_, _| rng.gen_range(-0.3..0.3));
        let p_inv = p.clone().try_inverse().unwrap();
        let s2 = decompose(&(p.transpose() * &g * &p), &(&p_inv * &a * &p), Some(&(&p_inv * &t)), None).unwrap();
        prop_assert_eq!(s.clusters.len(), 3);
        prop_assert_eq!(s2.clusters.len(), 3);
        prop_assert_eq!(s.normal_index, s2.normal_index);
        for (c1, c2) in s.clusters.iter().zip(&s2.clusters) {
            prop_assert!((c1.value - c2.value).abs() < 1e-9);
            prop_assert_eq!(c1.multiplicity, c2.multiplicity);
        }
    }

    #[test]
    fn f_ode_residual_is_tiny(n in 5usize..12, rho in -20.0f64..20.0, falling in any::<bool>()) {
        let branch = if falling { SlopeBranch::Falling } else { SlopeBranch::Rising };
        let f = solve_f_ode(n, rho, branch).unwrap();
        let d = f.domain();
        let (lo, hi) = (d.t_min.max(-3.0), d.t_max.min(3.0));
        for i in 1..=100 {
            let t = lo + (hi - lo) * i as f64 / 101.0;
            prop_assert!(f_ode_residual(&f, n, rho, t).unwrap() < 1e-10);
            prop_assert!(f.value(t) > 0.0);
        }
    }

    #[test]
    fn cylinder_reporter_is_consistent(n in 4usize..10, c in prop::sample::select(vec![-1, 1]), rho in -20.0f64..20.0) {
        let r = cylinder_identities(n, c, rho).unwrap();
        prop_assert!(r.lambda_product_residual < 1e-12);
        prop_assert_eq!(r.solvable, (0.0..=1.0).contains(&r.t_norm2));
        prop_assert!(!r.consistent);
        prop_assert_eq!(r.theta.is_some(), r.solvable);
    }

    #[test]
    fn pass_flag_is_residual_below_tolerance(residual in prop::num::f64::ANY, tolerance in 0.0f64..1.0) {
        let mut r = ResidualReport::new();
        r.push("x", residual, tolerance, "g");
        prop_assert_eq!(r.all_pass(), residual <= tolerance);
    }
}

fn valid_spec() -> impl Strategy<Value = ExampleTheorem3Spec> {
    (5usize..9, 0.3f64..3.0, 0.3f64..3.0, -6.0f64..20.0, any::<bool>())
        .prop_flat_map(|(n, k1, k2, rho, falling)| {
            (2..=(n - 3)).prop_map(move |p1| {
                let mut s = ExampleTheorem3Spec::new(n, p1, n - 1 - p1, k1, k2, rho);
                if falling {
                    s.branch = SlopeBranch::Falling;
                }
                s
            })
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn built_examples_satisfy_the_algebraic_laws(spec in valid_spec()) {
        let build = build_example_theorem3(&spec).unwrap();
        let s = base_samples(&build.mwp.base, 12, 0.1);
        let r = example_algebraic_laws(&build, &s, &cfg().tolerances).unwrap();
        prop_assert!(r.flags.is_empty(), "{:?}", r.flags);
        for c in &r.checks {
            prop_assert!(c.residual < 1e-9, "{} = {}", c.name, c.residual);
        }
        prop_assert!(r.residual("three_eq_energy").unwrap() < 1e-10);
        prop_assert!(r.residual("multiple").unwrap() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn orientation_flip_and_ricci_trace(spec in valid_spec(), u in 0.2f64..0.8) {
        prop_assume!(spec.n <= 6);
        let build = build_example_theorem3(&spec).unwrap();
        let base = build.mwp.base;
        let mut x = vec![0.0; spec.n];
        x[0] = base.t_min + u * base.width();
        let grid = SampleGrid::point(&x);
        let r = structure_residuals(&build.data, &grid, &cfg()).unwrap();
        let f = structure_residuals(&build.data.flipped(), &grid, &cfg()).unwrap();
        for name in ["A", "B", "C", "D", "E", "F"] {
            let (a, b) = (r.residual(name).unwrap(), f.residual(name).unwrap());
            prop_assert!(a < 1e-6 && b < 1e-6, "{}: {} / {}", name, a, b);
        }
        let corollary = ricci_corollary_consistency(&build.data, &grid, &cfg()).unwrap();
        prop_assert!(corollary.residual("ricci_corollary").unwrap() < 1e-6);
    }
}
