use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use revsde_core::averaging::{
    dirichlet_forms, effective_diffusion, lifted_energy_tensor, linspace, average_on_grid, spd_margin,
};
use revsde_core::diagnostics::{gibbs_density, ks_distance, wasserstein1_two_sample};
use revsde_core::exprfield::catalog::{reference_fields, twisted};
use revsde_core::exprfield::{
    assemble_rotated_diagonal, eval_gradient, eval_with_derivatives, fd_derivatives, parse_expression, CompiledExpr,
    Expr, FieldSet, RotatedDiagonalSpec,
};
use revsde_core::geometry::{cov_div_diffusion, geometry_at, sigma_cov_div_sigma_t};
use revsde_core::quadrature::QuadratureSpec;
use revsde_core::reversibility::{
    classify, drift_convert, lambda_residual, DivergenceVariant, GibbsSpec, GridSpec, NoiseConvention,
};
use revsde_core::sde::SlowFastSystem;

fn all_fields() -> Vec<FieldSet> {
    let mut v: Vec<FieldSet> = reference_fields().into_iter().map(|(_, f)| f).collect();
    v.push(twisted());
    v
}

fn amax(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn point(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, d)
}

fn field_and_point() -> impl Strategy<Value = (usize, Vec<f64>)> {
    (0..6usize).prop_flat_map(|i| {
        let d = all_fields()[i].dim;
        (Just(i), point(d))
    })
}

// Expression source over x1..x3 built from well-defined pieces.
fn expr_source() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        (1..=3usize).prop_map(|i| format!("x{i}")),
        (0.1..5.0f64).prop_map(|c| format!("{c:.3}")),
        Just("pi".to_string()),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("{a} + {b}")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("{a} - {b}")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("{a}*{b}")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a})/(2 + ({b})^2)")),
            inner.clone().prop_map(|a| format!("-{a}")),
            inner.clone().prop_map(|a| format!("({a})^2")),
            inner.clone().prop_map(|a| format!("({a})^3")),
            inner.clone().prop_map(|a| format!("sin({a})")),
            inner.clone().prop_map(|a| format!("cos({a})")),
            inner.clone().prop_map(|a| format!("tanh({a})")),
            inner.clone().prop_map(|a| format!("exp(tanh({a}))")),
            inner.clone().prop_map(|a| format!("sqrt(1 + ({a})^2)")),
            inner.prop_map(|a| format!("log(2 + cos({a}))")),
        ]
    })
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn reserialized_expressions_reparse_identically(src in expr_source()) {
        let first = parse_expression(&src, 3).unwrap();
        let second = parse_expression(&first.to_string(), 3).unwrap();
        prop_assert_eq!(&first, &second, "{} printed as {}", src, first);
    }

    #[test]
    fn compiled_evaluation_matches_tree(src in expr_source(), x in point(3)) {
        let e = parse_expression(&src, 3).unwrap();
        let c = CompiledExpr::compile(&e);
        match (e.value(&x), c.value(&x)) {
            (Ok(a), Ok(b)) => {
                prop_assert!(close(a, b, 1e-12), "{src}: {a} vs {b}");
                let mut g_tree = [0.0; 3];
                let mut g_comp = [0.0; 3];
                eval_gradient(&e, &x, &mut g_tree).unwrap();
                c.value_gradient(&x, &mut g_comp).unwrap();
                for k in 0..3 {
                    prop_assert!(close(g_tree[k], g_comp[k], 1e-12), "{src}: ∂{k} {} vs {}", g_tree[k], g_comp[k]);
                }
            }
            (Err(a), Err(b)) => prop_assert_eq!(a, b),
            (a, b) => prop_assert!(false, "{src}: tree {a:?}, compiled {b:?}"),
        }
    }

    #[test]
    fn analytic_derivatives_match_central_differences((i, x) in field_and_point()) {
        let f = &all_fields()[i];
        let d = f.dim;
        let mut exprs: Vec<&Expr> = vec![&f.potential];
        exprs.extend(f.volatility.entries.iter());
        for e in exprs {
            let a = eval_with_derivatives(e, &x).unwrap();
            let n = fd_derivatives(e, &x, 1e-5).unwrap();
            for r in 0..d {
                prop_assert!(close(a.gradient[r], n.gradient[r], 1e-6), "{e}: grad {} vs {}", a.gradient[r], n.gradient[r]);
                for c in 0..d {
                    prop_assert!(close(a.hessian[(r, c)], n.hessian[(r, c)], 1e-6), "{e}: hess {} vs {}", a.hessian[(r, c)], n.hessian[(r, c)]);
                }
            }
        }
    }

    #[test]
    fn analytic_hessian_is_exactly_symmetric(src in expr_source(), x in point(3)) {
        let e = parse_expression(&src, 3).unwrap();
        if let Ok(h) = eval_with_derivatives(&e, &x) {
            prop_assert_eq!(&h.hessian, &h.hessian.transpose());
        }
    }

    #[test]
    fn geometry_invariants((i, x) in field_and_point()) {
        let g = geometry_at(&all_fields()[i], &x).unwrap();
        let d = g.dim();
        prop_assert!((&g.metric * &g.diffusion.value - DMatrix::identity(d, d)).amax() < 1e-10);
        prop_assert_eq!(g.torsion_defect(), 0.0);
        prop_assert!(g.metric_compatibility_defect() < 1e-8);
    }

    #[test]
    fn residual_is_affine_in_lambda((i, x) in field_and_point(), a in 0.0..1.0f64, b in 0.0..1.0f64, t in 0.0..1.0f64) {
        let f = &all_fields()[i];
        let (lo, hi) = (a.min(b), a.max(b));
        let mid = lo + t * (hi - lo);
        for variant in [DivergenceVariant::Covariant, DivergenceVariant::Euclidean] {
            let r = |l: f64| lambda_residual(f, NoiseConvention::new(l).unwrap(), &x, variant).unwrap();
            let (r0, r1, rm) = (r(lo), r(hi), r(mid));
            let line = &r0 + (&r1 - &r0) * t;
            let scale = amax(&r0).max(amax(&r1)).max(1.0);
            prop_assert!(amax(&(rm - line)) < 1e-12 * scale);
        }
    }

    #[test]
    fn drift_conversion_composes((i, x) in field_and_point(), l in 0.0..=1.0f64, g in 0.0..=1.0f64, r in 0.0..=1.0f64) {
        let f = &all_fields()[i];
        let b = DVector::from_iterator(f.dim, x.iter().map(|v| v.sin()));
        let (l, g, r) = (NoiseConvention::new(l).unwrap(), NoiseConvention::new(g).unwrap(), NoiseConvention::new(r).unwrap());
        let two_step = drift_convert(&drift_convert(&b, f, l, g, &x).unwrap(), f, g, r, &x).unwrap();
        let direct = drift_convert(&b, f, l, r, &x).unwrap();
        prop_assert!(amax(&(two_step - direct)) < 1e-12);
    }

    #[test]
    fn covariant_residual_specializations((i, x) in field_and_point()) {
        let f = &all_fields()[i];
        let g = geometry_at(f, &x).unwrap();
        let (m, s) = (cov_div_diffusion(&g), sigma_cov_div_sigma_t(&g));
        let r = |l| lambda_residual(f, l, &x, DivergenceVariant::Covariant).unwrap();
        prop_assert!(amax(&(r(NoiseConvention::ITO) + &m)) < 1e-12);
        prop_assert!(amax(&(r(NoiseConvention::STRATONOVICH) + &s)) < 1e-12);
        prop_assert!(amax(&(r(NoiseConvention::KLIMONTOVICH) - (&m - &s * 2.0))) < 1e-12);
    }

    #[test]
    fn de_donder_condition_matches_covariant_divergence((i, x) in field_and_point()) {
        let g = geometry_at(&all_fields()[i], &x).unwrap();
        let div = amax(&cov_div_diffusion(&g));
        let harmonic = amax(&g.harmonic_contraction());
        prop_assert_eq!(div < 1e-8, harmonic < 1e-8, "{} vs {}", div, harmonic);
        prop_assert!((div - harmonic).abs() < 1e-10);
    }

    #[test]
    fn rotated_diagonal_is_symmetric(angle in -3.2..3.2f64, x in point(2)) {
        let spec = RotatedDiagonalSpec::new(
            RotatedDiagonalSpec::rotation_2d(angle),
            vec![parse_expression("2 + sin(x*y)", 2).unwrap(), parse_expression("1 + y^2", 2).unwrap()],
            2,
        ).unwrap();
        let u = &spec.rotation;
        prop_assert!((u.transpose() * u - DMatrix::identity(2, 2)).amax() < 1e-12);
        let s = assemble_rotated_diagonal(&spec).unwrap().value(&x).unwrap();
        prop_assert!((&s - s.transpose()).amax() < 1e-15);
    }

    #[test]
    fn wasserstein_triangle_inequality(
        a in prop::collection::vec(-5.0..5.0f64, 1..60),
        b in prop::collection::vec(-5.0..5.0f64, 1..60),
        c in prop::collection::vec(-5.0..5.0f64, 1..60),
    ) {
        let w = |p: &[f64], q: &[f64]| wasserstein1_two_sample(p, q).unwrap();
        prop_assert!(w(&a, &c) <= w(&a, &b) + w(&b, &c) + 1e-12);
        prop_assert!((w(&a, &b) - w(&b, &a)).abs() < 1e-12);
    }

    #[test]
    fn effective_diffusion_is_spd(x in point(2)) {
        let sf = SlowFastSystem::parse(
            2,
            1,
            "(x1^2 + x2^2 + x3^2)/2 + x1*x3/3 + sin(x2)*x3/4",
            &[
                vec!["1.5 + 0.5*sin(x3)".into(), "0.4*cos(x1 + x3)".into()],
                vec!["0.3*x3/(1 + x3^2)".into(), "1 + 0.5*tanh(x2*x3)".into()],
            ],
            &[vec!["1".into()]],
            1.0,
        ).unwrap();
        let a = effective_diffusion(&sf, &x, &QuadratureSpec::default()).unwrap();
        let (min_eig, asym) = spd_margin(&a);
        prop_assert!(min_eig > 0.0 && asym < 1e-12, "{min_eig} {asym}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn agreement_theorem(field in 0..6usize, l in 0..5usize, riemannian in any::<bool>()) {
        let f = &all_fields()[field];
        let lambda = NoiseConvention::new([0.0, 0.25, 0.5, 0.75, 1.0][l]).unwrap();
        let gibbs = if riemannian { GibbsSpec::riemannian() } else { GibbsSpec::flat() };
        let grid = if f.dim == 1 {
            GridSpec::uniform(-3.0, 3.0, 31, 1).unwrap()
        } else {
            GridSpec::uniform(-2.0, 2.0, 9, 2).unwrap()
        };
        let v = classify(f, lambda, &gibbs, &grid, 1e-8).unwrap();
        prop_assert_eq!(v.max_residual < 1e-8, v.generator_gap_max < 1e-8, "{}", v.to_record());
    }

    #[test]
    fn inverse_cdf_samples_pass_ks(seed in any::<u64>()) {
        let f = reference_fields().remove(0).1;
        let target = gibbs_density(&f, &GibbsSpec::riemannian(), &[-8.0], &[8.0], 4001).unwrap();
        let n = 4000;
        let samples = target.sample(&mut ChaCha8Rng::seed_from_u64(seed), n).unwrap();
        let ks = ks_distance(&samples, |x| target.cdf(x)).unwrap();
        // 99.9% quantile of the Kolmogorov distribution; 99% is 1.63
        prop_assert!(ks < 1.95 / (n as f64).sqrt(), "{ks}");
    }
}

fn f2_system() -> SlowFastSystem {
    SlowFastSystem::parse(1, 1, "(x^2 + y^2)/2", &[vec!["2 + sin(x)".into()]], &[vec!["1".into()]], 1.0).unwrap()
}

fn f3_system() -> SlowFastSystem {
    SlowFastSystem::parse(1, 1, "(x^2 + y^2 + x*y)/2", &[vec!["1".into()]], &[vec!["1".into()]], 1.0).unwrap()
}

#[test]
fn iterated_and_tensor_quadrature_agree() {
    let quad = QuadratureSpec::default();
    for sf in [f2_system(), f3_system()] {
        for f in ["x", "x^2", "sin(x)"] {
            let f = parse_expression(f, 1).unwrap();
            let iterated = dirichlet_forms(&sf, &f, (-12.0, 12.0), &quad, &quad).unwrap().lifted;
            let tensor = lifted_energy_tensor(&sf, &f, (-12.0, 12.0), (-12.0, 12.0), 2000).unwrap();
            assert!((iterated - tensor).abs() < 1e-8, "{f}: {iterated} vs {tensor}");
        }
    }
}

#[test]
fn marginal_measure_is_the_joint_x_marginal() {
    let sf = SlowFastSystem::parse(
        1,
        1,
        "x^4/4 + (y - sin(x))^2/2 + y^4/8",
        &[vec!["1".into()]],
        &[vec!["1".into()]],
        1.0,
    )
    .unwrap();
    let grid = linspace(-4.0, 4.0, 41);
    let table = average_on_grid(&sf, &grid, &QuadratureSpec::default()).unwrap();
    // Oracle: composite Simpson on a fixed rectangle.
    let simpson = |f: &dyn Fn(f64) -> f64, a: f64, b: f64, n: usize| {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for k in 1..n {
            s += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    let v = |x: f64, y: f64| sf.potential.value(&[x, y]).unwrap();
    let z = |x: f64| simpson(&|y| (-v(x, y)).exp(), -12.0, 12.0, 4000);
    let total = simpson(&z, -4.0, 4.0, 800);
    for (i, &x) in grid.iter().enumerate() {
        let oracle = z(x) / total;
        assert!((table.mu_inf[i] - oracle).abs() < 1e-8, "x = {x}: {} vs {oracle}", table.mu_inf[i]);
    }
}
