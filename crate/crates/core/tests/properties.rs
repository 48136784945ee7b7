use proptest::prelude::*;

use shapeopt::fem::{assemble_mass, assemble_stiffness};
use shapeopt::helmholtz::{BcVariant, ProblemData};
use shapeopt::mesh::{deform, generate_disk, generate_rectangle, VelocityField};
use shapeopt::oracle::linear_fit;
use shapeopt::shape_grad::{shape_derivative, ShapeGradOptions};
use shapeopt::spectral::{detect_multiplicity, simple_eig_derivative, solve_eigs};
use shapeopt::topo::{topo_quotient, QuotientMode};
use shapeopt::validation::Check;
use shapeopt::Vec2;

fn cases(n: u32) -> ProptestConfig {
    ProptestConfig { cases: n, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(cases(12))]

    #[test]
    fn stiffness_kills_constants_and_mass_sums_to_area(w in 0.5f64..2.0, h in 0.5f64..2.0, size in 0.15f64..0.4) {
        let m = generate_rectangle(w, h, size).unwrap();
        let k = assemble_stiffness(&m).unwrap();
        let ones = vec![1.0; m.num_nodes()];
        let kc = k.matvec(&ones);
        prop_assert!(kc.iter().all(|v| v.abs() < 1e-12));
        prop_assert!(k.asymmetry() < 1e-14);
        let mass = assemble_mass(&m).unwrap().bilinear(&ones, &ones);
        prop_assert!((mass - w * h).abs() < 1e-12 * w * h);
    }

    #[test]
    fn discrete_eigenvalues_scale_with_inverse_square(t in 0.3f64..3.0) {
        let m = generate_disk(Vec2::zeros(), 1.0, 0.25).unwrap();
        let scaled = m.with_nodes(m.nodes().iter().map(|p| p * t).collect()).unwrap();
        let a = solve_eigs(&m, BcVariant::Dirichlet, 3).unwrap();
        let b = solve_eigs(&scaled, BcVariant::Dirichlet, 3).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((y.lambda * t * t - x.lambda).abs() <= 1e-10 * x.lambda);
        }
    }

    #[test]
    fn zero_step_deformation_is_identity(cx in -1.0f64..1.0, cy in -1.0f64..1.0) {
        let m = generate_disk(Vec2::zeros(), 1.0, 0.3).unwrap();
        let d = deform(&m, &VelocityField::dilation(Vec2::new(cx, cy)), 0.0).unwrap();
        prop_assert_eq!(d.nodes(), m.nodes());
        prop_assert_eq!(d.triangles(), m.triangles());
    }

    #[test]
    fn shape_derivative_is_linear_in_velocity(a in -2.0f64..2.0, b in -2.0f64..2.0, k2 in 0.0f64..3.0) {
        let m = generate_disk(Vec2::zeros(), 1.0, 0.2).unwrap();
        let data = ProblemData { k2, ..Default::default() };
        let opts = ShapeGradOptions::default();
        let v1 = VelocityField::dilation(Vec2::zeros());
        let v2 = VelocityField::analytic("bump", |p| Vec2::new(p.x * p.y, p.y * p.y));
        let combo = VelocityField::analytic("combo", move |p| a * p + b * Vec2::new(p.x * p.y, p.y * p.y));
        let d1 = shape_derivative(&m, &data, &v1, BcVariant::Dirichlet, &opts).unwrap().dj;
        let d2 = shape_derivative(&m, &data, &v2, BcVariant::Dirichlet, &opts).unwrap().dj;
        let dc = shape_derivative(&m, &data, &combo, BcVariant::Dirichlet, &opts).unwrap().dj;
        prop_assert!((dc - a * d1 - b * d2).abs() <= 1e-9 * (1.0 + d1.abs() + d2.abs()));
    }

    #[test]
    fn translation_leaves_simple_eigenvalue_stationary(angle in 0.0f64..std::f64::consts::TAU) {
        let m = generate_disk(Vec2::zeros(), 1.0, 0.1).unwrap();
        let pairs = solve_eigs(&m, BcVariant::Dirichlet, 2).unwrap();
        let c = &detect_multiplicity(&m, &pairs, 1e-2).unwrap()[0];
        let d = simple_eig_derivative(&m, c, &VelocityField::translation(Vec2::new(angle.cos(), angle.sin())), BcVariant::Dirichlet).unwrap();
        prop_assert!(d.abs() <= 1e-2 * c.lambda_mean);
    }

    #[test]
    fn linear_fit_is_exact_on_lines(slope in -10.0f64..10.0, intercept in -5.0f64..5.0) {
        let s: Vec<(f64, f64)> = (0..6).map(|i| (i as f64 * 0.3, slope * i as f64 * 0.3 + intercept)).collect();
        let f = linear_fit(&s).unwrap();
        prop_assert!((f.slope - slope).abs() < 1e-10);
        prop_assert!((f.intercept - intercept).abs() < 1e-10);
    }

    #[test]
    fn relative_check_passes_iff_within_tolerance(m in -10.0f64..10.0, r in 0.1f64..10.0, tol in 0.0f64..1.0) {
        let c = Check::relative(0, "p", m, r, tol);
        prop_assert_eq!(c.passed, (m - r).abs() / r <= tol);
    }
}

proptest! {
    #![proptest_config(cases(6))]

    #[test]
    fn source_identity_holds_at_random_centres(x in 0.3f64..0.7, y in 0.3f64..0.7, gamma in 0.1f64..3.0) {
        let m = generate_rectangle(1.0, 1.0, 0.1).unwrap();
        let data = ProblemData { gamma, ..Default::default() };
        let t = topo_quotient(&m, &data, Vec2::new(x, y), &[0.1], QuotientMode::Source(BcVariant::Dirichlet)).unwrap();
        for row in &t.rows {
            let defect = row.identity_defect().unwrap();
            prop_assert!(defect.abs() <= 1e-10 * row.delta_psi.abs().max(1e-300), "{defect} vs {}", row.delta_psi);
        }
    }
}
