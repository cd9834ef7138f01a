use std::sync::OnceLock;

use proptest::prelude::*;

use dalab::disintegration::{accumulate_box, default_box, max_window_mass, sample_orbit, ConditionalHistogram};
use dalab::experiment::config::set_pointer;
use dalab::lyapunov::exponents_qr;
use dalab::mme::{fiber_point, transport_step};
use dalab::semiconj::{solve_semiconjugacy, DisplacementField};
use dalab::system::{BumpProfile, DASpec, DASystem};
use dalab::torus::{reduce_to_torus, torus_delta, EigenChart, TorusPoint};

fn standard_field() -> &'static DisplacementField {
    static FIELD: OnceLock<DisplacementField> = OnceLock::new();
    FIELD.get_or_init(|| solve_semiconjugacy(&DASpec::standard(), 64, 1e-4, 200).unwrap())
}

fn point() -> impl Strategy<Value = TorusPoint> {
    (0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64).prop_map(|(x, y, z)| TorusPoint::new(x, y, z))
}

fn spec() -> impl Strategy<Value = DASpec> {
    let shear = (-1.2..1.2f64, 0.05..0.5f64, point()).prop_map(|(a, q, p)| DASpec {
        amplitude: a,
        perturbation_radius: q,
        perturbation_center: p.0.into(),
        ..DASpec::standard()
    });
    let twist = (-1.5..1.5f64, 0.02..0.24f64, point()).prop_map(|(a, r, p)| DASpec::twist(5, p.0.into(), r, a));
    prop_oneof![shear, twist]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn inverse_round_trip(s in spec(), x in point()) {
        let sys = DASystem::new(&s).unwrap();
        let back = sys.apply_f_inverse(&sys.apply_f(&x));
        prop_assert!(back.distance(&x) < 1e-10);
        let fwd = sys.apply_f(&sys.apply_f_inverse(&x));
        prop_assert!(fwd.distance(&x) < 1e-10);
    }

    #[test]
    fn lift_agrees_with_torus_map(s in spec(), x in point(), shift in (-3i32..3, -3i32..3, -3i32..3)) {
        let sys = DASystem::new(&s).unwrap();
        let mut lifted = x.lift();
        lifted.0 += nalgebra::Vector3::new(shift.0 as f64, shift.1 as f64, shift.2 as f64);
        let image = reduce_to_torus(&sys.apply_lift(&lifted));
        prop_assert!(image.distance(&sys.apply_f(&x)) < 1e-10);
    }

    #[test]
    fn jacobian_is_volume_preserving_and_keeps_the_plane(s in spec(), x in point()) {
        let sys = DASystem::new(&s).unwrap();
        let j = sys.jacobian(&x).matrix;
        prop_assert!((j.determinant().abs() - 1.0).abs() < 1e-10);
        let chart = EigenChart::new(&sys.splitting).unwrap();
        for i in [EigenChart::MIDDLE, EigenChart::STABLE] {
            let w = j * chart.direction(i);
            prop_assert!(chart.coefficients(&w)[EigenChart::STRONG].abs() < 1e-12 * w.norm().max(1.0));
        }
    }

    #[test]
    fn jacobian_matches_finite_differences(s in spec(), x in point()) {
        let sys = DASystem::new(&s).unwrap();
        let j = sys.jacobian(&x).matrix;
        let h = 1e-6;
        for col in 0..3 {
            let mut e = nalgebra::Vector3::zeros();
            e[col] = h;
            let plus = sys.apply_f(&TorusPoint(x.0 + e));
            let minus = sys.apply_f(&TorusPoint(x.0 - e));
            let fd = torus_delta(&plus.0, &minus.0) / (2.0 * h);
            prop_assert!((fd - j.column(col)).amax() < 1e-4, "column {col}: fd {fd:?} vs {:?}", j.column(col));
        }
    }

    #[test]
    fn amplitude_zero_is_the_linear_map(x in point(), k in 5u32..12) {
        let lin = DASystem::new(&DASpec::linear(k, true)).unwrap();
        let mut s = DASpec::standard().with_amplitude(0.0);
        s.k = k;
        let sys = DASystem::new(&s).unwrap();
        prop_assert_eq!(sys.apply_f(&x), lin.apply_linear(&x));
    }

    #[test]
    fn exponents_sum_to_zero(s in spec(), x in point()) {
        let sys = DASystem::new(&s).unwrap();
        let e = exponents_qr(&sys, &x, 5_000, 1).unwrap();
        prop_assert!(e.lambda_u >= e.lambda_c && e.lambda_c >= e.lambda_s);
        prop_assert!(e.sum().abs() <= 5.0 * e.max_se() + 1e-9, "sum {} se {}", e.sum(), e.max_se());
    }

    #[test]
    fn set_pointer_creates_paths(key in "[a-z]{1,6}", inner in "[a-z]{1,6}", v in any::<i32>()) {
        let mut doc = serde_json::json!({});
        set_pointer(&mut doc, &format!("/{key}/{inner}"), serde_json::json!(v)).unwrap();
        prop_assert_eq!(doc.pointer(&format!("/{key}/{inner}")), Some(&serde_json::json!(v)));
    }

    #[test]
    fn uniform_window_mass_is_the_window_fraction(cells in 16usize..600, frac in 0.01..0.5f64) {
        let masses = vec![1.0 / cells as f64; cells];
        let w = frac * cells as f64;
        prop_assert!((max_window_mass(&masses, w) - frac).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn semiconjugacy_equation_holds_off_grid(x in point()) {
        let field = standard_field();
        prop_assert!(field.defect(&x) < 1e-3);
        // the strong coordinate is untouched by the perturbation
        prop_assert!(field.coefficients(&x)[EigenChart::STRONG].abs() < 1e-12);
    }

    #[test]
    fn fibers_are_equivariant(y in point()) {
        let field = standard_field();
        let sys = field.system();
        let fp = fiber_point(field, &y, 32).unwrap();
        prop_assume!(fp.resolved);
        prop_assert!(field.evaluate_h(&fp.x).distance(&y) <= fp.distance + 1e-12);
        let mut x = fp.x;
        let mut target = y;
        for _ in 0..20 {
            target = sys.apply_linear(&target);
            let next = transport_step(field, &x, &target);
            prop_assert!(field.evaluate_h(&next.x).distance(&target) < 10.0 * field.residual.max(1e-6));
            x = next.x;
        }
    }

    #[test]
    fn histograms_merge_like_concatenated_streams(split in 1usize..40_000, seed in 0u64..1000) {
        let sys = DASystem::new(&DASpec::standard()).unwrap();
        let b = default_box(&sys, 6).unwrap();
        let points: Vec<TorusPoint> = sample_orbit(&sys, None, 40_000, 10, seed).collect();
        let whole = accumulate_box(&sys, &b, points.iter().copied()).unwrap();
        let mut left = accumulate_box(&sys, &b, points[..split].iter().copied()).unwrap();
        let right = accumulate_box(&sys, &b, points[split..].iter().copied()).unwrap();
        left.merge(&right).unwrap();
        prop_assert_eq!(left, whole);
    }
}

#[test]
fn merging_different_boxes_is_rejected() {
    let sys = DASystem::new(&DASpec::standard()).unwrap();
    let a = default_box(&sys, 6).unwrap();
    let b = default_box(&sys, 4).unwrap();
    let mut ha = ConditionalHistogram::empty(&a);
    assert!(ha.merge(&ConditionalHistogram::empty(&b)).is_err());
}

#[test]
fn residual_shrinks_with_amplitude() {
    let residuals: Vec<f64> = [1.1, 0.5, 0.1]
        .iter()
        .map(|&a| solve_semiconjugacy(&DASpec::standard().with_amplitude(a), 32, 1e-4, 200).unwrap().raw_residual)
        .collect();
    assert!(residuals.windows(2).all(|w| w[1] < w[0]), "{residuals:?}");
}

#[test]
fn field_persistence_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("field.csv");
    let field = solve_semiconjugacy(&DASpec::standard().with_amplitude(0.6), 16, 1e-4, 200).unwrap();
    field.save(&path).unwrap();
    let back = DisplacementField::load(&path).unwrap();
    assert_eq!(back.values, field.values);
    assert_eq!(back.spec, field.spec);
    let x = TorusPoint::new(0.31, 0.72, 0.05);
    assert_eq!(back.evaluate_h(&x), field.evaluate_h(&x));
}

#[test]
fn twist_profile_is_the_default_bump() {
    assert_eq!(DASpec::linear(5, true).bump_profile, BumpProfile::SmoothstepTwist);
}
