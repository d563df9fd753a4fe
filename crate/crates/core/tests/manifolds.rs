use cdpkit::dissolve::{a_infinity, feasibility_decrease_slope, project, SLOPE_OFFSETS};
use cdpkit::manifolds::{projected_probes, Family};
use cdpkit::model::{validate_manifold, Manifold};
use cdpkit::util::{gaussian, seeded_rng, unit_gaussian};
use cdpkit::{make_handle, Error, Vector};
use proptest::prelude::*;

fn small_families() -> Vec<Family> {
    vec![
        Family::Oblique { m: 6, q: 3 },
        Family::Sphere { n: 7 },
        Family::SymplecticStiefel { m: 6, q: 2 },
        Family::GenericSphere { n: 7 },
    ]
}

fn family_strategy() -> impl Strategy<Value = Family> {
    prop_oneof![
        (1usize..8, 1usize..5).prop_map(|(m, q)| Family::Oblique { m, q }),
        (1usize..12).prop_map(|n| Family::Sphere { n }),
        (1usize..4, 1usize..3)
            .prop_filter("q <= m", |(m, q)| q <= m)
            .prop_map(|(m, q)| Family::SymplecticStiefel { m: 2 * m, q: 2 * q }),
        (1usize..12).prop_map(|n| Family::GenericSphere { n }),
    ]
}

fn jacobian_annihilates_normals(h: &dyn Manifold, x: &Vector) -> f64 {
    let p = h.num_constraints();
    (0..p)
        .map(|l| {
            let mut e = Vector::zeros(p);
            e[l] = 1.0;
            h.ja(x, &h.jc(x, &e)).unwrap().norm()
        })
        .fold(0.0, f64::max)
}

#[test]
fn canonical_points_are_fixed() {
    for fam in small_families() {
        let h = make_handle(fam).unwrap();
        let x = h.canonical_point();
        assert!(h.constraint(&x).norm() < 1e-12, "{}", fam.name());
        assert!(
            (h.dissolve(&x).unwrap() - &x).amax() < 1e-12,
            "{}",
            fam.name()
        );
        assert!(
            jacobian_annihilates_normals(h.as_ref(), &x) < 1e-10,
            "{}",
            fam.name()
        );
    }
}

#[test]
fn validation_passes_on_projected_probes() {
    for fam in small_families() {
        let h = make_handle(fam).unwrap();
        let probes = projected_probes(h.as_ref(), 20, 0.3, 3).unwrap();
        let r = validate_manifold(h.as_ref(), &probes, 1e-8).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.derivative_error < 1e-6, "{r:?}");
    }
}

#[test]
fn validation_reports_dimension_mismatch() {
    let h = make_handle(Family::Sphere { n: 3 }).unwrap();
    let err = validate_manifold(h.as_ref(), &[Vector::zeros(4)], 1e-8).unwrap_err();
    assert!(matches!(err, Error::Dimension { .. }), "{err}");
}

#[test]
fn validation_rejects_nonfinite_probe() {
    let h = make_handle(Family::Sphere { n: 3 }).unwrap();
    let err =
        validate_manifold(h.as_ref(), &[Vector::from_element(3, f64::NAN)], 1e-8).unwrap_err();
    assert!(matches!(err, Error::EvaluatorFault { .. }), "{err}");
}

#[test]
fn zero_sizes_are_rejected() {
    assert!(make_handle(Family::Oblique { m: 0, q: 3 }).is_err());
    assert!(make_handle(Family::Sphere { n: 0 }).is_err());
    assert!(make_handle(Family::SymplecticStiefel { m: 3, q: 2 }).is_err());
    assert!(make_handle(Family::SymplecticStiefel { m: 2, q: 4 }).is_err());
}

#[test]
fn family_names_round_trip() {
    for fam in small_families() {
        let (m, q, n) = match fam {
            Family::Oblique { m, q } | Family::SymplecticStiefel { m, q } => {
                (Some(m), Some(q), None)
            }
            Family::Sphere { n } | Family::GenericSphere { n } => (None, None, Some(n)),
        };
        assert_eq!(Family::from_name(fam.name(), m, q, n).unwrap(), fam);
    }
    assert!(Family::from_name("torus", None, None, Some(3)).is_err());
}

#[test]
fn oblique_rows_are_independent_spheres() {
    let (m, q) = (5, 3);
    let ob = make_handle(Family::Oblique { m, q }).unwrap();
    let sp = make_handle(Family::Sphere { n: q }).unwrap();
    let y = gaussian(&mut seeded_rng(2), m * q);
    let ay = ob.dissolve(&y).unwrap();
    for i in 0..m {
        let row = Vector::from_column_slice(&y.as_slice()[i * q..(i + 1) * q]);
        let expected = sp.dissolve(&row).unwrap();
        for j in 0..q {
            approx::assert_relative_eq!(ay[i * q + j], expected[j], epsilon = 1e-15);
        }
    }
}

#[test]
fn sphere_operator_matches_closed_form() {
    let h = make_handle(Family::Sphere { n: 4 }).unwrap();
    let y = Vector::from_vec(vec![0.3, -1.2, 0.5, 2.0]);
    let s = y.norm_squared();
    let expected = 2.0 * &y / (s + 1.0);
    assert!((h.dissolve(&y).unwrap() - expected).amax() < 1e-15);
}

#[test]
fn projection_far_from_manifold_fails_cleanly() {
    let h = make_handle(Family::SymplecticStiefel { m: 4, q: 2 }).unwrap();
    let err = a_infinity(h.as_ref(), &Vector::zeros(8), 1e-12, 50).unwrap_err();
    assert!(
        matches!(
            err,
            Error::OutOfNeighborhood { .. } | Error::NearRankDeficient { .. }
        ),
        "{err}"
    );
}

#[test]
fn slope_fit_needs_two_residuals() {
    let h = make_handle(Family::Sphere { n: 3 }).unwrap();
    let x = h.canonical_point();
    let w = Vector::from_vec(vec![0.0, 1.0, 0.0]);
    assert!(feasibility_decrease_slope(h.as_ref(), &x, &w, &[1e-2]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn operator_axioms_hold(fam in family_strategy(), seed in 0u64..1000) {
        let h = make_handle(fam).unwrap();
        let x = projected_probes(h.as_ref(), 1, 0.2, seed).unwrap().remove(0);
        prop_assert!(h.constraint(&x).norm() <= 1e-12);
        prop_assert!((h.dissolve(&x).unwrap() - &x).amax() <= 1e-10);
        prop_assert!(jacobian_annihilates_normals(h.as_ref(), &x) <= 1e-8);
    }

    #[test]
    fn feasibility_decrease_is_quadratic(fam in family_strategy(), seed in 0u64..1000) {
        let h = make_handle(fam).unwrap();
        let x = projected_probes(h.as_ref(), 1, 0.2, seed).unwrap().remove(0);
        let w = unit_gaussian(&mut seeded_rng(seed + 1), x.len());
        let fit = feasibility_decrease_slope(h.as_ref(), &x, &w, &SLOPE_OFFSETS[1..]).unwrap();
        let residuals: Vec<f64> = fit.points.iter().map(|p| p.c_after).collect();
        // Exactly representable cases make the decrease vanish below roundoff.
        if residuals.iter().all(|r| *r > 1e-13) {
            prop_assert!((1.8..=2.2).contains(&fit.slope), "slope {}", fit.slope);
        }
        for p in &fit.points {
            prop_assert!(p.c_after <= p.c_norm, "{p:?}");
            prop_assert!(p.step_ratio < 10.0, "{p:?}");
        }
    }

    #[test]
    fn projection_is_idempotent(fam in family_strategy(), seed in 0u64..1000) {
        let h = make_handle(fam).unwrap();
        let x = projected_probes(h.as_ref(), 1, 0.2, seed).unwrap().remove(0);
        let y = &x + 0.01 * unit_gaussian(&mut seeded_rng(seed), x.len());
        let p1 = project(h.as_ref(), &y).unwrap();
        let p2 = project(h.as_ref(), &p1).unwrap();
        prop_assert!((&p1 - &p2).amax() <= 1e-12);
        // Distance to the projection is comparable to the residual.
        let c = h.constraint(&y).norm();
        let d = (&p1 - &y).norm();
        prop_assert!(d <= 10.0 * c + 1e-14, "d {d} c {c}");
    }

    #[test]
    fn pullback_is_adjoint_of_forward(fam in family_strategy(), seed in 0u64..1000) {
        let h = make_handle(fam).unwrap();
        let mut rng = seeded_rng(seed);
        let x = h.canonical_point() + 0.05 * gaussian(&mut rng, h.dim());
        let (d, e) = (gaussian(&mut rng, h.dim()), gaussian(&mut rng, h.dim()));
        let lhs = h.ja(&x, &d).unwrap().dot(&e);
        let rhs = d.dot(&h.ja_t(&x, &e).unwrap());
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
        let w = gaussian(&mut rng, h.num_constraints());
        let lhs = h.jc(&x, &w).dot(&e);
        let rhs = w.dot(&h.jc_t(&x, &e));
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }
}
