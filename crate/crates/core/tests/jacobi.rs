use std::f64::consts::PI;

use geocount::geometry::{MetricSpec, Profile};
use geocount::jacobi::{
    analyze, analyze_data, build_operator, detect_lambda_jacobi, index_nullity, index_nullity_by_sectors, monodromy,
    quadratic_form_matrix, JacobiOperatorData,
};
use geocount::loops::DiscreteLoop;
use geocount::solver::{find_all, refine_to_geodesic, CensusOptions, ClosedGeodesic};
use geocount::Error;
use nalgebra::DVector;
use num_complex::Complex64;

fn equator(spec: &MetricSpec, n: usize) -> ClosedGeodesic {
    let u = DVector::from_vec(vec![1.0, 0.0, 0.0]);
    let v = DVector::from_vec(vec![0.0, 1.0, 0.0]);
    refine_to_geodesic(spec, &DiscreteLoop::great_circle(n, &u, &v).unwrap()).unwrap()
}

/// Index and nullity of `ζ'' + c ζ` on the `d`-fold cover of a loop of
/// length `l`: count Fourier modes with `c − (2πk / dl)²` positive or zero.
fn constant_oracle(c: f64, l: f64, d: usize) -> (usize, usize) {
    let mut index = 0;
    let mut nullity = 0;
    for k in -200i64..=200 {
        let ev = c - (2.0 * PI * k as f64 / (d as f64 * l)).powi(2);
        if ev.abs() < 1e-9 {
            nullity += 1;
        } else if ev > 0.0 {
            index += 1;
        }
    }
    (index, nullity)
}

#[test]
fn sphere_equator_has_unit_curvature_term() {
    let sphere = MetricSpec::round_sphere();
    let (_, data) = build_operator(&sphere, &equator(&sphere, 64)).unwrap();
    assert!(data.b.iter().all(|b| (b[(0, 0)] - 1.0).abs() < 1e-10));
    assert!((data.length - 2.0 * PI).abs() < 1e-10);
}

#[test]
fn catenoid_waist_curvature_term_is_negative_gauss_curvature() {
    let cat = MetricSpec::revolution(Profile::catenoid(1.0, (-1.0, 1.0))).unwrap();
    let geo = geocount::clairaut::parallel(&cat, 0.0, 64).unwrap();
    let (_, data) = build_operator(&cat, &geo).unwrap();
    for (x, b) in geo.loop_.nodes().iter().zip(&data.b) {
        assert!(b[(0, 0)] < 0.0);
        assert!((b[(0, 0)] - cat.gauss_curvature(x)).abs() < 1e-9);
    }
}

#[test]
fn ellipse_curvature_term_varies_around_one() {
    let spec = MetricSpec::ellipsoid(&[1.05, 1.0, 0.95]).unwrap();
    let set = find_all(&spec, 7.0, &CensusOptions::with_mesh(128)).unwrap();
    let (_, data) = build_operator(&spec, &set.geodesics[2]).unwrap();
    let vals: Vec<f64> = data.b.iter().map(|b| b[(0, 0)]).collect();
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let spread = vals.iter().cloned().fold(f64::MIN, f64::max) - vals.iter().cloned().fold(f64::MAX, f64::min);
    assert!((mean - 1.0).abs() < 0.1);
    assert!(spread > 1e-3);
}

#[test]
fn negatively_curved_model_form_is_negative_definite() {
    let data = JacobiOperatorData::constant(-1.0, 2.0 * PI, 64);
    for d in 1..=4 {
        let eig = quadratic_form_matrix(&data, d, None).unwrap().eigenvalues();
        assert!(eig[0] < 0.0);
        let r = index_nullity(&data, d).unwrap();
        assert_eq!((r.index, r.nullity), (0, 0));
    }
    let mono = monodromy(&data).unwrap();
    assert!(detect_lambda_jacobi(&data, &mono, 4).unwrap().is_empty());
}

#[test]
fn sphere_equator_index_and_nullity() {
    let sphere = MetricSpec::round_sphere();
    let report = analyze(&sphere, &equator(&sphere, 64), 2).unwrap();
    assert_eq!((report.index[&1], report.nullity[&1]), (1, 2));
    assert_eq!((report.index[&2], report.nullity[&2]), (3, 2));
    assert_eq!(report.floquet_nullity[&1], 2);
}

#[test]
fn constant_operators_match_the_fourier_oracle() {
    let l = 5.3;
    for &c in &[-0.4, 0.2, 1.7, 4.0] {
        let data = JacobiOperatorData::constant(c, l, 64);
        for d in 1..=4 {
            let r = index_nullity(&data, d).unwrap();
            assert_eq!((r.index, r.nullity), constant_oracle(c, l, d), "c = {c}, d = {d}");
        }
    }
}

#[test]
fn constant_operator_multipliers_are_rotations() {
    let (c, l) = (0.7, 3.1);
    let mono = monodromy(&JacobiOperatorData::constant(c, l, 64)).unwrap();
    let angle = c.sqrt() * l;
    for mu in &mono.multipliers {
        assert!((mu.norm() - 1.0).abs() < 1e-8);
        assert!((mu.arg().abs() - angle).abs() < 1e-8);
    }
    let tr = mono.matrix[(0, 0)] + mono.matrix[(1, 1)];
    assert!((tr - 2.0 * angle.cos()).abs() < 1e-8);
}

#[test]
fn sectors_reproduce_the_cover_index() {
    let samples: Vec<f64> = (0..64).map(|j| 0.8 + 0.5 * (2.0 * PI * j as f64 / 64.0).cos()).collect();
    let data = JacobiOperatorData::scalar(&samples, 4.0);
    for d in 1..=4 {
        let direct = index_nullity(&data, d).unwrap();
        let sectors = index_nullity_by_sectors(&data, d).unwrap();
        assert_eq!(direct.index, sectors.index);
        assert_eq!(direct.sector_index_sum, direct.index);
    }
}

#[test]
fn non_root_of_unity_sector_is_rejected() {
    let data = JacobiOperatorData::constant(1.0, 2.0 * PI, 16);
    let lam = Complex64::from_polar(1.0, 0.3);
    assert!(matches!(quadratic_form_matrix(&data, 2, Some(lam)), Err(Error::Argument(_))));
}

#[test]
fn equator_kernel_is_spanned_by_two_periodic_fields() {
    let sphere = MetricSpec::round_sphere();
    let (_, data) = build_operator(&sphere, &equator(&sphere, 64)).unwrap();
    let mono = monodromy(&data).unwrap();
    let fields = detect_lambda_jacobi(&data, &mono, 1).unwrap();
    assert_eq!(fields.len(), 2);
    for f in &fields {
        assert!((f.lambda - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        assert!(f.residual < 1e-6);
        assert!(!f.generalized);
    }
}

#[test]
fn flat_operator_has_a_generalized_kernel() {
    let data = JacobiOperatorData::constant(0.0, 3.0, 32);
    let r = analyze_data(&data, 2).unwrap();
    assert_eq!(r.nullity[&1], 1);
    assert!(r.lambda_jacobi.iter().any(|f| f.generalized));
}

#[test]
fn ellipsoid_indices_follow_the_axis_ordering() {
    let spec = MetricSpec::ellipsoid(&[1.05, 1.0, 0.95]).unwrap();
    let set = find_all(&spec, 7.0, &CensusOptions::with_mesh(128)).unwrap();
    for (k, expect) in [(0, 1), (2, 2), (4, 3)] {
        let r = analyze(&spec, &set.geodesics[k], 2).unwrap();
        assert_eq!(r.index[&1], expect);
        assert_eq!(r.nullity[&1], 0);
        let rev = analyze(&spec, &set.geodesics[k].reversed(), 2).unwrap();
        assert_eq!(rev.index, r.index);
    }
}
