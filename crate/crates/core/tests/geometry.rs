use std::f64::consts::PI;

use geocount::geometry::{parallel_transport, MetricPath, MetricSpec, Profile};
use geocount::loops::DiscreteLoop;
use geocount::Error;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ellipsoid() -> MetricSpec {
    MetricSpec::ellipsoid(&[1.05, 1.0, 0.95]).unwrap()
}

fn random_chart_points(n: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| [rng.gen_range(0.2..PI - 0.2), rng.gen_range(-PI..PI)]).collect()
}

/// Central differences of the chart metric, the oracle for Γ.
fn christoffel_by_differences(spec: &MetricSpec, p: [f64; 2]) -> [[[f64; 2]; 2]; 2] {
    let h = 1e-5;
    let dg: Vec<_> = (0..2)
        .map(|k| {
            let mut a = p;
            let mut b = p;
            a[k] += h;
            b[k] -= h;
            (spec.metric_at(a).unwrap() - spec.metric_at(b).unwrap()) / (2.0 * h)
        })
        .collect();
    let ginv = spec.metric_at(p).unwrap().try_inverse().unwrap();
    let mut out = [[[0.0; 2]; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                out[i][j][k] = (0..2)
                    .map(|l| 0.5 * ginv[(i, l)] * (dg[j][(l, k)] + dg[k][(l, j)] - dg[l][(j, k)]))
                    .sum();
            }
        }
    }
    out
}

#[test]
fn round_sphere_metric_at_equator_is_identity() {
    let g = MetricSpec::round_sphere().metric_at([PI / 2.0, 0.0]).unwrap();
    assert!((g - nalgebra::Matrix2::identity()).amax() < 1e-14);
}

#[test]
fn ellipsoid_metric_is_positive_definite() {
    let spec = ellipsoid();
    for p in random_chart_points(50, 1) {
        assert!(spec.metric_at(p).unwrap().cholesky().is_some());
    }
}

#[test]
fn zero_conformal_factor_is_the_round_sphere() {
    let conf = MetricSpec::conformal_sphere(&[0.0; 15]).unwrap();
    let round = MetricSpec::round_sphere();
    for p in random_chart_points(10, 2) {
        let d = conf.metric_at(p).unwrap() - round.metric_at(p).unwrap();
        assert!(d.amax() < 1e-12);
    }
}

#[test]
fn evaluation_is_bit_identical() {
    let spec = ellipsoid();
    let p = [1.1, 0.3];
    let a = spec.curvature_at(p).unwrap();
    let b = spec.curvature_at(p).unwrap();
    assert_eq!(a.riemann, b.riemann);
    assert_eq!(a.gauss.to_bits(), b.gauss.to_bits());
}

#[test]
fn points_outside_the_chart_are_rejected() {
    let spec = MetricSpec::revolution(Profile::catenoid(1.0, (-1.0, 1.0))).unwrap();
    assert!(matches!(spec.metric_at([1.5, 0.0]), Err(Error::Domain { .. })));
    assert!(matches!(MetricSpec::round_sphere().metric_at([-0.1, 0.0]), Err(Error::Domain { .. })));
}

#[test]
fn cylinder_christoffel_symbols_vanish() {
    let cyl = MetricSpec::revolution(Profile::radius_poly(vec![1.0], (-1.0, 1.0))).unwrap();
    for &(z, phi) in &[(0.0, 0.0), (0.5, 1.0), (-0.7, -2.0)] {
        let gamma = cyl.christoffel_at([z, phi]).unwrap().gamma;
        for v in gamma.iter().flatten().flatten() {
            assert!(v.abs() < 1e-10);
        }
    }
}

#[test]
fn christoffel_symbols_match_finite_differences() {
    let round = MetricSpec::round_sphere();
    let theta0 = 0.8;
    let exact = round.christoffel_at([theta0, 0.4]).unwrap().gamma;
    // Γ^θ_{φφ} = −sin θ cos θ on the unit sphere.
    assert!((exact[0][1][1] + theta0.sin() * theta0.cos()).abs() < 1e-12);
    for (spec, seed) in [(round, 3), (ellipsoid(), 4)] {
        for p in random_chart_points(5, seed) {
            let exact = spec.christoffel_at(p).unwrap().gamma;
            let fd = christoffel_by_differences(&spec, p);
            for i in 0..2 {
                for j in 0..2 {
                    for k in 0..2 {
                        let scale = exact[i][j][k].abs().max(1.0);
                        assert!((exact[i][j][k] - fd[i][j][k]).abs() < 1e-6 * scale);
                    }
                }
            }
        }
    }
}

#[test]
fn near_boundary_points_are_flagged() {
    let sample = MetricSpec::round_sphere().christoffel_at([1e-4, 0.0]).unwrap();
    assert!(sample.near_boundary);
    assert!(!MetricSpec::round_sphere().christoffel_at([1.0, 0.0]).unwrap().near_boundary);
}

#[test]
fn round_sphere_has_unit_curvature() {
    let spec = MetricSpec::round_sphere();
    for p in random_chart_points(20, 5) {
        assert!((spec.curvature_at(p).unwrap().gauss - 1.0).abs() < 1e-8);
    }
}

#[test]
fn catenoid_curvature_matches_the_profile_formula() {
    let spec = MetricSpec::revolution(Profile::catenoid(1.0, (-1.5, 1.5))).unwrap();
    for &z in &[-1.0f64, -0.3, 0.0, 0.6, 1.2] {
        // K = −r'' / (r (1 + r'²)²) for r = cosh z.
        let expect = -1.0 / z.cosh().powi(4);
        let k = spec.curvature_at([z, 0.7]).unwrap().gauss;
        assert!(k < 0.0);
        assert!((k - expect).abs() < 1e-7, "{k} vs {expect}");
        let x = spec.embed([z, 0.7]).unwrap();
        assert!((spec.gauss_curvature(&x) - expect).abs() < 1e-10);
    }
}

#[test]
fn ellipsoid_curvature_is_positive() {
    let spec = ellipsoid();
    for p in random_chart_points(100, 6) {
        let chart = spec.curvature_at(p).unwrap().gauss;
        let x = spec.embed(p).unwrap();
        assert!(chart > 0.0);
        assert!((chart - spec.gauss_curvature(&x)).abs() < 1e-7);
    }
}

fn latitude(theta0: f64, n: usize) -> DiscreteLoop {
    DiscreteLoop::from_fn(n, |t| {
        let phi = 2.0 * PI * t;
        DVector::from_vec(vec![theta0.sin() * phi.cos(), theta0.sin() * phi.sin(), theta0.cos()])
    })
    .unwrap()
}

#[test]
fn equator_transport_has_trivial_normal_holonomy() {
    let lp = latitude(PI / 2.0, 128);
    let normal = DVector::from_vec(vec![0.0, 0.0, 1.0]);
    let tr = parallel_transport(&MetricSpec::round_sphere(), &lp, &normal).unwrap();
    let k = tr.holonomy.nrows();
    assert!((&tr.holonomy - nalgebra::DMatrix::identity(k, k)).amax() < 1e-8);
    assert!(tr.angle.unwrap().abs() < 1e-8);
}

#[test]
fn flat_cylinder_loop_has_trivial_holonomy() {
    let cyl = MetricSpec::revolution(Profile::radius_poly(vec![1.0], (-1.0, 1.0))).unwrap();
    let lp = DiscreteLoop::from_fn(64, |t| {
        let phi = 2.0 * PI * t;
        DVector::from_vec(vec![phi.cos(), phi.sin(), 0.3 * phi.sin()])
    })
    .unwrap()
    .nodes()
    .iter()
    .map(|x| cyl.project(x))
    .collect::<Vec<_>>();
    let lp = DiscreteLoop::new(lp).unwrap();
    let v0 = cyl.tangent_basis(&lp.node(0)).column(0).into_owned();
    let tr = parallel_transport(&cyl, &lp, &v0).unwrap();
    assert!(tr.angle.unwrap().abs() < 1e-8);
}

#[test]
fn latitude_holonomy_matches_enclosed_area() {
    let theta0 = PI / 4.0;
    let expect = 2.0 * PI * (1.0 - theta0.cos());
    for n in [128, 256] {
        let lp = latitude(theta0, n);
        let v0 = DVector::from_vec(vec![0.0, 1.0, 0.0]);
        let tr = parallel_transport(&MetricSpec::round_sphere(), &lp, &v0).unwrap();
        let angle = tr.angle.unwrap().abs();
        assert!((angle - expect).abs() < 1e-6, "n = {n}: {angle} vs {expect}");
    }
}

#[test]
fn metric_path_is_exact_at_the_ends() {
    let a = ellipsoid();
    let b = MetricSpec::ellipsoid(&[1.06, 1.0, 0.94]).unwrap();
    let path = MetricPath::new(a.clone(), b.clone()).unwrap();
    assert_eq!(path.at(0.0).unwrap(), a);
    assert_eq!(path.at(1.0).unwrap(), b);
    assert!(MetricPath::new(a, MetricSpec::conformal_sphere(&[0.0; 15]).unwrap()).is_err());
}
