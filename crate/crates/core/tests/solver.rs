use std::f64::consts::PI;

use geocount::geometry::{MetricSpec, Profile};
use geocount::loops::DiscreteLoop;
use geocount::solver::{find_all, refine_to_geodesic, refine_with, CensusOptions, NewtonOptions};
use geocount::Error;
use nalgebra::DVector;

/// Perimeter of an ellipse by the periodic trapezoid rule.
fn ellipse_perimeter(a: f64, b: f64) -> f64 {
    let n = 4096;
    (0..n)
        .map(|k| {
            let t = 2.0 * PI * k as f64 / n as f64;
            (a * a * t.sin().powi(2) + b * b * t.cos().powi(2)).sqrt()
        })
        .sum::<f64>()
        * 2.0
        * PI
        / n as f64
}

fn ellipsoid() -> MetricSpec {
    MetricSpec::ellipsoid(&[1.05, 1.0, 0.95]).unwrap()
}

fn circle(n: usize, u: [f64; 3], v: [f64; 3], r: f64) -> DiscreteLoop {
    DiscreteLoop::great_circle(n, &(DVector::from_row_slice(&u) * r), &(DVector::from_row_slice(&v) * r)).unwrap()
}

#[test]
fn exact_equator_converges_immediately() {
    let sphere = MetricSpec::round_sphere();
    let (geo, out) = refine_with(&sphere, &circle(64, [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], 1.0), &NewtonOptions::default()).unwrap();
    assert!(out.iterations <= 2);
    assert!((geo.length - 2.0 * PI).abs() < 1e-9);
}

#[test]
fn ellipsoid_seed_converges_to_the_principal_ellipse() {
    let spec = ellipsoid();
    let geo = refine_to_geodesic(&spec, &circle(128, [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], 1.0)).unwrap();
    let expect = ellipse_perimeter(1.0 / 1.0, 1.0 / 0.95);
    assert!((geo.length - expect).abs() < 1e-9, "{} vs {expect}", geo.length);
    assert!(geo.loop_.nodes().iter().all(|x| x[0].abs() < 1e-10));
    assert_eq!(geo.cover_degree, 1);
}

#[test]
fn newton_converges_quadratically() {
    let spec = ellipsoid();
    let seed = circle(64, [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], 1.0);
    let opts = NewtonOptions { damped_iterations: 0, ..NewtonOptions::default() };
    let (_, out) = refine_with(&spec, &seed, &opts).unwrap();
    let h = &out.history;
    // Once below 1e-3 each residual is at most a constant times the square of the previous.
    for w in h.windows(2).filter(|w| w[0] < 1e-3 && w[1] > 1e-13) {
        assert!(w[1] < 10.0 * w[0] * w[0], "{:?}", h);
    }
}

#[test]
fn small_loop_collapses() {
    let sphere = MetricSpec::round_sphere();
    let r = 0.1 / (2.0 * PI);
    let h = (1.0 - r * r).sqrt();
    let lp = DiscreteLoop::from_fn(32, |t| {
        let a = 2.0 * PI * t;
        DVector::from_vec(vec![r * a.cos(), r * a.sin(), h])
    })
    .unwrap();
    assert!(matches!(refine_to_geodesic(&sphere, &lp), Err(Error::Collapse { .. })));
}

#[test]
fn ellipsoid_census_has_exactly_the_principal_ellipses() {
    let set = find_all(&ellipsoid(), 7.0, &CensusOptions::with_mesh(128)).unwrap();
    assert_eq!(set.len(), 6);
    let semi = [1.0 / 1.05, 1.0, 1.0 / 0.95];
    let mut expect = vec![
        ellipse_perimeter(semi[0], semi[1]),
        ellipse_perimeter(semi[0], semi[2]),
        ellipse_perimeter(semi[1], semi[2]),
    ];
    expect.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for (k, g) in set.geodesics.iter().enumerate() {
        assert!((g.length - expect[k / 2]).abs() < 1e-8, "{} vs {}", g.length, expect[k / 2]);
        assert_eq!(g.cover_degree, 1);
        assert_eq!(set.partners[k], Some(k ^ 1));
    }
    assert!(!set.certificate.degenerate_family);
    assert!(set.certificate.warnings.is_empty());
}

#[test]
fn round_sphere_is_flagged_as_a_continuum() {
    let set = find_all(&MetricSpec::round_sphere(), 7.0, &CensusOptions::with_mesh(128)).unwrap();
    assert!(set.certificate.degenerate_family);
    assert!(set.geodesics.iter().all(|g| (g.length - 2.0 * PI).abs() < 1e-8));
}

#[test]
fn flat_cylinder_is_flagged_as_a_continuum() {
    let cyl = MetricSpec::revolution(Profile::radius_poly(vec![1.0], (-1.0, 1.0))).unwrap();
    let set = find_all(&cyl, 7.0, &CensusOptions::with_mesh(128)).unwrap();
    assert!(set.certificate.degenerate_family);
    assert!(set.geodesics.iter().all(|g| (g.length - 2.0 * PI).abs() < 1e-8));
}

#[test]
fn short_bound_gives_an_empty_census() {
    let set = find_all(&ellipsoid(), 0.5, &CensusOptions::with_mesh(128)).unwrap();
    assert!(set.is_empty());
    assert_eq!(set.to_csv(), "id,d,length,residual,partner\n");
}

#[test]
fn census_is_deterministic() {
    let a = find_all(&ellipsoid(), 7.0, &CensusOptions::with_mesh(128)).unwrap();
    let b = find_all(&ellipsoid(), 7.0, &CensusOptions::with_mesh(128)).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
}

#[test]
fn covers_enter_the_census_below_the_bound() {
    let set = find_all(&ellipsoid(), 13.0, &CensusOptions::with_mesh(128)).unwrap();
    let doubles: Vec<_> = set.geodesics.iter().filter(|g| g.cover_degree == 2).collect();
    assert_eq!(doubles.len(), 6);
    for (i, g) in set.geodesics.iter().enumerate() {
        let p = &set.geodesics[set.primitive_ids[i]];
        assert!((g.length - g.cover_degree as f64 * p.length).abs() < 1e-8);
    }
}
