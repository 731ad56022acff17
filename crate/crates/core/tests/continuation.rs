use geocount::clairaut::parallel;
use geocount::continuation::{
    continue_branch, detect_events, fit_normal_form, metric_deformation_pairing, sweep, trace_csv, verify_invariance,
    EventKind, Side, StepControl,
};
use geocount::geometry::{MetricPath, MetricSpec, Profile};
use geocount::loops::DiscreteLoop;
use geocount::solver::{find_all, refine_to_geodesic, CensusOptions, ClosedGeodesic};
use geocount::weights::GammaSpec;
use geocount::Error;
use nalgebra::DVector;

fn conformal(alpha: f64) -> MetricSpec {
    let mut c = vec![0.0; 15];
    c[7] = alpha;
    c[8] = 0.03;
    MetricSpec::conformal_sphere(&c).unwrap()
}

fn doubling_path() -> MetricPath {
    MetricPath::new(conformal(-0.17), conformal(-0.21)).unwrap()
}

fn equator(spec: &MetricSpec, n: usize) -> ClosedGeodesic {
    let u = DVector::from_vec(vec![1.0, 0.0, 0.0]);
    let v = DVector::from_vec(vec![0.0, 1.0, 0.0]);
    refine_to_geodesic(spec, &DiscreteLoop::great_circle(n, &u, &v).unwrap()).unwrap()
}

fn cubic(t: f64) -> MetricSpec {
    MetricSpec::revolution(Profile::radius_poly(vec![1.0, -0.05 * t, 0.0, 0.05 / 3.0], (-1.0, 1.0))).unwrap()
}

fn fold_path() -> MetricPath {
    MetricPath::new(cubic(0.1), cubic(-0.1)).unwrap()
}

#[test]
fn constant_path_keeps_the_geodesic() {
    let spec = MetricSpec::ellipsoid(&[1.05, 1.0, 0.95]).unwrap();
    let path = MetricPath::constant(spec.clone());
    let set = find_all(&spec, 7.0, &CensusOptions::with_mesh(64)).unwrap();
    let branch = continue_branch(&path, &set.geodesics[0], 0.0, &StepControl::default()).unwrap();
    let first = &branch.samples[0].geodesic;
    for smp in &branch.samples {
        assert!(smp.geodesic.loop_.rotation_distance(&first.loop_).0 < 1e-9);
        assert_eq!(smp.index, branch.samples[0].index);
    }
    assert_eq!(branch.samples.last().unwrap().s, 1.0);
    let (events, _) = detect_events(&path, &branch, &StepControl::default()).unwrap();
    assert!(events.is_empty());
    let pairing = metric_deformation_pairing(&path, 0.5, first, EventKind::Fold).unwrap();
    assert_eq!(pairing, 0.0);
}

#[test]
fn principal_ellipses_keep_their_indices_along_an_axis_path() {
    let a = MetricSpec::ellipsoid(&[1.05, 1.0, 0.95]).unwrap();
    let b = MetricSpec::ellipsoid(&[1.06, 1.0, 0.94]).unwrap();
    let path = MetricPath::new(a.clone(), b).unwrap();
    let set = find_all(&a, 7.0, &CensusOptions::with_mesh(64)).unwrap();
    for k in [0, 2, 4] {
        let branch = continue_branch(&path, &set.geodesics[k], 0.0, &StepControl::default()).unwrap();
        let idx = branch.samples[0].index;
        assert_eq!(idx.0, k / 2 + 1);
        for smp in &branch.samples {
            assert_eq!(smp.index, idx);
            assert_eq!(smp.nullity, (0, 0));
        }
        let (events, _) = detect_events(&path, &branch, &StepControl::default()).unwrap();
        assert!(events.is_empty());
    }
}

fn doubling_event(n: usize) -> (geocount::continuation::BifurcationEvent, geocount::continuation::Branch) {
    let path = doubling_path();
    let start = equator(&path.at(0.0).unwrap(), n);
    let branch = continue_branch(&path, &start, 0.0, &StepControl::default()).unwrap();
    let (mut events, mut spawned) = detect_events(&path, &branch, &StepControl::default()).unwrap();
    assert_eq!(events.len(), 1);
    assert_eq!(spawned.len(), 1);
    (events.remove(0), spawned.remove(0))
}

#[test]
fn period_doubling_on_the_conformal_equator() {
    let (e, doubled) = doubling_event(128);
    assert_eq!(e.kind, EventKind::PeriodDoubling);
    assert_eq!(e.lambda, -1.0);
    assert!((e.t - 0.4909).abs() < 1e-3);
    assert_eq!(e.nullity_at_event.1 - e.nullity_at_event.0, 1);
    // The primitive keeps ε₁ while ε₂ flips.
    assert_eq!(e.epsilon_before.0, e.epsilon_after.0);
    assert_eq!(e.epsilon_before.1, -e.epsilon_after.1);
    assert!(e.pattern_ok);
    assert_eq!(e.local_sum.0, e.local_sum.1);
    assert!(e.pairing.abs() > 1e-6);

    // The doubled branch exists on one side only, and the fit agrees.
    let side = e.side.unwrap();
    let fit = e.normal_form.as_ref().unwrap();
    assert_eq!(fit.side, side);
    assert!(!fit.low_confidence);
    assert_eq!(fit.sign_g, if (fit.ratio > 0.0) == (fit.sign_f > 0) { 1 } else { -1 });
    let on_side = |s: f64| if s > e.t { Side::Right } else { Side::Left };
    assert!(e.spawn.iter().any(|r| r.converged));
    assert!(e.spawn.iter().filter(|r| r.converged).all(|r| on_side(r.s) == side));
    assert!(doubled.samples.len() >= 5);
    for smp in &doubled.samples {
        assert_eq!(on_side(smp.s), side);
        assert!((smp.geodesic.length - 2.0 * e.geodesic.length).abs() < 1e-2);
    }

    let (fine, _) = doubling_event(256);
    assert!((e.t - fine.t).abs() < 1e-5, "{} vs {}", e.t, fine.t);
    assert_eq!(e.pairing.signum(), fine.pairing.signum());
}

#[test]
fn fold_of_two_parallels() {
    let path = fold_path();
    let start = parallel(&path.at(0.0).unwrap(), -(0.1f64).sqrt(), 128).unwrap();
    let branch = continue_branch(&path, &start, 0.0, &StepControl::default()).unwrap();
    assert!(branch.samples.iter().any(|s| s.turning));
    let last = branch.samples.last().unwrap();
    assert_eq!(last.s, 0.0);
    let (events, spawned) = detect_events(&path, &branch, &StepControl::default()).unwrap();
    assert!(spawned.is_empty());
    assert_eq!(events.len(), 1);
    let e = &events[0];
    assert_eq!(e.kind, EventKind::Fold);
    assert!((e.t - 0.5).abs() < 1e-7);
    assert_eq!(e.nullity_at_event.0, 1);
    let plus = e.epsilon_before;
    let minus = e.partner_epsilon.unwrap();
    assert_eq!((plus.0, plus.1), (-minus.0, -minus.1));
    assert_eq!(e.local_sum, (0, 0));
    assert!(e.pattern_ok);
    assert!(e.pairing.abs() > 1e-6);
    let csv = trace_csv(&[branch], &events);
    assert!(csv.starts_with("branch,role,s,length"));
    assert!(csv.contains(",fold\n"));
}

#[test]
fn mirror_folds_are_an_unresolved_cluster() {
    let even = |c2: f64| {
        let coeffs = vec![0.9998697916666667, 0.0, c2, 0.0, -0.00625, 0.0, 0.008333333333333333];
        MetricSpec::revolution(Profile::radius_poly(coeffs, (-1.0, 1.0))).unwrap()
    };
    let path = MetricPath::new(even(0.0013125), even(0.0018125)).unwrap();
    let set = find_all(&path.at(0.0).unwrap(), 6.4, &CensusOptions::with_mesh(128)).unwrap();
    let starts: Vec<ClosedGeodesic> = (0..set.len())
        .filter(|&i| set.geodesics[i].cover_degree == 1 && set.partners[i].is_none_or(|p| p > i))
        .map(|i| set.geodesics[i].clone())
        .collect();
    assert!(matches!(sweep(&path, &starts, &StepControl::default()), Err(Error::UnresolvedCluster(_))));
}

#[test]
fn pinching_waist_stalls() {
    let waist = |w: f64| MetricSpec::revolution(Profile::radius_poly(vec![w, 0.0, 1.0], (-1.0, 1.0))).unwrap();
    let path = MetricPath::new(waist(1.0), waist(1e-4)).unwrap();
    let start = parallel(&path.at(0.0).unwrap(), 0.0, 64).unwrap();
    assert!(matches!(continue_branch(&path, &start, 0.0, &StepControl::default()), Err(Error::Stall { .. })));
}

#[test]
fn normal_form_fit_recovers_synthetic_signs() {
    let t = 0.3;
    // F = r((s − t) f − r² g): nonzero branch r² = (s − t) f / g.
    let branch = |f: f64, g: f64| -> Vec<(f64, f64)> {
        (1..=7)
            .map(|k| {
                let s = t + (f / g).signum() * 1e-3 * k as f64;
                (s, ((s - t) * f / g).sqrt())
            })
            .collect()
    };
    let fit = fit_normal_form(t, &branch(1.0, 1.0), 1).unwrap();
    assert_eq!((fit.sign_f, fit.sign_g, fit.side), (1, 1, Side::Right));
    assert!(fit.residual < 1e-12);
    let fit = fit_normal_form(t, &branch(1.0, -1.0), 1).unwrap();
    assert_eq!((fit.sign_f, fit.sign_g, fit.side), (1, -1, Side::Left));
    assert!(fit_normal_form(t, &branch(1.0, 1.0)[..3], 1).is_err());
    let noisy: Vec<(f64, f64)> = branch(1.0, 1.0).iter().enumerate().map(|(k, &(s, r))| (s, r * if k % 2 == 0 { 1.3 } else { 0.7 })).collect();
    assert!(fit_normal_form(t, &noisy, 1).unwrap().low_confidence);
}

#[test]
fn ellipsoid_path_keeps_the_window_weight() {
    let a = MetricSpec::ellipsoid(&[1.05, 1.0, 0.95]).unwrap();
    let b = MetricSpec::ellipsoid(&[1.06, 1.0, 0.94]).unwrap();
    let path = MetricPath::new(a, b).unwrap();
    let report =
        verify_invariance(&path, &GammaSpec::Window(0.0, 7.0), &[0.0, 0.5, 1.0], &CensusOptions::with_mesh(128)).unwrap();
    assert!(report.constant);
    assert!(report.values.iter().all(|(_, v)| *v == Some(-2)));
}
