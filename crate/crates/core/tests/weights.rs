use std::f64::consts::PI;

use geocount::geometry::{MetricSpec, Profile};
use geocount::jacobi::{analyze, analyze_data, JacobiOperatorData};
use geocount::loops::DiscreteLoop;
use geocount::solver::{find_all, refine_to_geodesic, CensusOptions, GeodesicSet};
use geocount::weights::{
    count_function, degenerate_weight, n_d, set_weight, weigh, weight, CountRow, CountTable, GammaSpec, Perturbation,
    PerturbationStrategy,
};
use geocount::Error;
use nalgebra::DVector;

fn ellipsoid_census() -> GeodesicSet {
    let spec = MetricSpec::ellipsoid(&[1.05, 1.0, 0.95]).unwrap();
    find_all(&spec, 7.0, &CensusOptions::with_mesh(128)).unwrap()
}

#[test]
fn weight_formula_table() {
    for (e1, e2) in [(1, 1), (1, -1), (-1, 1), (-1, -1)] {
        assert_eq!(n_d(1, e1, e2), e1);
        assert_eq!(n_d(2, e1, e2), (e2 - e1) / 2);
        assert_eq!(n_d(3, e1, e2), 0);
        assert_eq!(n_d(4, e1, e2), 0);
    }
    assert_eq!(n_d(2, 1, 1), 0);
    assert_eq!(n_d(2, -1, -1), 0);
}

#[test]
fn negatively_curved_model_has_unit_weight() {
    let report = analyze_data(&JacobiOperatorData::constant(-1.0, 2.0 * PI, 64), 4).unwrap();
    let w1 = weight(0, 1, &report).unwrap();
    assert_eq!((w1.index1, w1.index2, w1.n), (0, 0, 1));
    assert_eq!(weight(0, 2, &report).unwrap().n, 0);
    assert!(w1.super_rigid());
}

#[test]
fn degenerate_geodesic_is_refused() {
    let sphere = MetricSpec::round_sphere();
    let u = DVector::from_vec(vec![1.0, 0.0, 0.0]);
    let v = DVector::from_vec(vec![0.0, 1.0, 0.0]);
    let eq = refine_to_geodesic(&sphere, &DiscreteLoop::great_circle(64, &u, &v).unwrap()).unwrap();
    let report = analyze(&sphere, &eq, 2).unwrap();
    assert!(matches!(weight(0, 1, &report), Err(Error::NotSuperRigid { .. })));
}

#[test]
fn ellipsoid_weights() {
    let set = ellipsoid_census();
    let (records, _) = weigh(&set, &GammaSpec::Window(0.0, 7.0), 4).unwrap();
    assert_eq!(records.len(), 6);
    let signs: Vec<i64> = records.iter().map(|r| r.n).collect();
    assert_eq!(signs, vec![-1, -1, 1, 1, -1, -1]);
    assert_eq!(set_weight(&records), -2);
    assert!(records.iter().all(|r| r.super_rigid()));

    let (empty, _) = weigh(&set, &GammaSpec::Ids(vec![]), 4).unwrap();
    assert_eq!(set_weight(&empty), 0);
    let (a, _) = weigh(&set, &GammaSpec::Ids(vec![0, 1]), 4).unwrap();
    let (b, _) = weigh(&set, &GammaSpec::Ids(vec![2, 3, 4, 5]), 4).unwrap();
    assert_eq!(set_weight(&a) + set_weight(&b), set_weight(&records));
    assert!(weigh(&set, &GammaSpec::Ids(vec![17]), 4).is_err());
}

#[test]
fn catenoid_waist_counts_once_per_orientation() {
    let cat = MetricSpec::revolution(Profile::catenoid(1.0, (-1.0, 1.0))).unwrap();
    let set = find_all(&cat, 7.0, &CensusOptions::with_mesh(128)).unwrap();
    assert_eq!(set.len(), 2);
    let (one, _) = weigh(&set, &GammaSpec::Ids(vec![0]), 4).unwrap();
    assert_eq!(set_weight(&one), 1);
    let (both, _) = weigh(&set, &GammaSpec::Window(0.0, 7.0), 4).unwrap();
    assert_eq!(set_weight(&both), 2);
}

#[test]
fn count_function_is_a_prefix_sum() {
    let set = ellipsoid_census();
    let (records, _) = weigh(&set, &GammaSpec::Window(0.0, 7.0), 4).unwrap();
    let table = CountTable::from_records(&set, &records, 7.0);
    assert_eq!(count_function(&table, 1.0).unwrap(), 0);
    assert_eq!(count_function(&table, 6.2).unwrap(), -2);
    assert_eq!(count_function(&table, 6.4).unwrap(), 0);
    assert_eq!(count_function(&table, 7.0).unwrap(), -2);
    let l0 = set.geodesics[0].length;
    assert!(matches!(count_function(&table, l0 + 1e-8), Err(Error::SpectrumCollision { .. })));
    assert!(count_function(&table, 9.0).is_err());
    let csv = table.to_csv();
    assert!(csv.lines().last().unwrap().ends_with(",-2"));
    let plot = table.step_plot();
    assert_eq!(plot.first(), Some(&(0.0, 0)));
    assert_eq!(plot.last(), Some(&(7.0, -2)));
}

#[test]
fn synthetic_table_steps() {
    let rows = vec![
        CountRow { length: 2.0, weight: 1, geodesic_id: 0 },
        CountRow { length: 1.0, weight: -1, geodesic_id: 1 },
    ];
    let table = CountTable::new("synthetic", rows, 3.0);
    assert_eq!(table.lengths(), vec![1.0, 2.0]);
    assert_eq!(table.count(0.5).unwrap(), 0);
    assert_eq!(table.count(1.5).unwrap(), -1);
    assert_eq!(table.count(2.5).unwrap(), 0);
}

#[test]
fn bumpy_metric_keeps_its_weight_under_perturbation() {
    let spec = MetricSpec::ellipsoid(&[1.05, 1.0, 0.95]).unwrap();
    let p = Perturbation::new(PerturbationStrategy::EllipsoidJitter, 5);
    // A 1e-2 jitter could swap nearby axes; use a smaller amplitude so the
    // window is isolating.
    let p = Perturbation { amplitude: 1e-3, ..p };
    let dw = degenerate_weight(&spec, &GammaSpec::Window(0.0, 7.0), None, &p, 1, &CensusOptions::with_mesh(128)).unwrap();
    assert_eq!(dw.value, -2);
    assert!(degenerate_weight(&spec, &GammaSpec::Window(0.0, 7.0), None, &p, 0, &CensusOptions::default()).is_err());
}

#[test]
fn strategy_names_round_trip() {
    for s in [PerturbationStrategy::EllipsoidJitter, PerturbationStrategy::ConformalNoise] {
        assert_eq!(PerturbationStrategy::parse(s.name()).unwrap(), s);
    }
    assert!(PerturbationStrategy::parse("shake").is_err());
}
