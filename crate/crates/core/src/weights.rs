//! Integer weights of closed geodesics and geodesic sets, perturbative
//! weights for degenerate metrics, and the geodesic count function.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Family, MetricSpec};
use crate::harmonics;
use crate::jacobi::{self, JacobiReport};
use crate::solver::{find_all, CensusOptions, ClosedGeodesic, GeodesicSet};

/// Highest cover degree whose nullity is checked.
pub const DEFAULT_D_MAX: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightRecord {
    pub geodesic_id: usize,
    pub cover_degree: usize,
    /// Index of the primitive and its double cover.
    pub index1: usize,
    pub index2: usize,
    pub epsilon1: i64,
    pub epsilon2: i64,
    /// `n_d` for this geodesic's cover degree.
    pub n: i64,
    /// Nullity of the primitive's covers, `d' = 1..=d_max`.
    pub nullity: BTreeMap<usize, usize>,
    pub eigen_gap: f64,
}

impl WeightRecord {
    /// All checked covers have zero nullity.
    pub fn super_rigid(&self) -> bool {
        self.nullity.values().all(|&v| v == 0)
    }
}

fn parity(i: usize) -> i64 {
    if i % 2 == 0 {
        1
    } else {
        -1
    }
}

/// `n_d` from the two primitive signs.
pub fn n_d(d: usize, eps1: i64, eps2: i64) -> i64 {
    match d {
        1 => eps1,
        2 => (eps2 - eps1) / 2,
        _ => 0,
    }
}

/// Weight of a closed geodesic of cover degree `cover_degree`, given the
/// Jacobi report of its primitive.
pub fn weight(id: usize, cover_degree: usize, primitive: &JacobiReport) -> Result<WeightRecord> {
    let nul = |d: usize| primitive.nullity.get(&d).copied();
    let (Some(i1), Some(i2)) = (primitive.index.get(&1).copied(), primitive.index.get(&2).copied()) else {
        return Err(Error::Argument("the Jacobi report must cover degrees 1 and 2".into()));
    };
    if nul(1) != Some(0) || nul(2) != Some(0) {
        return Err(Error::NotSuperRigid {
            id,
            nullity: primitive.nullity.values().copied().collect(),
            eigen_gap: primitive.eigen_gap,
        });
    }
    let (e1, e2) = (parity(i1), parity(i2));
    Ok(WeightRecord {
        geodesic_id: id,
        cover_degree,
        index1: i1,
        index2: i2,
        epsilon1: e1,
        epsilon2: e2,
        n: n_d(cover_degree, e1, e2),
        nullity: primitive.nullity.clone(),
        eigen_gap: primitive.eigen_gap,
    })
}

/// `n(g, Γ) = Σ n(g, γ)`.
pub fn set_weight(records: &[WeightRecord]) -> i64 {
    records.iter().map(|r| r.n).sum()
}

/// Jacobi reports of every primitive in a census, keyed by geodesic id.
pub fn analyze_primitives(set: &GeodesicSet, d_max: usize) -> Result<BTreeMap<usize, JacobiReport>> {
    let mut prim: Vec<usize> = set.primitive_ids.clone();
    prim.sort_unstable();
    prim.dedup();
    let reports: Vec<(usize, Result<JacobiReport>)> = prim
        .par_iter()
        .map(|&id| (id, jacobi::analyze(&set.metric, &set.geodesics[id], d_max)))
        .collect();
    let mut out = BTreeMap::new();
    for (id, r) in reports {
        out.insert(id, r?);
    }
    Ok(out)
}

/// Which geodesics form `Γ`.
#[derive(Debug, Clone, PartialEq)]
pub enum GammaSpec {
    /// Lengths in the open interval `(lo, hi)`.
    Window(f64, f64),
    /// Explicit census ids.
    Ids(Vec<usize>),
}

impl GammaSpec {
    pub fn upper_length(&self, set: Option<&GeodesicSet>) -> f64 {
        match self {
            GammaSpec::Window(_, hi) => *hi,
            GammaSpec::Ids(ids) => set
                .map(|s| ids.iter().filter_map(|&i| s.geodesics.get(i)).map(|g| g.length).fold(0.0, f64::max))
                .unwrap_or(0.0),
        }
    }

    pub fn select(&self, set: &GeodesicSet) -> Result<Vec<usize>> {
        match self {
            GammaSpec::Window(lo, hi) => Ok((0..set.len())
                .filter(|&i| set.geodesics[i].length > *lo && set.geodesics[i].length < *hi)
                .collect()),
            GammaSpec::Ids(ids) => {
                for &i in ids {
                    if i >= set.len() {
                        return Err(Error::Argument(format!("no geodesic with id {i}")));
                    }
                }
                let mut v = ids.clone();
                v.sort_unstable();
                v.dedup();
                Ok(v)
            }
        }
    }
}

/// Weights of the members of `Γ` in a census.
pub fn weigh(set: &GeodesicSet, gamma: &GammaSpec, d_max: usize) -> Result<(Vec<WeightRecord>, BTreeMap<usize, JacobiReport>)> {
    let ids = gamma.select(set)?;
    let mut sub = set.clone();
    // Only analyze primitives that are needed.
    let needed: Vec<usize> = ids.iter().map(|&i| set.primitive_ids[i]).collect();
    sub.primitive_ids = needed;
    let reports = analyze_primitives(&sub, d_max)?;
    let records = ids
        .iter()
        .map(|&i| weight(i, set.geodesics[i].cover_degree, &reports[&set.primitive_ids[i]]))
        .collect::<Result<Vec<_>>>()?;
    Ok((records, reports))
}

/// How a degenerate metric is perturbed into a bumpy one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbationStrategy {
    /// Multiply each ellipsoid parameter by `1 + amplitude · U(−1, 1)`.
    EllipsoidJitter,
    /// Add `amplitude · U(−1, 1)` to every degree-2 and degree-3 harmonic of
    /// the conformal exponent (round sphere or conformal sphere only).
    ConformalNoise,
}

impl PerturbationStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            PerturbationStrategy::EllipsoidJitter => "ellipsoid-jitter",
            PerturbationStrategy::ConformalNoise => "conformal-noise",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ellipsoid-jitter" => Ok(Self::EllipsoidJitter),
            "conformal-noise" => Ok(Self::ConformalNoise),
            _ => Err(Error::Config(format!("unknown perturbation strategy {s:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Perturbation {
    pub strategy: PerturbationStrategy,
    pub amplitude: f64,
    pub seed: u64,
}

impl Perturbation {
    pub fn new(strategy: PerturbationStrategy, seed: u64) -> Self {
        Self { strategy, amplitude: 1e-2, seed }
    }
}

fn is_round_sphere(spec: &MetricSpec) -> bool {
    match &spec.family {
        Family::Ellipsoid { a } => a.len() == 3 && a.iter().all(|&v| v == 1.0),
        Family::ConformalSphere { .. } => true,
        _ => false,
    }
}

/// Draw one perturbed metric.
pub fn perturb(spec: &MetricSpec, strategy: PerturbationStrategy, amplitude: f64, rng: &mut ChaCha8Rng) -> Result<MetricSpec> {
    match strategy {
        PerturbationStrategy::EllipsoidJitter => match &spec.family {
            Family::Ellipsoid { a } => {
                let a = a.iter().map(|&v| v * (1.0 + amplitude * rng.gen_range(-1.0..1.0))).collect();
                Ok(MetricSpec { family: Family::Ellipsoid { a }, pole_axis: spec.pole_axis })
            }
            _ => Err(Error::Argument("ellipsoid jitter needs an ellipsoid metric".into())),
        },
        PerturbationStrategy::ConformalNoise => {
            if !is_round_sphere(spec) {
                return Err(Error::Argument("conformal noise needs the round sphere or a conformal sphere".into()));
            }
            let mut coeffs = match &spec.family {
                Family::ConformalSphere { coeffs } => coeffs.clone(),
                _ => Vec::new(),
            };
            coeffs.resize(harmonics::MAX_COEFFS, 0.0);
            for (i, (deg, _)) in harmonics::BASIS.iter().enumerate() {
                if *deg >= 2 {
                    coeffs[i] += amplitude * rng.gen_range(-1.0..1.0);
                }
            }
            Ok(MetricSpec { family: Family::ConformalSphere { coeffs }, pole_axis: spec.pole_axis })
        }
    }
}

/// One perturbation trial.
#[derive(Debug, Clone)]
pub struct Trial {
    pub metric: MetricSpec,
    pub value: i64,
    pub geodesics: usize,
    pub records: Vec<WeightRecord>,
    pub attempts: usize,
    pub warnings: Vec<String>,
    pub census: GeodesicSet,
}

#[derive(Debug, Clone)]
pub struct DegenerateWeight {
    pub value: i64,
    pub trials: Vec<Trial>,
}

impl DegenerateWeight {
    /// Count table of the first trial's perturbed metric.
    pub fn count_table(&self, valid_max: f64) -> CountTable {
        let t = &self.trials[0];
        CountTable::from_records(&t.census, &t.records, valid_max)
    }
}

const MAX_ATTEMPTS: usize = 5;

fn run_trial(
    spec: &MetricSpec,
    gamma: &GammaSpec,
    reference: Option<&GeodesicSet>,
    perturbation: &Perturbation,
    trial: usize,
    opts: &CensusOptions,
) -> Result<Trial> {
    let mut rng = ChaCha8Rng::seed_from_u64(
        perturbation.seed ^ (trial as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15),
    );
    let mut warnings = Vec::new();
    let mut last_err = None;
    for attempt in 1..=MAX_ATTEMPTS {
        let metric = perturb(spec, perturbation.strategy, perturbation.amplitude, &mut rng)?;
        let bound = gamma.upper_length(reference) * 1.05 + 1e-9;
        let census = find_all(&metric, bound, opts)?;
        let selection = match (gamma, reference) {
            (GammaSpec::Window(..), _) => gamma.clone(),
            (GammaSpec::Ids(ids), Some(reference)) => GammaSpec::Ids(match_ids(&census, reference, ids)),
            (GammaSpec::Ids(_), None) => {
                return Err(Error::Argument("an id list needs a reference census".into()))
            }
        };
        if let GammaSpec::Window(lo, hi) = gamma {
            if census
                .geodesics
                .iter()
                .any(|g| (g.length - lo).abs() < 1e-6 || (g.length - hi).abs() < 1e-6)
            {
                warnings.push(format!("attempt {attempt}: window edge collides with a length; redrawing"));
                continue;
            }
        }
        match weigh(&census, &selection, DEFAULT_D_MAX) {
            Ok((records, reports)) => {
                let flagged = reports.values().any(|r| r.ill_conditioned || r.nullity.values().any(|&v| v > 0));
                if flagged {
                    warnings.push(format!("attempt {attempt}: nullity flag after perturbation; redrawing"));
                    continue;
                }
                warnings.extend(census.certificate.warnings.iter().cloned());
                return Ok(Trial {
                    value: set_weight(&records),
                    geodesics: records.len(),
                    metric,
                    records,
                    attempts: attempt,
                    warnings,
                    census,
                });
            }
            Err(e @ Error::NotSuperRigid { .. }) => {
                warnings.push(format!("attempt {attempt}: {e}; redrawing"));
                last_err = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    Err(last_err.unwrap_or(Error::Argument(format!(
        "no admissible perturbation after {MAX_ATTEMPTS} attempts: {}",
        warnings.join("; ")
    ))))
}

/// Geodesics of `census` lying near the listed geodesics of `reference`.
fn match_ids(census: &GeodesicSet, reference: &GeodesicSet, ids: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    for (j, g) in census.geodesics.iter().enumerate() {
        let near = ids.iter().any(|&i| {
            let r: &ClosedGeodesic = &reference.geodesics[i];
            r.cover_degree == g.cover_degree
                && (r.length - g.length).abs() < 0.1 * r.length
                && r.loop_.rotation_distance(&g.loop_).0 < 0.1 * r.length
        });
        if near {
            out.push(j);
        }
    }
    out
}

/// Weight of `Γ` for a possibly degenerate metric: the common set weight
/// of `trials` independent bumpy perturbations.
pub fn degenerate_weight(
    spec: &MetricSpec,
    gamma: &GammaSpec,
    reference: Option<&GeodesicSet>,
    perturbation: &Perturbation,
    trials: usize,
    opts: &CensusOptions,
) -> Result<DegenerateWeight> {
    if trials == 0 {
        return Err(Error::Argument("at least one trial is needed".into()));
    }
    let results: Vec<Result<Trial>> = (0..trials)
        .into_par_iter()
        .map(|t| run_trial(spec, gamma, reference, perturbation, t, opts))
        .collect();
    let trials: Vec<Trial> = results.into_iter().collect::<Result<_>>()?;
    let first = trials[0].value;
    if trials.iter().any(|t| t.value != first) {
        let diagnostics = trials
            .iter()
            .enumerate()
            .map(|(i, t)| {
                format!(
                    "trial {i}: value {} from {} geodesics, metric {:?}, warnings {:?}",
                    t.value, t.geodesics, t.metric.family, t.warnings
                )
            })
            .collect::<Vec<_>>()
            .join("\n");
        return Err(Error::AmbiguousWeight { values: trials.iter().map(|t| t.value).collect(), diagnostics });
    }
    Ok(DegenerateWeight { value: first, trials })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountRow {
    pub length: f64,
    pub weight: i64,
    pub geodesic_id: usize,
}

/// Weighted length spectrum supporting `π(L)` queries.
#[derive(Debug, Clone, PartialEq)]
pub struct CountTable {
    pub metric: String,
    pub rows: Vec<CountRow>,
    pub valid_max: f64,
}

impl CountTable {
    pub fn new(metric: impl Into<String>, mut rows: Vec<CountRow>, valid_max: f64) -> Self {
        rows.sort_by(|a, b| a.length.partial_cmp(&b.length).unwrap().then(a.geodesic_id.cmp(&b.geodesic_id)));
        Self { metric: metric.into(), rows, valid_max }
    }

    pub fn from_records(set: &GeodesicSet, records: &[WeightRecord], valid_max: f64) -> Self {
        let rows = records
            .iter()
            .map(|r| CountRow { length: set.geodesics[r.geodesic_id].length, weight: r.n, geodesic_id: r.geodesic_id })
            .collect();
        Self::new(format!("{:?}", set.metric.family), rows, valid_max)
    }

    /// Sorted length multiset.
    pub fn lengths(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.length).collect()
    }

    /// `π(L) = Σ_{length < L} n`.
    pub fn count(&self, l: f64) -> Result<i64> {
        count_function(self, l)
    }

    /// CSV with columns `length,weight,cumulative`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("length,weight,cumulative\n");
        let mut acc = 0;
        for r in &self.rows {
            acc += r.weight;
            out.push_str(&format!("{:.16e},{},{}\n", r.length, r.weight, acc));
        }
        out
    }

    /// Step-function vertices `(x, π)` from 0 to `valid_max`.
    pub fn step_plot(&self) -> Vec<(f64, i64)> {
        let mut pts = vec![(0.0, 0)];
        let mut acc = 0;
        for r in &self.rows {
            pts.push((r.length, acc));
            acc += r.weight;
            pts.push((r.length, acc));
        }
        pts.push((self.valid_max, acc));
        pts
    }

    pub fn step_plot_text(&self) -> String {
        self.step_plot().iter().map(|(x, y)| format!("{x:.16e} {y}\n")).collect()
    }
}

/// Closeness to the spectrum below which `π(L)` is refused.
pub const SPECTRUM_GAP: f64 = 1e-6;

pub fn count_function(table: &CountTable, l: f64) -> Result<i64> {
    if !(l >= 0.0) || l > table.valid_max {
        return Err(Error::Argument(format!("L = {l} is outside the validity window (0, {}]", table.valid_max)));
    }
    if let Some(r) = table.rows.iter().find(|r| (r.length - l).abs() <= SPECTRUM_GAP) {
        return Err(Error::SpectrumCollision { length: l, spectrum_point: r.length, gap: SPECTRUM_GAP });
    }
    Ok(table.rows.iter().filter(|r| r.length < l).map(|r| r.weight).sum())
}
