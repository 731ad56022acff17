//! Continuation of closed-geodesic branches along a path of metrics,
//! detection and classification of bifurcations, and weight bookkeeping
//! across them.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::{MetricPath, MetricSpec};
use crate::jacobi::{self, build_operator, monodromy, JacobiReport};
use crate::loops::DiscreteLoop;
use crate::solver::{closed_geodesic, correct, find_all, CensusOptions, ClosedGeodesic, LinearConstraint, NewtonOptions};
use crate::weights::{n_d, set_weight, weigh, GammaSpec};

#[derive(Debug, Clone)]
pub struct StepControl {
    pub initial: f64,
    pub min: f64,
    pub max: f64,
    /// Bisection tolerance for event location, in the path parameter.
    pub event_tolerance: f64,
    /// Stop when the branch turns back in the path parameter.
    pub stop_at_fold: bool,
    pub max_samples: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        Self { initial: 0.05, min: 1e-6, max: 0.1, event_tolerance: 1e-8, stop_at_fold: false, max_samples: 400 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchRole {
    PrimitiveThrough,
    DoubledEmergent,
    FoldPair,
}

impl BranchRole {
    pub fn name(&self) -> &'static str {
        match self {
            BranchRole::PrimitiveThrough => "primitive",
            BranchRole::DoubledEmergent => "doubled",
            BranchRole::FoldPair => "fold-pair",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BranchSample {
    pub s: f64,
    pub geodesic: ClosedGeodesic,
    pub index: (usize, usize),
    pub nullity: (usize, usize),
    pub epsilon: (i64, i64),
    pub multipliers: Vec<Complex64>,
    /// `det(M − I)`; vanishes where a +1 multiplier appears.
    pub fold_test: f64,
    /// `det(M + I)`; vanishes where a −1 multiplier appears.
    pub doubling_test: f64,
    /// Marks the sample just after the path parameter turned back.
    pub turning: bool,
}

impl BranchSample {
    /// Weight of the geodesic itself (as a primitive).
    pub fn n1(&self) -> i64 {
        self.epsilon.0
    }

    /// Weight of its double cover.
    pub fn n2(&self) -> i64 {
        n_d(2, self.epsilon.0, self.epsilon.1)
    }
}

#[derive(Debug, Clone)]
pub struct Branch {
    pub id: usize,
    pub role: BranchRole,
    pub parent_event: Option<usize>,
    pub samples: Vec<BranchSample>,
}

fn test_functions(m: &DMatrix<f64>) -> (f64, f64) {
    let n = m.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    ((m - &id).determinant(), (m + &id).determinant())
}

/// Jacobi data of a geodesic as a branch sample.
pub fn sample(spec: &MetricSpec, s: f64, geodesic: ClosedGeodesic) -> Result<BranchSample> {
    let report = jacobi::analyze(spec, &geodesic, 2)?;
    Ok(sample_from_report(s, geodesic, &report))
}

fn sample_from_report(s: f64, geodesic: ClosedGeodesic, report: &JacobiReport) -> BranchSample {
    let (fold_test, doubling_test) = test_functions(&report.monodromy);
    let i1 = report.index[&1];
    let i2 = report.index[&2];
    let eps = |i: usize| if i % 2 == 0 { 1 } else { -1 };
    BranchSample {
        s,
        geodesic,
        index: (i1, i2),
        nullity: (report.nullity[&1], report.nullity[&2]),
        epsilon: (eps(i1), eps(i2)),
        multipliers: report.floquet_multipliers.clone(),
        fold_test,
        doubling_test,
        turning: false,
    }
}

fn monodromy_tests(spec: &MetricSpec, geo: &ClosedGeodesic) -> Result<(f64, f64)> {
    let (_, data) = build_operator(spec, geo)?;
    Ok(test_functions(&monodromy(&data)?.matrix))
}

/// Weighted inner product used for pseudo-arclength: mean squared node
/// displacement plus the parameter direction.
fn secant(a: &DiscreteLoop, sa: f64, b: &DiscreteLoop, sb: f64) -> (Vec<DVector<f64>>, f64) {
    let n = a.len() as f64;
    let dx: Vec<DVector<f64>> = b.nodes().iter().zip(a.nodes()).map(|(x, y)| x - y).collect();
    let ds = sb - sa;
    let norm = (dx.iter().map(|v| v.norm_squared()).sum::<f64>() / n + ds * ds).sqrt();
    (dx.into_iter().map(|v| v / norm).collect(), ds / norm)
}

fn arclength_constraint(
    reference: &DiscreteLoop,
    s_ref: f64,
    dir: &(Vec<DVector<f64>>, f64),
) -> LinearConstraint {
    let n = reference.len() as f64;
    LinearConstraint {
        weights: dir.0.iter().map(|v| v / n).collect(),
        reference: reference.nodes().to_vec(),
        s_weight: dir.1,
        s_reference: s_ref,
        target: 0.0,
    }
}

fn predict(x: &DiscreteLoop, s: f64, dir: &(Vec<DVector<f64>>, f64), h: f64) -> Result<(DiscreteLoop, f64)> {
    let nodes = x.nodes().iter().zip(&dir.0).map(|(p, d)| p + d * h).collect();
    Ok((DiscreteLoop::new(nodes)?, s + h * dir.1))
}

fn corrector_options() -> NewtonOptions {
    NewtonOptions { max_iterations: 15, damped_iterations: 0, tolerance: 1e-8 }
}

/// Natural-parameter correction at fixed `s`.
pub fn correct_at(path: &MetricPath, s: f64, seed: &DiscreteLoop) -> Result<ClosedGeodesic> {
    let at = |t: f64| path.at(t);
    let out = correct(&at, false, s, seed, None, &corrector_options())?;
    Ok(closed_geodesic(&path.at(s)?, out.loop_))
}

/// Pseudo-arclength continuation of `start` (a geodesic of `path.at(s0)`)
/// in the direction of increasing `s`.
pub fn continue_branch(path: &MetricPath, start: &ClosedGeodesic, s0: f64, control: &StepControl) -> Result<Branch> {
    continue_branch_directed(path, start, s0, 1.0, control)
}

pub fn continue_branch_directed(
    path: &MetricPath,
    start: &ClosedGeodesic,
    s0: f64,
    direction: f64,
    control: &StepControl,
) -> Result<Branch> {
    match continue_branch_partial(path, start, s0, direction, control) {
        (branch, None) => Ok(branch),
        (_, Some(e)) => Err(e),
    }
}

/// Like [`continue_branch_directed`], but keeps the samples computed before
/// a failure.
pub fn continue_branch_partial(
    path: &MetricPath,
    start: &ClosedGeodesic,
    s0: f64,
    direction: f64,
    control: &StepControl,
) -> (Branch, Option<Error>) {
    let mut samples = Vec::new();
    let err = trace(path, start, s0, direction, control, &mut samples).err();
    (Branch { id: 0, role: BranchRole::PrimitiveThrough, parent_event: None, samples }, err)
}

fn trace(
    path: &MetricPath,
    start: &ClosedGeodesic,
    s0: f64,
    direction: f64,
    control: &StepControl,
    samples: &mut Vec<BranchSample>,
) -> Result<()> {
    let at = |t: f64| path.at(t);
    let spec0 = path.at(s0)?;
    let first = correct_at(path, s0, &start.loop_)?;
    samples.push(sample(&spec0, s0, first.clone())?);
    let mut h = control.initial;

    // First step at fixed parameter.
    let (mut prev_x, mut prev_s) = (first.loop_.clone(), s0);
    let (mut cur_x, mut cur_s);
    loop {
        let s1 = (s0 + direction * h).clamp(0.0, 1.0);
        match correct_at(path, s1, &prev_x) {
            Ok(g) => {
                cur_x = g.loop_.clone();
                cur_s = s1;
                samples.push(sample(&path.at(s1)?, s1, g)?);
                break;
            }
            Err(_) => {
                h *= 0.5;
                if h < control.min {
                    return Err(Error::Stall { t: s0, step: h });
                }
            }
        }
    }
    let mut last_ds = cur_s - prev_s;
    while samples.len() < control.max_samples {
        if cur_s >= 1.0 || cur_s <= 0.0 {
            break;
        }
        let dir = secant(&prev_x, prev_s, &cur_x, cur_s);
        let (pred_x, pred_s) = predict(&cur_x, cur_s, &dir, h)?;
        let result = if !(0.0..=1.0).contains(&pred_s) {
            // Land exactly on the path end.
            let end = pred_s.clamp(0.0, 1.0);
            correct_at(path, end, &pred_x).map(|g| (g.loop_, end, 0))
        } else {
            let c = arclength_constraint(&pred_x, pred_s, &dir);
            correct(&at, true, pred_s, &pred_x, Some(&c), &corrector_options()).map(|o| (o.loop_, o.s, o.iterations))
        };
        match result {
            Ok((x, s, iterations)) => {
                let jump = x.max_node_distance(&cur_x);
                if jump > 10.0 * h.max(1e-3) {
                    h *= 0.5;
                    if h < control.min {
                        return Err(Error::Stall { t: cur_s, step: h });
                    }
                    continue;
                }
                let ds = s - cur_s;
                let mut smp = sample(&path.at(s)?, s, closed_geodesic(&path.at(s)?, x.clone()))?;
                if ds * last_ds < 0.0 {
                    smp.turning = true;
                }
                samples.push(smp);
                last_ds = ds;
                prev_x = cur_x;
                prev_s = cur_s;
                cur_x = x;
                cur_s = s;
                if iterations <= 3 {
                    h = (1.5 * h).min(control.max);
                }
                if control.stop_at_fold && samples.last().unwrap().turning {
                    break;
                }
            }
            Err(_) => {
                h *= 0.5;
                if h < control.min {
                    return Err(Error::Stall { t: cur_s, step: h });
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    PeriodDoubling,
    Fold,
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::PeriodDoubling => "period-doubling",
            EventKind::Fold => "fold",
        }
    }
}

/// Side of the event parameter on which a branch exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalFormFit {
    pub sign_f: i8,
    pub sign_g: i8,
    pub side: Side,
    /// Fitted `f/g` in `r² = (s − t)·f/g`.
    pub ratio: f64,
    /// Largest relative misfit of `r²` over the closest five samples.
    pub residual: f64,
    pub low_confidence: bool,
}

/// Outcome of seeding the corrector off the cover on one side of an event.
#[derive(Debug, Clone, PartialEq)]
pub struct SpawnResult {
    pub s: f64,
    pub amplitude: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct BifurcationEvent {
    pub id: usize,
    pub t: f64,
    pub kind: EventKind,
    pub lambda: f64,
    pub branch: usize,
    /// `(ν(1), ν(2))` on the primitive at `t`.
    pub nullity_at_event: (usize, usize),
    /// `(ε₁, ε₂)` of the tracked geodesic just before and just after.
    pub epsilon_before: (i64, i64),
    pub epsilon_after: (i64, i64),
    /// `ε₁` of the emergent doubled geodesic (period doubling) or of the
    /// partner geodesic (fold).
    pub partner_epsilon: Option<(i64, i64)>,
    pub side: Option<Side>,
    pub normal_form: Option<NormalFormFit>,
    pub spawn: Vec<SpawnResult>,
    pub pairing: f64,
    /// Σ n over the local model on the left and right of `t`.
    pub local_sum: (i64, i64),
    pub pattern_ok: bool,
    pub warnings: Vec<String>,
    pub geodesic: ClosedGeodesic,
}

/// Solve on the segment between two samples, at fraction `lambda` of the
/// secant, with the hyperplane orthogonal to the secant as side condition.
fn solve_on_secant(
    path: &MetricPath,
    a: &BranchSample,
    b: &BranchSample,
    lambda: f64,
) -> Result<(ClosedGeodesic, f64)> {
    let at = |t: f64| path.at(t);
    let xa = &a.geodesic.loop_;
    let xb = &b.geodesic.loop_;
    let dir = secant(xa, a.s, xb, b.s);
    let nodes = xa.nodes().iter().zip(xb.nodes()).map(|(p, q)| p * (1.0 - lambda) + q * lambda).collect();
    let px = DiscreteLoop::new(nodes)?;
    let ps = a.s * (1.0 - lambda) + b.s * lambda;
    let c = arclength_constraint(&px, ps, &dir);
    let out = correct(&at, true, ps, &px, Some(&c), &corrector_options())?;
    let spec = path.at(out.s)?;
    Ok((closed_geodesic(&spec, out.loop_), out.s))
}

fn bisect_event(
    path: &MetricPath,
    a: &BranchSample,
    b: &BranchSample,
    kind: EventKind,
    tol: f64,
) -> Result<(ClosedGeodesic, f64)> {
    let pick = |t: (f64, f64)| match kind {
        EventKind::Fold => t.0,
        EventKind::PeriodDoubling => t.1,
    };
    let fa = pick((a.fold_test, a.doubling_test));
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut best = (a.geodesic.clone(), a.s);
    let mut s_lo = a.s;
    let mut s_hi = b.s;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let (g, s) = solve_on_secant(path, a, b, mid)?;
        let fm = pick(monodromy_tests(&path.at(s)?, &g)?);
        best = (g, s);
        if fm * fa > 0.0 {
            lo = mid;
            s_lo = s;
        } else {
            hi = mid;
            s_hi = s;
        }
        if (s_hi - s_lo).abs() < tol && hi - lo < 1e-6 {
            break;
        }
    }
    Ok(best)
}

/// Samples of a kernel field as ambient displacements along `geo`
/// (repeated `d` times), normalized to unit maximum.
fn kernel_displacement(spec: &MetricSpec, geo: &ClosedGeodesic, lambda: f64, d: usize) -> Result<Vec<DVector<f64>>> {
    let (frame, data) = build_operator(spec, geo)?;
    let mono = monodromy(&data)?;
    let (field, _) = jacobi::nearest_lambda_field(&data, &mono, lambda, d)?;
    let n = data.nodes();
    let disp: Vec<DVector<f64>> = field
        .iter()
        .enumerate()
        .map(|(i, z)| {
            let mut v = DVector::zeros(frame.frame[0][0].len());
            for (a, e) in frame.frame[i % n].iter().enumerate() {
                v += e * z[a];
            }
            v
        })
        .collect();
    let max = disp.iter().map(|v| v.norm()).fold(0.0, f64::max);
    Ok(disp.into_iter().map(|v| v / max).collect())
}

fn amplitude_constraint(reference: &DiscreteLoop, xi: &[DVector<f64>], r: f64) -> LinearConstraint {
    let norm2: f64 = xi.iter().map(|v| v.norm_squared()).sum();
    LinearConstraint {
        weights: xi.iter().map(|v| v / norm2).collect(),
        reference: reference.nodes().to_vec(),
        s_weight: 0.0,
        s_reference: 0.0,
        target: r,
    }
}

fn offset_loop(base: &DiscreteLoop, xi: &[DVector<f64>], r: f64) -> Result<DiscreteLoop> {
    DiscreteLoop::new(base.nodes().iter().zip(xi).map(|(x, v)| x + v * r).collect())
}

/// Least-squares fit of `r² ≈ c (s − t)` and sign extraction.
pub fn fit_normal_form(t: f64, samples: &[(f64, f64)], sign_f: i8) -> Result<NormalFormFit> {
    if samples.len() < 5 {
        return Err(Error::Argument("the normal-form fit needs at least five samples".into()));
    }
    let mut sorted: Vec<(f64, f64)> = samples.to_vec();
    sorted.sort_by(|a, b| (a.0 - t).abs().partial_cmp(&(b.0 - t).abs()).unwrap());
    let close = &sorted[..5];
    let num: f64 = close.iter().map(|(s, r)| r * r * (s - t)).sum();
    let den: f64 = close.iter().map(|(s, _)| (s - t) * (s - t)).sum();
    let c = num / den;
    let residual = close
        .iter()
        .map(|(s, r)| ((r * r - c * (s - t)) / (r * r)).abs())
        .fold(0.0, f64::max);
    let side = if c > 0.0 { Side::Right } else { Side::Left };
    let sign_g = if (c > 0.0) == (sign_f > 0) { 1 } else { -1 };
    Ok(NormalFormFit { sign_f, sign_g, side, ratio: c, residual, low_confidence: residual > 0.1 })
}

/// Pairing of the path's metric derivative with the kernel field at an
/// event: `∫ ⟨∂ₛ(∇_γ̇ γ̇), ξ⟩` for folds and `∫ ∂ₛB ξ²` over the double
/// cover for period doublings.
pub fn metric_deformation_pairing(path: &MetricPath, s: f64, geo: &ClosedGeodesic, kind: EventKind) -> Result<f64> {
    let h = 1e-6;
    let (sp, sm) = ((s + h).min(1.0), (s - h).max(0.0));
    let plus = path.at(sp)?;
    let minus = path.at(sm)?;
    let spec = path.at(s)?;
    let width = sp - sm;
    match kind {
        EventKind::Fold => {
            let xi = kernel_displacement(&spec, geo, 1.0, 1)?;
            let lp = &geo.loop_;
            let proj = |m: &MetricSpec| DiscreteLoop::new(lp.nodes().iter().map(|x| m.project(x)).collect());
            let rp = crate::solver::residual_vectors(&plus, &proj(&plus)?);
            let rm = crate::solver::residual_vectors(&minus, &proj(&minus)?);
            let len = geo.length;
            let n = lp.len() as f64;
            let mut acc = 0.0;
            for (i, x) in lp.nodes().iter().enumerate() {
                let g = (2.0 * spec.conformal_exponent(x)).exp();
                let ds = (&rp[i] - &rm[i]) / (width * len * len);
                acc += g * ds.dot(&xi[i]) * len / n;
            }
            Ok(acc)
        }
        EventKind::PeriodDoubling => {
            let (frame, data) = build_operator(&spec, geo)?;
            let mono = monodromy(&data)?;
            let (field, _) = jacobi::nearest_lambda_field(&data, &mono, -1.0, 2)?;
            let n = data.nodes();
            let amax = field.iter().map(|z| z.amax()).fold(0.0, f64::max);
            let lp = &geo.loop_;
            let mut acc = 0.0;
            for (i, z) in field.iter().enumerate() {
                let j = i % n;
                let x = &lp.nodes()[j];
                let t = &frame.tangent[j];
                let e = &frame.frame[j];
                let xp = plus.project(x);
                let xm = minus.project(x);
                let rescale = |m: &MetricSpec, y: &DVector<f64>, v: &DVector<f64>| v / m.norm_at(y, v);
                let bp = plus.jacobi_curvature(&xp, &rescale(&plus, &xp, t), &e.iter().map(|v| rescale(&plus, &xp, v)).collect::<Vec<_>>());
                let bm = minus.jacobi_curvature(&xm, &rescale(&minus, &xm, t), &e.iter().map(|v| rescale(&minus, &xm, v)).collect::<Vec<_>>());
                let db = (bp - bm) / width;
                let zz = z / amax;
                acc += (zz.transpose() * db * &zz)[(0, 0)] * data.length / n as f64;
            }
            Ok(acc)
        }
    }
}

/// Find the events on a primitive branch and resolve their local models.
pub fn detect_events(path: &MetricPath, branch: &Branch, control: &StepControl) -> Result<(Vec<BifurcationEvent>, Vec<Branch>)> {
    let mut events = Vec::new();
    let mut spawned = Vec::new();
    let samples = &branch.samples;
    let mut located: Vec<(usize, EventKind, ClosedGeodesic, f64)> = Vec::new();
    for i in 0..samples.len().saturating_sub(1) {
        let (a, b) = (&samples[i], &samples[i + 1]);
        if a.doubling_test * b.doubling_test < 0.0 {
            let (g, t) = bisect_event(path, a, b, EventKind::PeriodDoubling, control.event_tolerance)?;
            located.push((i, EventKind::PeriodDoubling, g, t));
        }
        if a.fold_test * b.fold_test < 0.0 {
            let (g, t) = bisect_event(path, a, b, EventKind::Fold, control.event_tolerance)?;
            located.push((i, EventKind::Fold, g, t));
        }
    }
    for w in located.windows(2) {
        if (w[0].3 - w[1].3).abs() < 1e-6 {
            return Err(Error::UnresolvedCluster(w[0].3));
        }
    }
    for (i, kind, geo, t) in located {
        let id = events.len();
        let spec = path.at(t)?;
        let report = jacobi::analyze(&spec, &geo, 2)?;
        let nullity_at_event = (report.nullity[&1], report.nullity[&2]);
        let (a, b) = (&samples[i], &samples[i + 1]);
        let mut warnings = Vec::new();
        let pairing = metric_deformation_pairing(path, t, &geo, kind).unwrap_or(0.0);
        if pairing.abs() <= 1e-6 {
            warnings.push("metric deformation pairing below 1e-6: the path may not be generic".to_string());
        }
        let mut event = BifurcationEvent {
            id,
            t,
            kind,
            lambda: if kind == EventKind::Fold { 1.0 } else { -1.0 },
            branch: branch.id,
            nullity_at_event,
            epsilon_before: a.epsilon,
            epsilon_after: b.epsilon,
            partner_epsilon: None,
            side: None,
            normal_form: None,
            spawn: Vec::new(),
            pairing,
            local_sum: (0, 0),
            pattern_ok: false,
            warnings,
            geodesic: geo.clone(),
        };
        match kind {
            EventKind::PeriodDoubling => {
                let doubled = resolve_doubling(path, &geo, t, a, b, &mut event)?;
                let mut br = doubled;
                br.id = branch.id + 1 + spawned.len();
                br.parent_event = Some(id);
                spawned.push(br);
            }
            EventKind::Fold => resolve_fold(samples, i, t, &mut event),
        }
        events.push(event);
    }
    Ok((events, spawned))
}

fn resolve_doubling(
    path: &MetricPath,
    geo: &ClosedGeodesic,
    t: f64,
    a: &BranchSample,
    b: &BranchSample,
    event: &mut BifurcationEvent,
) -> Result<Branch> {
    let spec = path.at(t)?;
    let xi = kernel_displacement(&spec, geo, -1.0, 2)?;
    let cover = geo.loop_.cover(2)?;
    let at = |u: f64| path.at(u);
    let amplitudes = [0.004, 0.006, 0.008, 0.01, 0.012, 0.014, 0.016];
    let mut points = Vec::new();
    let mut samples = Vec::new();
    let mut seed = offset_loop(&cover, &xi, amplitudes[0])?;
    let mut s_guess = t;
    for &r in &amplitudes {
        let c = amplitude_constraint(&cover, &xi, r);
        match correct(&at, true, s_guess, &seed, Some(&c), &corrector_options()) {
            Ok(out) => {
                let sp = path.at(out.s)?;
                let g = closed_geodesic(&sp, out.loop_.clone());
                samples.push(sample(&sp, out.s, g)?);
                points.push((out.s, r));
                s_guess = out.s;
                seed = offset_loop(&out.loop_, &xi, 0.0)?;
            }
            Err(e) => event.warnings.push(format!("doubled branch solve at amplitude {r} failed: {e}")),
        }
    }
    // Slope of the −1-sector eigenvalue nearest zero gives the sign of f.
    let eig_near_zero = |smp: &BranchSample| -> Result<f64> {
        let sp = path.at(smp.s)?;
        let (_, data) = build_operator(&sp, &smp.geodesic)?;
        let q = jacobi::quadratic_form_matrix(&data, 2, Some(Complex64::new(-1.0, 0.0)))?;
        Ok(q.eigenvalues().into_iter().min_by(|x, y| x.abs().partial_cmp(&y.abs()).unwrap()).unwrap())
    };
    let (ea, eb) = (eig_near_zero(a)?, eig_near_zero(b)?);
    let sign_f: i8 = if (eb - ea) * (b.s - a.s) > 0.0 { 1 } else { -1 };
    match fit_normal_form(t, &points, sign_f) {
        Ok(fit) => {
            if fit.low_confidence {
                event.warnings.push(format!("normal-form fit residual {:.3} exceeds 10%", fit.residual));
            }
            event.side = Some(fit.side);
            event.normal_form = Some(fit);
        }
        Err(e) => event.warnings.push(format!("normal-form fit unavailable: {e}")),
    }
    // Spawn tests on both sides at the distance where the branch has
    // amplitude of order 1e-2.
    if let Some(&(s_far, _)) = points.iter().find(|p| (p.1 - 0.01).abs() < 1e-12).or(points.last()) {
        let delta = (s_far - t).abs().max(1e-6);
        for side in [-1.0, 1.0] {
            let s = (t + side * delta).clamp(0.0, 1.0);
            let base = correct_at(path, s, &geo.loop_)?;
            let base2 = base.loop_.cover(2)?;
            for amp in [1e-3, 1e-2] {
                let seed = offset_loop(&base2, &xi, amp)?;
                let converged = match correct(&at, false, s, &seed, None, &corrector_options()) {
                    Ok(out) => {
                        out.loop_.max_node_distance(&base2) > 1e-4
                            && out.loop_.rotation_distance(&base2).0 > 1e-4
                    }
                    Err(_) => false,
                };
                event.spawn.push(SpawnResult { s, amplitude: amp, converged });
            }
        }
    }
    let side_before = if a.s < t { Side::Left } else { Side::Right };
    if let (Some(side), Some(first)) = (event.side, samples.first()) {
        event.partner_epsilon = Some(first.epsilon);
        // The tracked primitive sample on the doubled branch's side.
        let prim_j = if side == side_before { a } else { b };
        let dbl_n1 = first.n1();
        let before_sum = a.n1() + a.n2() + if side == side_before { dbl_n1 } else { 0 };
        let after_sum = b.n1() + b.n2() + if side != side_before { dbl_n1 } else { 0 };
        event.local_sum = if side_before == Side::Left { (before_sum, after_sum) } else { (after_sum, before_sum) };
        event.pattern_ok = a.epsilon.0 == b.epsilon.0
            && a.epsilon.1 == -b.epsilon.1
            && first.epsilon.0 == -prim_j.epsilon.1
            && event.local_sum.0 == event.local_sum.1;
    }
    Ok(Branch { id: 0, role: BranchRole::DoubledEmergent, parent_event: Some(event.id), samples })
}

fn resolve_fold(samples: &[BranchSample], i: usize, t: f64, event: &mut BifurcationEvent) {
    let (a, b) = (&samples[i], &samples[i + 1]);
    // Both arcs of the fold live on the same side of t.
    let side = if a.s < t { Side::Left } else { Side::Right };
    event.side = Some(side);
    event.partner_epsilon = Some(b.epsilon);
    let pair = a.n1() + a.n2() + b.n1() + b.n2();
    event.local_sum = if side == Side::Left { (pair, 0) } else { (0, pair) };
    event.pattern_ok = a.epsilon.0 == -b.epsilon.0 && a.epsilon.1 == -b.epsilon.1 && pair == 0;
    let turned = samples.iter().skip(i.saturating_sub(2)).take(5).any(|s| s.turning);
    if !turned {
        event.warnings.push("no turning point in the path parameter near the +1 crossing".into());
    }
}

/// `n(g_s, Γ_s)` along a grid of path parameters.
#[derive(Debug, Clone)]
pub struct InvarianceReport {
    pub values: Vec<(f64, Option<i64>)>,
    pub constant: bool,
    pub offending: Option<(f64, f64)>,
    pub notes: Vec<String>,
}

pub fn verify_invariance(path: &MetricPath, gamma: &GammaSpec, grid: &[f64], opts: &CensusOptions) -> Result<InvarianceReport> {
    let GammaSpec::Window(lo, hi) = gamma else {
        return Err(Error::Argument("invariance checks use a length window".into()));
    };
    let mut values = Vec::new();
    let mut notes = Vec::new();
    for &s in grid {
        let spec = path.at(s)?;
        let census = find_all(&spec, *hi, opts)?;
        if census.geodesics.iter().any(|g| (g.length - lo).abs() < 1e-6 || (g.length - hi).abs() < 1e-6) {
            notes.push(format!("s = {s}: a length touches the window edge; skipped"));
            values.push((s, None));
            continue;
        }
        match weigh(&census, gamma, 2) {
            Ok((records, _)) => values.push((s, Some(set_weight(&records)))),
            Err(e) => {
                notes.push(format!("s = {s}: {e}"));
                values.push((s, None));
            }
        }
    }
    let known: Vec<(f64, i64)> = values.iter().filter_map(|(s, v)| v.map(|v| (*s, v))).collect();
    let mut offending = None;
    for w in known.windows(2) {
        if w[0].1 != w[1].1 {
            offending = Some((w[0].0, w[1].0));
            break;
        }
    }
    Ok(InvarianceReport { constant: offending.is_none() && !known.is_empty(), values, offending, notes })
}

/// Σ n over a local model on each side of an event.
pub fn local_invariance(event: &BifurcationEvent) -> bool {
    event.local_sum.0 == event.local_sum.1
}

/// CSV rows: `branch,role,s,length,i1,i2,nu1,nu2,eps1,eps2,event`.
pub fn trace_csv(branches: &[Branch], events: &[BifurcationEvent]) -> String {
    let mut out = String::from("branch,role,s,length,iota1,iota2,nu1,nu2,eps1,eps2,event\n");
    for b in branches {
        for smp in &b.samples {
            let marker = if smp.turning { "turning" } else { "" };
            out.push_str(&format!(
                "{},{},{:.16e},{:.16e},{},{},{},{},{},{},{}\n",
                b.id,
                b.role.name(),
                smp.s,
                smp.geodesic.length,
                smp.index.0,
                smp.index.1,
                smp.nullity.0,
                smp.nullity.1,
                smp.epsilon.0,
                smp.epsilon.1,
                marker
            ));
        }
    }
    for e in events {
        out.push_str(&format!(
            "{},event,{:.16e},{:.16e},,,{},{},,,{}\n",
            e.branch,
            e.t,
            e.geodesic.length,
            e.nullity_at_event.0,
            e.nullity_at_event.1,
            e.kind.name()
        ));
    }
    out
}

/// Branches, events and the local invariance verdicts of a sweep.
#[derive(Debug, Clone)]
pub struct Sweep {
    pub branches: Vec<Branch>,
    pub events: Vec<BifurcationEvent>,
    /// `(t, step)` where a branch stalled; the samples before it are kept.
    pub stall: Option<(f64, f64)>,
}

impl Sweep {
    pub fn local_invariance_holds(&self) -> bool {
        self.events.iter().all(|e| local_invariance(e) && e.pattern_ok)
    }
}

/// Continue every start geodesic over `[0, 1]` and resolve the events found
/// on each branch. Branches are independent and run in parallel.
pub fn sweep(path: &MetricPath, starts: &[ClosedGeodesic], control: &StepControl) -> Result<Sweep> {
    use rayon::prelude::*;
    let traced: Vec<(Branch, Option<Error>)> =
        starts.par_iter().map(|g| continue_branch_partial(path, g, 0.0, 1.0, control)).collect();
    let mut out = Sweep { branches: Vec::new(), events: Vec::new(), stall: None };
    for (mut branch, err) in traced {
        match err {
            None => {}
            Some(Error::Stall { t, step }) => {
                out.stall.get_or_insert((t, step));
            }
            Some(e) => return Err(e),
        }
        branch.id = out.branches.len();
        let (found, spawned) = detect_events(path, &branch, control)?;
        out.branches.push(branch);
        let offset = out.events.len();
        let mut renumber = std::collections::BTreeMap::new();
        let mut events = Vec::new();
        for mut e in found {
            // Two branches meeting at a fold both see it.
            let seen = out.events.iter().any(|o| {
                o.kind == e.kind
                    && (o.t - e.t).abs() < 1e-6
                    && o.geodesic.loop_.rotation_distance(&e.geodesic.loop_).0.min(
                        o.geodesic.loop_.rotation_distance(&e.geodesic.loop_.reversed()).0,
                    ) < 1e-3
            });
            if !seen {
                renumber.insert(e.id, offset + events.len());
                e.id = offset + events.len();
                events.push(e);
            }
        }
        for mut b in spawned {
            if let Some(&p) = b.parent_event.and_then(|p| renumber.get(&p)) {
                b.id = out.branches.len();
                b.parent_event = Some(p);
                out.branches.push(b);
            }
        }
        out.events.extend(events);
    }
    // Distinct events at one parameter value break the genericity the
    // local models rely on.
    let mut ts: Vec<f64> = out.events.iter().map(|e| e.t).collect();
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if let Some(w) = ts.windows(2).find(|w| w[1] - w[0] < 1e-6) {
        return Err(Error::UnresolvedCluster(w[0]));
    }
    Ok(out)
}

/// CSV rows: `event,kind,t,lambda,branch,nu1,nu2,eps_before,eps_after,partner_eps,side,sign_f,sign_g,pairing,sum_left,sum_right,pattern`.
pub fn events_csv(events: &[BifurcationEvent]) -> String {
    let mut out = String::from(
        "event,kind,t,lambda,branch,nu1,nu2,eps_before,eps_after,partner_eps,side,sign_f,sign_g,pairing,sum_left,sum_right,pattern\n",
    );
    let pair = |p: (i64, i64)| format!("{}:{}", p.0, p.1);
    for e in events {
        let side = match e.side {
            Some(Side::Left) => "left",
            Some(Side::Right) => "right",
            None => "",
        };
        let (f, g) = e.normal_form.as_ref().map_or((String::new(), String::new()), |n| (n.sign_f.to_string(), n.sign_g.to_string()));
        out.push_str(&format!(
            "{},{},{:.16e},{},{},{},{},{},{},{},{},{},{},{:.16e},{},{},{}\n",
            e.id,
            e.kind.name(),
            e.t,
            e.lambda,
            e.branch,
            e.nullity_at_event.0,
            e.nullity_at_event.1,
            pair(e.epsilon_before),
            pair(e.epsilon_after),
            e.partner_epsilon.map(pair).unwrap_or_default(),
            side,
            f,
            g,
            e.pairing,
            e.local_sum.0,
            e.local_sum.1,
            if e.pattern_ok { "ok" } else { "mismatch" }
        ));
    }
    out
}
