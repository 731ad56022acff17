//! Closed-geodesic refinement (damped Gauss–Newton on the spectral residual)
//! and multistart censuses.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Family, MetricSpec};
use crate::loops::{canonicalize, primitive_decompose, DiscreteLoop, LoopClass};
use crate::spectral;

/// Loops shorter than this are treated as collapsed.
pub const COLLAPSE_LENGTH: f64 = 1e-3;
/// More classes than this sharing one length marks a continuous family.
pub const DEGENERATE_FAMILY_THRESHOLD: usize = 50;

#[derive(Debug, Clone)]
pub struct ClosedGeodesic {
    /// Constant-speed loop on `d · N` nodes, canonical phase.
    pub loop_: DiscreteLoop,
    pub length: f64,
    pub residual_norm: f64,
    pub primitive_base: LoopClass,
    pub cover_degree: usize,
}

impl ClosedGeodesic {
    pub fn primitive_length(&self) -> f64 {
        self.length / self.cover_degree as f64
    }

    /// Nodes per primitive period.
    pub fn base_nodes(&self) -> usize {
        self.loop_.len() / self.cover_degree
    }

    /// The primitive geodesic on `N` nodes.
    pub fn primitive(&self) -> ClosedGeodesic {
        if self.cover_degree == 1 {
            return self.clone();
        }
        let n = self.base_nodes();
        let base = DiscreteLoop::new(self.loop_.nodes()[..n].to_vec()).expect("cover of a valid loop");
        ClosedGeodesic {
            loop_: base,
            length: self.primitive_length(),
            residual_norm: self.residual_norm,
            primitive_base: self.primitive_base.clone(),
            cover_degree: 1,
        }
    }

    /// `d`-fold cover.
    pub fn cover(&self, d: usize) -> Result<ClosedGeodesic> {
        Ok(ClosedGeodesic {
            loop_: self.loop_.cover(d)?,
            length: self.length * d as f64,
            residual_norm: self.residual_norm,
            primitive_base: self.primitive_base.clone(),
            cover_degree: self.cover_degree * d,
        })
    }

    pub fn reversed(&self) -> ClosedGeodesic {
        let lp = canonical_phase(&self.loop_.reversed());
        let base = primitive_decompose(&lp).base;
        ClosedGeodesic {
            loop_: lp,
            length: self.length,
            residual_norm: self.residual_norm,
            primitive_base: canonicalize(&base),
            cover_degree: self.cover_degree,
        }
    }
}

/// Options for [`refine_to_geodesic`] and [`correct`].
#[derive(Debug, Clone)]
pub struct NewtonOptions {
    pub max_iterations: usize,
    /// Iterations that use Levenberg–Marquardt damping.
    pub damped_iterations: usize,
    /// Convergence when `residual_norm < tolerance / length`.
    pub tolerance: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { max_iterations: 50, damped_iterations: 5, tolerance: 1e-8 }
    }
}

/// Covariant acceleration of the loop at every node (θ-parametrization).
pub fn residual_vectors(spec: &MetricSpec, lp: &DiscreteLoop) -> Vec<DVector<f64>> {
    let v = lp.derivative(1);
    let a = lp.derivative(2);
    lp.nodes()
        .iter()
        .zip(v.iter().zip(a.iter()))
        .map(|(x, (v, a))| spec.covariant_acceleration(x, v, a))
        .collect()
}

/// `max_i |∇_θ γ_θ|_g / ℓ²`, a curvature-like quantity.
pub fn residual_norm(spec: &MetricSpec, lp: &DiscreteLoop) -> f64 {
    let len = lp.length(spec);
    residual_vectors(spec, lp)
        .iter()
        .zip(lp.nodes())
        .map(|(r, x)| spec.norm_at(x, r))
        .fold(0.0, f64::max)
        / (len * len)
}

/// Linear side condition `Σ_i w_i·(x_i − r_i) + c·(s − s_ref) = target`.
#[derive(Debug, Clone)]
pub struct LinearConstraint {
    pub weights: Vec<DVector<f64>>,
    pub reference: Vec<DVector<f64>>,
    pub s_weight: f64,
    pub s_reference: f64,
    pub target: f64,
}

impl LinearConstraint {
    fn value(&self, lp: &DiscreteLoop, s: f64) -> f64 {
        let mut acc = self.s_weight * (s - self.s_reference) - self.target;
        for ((w, r), x) in self.weights.iter().zip(&self.reference).zip(lp.nodes()) {
            acc += w.dot(&(x - r));
        }
        acc
    }
}

/// Convergence record of a Newton solve.
#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub loop_: DiscreteLoop,
    pub s: f64,
    pub iterations: usize,
    /// `residual_norm` before each iteration and after the last.
    pub history: Vec<f64>,
}

struct System {
    jac: DMatrix<f64>,
    rhs: DVector<f64>,
}

fn project_all(spec: &MetricSpec, lp: &DiscreteLoop) -> Result<DiscreteLoop> {
    DiscreteLoop::new(lp.nodes().iter().map(|x| spec.project(x)).collect())
}

/// Builds the linearized system in tangent coordinates. Rows: residual in
/// the tangent basis at every node, the rotation gauge, then the optional
/// constraint. Columns: tangent displacements, then `s` when free.
#[allow(clippy::too_many_arguments)]
fn assemble(
    spec: &MetricSpec,
    spec_at: Option<&dyn Fn(f64) -> Result<MetricSpec>>,
    s: f64,
    lp: &DiscreteLoop,
    bases: &[DMatrix<f64>],
    gauge: &(DVector<f64>, DVector<f64>),
    constraint: Option<&LinearConstraint>,
    scale: f64,
) -> Result<System> {
    let n = lp.len();
    let m = lp.ambient_dim();
    let k = m - 1;
    let free_s = spec_at.is_some();
    let cols = n * k + usize::from(free_s);
    let rows = n * k + 1 + usize::from(constraint.is_some());
    let d1 = spectral::diff1_matrix(n);
    let d2 = spectral::diff2_matrix(n);
    let vel = lp.derivative(1);
    let acc = lp.derivative(2);
    let mut jac = DMatrix::zeros(rows, cols);
    let mut rhs = DVector::zeros(rows);
    let inv = 1.0 / scale;
    for i in 0..n {
        let x = &lp.nodes()[i];
        let nu = spec.unit_normal(x);
        let p = DMatrix::identity(m, m) - &nu * nu.transpose();
        let r = spec.covariant_acceleration(x, &vel[i], &acc[i]);
        let (dx, dv) = spec.acceleration_partials(x, &vel[i], &acc[i]);
        let ei_t = bases[i].transpose();
        let row_p = &ei_t * &p * inv;
        let row_v = &ei_t * &dv * inv;
        let rr = &ei_t * &r * inv;
        for a in 0..k {
            rhs[i * k + a] = -rr[a];
        }
        for j in 0..n {
            let c2 = d2[(i, j)];
            let c1 = d1[(i, j)];
            let mut block = &row_p * c2 + &row_v * c1;
            if i == j {
                block += &ei_t * &dx * inv;
            }
            let blk = block * &bases[j];
            jac.view_mut((i * k, j * k), (k, k)).copy_from(&blk);
        }
    }
    // Gauge: the component of node 0 along the reference tangent is pinned.
    let grow = n * k;
    let (t0, x0ref) = gauge;
    let gt = bases[0].transpose() * t0;
    for a in 0..k {
        jac[(grow, a)] = gt[a];
    }
    rhs[grow] = -t0.dot(&(&lp.nodes()[0] - x0ref));
    if let Some(c) = constraint {
        let row = grow + 1;
        for i in 0..n {
            let w = bases[i].transpose() * &c.weights[i];
            for a in 0..k {
                jac[(row, i * k + a)] = w[a];
            }
        }
        if free_s {
            jac[(row, n * k)] = c.s_weight;
        }
        rhs[row] = -c.value(lp, s);
    }
    if let Some(at) = spec_at {
        let h = 1e-6;
        let plus = at(s + h)?;
        let minus = at(s - h)?;
        let rp = residual_vectors(&plus, &project_all(&plus, lp)?);
        let rm = residual_vectors(&minus, &project_all(&minus, lp)?);
        for i in 0..n {
            let ds = bases[i].transpose() * (&rp[i] - &rm[i]) * (inv / (2.0 * h));
            for a in 0..k {
                jac[(i * k + a, n * k)] = ds[a];
            }
        }
    }
    Ok(System { jac, rhs })
}

fn solve_least_squares(sys: &System, damping: Option<f64>) -> Option<DVector<f64>> {
    match damping {
        Some(mu) => {
            let jt = sys.jac.transpose();
            let mut normal = &jt * &sys.jac;
            let scale = (0..normal.nrows()).map(|i| normal[(i, i)]).fold(0.0, f64::max);
            for i in 0..normal.nrows() {
                normal[(i, i)] += mu * scale;
            }
            normal.cholesky().map(|c| c.solve(&(jt * &sys.rhs)))
        }
        None => {
            let svd = sys.jac.clone().svd(true, true);
            let smax = svd.singular_values.max();
            svd.solve(&sys.rhs, 1e-11 * smax).ok()
        }
    }
}

fn apply_step(
    spec: &MetricSpec,
    lp: &DiscreteLoop,
    bases: &[DMatrix<f64>],
    step: &DVector<f64>,
) -> Result<DiscreteLoop> {
    let k = bases[0].ncols();
    let nodes = lp
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, x)| spec.project(&(x + &bases[i] * step.rows(i * k, k))))
        .collect();
    DiscreteLoop::new(nodes)
}

fn merit(spec: &MetricSpec, lp: &DiscreteLoop, constraint: Option<&LinearConstraint>, s: f64, scale: f64) -> f64 {
    let r: f64 = residual_vectors(spec, lp).iter().map(|v| v.norm_squared()).sum::<f64>() / (scale * scale);
    r + constraint.map_or(0.0, |c| c.value(lp, s).powi(2))
}

/// General corrector: solves for a closed geodesic of `spec_at(s)`, with
/// `s` free when `spec_at` is given (then `constraint` must be present to
/// close the system).
pub fn correct(
    spec_at: &dyn Fn(f64) -> Result<MetricSpec>,
    free_s: bool,
    s0: f64,
    seed: &DiscreteLoop,
    constraint: Option<&LinearConstraint>,
    opts: &NewtonOptions,
) -> Result<NewtonOutcome> {
    if free_s && constraint.is_none() {
        return Err(Error::Argument("a free metric parameter needs a side constraint".into()));
    }
    let mut s = s0;
    let mut spec = spec_at(s)?;
    let mut lp = project_all(&spec, seed)?;
    let v0 = lp.derivative(1);
    let gauge = (v0[0].normalize(), lp.nodes()[0].clone());
    let mut history = Vec::new();
    let mut mu = 1e-6;
    for it in 0..=opts.max_iterations {
        let len = lp.length(&spec);
        if !(len > COLLAPSE_LENGTH) {
            return Err(Error::Collapse { length: len });
        }
        let res = residual_norm(&spec, &lp);
        history.push(res);
        let cons_ok = constraint.map_or(true, |c| c.value(&lp, s).abs() < 1e-10 * (1.0 + len));
        if res < opts.tolerance / len && cons_ok {
            return Ok(NewtonOutcome { loop_: lp, s, iterations: it, history });
        }
        if it == opts.max_iterations || !res.is_finite() {
            break;
        }
        let scale = len * len;
        let bases: Vec<DMatrix<f64>> = lp.nodes().iter().map(|x| spec.tangent_basis(x)).collect();
        let sys = assemble(
            &spec,
            if free_s { Some(spec_at) } else { None },
            s,
            &lp,
            &bases,
            &gauge,
            constraint,
            scale,
        )?;
        let n = lp.len();
        let k = bases[0].ncols();
        if it < opts.damped_iterations {
            let current = merit(&spec, &lp, constraint, s, scale);
            let mut accepted = false;
            for _ in 0..10 {
                let Some(step) = solve_least_squares(&sys, Some(mu)) else {
                    mu *= 10.0;
                    continue;
                };
                let s_new = if free_s { s + step[n * k] } else { s };
                let spec_new = if free_s { spec_at(s_new)? } else { spec.clone() };
                if let Ok(cand) = apply_step(&spec_new, &lp, &bases, &step) {
                    let trial = merit(&spec_new, &cand, constraint, s_new, scale);
                    if trial.is_finite() && trial < current {
                        lp = cand;
                        s = s_new;
                        spec = spec_new;
                        mu = (mu / 10.0).max(1e-12);
                        accepted = true;
                        break;
                    }
                }
                mu *= 10.0;
            }
            if !accepted {
                // Damping could not reduce the residual; fall through to a full step.
                let step = solve_least_squares(&sys, None).ok_or(Error::Divergence {
                    iterations: it + 1,
                    residual: res,
                })?;
                if free_s {
                    s += step[n * k];
                    spec = spec_at(s)?;
                }
                lp = apply_step(&spec, &lp, &bases, &step)?;
            }
        } else {
            let step = solve_least_squares(&sys, None).ok_or(Error::Divergence {
                iterations: it + 1,
                residual: res,
            })?;
            if free_s {
                s += step[n * k];
                spec = spec_at(s)?;
            }
            lp = apply_step(&spec, &lp, &bases, &step)?;
        }
    }
    Err(Error::Divergence { iterations: opts.max_iterations, residual: *history.last().unwrap_or(&f64::NAN) })
}

/// Generic linear functional used to fix a deterministic phase.
const PHASE_FUNCTIONAL: [f64; 6] = [0.5377, 0.8147, 0.2193, 0.6711, 0.3143, 0.1270];

/// Rotate so that a fixed generic linear functional peaks at `θ = 0`.
pub fn canonical_phase(lp: &DiscreteLoop) -> DiscreteLoop {
    let m = lp.ambient_dim();
    let f: Vec<f64> = lp
        .nodes()
        .iter()
        .map(|x| (0..m).map(|c| PHASE_FUNCTIONAL[c % 6] * x[c]).sum())
        .collect();
    let n = f.len();
    let imax = (0..n).max_by(|&a, &b| f[a].partial_cmp(&f[b]).unwrap()).unwrap();
    let coeffs = spectral::forward(&f);
    let h = 1.0 / n as f64;
    let (mut a, mut b) = (imax as f64 * h - h, imax as f64 * h + h);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if spectral::eval_at(&coeffs, c) > spectral::eval_at(&coeffs, d) {
            b = d;
        } else {
            a = c;
        }
    }
    lp.rotate_by(0.5 * (a + b))
}

fn finish(spec: &MetricSpec, lp: DiscreteLoop) -> Result<ClosedGeodesic> {
    let lp = canonical_phase(&lp);
    let length = lp.length(spec);
    let dec = primitive_decompose(&lp);
    let residual = residual_norm(spec, &lp);
    if dec.degree > 1 {
        // Keep the node count per primitive period.
        let n = dec.base.len();
        let base = if n % 2 == 0 { dec.base.clone() } else { lp.clone() };
        let degree = if n % 2 == 0 { dec.degree } else { 1 };
        return Ok(ClosedGeodesic {
            loop_: base.cover(degree)?,
            length,
            residual_norm: residual,
            primitive_base: canonicalize(&base),
            cover_degree: degree,
        });
    }
    Ok(ClosedGeodesic {
        primitive_base: canonicalize(&lp),
        loop_: lp,
        length,
        residual_norm: residual,
        cover_degree: 1,
    })
}

/// Refine a seed loop to a closed geodesic of `spec`.
pub fn refine_to_geodesic(spec: &MetricSpec, seed: &DiscreteLoop) -> Result<ClosedGeodesic> {
    refine_with(spec, seed, &NewtonOptions::default()).map(|(g, _)| g)
}

/// Like [`refine_to_geodesic`] but also returns the Newton record.
pub fn refine_with(
    spec: &MetricSpec,
    seed: &DiscreteLoop,
    opts: &NewtonOptions,
) -> Result<(ClosedGeodesic, NewtonOutcome)> {
    let chords = seed.chords();
    if chords.iter().any(|&c| c == 0.0) {
        return Err(Error::Argument("seed loop has repeated adjacent nodes".into()));
    }
    let spec_clone = spec.clone();
    let at = move |_s: f64| Ok(spec_clone.clone());
    let out = correct(&at, false, 0.0, seed, None, opts)?;
    let geo = finish(spec, out.loop_.clone())?;
    Ok((geo, out))
}

/// How seed loops are generated for a census.
#[derive(Debug, Clone)]
pub enum Seeding {
    /// Family default: great circles for ellipsoids and conformal spheres,
    /// parallels (plus meridians on closed profiles) for revolution surfaces.
    Auto,
    /// Great circles in planes whose normals form a Fibonacci grid.
    GreatCircles { planes: usize },
    /// Parallel circles at equally spaced heights.
    Parallels { levels: usize },
    /// Caller-supplied seeds.
    Custom(Vec<DiscreteLoop>),
}

#[derive(Debug, Clone)]
pub struct CensusOptions {
    /// Final nodes per primitive period.
    pub mesh: usize,
    /// Nodes used for the multistart phase.
    pub coarse_mesh: usize,
    pub seeding: Seeding,
    pub newton: NewtonOptions,
}

impl Default for CensusOptions {
    fn default() -> Self {
        Self { mesh: 256, coarse_mesh: 32, seeding: Seeding::Auto, newton: NewtonOptions::default() }
    }
}

impl CensusOptions {
    pub fn with_mesh(mesh: usize) -> Self {
        Self { mesh, ..Self::default() }
    }
}

/// Seeding statistics attached to a census.
#[derive(Debug, Clone, Default)]
pub struct CompletenessCertificate {
    pub seeds: usize,
    pub converged: usize,
    pub diverged: usize,
    pub collapsed: usize,
    /// Number of seeds that landed in each primitive class, by geodesic id.
    pub hits: Vec<usize>,
    /// More than [`DEGENERATE_FAMILY_THRESHOLD`] classes share one length.
    pub degenerate_family: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct GeodesicSet {
    pub metric: MetricSpec,
    pub length_bound: f64,
    /// Sorted by length; the index is the geodesic id.
    pub geodesics: Vec<ClosedGeodesic>,
    /// Id of the orientation-reversed partner of each entry.
    pub partners: Vec<Option<usize>>,
    /// Id of the primitive (degree 1) entry underlying each entry.
    pub primitive_ids: Vec<usize>,
    pub certificate: CompletenessCertificate,
}

impl GeodesicSet {
    pub fn len(&self) -> usize {
        self.geodesics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.geodesics.is_empty()
    }

    /// Table with one row per geodesic: id, d, length, residual, partner.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,d,length,residual,partner\n");
        for (i, g) in self.geodesics.iter().enumerate() {
            let partner = self.partners[i].map_or(String::from(""), |p| p.to_string());
            out.push_str(&format!(
                "{},{},{:.16e},{:.16e},{}\n",
                i, g.cover_degree, g.length, g.residual_norm, partner
            ));
        }
        out
    }
}

/// Rotation-invariant summary of a loop: centroid and oriented area
/// bivector, used to reject non-matching pairs cheaply.
#[derive(Debug, Clone)]
struct LoopSignature {
    length: f64,
    centroid: DVector<f64>,
    area: DMatrix<f64>,
}

impl LoopSignature {
    fn of(spec: &MetricSpec, lp: &DiscreteLoop) -> Self {
        let n = lp.len() as f64;
        let m = lp.ambient_dim();
        let vel = lp.derivative(1);
        let mut centroid = DVector::zeros(m);
        let mut area = DMatrix::zeros(m, m);
        for (x, v) in lp.nodes().iter().zip(vel.iter()) {
            centroid += x;
            area += x * v.transpose() - v * x.transpose();
        }
        Self { length: lp.length(spec), centroid: centroid / n, area: area / n }
    }

    fn close(&self, other: &Self, tol: f64) -> bool {
        let scale = self.length.max(other.length);
        (self.length - other.length).abs() < tol * scale
            && (&self.centroid - &other.centroid).norm() < tol * scale
            && (&self.area - &other.area).norm() < tol * scale * scale
    }
}

fn same_loop(a: &DiscreteLoop, b: &DiscreteLoop, sa: &LoopSignature, sb: &LoopSignature, tol: f64) -> bool {
    if !sa.close(sb, 10.0 * tol) {
        return false;
    }
    a.rotation_distance(b).0 < tol * sa.length
}

fn fibonacci_normals(count: usize) -> Vec<[f64; 3]> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|j| {
            let z = 1.0 - (j as f64 + 0.5) / count as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * j as f64;
            [r * phi.cos(), r * phi.sin(), z]
        })
        .collect()
}

fn plane_basis(k: [f64; 3]) -> (DVector<f64>, DVector<f64>) {
    let k = DVector::from_row_slice(&k).normalize();
    let helper = if k[0].abs() < 0.9 {
        DVector::from_vec(vec![1.0, 0.0, 0.0])
    } else {
        DVector::from_vec(vec![0.0, 1.0, 0.0])
    };
    let u = (&helper - k.dot(&helper) * &k).normalize();
    let v = DVector::from_column_slice(k.cross(&u).as_slice());
    (u, v)
}

/// Seed loops for a census, on `n` nodes.
pub fn seeds(spec: &MetricSpec, seeding: &Seeding, n: usize) -> Result<Vec<DiscreteLoop>> {
    let great = |planes: usize| -> Result<Vec<DiscreteLoop>> {
        let mut out = Vec::with_capacity(2 * planes);
        for k in fibonacci_normals(planes) {
            let (u, v) = plane_basis(k);
            let lp = DiscreteLoop::great_circle(n, &u, &v)?;
            out.push(project_all(spec, &lp)?);
            out.push(project_all(spec, &lp.reversed())?);
        }
        Ok(out)
    };
    match (seeding, &spec.family) {
        (Seeding::Custom(list), _) => list.iter().map(|l| project_all(spec, l)).collect(),
        (Seeding::Auto, Family::Ellipsoid { a }) if a.len() > 3 => {
            // Higher-dimensional ellipsoids: coordinate planes only.
            let m = a.len();
            let mut out = Vec::new();
            for i in 0..m {
                for j in i + 1..m {
                    let mut u = DVector::zeros(m);
                    let mut v = DVector::zeros(m);
                    u[i] = 1.0;
                    v[j] = 1.0;
                    let lp = DiscreteLoop::great_circle(n, &u, &v)?;
                    out.push(project_all(spec, &lp)?);
                    out.push(project_all(spec, &lp.reversed())?);
                }
            }
            Ok(out)
        }
        (Seeding::Auto, Family::Ellipsoid { .. } | Family::ConformalSphere { .. }) => great(200),
        (Seeding::GreatCircles { planes }, _) => {
            if spec.ambient_dim() != 3 {
                return Err(Error::Argument("great-circle seeding needs a surface in ℝ³".into()));
            }
            great(*planes)
        }
        (Seeding::Auto, Family::SurfaceOfRevolution { .. }) => {
            revolution_seeds(spec, 64, n)
        }
        (Seeding::Parallels { levels }, Family::SurfaceOfRevolution { .. }) => {
            revolution_seeds(spec, *levels, n)
        }
        (Seeding::Parallels { .. }, _) => {
            Err(Error::Argument("parallel seeding needs a surface of revolution".into()))
        }
    }
}

fn revolution_seeds(spec: &MetricSpec, levels: usize, n: usize) -> Result<Vec<DiscreteLoop>> {
    let Family::SurfaceOfRevolution { profile } = &spec.family else {
        return Err(Error::Argument("not a surface of revolution".into()));
    };
    let (lo, hi) = profile.z_range;
    let margin = 0.02 * (hi - lo);
    let tau = std::f64::consts::TAU;
    let mut out = Vec::new();
    for i in 0..levels {
        let z = lo + margin + (hi - lo - 2.0 * margin) * (i as f64 + 0.5) / levels as f64;
        let r = profile.radius(z).0;
        if !(r > 0.0) {
            continue;
        }
        let lp = DiscreteLoop::from_fn(n, |t| {
            DVector::from_vec(vec![r * (tau * t).cos(), r * (tau * t).sin(), z])
        })?;
        out.push(lp.reversed());
        out.push(lp);
    }
    if profile.is_closed() {
        let mid = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);
        let r = profile.radius(mid).0;
        for phi in [0.0, 0.5 * std::f64::consts::PI] {
            let lp = DiscreteLoop::from_fn(n, |t| {
                let (c, s) = ((tau * t).cos(), (tau * t).sin());
                DVector::from_vec(vec![r * c * f64::cos(phi), r * c * f64::sin(phi), mid + half * s])
            })?;
            out.push(project_all(spec, &lp)?);
        }
    }
    Ok(out)
}

struct Class {
    geo: ClosedGeodesic,
    sig: LoopSignature,
    hits: usize,
}

fn insert_class(spec: &MetricSpec, classes: &mut Vec<Class>, geo: ClosedGeodesic, tol: f64) -> usize {
    let sig = LoopSignature::of(spec, &geo.loop_);
    for (i, c) in classes.iter_mut().enumerate() {
        if c.geo.loop_.len() == geo.loop_.len() && same_loop(&c.geo.loop_, &geo.loop_, &c.sig, &sig, tol) {
            c.hits += 1;
            return i;
        }
    }
    classes.push(Class { geo, sig, hits: 1 });
    classes.len() - 1
}

/// Multistart census of closed geodesics with length below `bound`,
/// including both orientations and all covers.
pub fn find_all(spec: &MetricSpec, bound: f64, opts: &CensusOptions) -> Result<GeodesicSet> {
    if opts.mesh < 8 || opts.mesh % 2 != 0 {
        return Err(Error::Argument(format!("mesh must be even and at least 8, got {}", opts.mesh)));
    }
    let coarse_n = opts.coarse_mesh.min(opts.mesh);
    let seed_loops = seeds(spec, &opts.seeding, coarse_n)?;
    let mut cert = CompletenessCertificate { seeds: seed_loops.len(), ..Default::default() };

    let results: Vec<Result<ClosedGeodesic>> = seed_loops
        .par_iter()
        .map(|s| refine_with(spec, s, &opts.newton).map(|(g, _)| g))
        .collect();

    let mut classes: Vec<Class> = Vec::new();
    for r in results {
        match r {
            Ok(g) => {
                cert.converged += 1;
                let prim = g.primitive();
                if prim.length < bound {
                    insert_class(spec, &mut classes, prim, 1e-5);
                }
            }
            Err(Error::Collapse { .. }) => cert.collapsed += 1,
            Err(_) => cert.diverged += 1,
        }
    }

    // Refine class representatives on the target mesh.
    let refined: Vec<(Result<ClosedGeodesic>, usize)> = classes
        .par_iter()
        .map(|c| {
            let fine = c.geo.loop_.resample(opts.mesh).and_then(|lp| {
                if residual_norm(spec, &lp) < opts.newton.tolerance / c.geo.length {
                    finish(spec, lp)
                } else {
                    refine_with(spec, &lp, &opts.newton).map(|(g, _)| g)
                }
            });
            (fine, c.hits)
        })
        .collect();
    let mut fine_classes: Vec<Class> = Vec::new();
    for (r, hits) in refined {
        match r {
            Ok(g) if g.cover_degree == 1 && g.length < bound => {
                let before = fine_classes.len();
                let idx = insert_class(spec, &mut fine_classes, g, 1e-6);
                if idx < before {
                    fine_classes[idx].hits += hits - 1;
                } else {
                    fine_classes[idx].hits = hits;
                }
            }
            Ok(_) => {}
            Err(e) => cert.warnings.push(format!("refinement on the target mesh failed: {e}")),
        }
    }

    // Close under orientation reversal.
    let count = fine_classes.len();
    for i in 0..count {
        let rev = fine_classes[i].geo.reversed();
        let sig = LoopSignature::of(spec, &rev.loop_);
        let present = fine_classes
            .iter()
            .any(|c| same_loop(&c.geo.loop_, &rev.loop_, &c.sig, &sig, 1e-6));
        if !present {
            fine_classes.push(Class { geo: rev, sig, hits: 0 });
        }
    }

    // Continuous-family detection.
    let mut lengths: Vec<f64> = fine_classes.iter().map(|c| c.geo.length).collect();
    lengths.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut run = 1;
    for w in lengths.windows(2) {
        if (w[1] - w[0]).abs() < 1e-6 * w[1] {
            run += 1;
            if run > DEGENERATE_FAMILY_THRESHOLD {
                cert.degenerate_family = true;
            }
        } else {
            run = 1;
        }
    }
    if cert.degenerate_family {
        cert.warnings.push(format!(
            "more than {DEGENERATE_FAMILY_THRESHOLD} distinct geodesics share one length: the metric is not bumpy"
        ));
    }

    // Covers.
    let mut all: Vec<(ClosedGeodesic, usize, usize)> = Vec::new();
    for (ci, c) in fine_classes.iter().enumerate() {
        let mut d = 1;
        while (d as f64) * c.geo.length < bound {
            let g = if d == 1 { c.geo.clone() } else { c.geo.cover(d)? };
            if d > 1 {
                let res = residual_norm(spec, &g.loop_);
                if res > 10.0 * opts.newton.tolerance / g.length {
                    cert.warnings.push(format!("cover of degree {d} has residual {res:.3e}"));
                }
            }
            all.push((g, c.hits, ci));
            d += 1;
        }
    }

    // Deterministic order: length, then degree, then signature.
    let key = |g: &ClosedGeodesic| {
        let sig = LoopSignature::of(spec, &g.loop_);
        let mut k: Vec<f64> = sig.centroid.iter().copied().collect();
        k.extend(sig.area.iter().copied());
        k
    };
    all.sort_by(|(a, _, _), (b, _, _)| {
        let la = (a.length * 1e8).round();
        let lb = (b.length * 1e8).round();
        la.partial_cmp(&lb)
            .unwrap()
            .then(a.cover_degree.cmp(&b.cover_degree))
            .then_with(|| {
                let (ka, kb) = (key(a), key(b));
                for (x, y) in ka.iter().zip(kb.iter()) {
                    let (x, y) = ((x * 1e8).round(), (y * 1e8).round());
                    if x != y {
                        return x.partial_cmp(&y).unwrap();
                    }
                }
                std::cmp::Ordering::Equal
            })
    });

    for (g, hits, _) in &all {
        if g.cover_degree == 1 && *hits == 1 && !cert.degenerate_family {
            cert.warnings.push(format!(
                "geodesic of length {:.6} was reached by a single seed; the census may be incomplete",
                g.length
            ));
        }
        if (g.length - bound).abs() < 1e-6 {
            cert.warnings.push(format!("length bound {bound} is within 1e-6 of a geodesic length"));
        }
    }
    cert.hits = all.iter().map(|(_, h, _)| *h).collect();

    let primitive_ids: Vec<usize> = all
        .iter()
        .map(|(_, _, ci)| {
            all.iter()
                .position(|(g, _, cj)| cj == ci && g.cover_degree == 1)
                .expect("every class has a primitive entry")
        })
        .collect();
    let geodesics: Vec<ClosedGeodesic> = all.into_iter().map(|(g, _, _)| g).collect();
    let partners = orientation_partners(spec, &geodesics);
    Ok(GeodesicSet {
        metric: spec.clone(),
        length_bound: bound,
        geodesics,
        partners,
        primitive_ids,
        certificate: cert,
    })
}

/// For each geodesic, the id of its orientation reversal in the list.
pub fn orientation_partners(spec: &MetricSpec, list: &[ClosedGeodesic]) -> Vec<Option<usize>> {
    let sigs: Vec<LoopSignature> = list.iter().map(|g| LoopSignature::of(spec, &g.loop_)).collect();
    (0..list.len())
        .map(|i| {
            let rev = list[i].reversed();
            let rsig = LoopSignature::of(spec, &rev.loop_);
            (0..list.len()).find(|&j| {
                list[j].cover_degree == list[i].cover_degree
                    && list[j].loop_.len() == rev.loop_.len()
                    && same_loop(&list[j].loop_, &rev.loop_, &sigs[j], &rsig, 1e-6)
            })
        })
        .collect()
}

/// Wrap a converged loop as a primitive geodesic without changing its phase.
pub fn closed_geodesic(spec: &MetricSpec, lp: DiscreteLoop) -> ClosedGeodesic {
    ClosedGeodesic {
        length: lp.length(spec),
        residual_norm: residual_norm(spec, &lp),
        primitive_base: canonicalize(&lp),
        loop_: lp,
        cover_degree: 1,
    }
}
