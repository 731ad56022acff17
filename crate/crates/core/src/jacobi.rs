//! Normal Jacobi operator along a closed geodesic: index, nullity, Bloch
//! sectors, Floquet monodromy and λ-Jacobi fields.
//!
//! Conventions: the operator is `ζ'' + B ζ` in arc length `s` over a
//! parallel orthonormal normal frame, so `A ≡ 0` and `B` is symmetric. The
//! index counts positive eigenvalues of the discretized form
//! `q(ζ) = ∫ (−|ζ'|² + ⟨Bζ, ζ⟩) ds`, which is the Morse index of the energy.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::{parallel_transport, MetricSpec};
use crate::solver::ClosedGeodesic;
use crate::spectral;

/// Nullity tolerance relative to the low-mode spectral scale.
pub const NULLITY_RELATIVE_TOLERANCE: f64 = 1e-6;

static NULLITY_OVERRIDE: AtomicU64 = AtomicU64::new(0);

/// Replace the relative nullity tolerance for the whole process (`None`
/// restores the default).
pub fn set_nullity_relative_tolerance(value: Option<f64>) {
    NULLITY_OVERRIDE.store(value.map_or(0, f64::to_bits), Ordering::Relaxed);
}

pub fn nullity_relative_tolerance() -> f64 {
    match NULLITY_OVERRIDE.load(Ordering::Relaxed) {
        0 => NULLITY_RELATIVE_TOLERANCE,
        bits => f64::from_bits(bits),
    }
}

#[derive(Debug, Clone)]
pub struct NormalFrame {
    /// Per node, g-orthonormal normal vectors (ambient coordinates).
    pub frame: Vec<Vec<DVector<f64>>>,
    /// Unit tangent at each node (ambient coordinates, g-unit).
    pub tangent: Vec<DVector<f64>>,
    /// Holonomy of the normal bundle after one circuit.
    pub holonomy: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct JacobiOperatorData {
    /// Per-node `B(θ)` in arc-length units, `(n−1)×(n−1)` symmetric.
    pub b: Vec<DMatrix<f64>>,
    /// Length of one primitive period.
    pub length: f64,
}

impl JacobiOperatorData {
    /// Constant scalar `B ≡ value` on `n` nodes.
    pub fn constant(value: f64, length: f64, n: usize) -> Self {
        Self { b: vec![DMatrix::from_element(1, 1, value); n], length }
    }

    /// Scalar `B` given by samples.
    pub fn scalar(samples: &[f64], length: f64) -> Self {
        Self { b: samples.iter().map(|&v| DMatrix::from_element(1, 1, v)).collect(), length }
    }

    pub fn nodes(&self) -> usize {
        self.b.len()
    }

    /// Normal rank `n − 1`.
    pub fn rank(&self) -> usize {
        self.b[0].nrows()
    }

    /// The `A` coefficient, identically zero in a parallel frame.
    pub fn a(&self) -> Vec<DMatrix<f64>> {
        let k = self.rank();
        vec![DMatrix::zeros(k, k); self.nodes()]
    }

    /// Scale for the nullity threshold: `max|B| + (2π/ℓ)²`.
    pub fn spectral_scale(&self) -> f64 {
        let bmax = self.b.iter().map(|m| m.abs().max()).fold(0.0, f64::max);
        bmax + (2.0 * PI / self.length).powi(2)
    }

    pub fn nullity_tolerance(&self) -> f64 {
        nullity_relative_tolerance() * self.spectral_scale()
    }

    /// Largest asymmetry of `B` over all nodes.
    pub fn asymmetry(&self) -> f64 {
        self.b.iter().map(|m| (m - m.transpose()).abs().max()).fold(0.0, f64::max)
    }

    /// Component `(a, b)` of `B` resampled to `m` nodes.
    fn b_resampled(&self, m: usize) -> Vec<DMatrix<f64>> {
        let k = self.rank();
        let mut out = vec![DMatrix::zeros(k, k); m];
        for a in 0..k {
            for c in 0..k {
                let comp: Vec<f64> = self.b.iter().map(|b| b[(a, c)]).collect();
                let fine = spectral::resample(&comp, m);
                for (i, v) in fine.into_iter().enumerate() {
                    out[i][(a, c)] = v;
                }
            }
        }
        out
    }
}

/// Build the parallel normal frame and the curvature term along the
/// primitive of `geo`.
pub fn build_operator(spec: &MetricSpec, geo: &ClosedGeodesic) -> Result<(NormalFrame, JacobiOperatorData)> {
    let prim = geo.primitive();
    let lp = &prim.loop_;
    let m = lp.ambient_dim();
    let vel = lp.derivative(1);
    let tangent: Vec<DVector<f64>> = lp
        .nodes()
        .iter()
        .zip(vel.iter())
        .map(|(x, v)| v / spec.norm_at(x, v))
        .collect();
    let (frame, holonomy) = if m == 3 {
        let frame: Vec<Vec<DVector<f64>>> = lp
            .nodes()
            .iter()
            .zip(tangent.iter())
            .map(|(x, t)| {
                let nu = spec.unit_normal(x);
                let e = DVector::from_column_slice(nu.cross(t).as_slice());
                let e = &e / spec.norm_at(x, &e);
                vec![e]
            })
            .collect();
        (frame, DMatrix::identity(1, 1))
    } else {
        normal_frame_by_transport(spec, lp, &tangent)?
    };
    let dev = (&holonomy - DMatrix::identity(m - 2, m - 2)).abs().max();
    if dev > 1e-6 {
        return Err(Error::Holonomy(dev));
    }
    let b = lp
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let bm = spec.jacobi_curvature(x, &tangent[i], &frame[i]);
            0.5 * (&bm + bm.transpose())
        })
        .collect();
    Ok((
        NormalFrame { frame, tangent, holonomy },
        JacobiOperatorData { b, length: prim.length },
    ))
}

fn normal_frame_by_transport(
    spec: &MetricSpec,
    lp: &crate::loops::DiscreteLoop,
    tangent: &[DVector<f64>],
) -> Result<(Vec<Vec<DVector<f64>>>, DMatrix<f64>)> {
    let x0 = lp.node(0);
    let basis = spec.tangent_basis(&x0);
    let t0 = &tangent[0];
    let e0 = (-spec.conformal_exponent(&x0)).exp();
    // Orthonormal normals at node 0 (Gram–Schmidt against the tangent).
    let mut normals: Vec<DVector<f64>> = Vec::new();
    let t_unit = t0.normalize();
    for c in 0..basis.ncols() {
        let mut v = basis.column(c).into_owned();
        v -= t_unit.dot(&v) * &t_unit;
        for w in &normals {
            v -= w.dot(&v) * w;
        }
        if v.norm() > 1e-6 {
            normals.push(v.normalize());
        }
    }
    let k = normals.len();
    let n = lp.len();
    let mut frame = vec![Vec::with_capacity(k); n];
    let mut hol = DMatrix::zeros(k, k);
    let coords: Vec<DVector<f64>> = normals.iter().map(|e| basis.transpose() * e).collect();
    for (b, e) in normals.iter().enumerate() {
        let tr = parallel_transport(spec, lp, &(e * e0))?;
        for (i, v) in tr.vectors.iter().enumerate() {
            frame[i].push(v.clone());
        }
        let image = &tr.holonomy * &coords[b];
        for a in 0..k {
            hol[(a, b)] = coords[a].dot(&image);
        }
    }
    Ok((frame, hol))
}

/// The discretized form `q` on the `d`-fold cover, either directly on `dN`
/// periodic nodes or restricted to the Bloch sector `ζ(θ+1) = λ ζ(θ)`.
#[derive(Debug, Clone)]
pub enum FormMatrix {
    Real(DMatrix<f64>),
    Hermitian(DMatrix<Complex64>),
}

impl FormMatrix {
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = match self {
            FormMatrix::Real(m) => m.clone().symmetric_eigenvalues().iter().copied().collect(),
            FormMatrix::Hermitian(m) => m.clone().symmetric_eigenvalues().iter().copied().collect(),
        };
        ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
        ev
    }

    pub fn dim(&self) -> usize {
        match self {
            FormMatrix::Real(m) => m.nrows(),
            FormMatrix::Hermitian(m) => m.nrows(),
        }
    }
}

/// Which `j` a `d`-th root of unity `λ = e^{2πij/d}` corresponds to.
pub fn sector_of(lambda: Complex64, d: usize) -> Result<usize> {
    let pow = lambda.powu(d as u32);
    if (pow - 1.0).norm() > 1e-9 || (lambda.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::Argument(format!("λ = {lambda} is not a root of unity of order {d}")));
    }
    let j = (lambda.arg() / (2.0 * PI) * d as f64).round() as i64;
    Ok(j.rem_euclid(d as i64) as usize)
}

pub fn root_of_unity(j: usize, d: usize) -> Complex64 {
    Complex64::from_polar(1.0, 2.0 * PI * j as f64 / d as f64)
}

/// Matrix of `q` over the `d`-fold cover (arc-length units), or of its
/// `λ`-sector when `lambda` is given.
pub fn quadratic_form_matrix(data: &JacobiOperatorData, d: usize, lambda: Option<Complex64>) -> Result<FormMatrix> {
    if d == 0 {
        return Err(Error::Argument("cover degree must be positive".into()));
    }
    let n = data.nodes();
    let k = data.rank();
    let period = d as f64 * data.length;
    match lambda {
        None => {
            let nn = d * n;
            let d2 = spectral::diff2_matrix(nn) / (period * period);
            let mut q = DMatrix::zeros(nn * k, nn * k);
            for i in 0..nn {
                for j in 0..nn {
                    let v = d2[(i, j)];
                    for a in 0..k {
                        q[(i * k + a, j * k + a)] = v;
                    }
                }
                let b = &data.b[i % n];
                for a in 0..k {
                    for c in 0..k {
                        q[(i * k + a, i * k + c)] += b[(a, c)];
                    }
                }
            }
            Ok(FormMatrix::Real(q))
        }
        Some(lam) => {
            let j = sector_of(lam, d)?;
            let nn = d * n;
            let half = (nn / 2) as i64;
            let mut modes: Vec<i64> = Vec::with_capacity(n);
            for mm in (-half + 1)..=half {
                if (mm - j as i64).rem_euclid(d as i64) == 0 {
                    modes.push(mm);
                }
            }
            let mut h = DMatrix::<Complex64>::zeros(n * k, n * k);
            // Σ_m v_m v_m^* (−(2πm/period)²) / N, v_m(p) = e^{2πi m p / (dN)}.
            let mut kernel = vec![Complex64::new(0.0, 0.0); n];
            for &mm in &modes {
                let w = -(2.0 * PI * mm as f64 / period).powi(2) / n as f64;
                for (delta, slot) in kernel.iter_mut().enumerate() {
                    let phase = 2.0 * PI * (mm * delta as i64) as f64 / nn as f64;
                    *slot += Complex64::from_polar(w, phase);
                }
            }
            // The sum depends on p − q modulo N only up to the Bloch phase.
            for p in 0..n {
                for q in 0..n {
                    let (delta, wrap) = if p >= q { (p - q, false) } else { (p + n - q, true) };
                    let mut v = kernel[delta];
                    if wrap {
                        v *= lam.conj();
                    }
                    for a in 0..k {
                        h[(p * k + a, q * k + a)] = v;
                    }
                }
                let b = &data.b[p];
                for a in 0..k {
                    for c in 0..k {
                        h[(p * k + a, p * k + c)] += Complex64::new(b[(a, c)], 0.0);
                    }
                }
            }
            Ok(FormMatrix::Hermitian(h))
        }
    }
}

/// Eigenvalue classification against the nullity threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumCount {
    pub index: usize,
    pub nullity: usize,
    /// Smallest `|eigenvalue|` outside the kernel band.
    pub eigen_gap: f64,
}

pub fn count_spectrum(eigs: &[f64], tau: f64) -> SpectrumCount {
    let mut index = 0;
    let mut nullity = 0;
    let mut gap = f64::INFINITY;
    for &e in eigs {
        if e > tau {
            index += 1;
            gap = gap.min(e.abs());
        } else if e >= -tau {
            nullity += 1;
        } else {
            gap = gap.min(e.abs());
        }
    }
    SpectrumCount { index, nullity, eigen_gap: gap }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexNullity {
    pub degree: usize,
    pub index: usize,
    pub nullity: usize,
    pub eigen_gap: f64,
    pub tolerance: f64,
    /// `eigen_gap < 10 τ`.
    pub ill_conditioned: bool,
    /// `(index, nullity)` of each Bloch sector `j = 0..d`.
    pub sectors: Vec<(usize, usize)>,
    /// `ι^{λ=1} + [d even] ι^{λ=−1} + 2 Σ_{0<j<d/2} ι^{λ_j}`.
    pub sector_index_sum: usize,
    pub sector_nullity_sum: usize,
}

/// Per-sector counts for the `d`-fold cover.
pub fn sector_counts(data: &JacobiOperatorData, d: usize) -> Result<Vec<(usize, usize, f64)>> {
    let tau = data.nullity_tolerance();
    // Sectors j and d − j are complex conjugates; compute the lower half.
    let mut out = vec![(0, 0, f64::INFINITY); d];
    for j in 0..=d / 2 {
        let q = quadratic_form_matrix(data, d, Some(root_of_unity(j, d)))?;
        let c = count_spectrum(&q.eigenvalues(), tau);
        out[j] = (c.index, c.nullity, c.eigen_gap);
        if j != 0 && 2 * j != d {
            out[d - j] = out[j];
        }
    }
    Ok(out)
}

fn sector_sum(sectors: &[(usize, usize, f64)], d: usize, pick: impl Fn(&(usize, usize, f64)) -> usize) -> usize {
    let mut total = pick(&sectors[0]);
    if d % 2 == 0 && d > 1 {
        total += pick(&sectors[d / 2]);
    }
    for j in 1..d {
        if 2 * j < d {
            total += 2 * pick(&sectors[j]);
        }
    }
    total
}

/// `(ι(d), ν(d))` from the direct `dN`-node problem, with the sector
/// decomposition computed alongside.
pub fn index_nullity(data: &JacobiOperatorData, d: usize) -> Result<IndexNullity> {
    let tau = data.nullity_tolerance();
    let direct = count_spectrum(&quadratic_form_matrix(data, d, None)?.eigenvalues(), tau);
    let sectors = sector_counts(data, d)?;
    Ok(IndexNullity {
        degree: d,
        index: direct.index,
        nullity: direct.nullity,
        eigen_gap: direct.eigen_gap,
        tolerance: tau,
        ill_conditioned: direct.eigen_gap < 10.0 * tau,
        sector_index_sum: sector_sum(&sectors, d, |s| s.0),
        sector_nullity_sum: sector_sum(&sectors, d, |s| s.1),
        sectors: sectors.iter().map(|s| (s.0, s.1)).collect(),
    })
}

/// `(ι(d), ν(d))` from the Bloch sectors only (cheaper for large `d`).
pub fn index_nullity_by_sectors(data: &JacobiOperatorData, d: usize) -> Result<IndexNullity> {
    let tau = data.nullity_tolerance();
    let sectors = sector_counts(data, d)?;
    let gap = sectors.iter().map(|s| s.2).fold(f64::INFINITY, f64::min);
    let index = sector_sum(&sectors, d, |s| s.0);
    let nullity = sector_sum(&sectors, d, |s| s.1);
    Ok(IndexNullity {
        degree: d,
        index,
        nullity,
        eigen_gap: gap,
        tolerance: tau,
        ill_conditioned: gap < 10.0 * tau,
        sectors: sectors.iter().map(|s| (s.0, s.1)).collect(),
        sector_index_sum: index,
        sector_nullity_sum: nullity,
    })
}

/// Fundamental matrix of `ζ'' = −Bζ` over one period and its eigenvalues.
#[derive(Debug, Clone)]
pub struct Monodromy {
    pub matrix: DMatrix<f64>,
    pub multipliers: Vec<Complex64>,
}

impl Monodromy {
    /// `dim ker(M^d − I)`: the geometric multiplicities of the multipliers
    /// that are `d`-th roots of unity.
    pub fn kernel_dim(&self, d: usize) -> usize {
        let n = self.matrix.nrows();
        let mc = self.matrix.map(|v| Complex64::new(v, 0.0));
        let scale = self.matrix.abs().max().max(1.0);
        let mut seen: Vec<Complex64> = Vec::new();
        let mut total = 0;
        for &mu in &self.multipliers {
            if (mu.powu(d as u32) - 1.0).norm() >= 1e-6 || seen.iter().any(|s| (s - mu).norm() < 1e-6) {
                continue;
            }
            seen.push(mu);
            let shifted = &mc - DMatrix::<Complex64>::identity(n, n) * mu;
            total += shifted.singular_values().iter().filter(|&&s| s < 1e-5 * scale).count();
        }
        total
    }

    /// Number of multipliers `μ` with `|μ^d − 1| < 1e-6`.
    pub fn root_of_unity_count(&self, d: usize) -> usize {
        self.multipliers
            .iter()
            .filter(|mu| (mu.powu(d as u32) - 1.0).norm() < 1e-6)
            .count()
    }
}

/// Integrate the first-order system over `periods` periods with `sub` RK4
/// steps per node; returns the state after each node when `record`.
fn integrate(
    b_fine: &[DMatrix<f64>],
    length: f64,
    nodes: usize,
    sub: usize,
    periods: usize,
    start: &DMatrix<f64>,
    record: bool,
) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
    let k = b_fine[0].nrows();
    let steps = nodes * sub;
    let h = length / steps as f64;
    let fine_n = b_fine.len();
    debug_assert_eq!(fine_n, 2 * steps);
    let rhs = |b: &DMatrix<f64>, y: &DMatrix<f64>| {
        let mut dy = DMatrix::zeros(y.nrows(), y.ncols());
        dy.rows_mut(0, k).copy_from(&y.rows(k, k));
        let top = y.rows(0, k).into_owned();
        dy.rows_mut(k, k).copy_from(&(-(b * top)));
        dy
    };
    let mut y = start.clone();
    let mut out = Vec::new();
    for _ in 0..periods {
        for step in 0..steps {
            if record && step % sub == 0 {
                out.push(y.clone());
            }
            let b0 = &b_fine[(2 * step) % fine_n];
            let bh = &b_fine[(2 * step + 1) % fine_n];
            let b1 = &b_fine[(2 * step + 2) % fine_n];
            let k1 = rhs(b0, &y);
            let k2 = rhs(bh, &(&y + &k1 * (0.5 * h)));
            let k3 = rhs(bh, &(&y + &k2 * (0.5 * h)));
            let k4 = rhs(b1, &(&y + &k3 * h));
            y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
    }
    (y, out)
}

/// Monodromy of the Jacobi equation over one primitive period.
pub fn monodromy(data: &JacobiOperatorData) -> Result<Monodromy> {
    let k = data.rank();
    let n = data.nodes();
    let sub = 4;
    let b_fine = data.b_resampled(2 * sub * n);
    let (m, _) = integrate(&b_fine, data.length, n, sub, 1, &DMatrix::identity(2 * k, 2 * k), false);
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Integrator("monodromy integration produced non-finite values".into()));
    }
    let multipliers = multipliers_of(&m);
    Ok(Monodromy { matrix: m, multipliers })
}

fn multipliers_of(m: &DMatrix<f64>) -> Vec<Complex64> {
    if m.nrows() == 2 {
        let tr = m[(0, 0)] + m[(1, 1)];
        let det = m.determinant();
        let disc = Complex64::new(tr * tr - 4.0 * det, 0.0).sqrt();
        return vec![(tr + disc) / 2.0, (tr - disc) / 2.0];
    }
    m.complex_eigenvalues().iter().copied().collect()
}

#[derive(Debug, Clone)]
pub struct LambdaJacobiField {
    pub lambda: Complex64,
    /// Values on the `d`-fold cover (`dN` nodes, frame coordinates).
    pub field: Vec<DVector<f64>>,
    /// Imaginary-part partner for non-real `λ`.
    pub twin: Option<Vec<DVector<f64>>>,
    /// The multiplier is defective (Jordan block).
    pub generalized: bool,
    /// `‖Qξ‖ / (scale · ‖ξ‖)` on the cover.
    pub residual: f64,
}

fn complex_kernel(a: &DMatrix<Complex64>, tol: f64) -> Vec<DVector<Complex64>> {
    let svd = a.clone().svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let smax = svd.singular_values.max().max(1.0);
    let mut out = Vec::new();
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s < tol * smax {
            out.push(vt.row(i).adjoint());
        }
    }
    out
}

/// Reconstruct a Jacobi field on the `d`-fold cover from initial data.
fn field_from(data: &JacobiOperatorData, b_fine: &[DMatrix<f64>], sub: usize, d: usize, init: &DVector<f64>) -> Vec<DVector<f64>> {
    let k = data.rank();
    let start = DMatrix::from_column_slice(2 * k, 1, init.as_slice());
    let (_, states) = integrate(b_fine, data.length, data.nodes(), sub, d, &start, true);
    states.iter().map(|s| DVector::from_iterator(k, s.rows(0, k).iter().copied())).collect()
}

fn field_residual(data: &JacobiOperatorData, d: usize, field: &[DVector<f64>]) -> Result<f64> {
    let k = data.rank();
    let q = match quadratic_form_matrix(data, d, None)? {
        FormMatrix::Real(q) => q,
        FormMatrix::Hermitian(_) => unreachable!(),
    };
    let v = DVector::from_iterator(field.len() * k, field.iter().flat_map(|x| x.iter().copied()));
    let norm = v.amax();
    if norm == 0.0 {
        return Ok(0.0);
    }
    Ok((q * &v).amax() / (data.spectral_scale() * norm))
}

/// λ-Jacobi fields on the `d`-fold cover: eigenvectors of the monodromy
/// with `|λ^d − 1| < 1e-6`.
pub fn detect_lambda_jacobi(data: &JacobiOperatorData, mono: &Monodromy, d: usize) -> Result<Vec<LambdaJacobiField>> {
    let k2 = mono.matrix.nrows();
    let mut distinct: Vec<(Complex64, usize)> = Vec::new();
    for &mu in &mono.multipliers {
        if (mu.powu(d as u32) - 1.0).norm() >= 1e-6 {
            continue;
        }
        // Snap to the exact root of unity.
        let j = (mu.arg() / (2.0 * PI) * d as f64).round() as i64;
        let lam = root_of_unity(j.rem_euclid(d as i64) as usize, d);
        if let Some(entry) = distinct.iter_mut().find(|(l, _)| (*l - lam).norm() < 1e-9) {
            entry.1 += 1;
        } else {
            distinct.push((lam, 1));
        }
    }
    let sub = 16;
    let b_fine = data.b_resampled(2 * sub * data.nodes());
    let mcomplex = mono.matrix.map(|v| Complex64::new(v, 0.0));
    let mut out = Vec::new();
    for (lam, alg) in distinct {
        let shifted = &mcomplex - DMatrix::<Complex64>::identity(k2, k2) * lam;
        let kernel = complex_kernel(&shifted, 1e-5);
        let generalized = kernel.len() < alg;
        let real = lam.im.abs() < 1e-12;
        for v in kernel {
            let re = v.map(|c| c.re);
            let im = v.map(|c| c.im);
            let (primary, twin_init) = if real {
                // Any real multiple works; pick the larger part.
                (if re.norm() >= im.norm() { re } else { im }, None)
            } else {
                (re, Some(im))
            };
            let field = field_from(data, &b_fine, sub, d, &primary);
            let twin = twin_init.map(|t| field_from(data, &b_fine, sub, d, &t));
            let mut residual = field_residual(data, d, &field)?;
            if let Some(t) = &twin {
                residual = residual.max(field_residual(data, d, t)?);
            }
            out.push(LambdaJacobiField { lambda: lam, field, twin, generalized, residual });
        }
    }
    Ok(out)
}

/// Field started from the least singular direction of `M − λ` for real
/// `λ = ±1`. Unlike [`detect_lambda_jacobi`] this needs no exact multiplier,
/// so it also works at a numerically located event where the double
/// multiplier has split slightly.
pub fn nearest_lambda_field(data: &JacobiOperatorData, mono: &Monodromy, lambda: f64, d: usize) -> Result<(Vec<DVector<f64>>, f64)> {
    let k2 = mono.matrix.nrows();
    let shifted = &mono.matrix - DMatrix::<f64>::identity(k2, k2) * lambda;
    let svd = shifted.svd(false, true);
    let vt = svd.v_t.ok_or_else(|| Error::Integrator("SVD failed".into()))?;
    let (imin, _) = svd.singular_values.argmin();
    let init = vt.row(imin).transpose();
    let sub = 16;
    let b_fine = data.b_resampled(2 * sub * data.nodes());
    let field = field_from(data, &b_fine, sub, d, &init);
    let residual = field_residual(data, d, &field)?;
    Ok((field, residual))
}

/// Full Jacobi analysis of one closed geodesic.
#[derive(Debug, Clone)]
pub struct JacobiReport {
    pub index: BTreeMap<usize, usize>,
    pub nullity: BTreeMap<usize, usize>,
    /// `dim ker(M^d − I)` from the monodromy.
    pub floquet_nullity: BTreeMap<usize, usize>,
    pub per_degree: BTreeMap<usize, IndexNullity>,
    pub monodromy: DMatrix<f64>,
    pub floquet_multipliers: Vec<Complex64>,
    pub lambda_jacobi: Vec<LambdaJacobiField>,
    /// Smallest gap over all degrees.
    pub eigen_gap: f64,
    pub tolerance: f64,
    pub ill_conditioned: bool,
    pub mesh: usize,
}

impl JacobiReport {
    pub fn epsilon(&self, d: usize) -> Option<i64> {
        self.index.get(&d).map(|&i| if i % 2 == 0 { 1 } else { -1 })
    }

    /// Structured text record.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (d, i) in &self.index {
            out.push_str(&format!("d {} index {} nullity {} floquet_nullity {}\n", d, i, self.nullity[d], self.floquet_nullity[d]));
        }
        for mu in &self.floquet_multipliers {
            out.push_str(&format!("multiplier {:.16e} {:.16e}\n", mu.re, mu.im));
        }
        for f in &self.lambda_jacobi {
            out.push_str(&format!(
                "lambda_field {:.16e} {:.16e} twin {} generalized {} residual {:.3e}\n",
                f.lambda.re,
                f.lambda.im,
                f.twin.is_some(),
                f.generalized,
                f.residual
            ));
        }
        out.push_str(&format!(
            "eigen_gap {:.16e}\ntolerance {:.16e}\nill_conditioned {}\nmesh {}\n",
            self.eigen_gap, self.tolerance, self.ill_conditioned, self.mesh
        ));
        out
    }
}

/// Index, nullity, sectors and Floquet data for degrees `1..=d_max`.
pub fn analyze_data(data: &JacobiOperatorData, d_max: usize) -> Result<JacobiReport> {
    let mono = monodromy(data)?;
    let mut report = JacobiReport {
        index: BTreeMap::new(),
        nullity: BTreeMap::new(),
        floquet_nullity: BTreeMap::new(),
        per_degree: BTreeMap::new(),
        monodromy: mono.matrix.clone(),
        floquet_multipliers: mono.multipliers.clone(),
        lambda_jacobi: Vec::new(),
        eigen_gap: f64::INFINITY,
        tolerance: data.nullity_tolerance(),
        ill_conditioned: false,
        mesh: data.nodes(),
    };
    let results: Vec<Result<IndexNullity>> = {
        use rayon::prelude::*;
        (1..=d_max).into_par_iter().map(|d| index_nullity(data, d)).collect()
    };
    for r in results {
        let r = r?;
        let d = r.degree;
        report.index.insert(d, r.index);
        report.nullity.insert(d, r.nullity);
        report.floquet_nullity.insert(d, mono.kernel_dim(d));
        report.eigen_gap = report.eigen_gap.min(r.eigen_gap);
        report.ill_conditioned |= r.ill_conditioned;
        report.per_degree.insert(d, r);
    }
    for d in 1..=d_max {
        for f in detect_lambda_jacobi(data, &mono, d)? {
            // Keep each λ once, at the smallest degree where it appears.
            if !report.lambda_jacobi.iter().any(|g| (g.lambda - f.lambda).norm() < 1e-9) {
                report.lambda_jacobi.push(f);
            }
        }
    }
    Ok(report)
}

/// [`build_operator`] followed by [`analyze_data`].
pub fn analyze(spec: &MetricSpec, geo: &ClosedGeodesic, d_max: usize) -> Result<JacobiReport> {
    let (_, data) = build_operator(spec, geo)?;
    analyze_data(&data, d_max)
}
