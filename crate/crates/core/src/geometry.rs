//! Riemannian data for the supported metric families.
//!
//! Every family is realized as a hypersurface `F(x) = 0` in `ℝ^{n+1}` carrying
//! the induced metric times a conformal factor `e^{2u}` (`u ≡ 0` except for
//! [`Family::ConformalSphere`]). Geodesic solving and Jacobi analysis work in
//! these ambient coordinates; the 2-dimensional chart routines
//! ([`MetricSpec::metric_at`], [`MetricSpec::christoffel_at`],
//! [`MetricSpec::curvature_at`]) are an independent intrinsic route used for
//! spot checks.

use nalgebra::{DMatrix, DVector, Matrix2, Vector3};

use crate::error::{Error, Result};
use crate::harmonics;
use crate::loops::DiscreteLoop;
use crate::spectral;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileKind {
    /// `r(z) = Σ c_k z^k`
    Radius,
    /// `r(z)² = Σ c_k z^k`; closed surfaces vanish at both ends of the range.
    RadiusSquared,
    /// `r(z) = c_0 cosh(z / c_0)`
    Catenoid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub kind: ProfileKind,
    pub coeffs: Vec<f64>,
    pub z_range: (f64, f64),
}

fn poly(c: &[f64], z: f64) -> (f64, f64, f64) {
    let (mut p, mut dp, mut ddp) = (0.0, 0.0, 0.0);
    for (k, &ck) in c.iter().enumerate().rev() {
        ddp = ddp * z + 2.0 * dp;
        dp = dp * z + p;
        p = p * z + ck;
        let _ = k;
    }
    (p, dp, ddp)
}

impl Profile {
    pub fn radius_poly(coeffs: Vec<f64>, z_range: (f64, f64)) -> Self {
        Self { kind: ProfileKind::Radius, coeffs, z_range }
    }

    pub fn radius_squared_poly(coeffs: Vec<f64>, z_range: (f64, f64)) -> Self {
        Self { kind: ProfileKind::RadiusSquared, coeffs, z_range }
    }

    pub fn catenoid(waist: f64, z_range: (f64, f64)) -> Self {
        Self { kind: ProfileKind::Catenoid, coeffs: vec![waist], z_range }
    }

    /// Spheroid with equatorial radius `a` and polar semi-axis `c`.
    pub fn spheroid(a: f64, c: f64) -> Self {
        Self::radius_squared_poly(vec![a * a, 0.0, -(a * a) / (c * c)], (-c, c))
    }

    /// `r²` and its first two derivatives.
    pub fn r2(&self, z: f64) -> (f64, f64, f64) {
        match self.kind {
            ProfileKind::RadiusSquared => poly(&self.coeffs, z),
            ProfileKind::Radius => {
                let (r, dr, ddr) = poly(&self.coeffs, z);
                (r * r, 2.0 * r * dr, 2.0 * (dr * dr + r * ddr))
            }
            ProfileKind::Catenoid => {
                let a = self.coeffs[0];
                let ch = (z / a).cosh();
                let sh = (z / a).sinh();
                (a * a * ch * ch, 2.0 * a * ch * sh, 2.0 * (ch * ch + sh * sh))
            }
        }
    }

    /// `r`, `r'`, `r''`.
    pub fn radius(&self, z: f64) -> (f64, f64, f64) {
        match self.kind {
            ProfileKind::Radius => poly(&self.coeffs, z),
            ProfileKind::Catenoid => {
                let a = self.coeffs[0];
                (a * (z / a).cosh(), (z / a).sinh(), (z / a).cosh() / a)
            }
            ProfileKind::RadiusSquared => {
                let (q, dq, ddq) = poly(&self.coeffs, z);
                let r = q.max(0.0).sqrt();
                let dr = dq / (2.0 * r);
                let ddr = (ddq / 2.0 - dr * dr) / r;
                (r, dr, ddr)
            }
        }
    }

    pub fn is_closed(&self) -> bool {
        self.kind == ProfileKind::RadiusSquared
            && self.r2(self.z_range.0).0.abs() < 1e-12
            && self.r2(self.z_range.1).0.abs() < 1e-12
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    /// `Σ (a_i x_i)² = 1` in `ℝ^{n+1}`; the `x_i` semi-axis is `1 / a_i`.
    Ellipsoid { a: Vec<f64> },
    SurfaceOfRevolution { profile: Profile },
    /// Round `S²` with metric `e^{2u} g_round`, `u = Σ c_i Y_i` over
    /// [`harmonics::BASIS`].
    ConformalSphere { coeffs: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricSpec {
    pub family: Family,
    /// Axis the polar chart is measured from (0, 1 or 2).
    pub pole_axis: usize,
}

/// Christoffel symbols `Γ^i_{jk}` in a 2-dimensional chart.
pub type Christoffel = [[[f64; 2]; 2]; 2];

#[derive(Debug, Clone)]
pub struct ChristoffelSample {
    pub gamma: Christoffel,
    /// Set when the point is close enough to a chart singularity that
    /// derivative accuracy degrades.
    pub near_boundary: bool,
}

#[derive(Debug, Clone)]
pub struct CurvatureSample {
    pub point: [f64; 2],
    /// `R^i_{jkl}` with `R(∂_k, ∂_l)∂_j = R^i_{jkl} ∂_i`.
    pub riemann: [[[[f64; 2]; 2]; 2]; 2],
    pub christoffel: Christoffel,
    pub gauss: f64,
    pub near_boundary: bool,
}

/// Chart embedding with first and second derivatives.
struct ChartJet {
    x: Vector3<f64>,
    d: [Vector3<f64>; 2],
    dd: [[Vector3<f64>; 2]; 2],
}

fn to_dvec(v: &Vector3<f64>) -> DVector<f64> {
    DVector::from_column_slice(v.as_slice())
}

impl MetricSpec {
    pub fn new(family: Family) -> Result<Self> {
        let spec = Self { family, pole_axis: 2 };
        spec.validate()?;
        Ok(spec)
    }

    pub fn ellipsoid(a: &[f64]) -> Result<Self> {
        Self::new(Family::Ellipsoid { a: a.to_vec() })
    }

    pub fn round_sphere() -> Self {
        Self::ellipsoid(&[1.0, 1.0, 1.0]).expect("unit sphere is valid")
    }

    pub fn revolution(profile: Profile) -> Result<Self> {
        Self::new(Family::SurfaceOfRevolution { profile })
    }

    pub fn conformal_sphere(coeffs: &[f64]) -> Result<Self> {
        Self::new(Family::ConformalSphere { coeffs: coeffs.to_vec() })
    }

    pub fn with_pole_axis(mut self, axis: usize) -> Self {
        self.pole_axis = axis;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match &self.family {
            Family::Ellipsoid { a } => {
                if a.len() < 3 {
                    return Err(Error::InvalidMetric("ellipsoid needs at least 3 axes".into()));
                }
                if a.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                    return Err(Error::InvalidMetric(format!(
                        "ellipsoid parameters must be positive, got {a:?}"
                    )));
                }
            }
            Family::SurfaceOfRevolution { profile } => {
                let (lo, hi) = profile.z_range;
                if !(hi > lo) {
                    return Err(Error::InvalidMetric("empty profile range".into()));
                }
                if profile.kind == ProfileKind::Catenoid && !(profile.coeffs[0] > 0.0) {
                    return Err(Error::InvalidMetric("catenoid waist must be positive".into()));
                }
                let mid = 0.5 * (lo + hi);
                if !(profile.r2(mid).0 > 0.0) {
                    return Err(Error::InvalidMetric("profile radius vanishes inside range".into()));
                }
            }
            Family::ConformalSphere { coeffs } => {
                if coeffs.len() > harmonics::MAX_COEFFS {
                    return Err(Error::InvalidMetric(format!(
                        "at most {} harmonic coefficients supported",
                        harmonics::MAX_COEFFS
                    )));
                }
            }
        }
        if self.pole_axis > 2 {
            return Err(Error::InvalidMetric("pole axis must be 0, 1 or 2".into()));
        }
        Ok(())
    }

    /// Manifold dimension `n`.
    pub fn dim(&self) -> usize {
        match &self.family {
            Family::Ellipsoid { a } => a.len() - 1,
            _ => 2,
        }
    }

    pub fn ambient_dim(&self) -> usize {
        self.dim() + 1
    }

    pub fn is_conformal(&self) -> bool {
        matches!(&self.family, Family::ConformalSphere { coeffs } if coeffs.iter().any(|&c| c != 0.0))
    }

    // ---------------------------------------------------------------------
    // Ambient (extrinsic) evaluation
    // ---------------------------------------------------------------------

    pub fn level(&self, x: &DVector<f64>) -> f64 {
        match &self.family {
            Family::Ellipsoid { a } => {
                a.iter().zip(x.iter()).map(|(ai, xi)| (ai * xi).powi(2)).sum::<f64>() - 1.0
            }
            Family::SurfaceOfRevolution { profile } => {
                x[0] * x[0] + x[1] * x[1] - profile.r2(x[2]).0
            }
            Family::ConformalSphere { .. } => x.norm_squared() - 1.0,
        }
    }

    pub fn level_grad(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.family {
            Family::Ellipsoid { a } => {
                DVector::from_iterator(x.len(), a.iter().zip(x.iter()).map(|(ai, xi)| 2.0 * ai * ai * xi))
            }
            Family::SurfaceOfRevolution { profile } => {
                DVector::from_vec(vec![2.0 * x[0], 2.0 * x[1], -profile.r2(x[2]).1])
            }
            Family::ConformalSphere { .. } => 2.0 * x,
        }
    }

    pub fn level_hess(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match &self.family {
            Family::Ellipsoid { a } => {
                DMatrix::from_diagonal(&DVector::from_iterator(a.len(), a.iter().map(|ai| 2.0 * ai * ai)))
            }
            Family::SurfaceOfRevolution { profile } => {
                DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 2.0, -profile.r2(x[2]).2]))
            }
            Family::ConformalSphere { .. } => DMatrix::identity(3, 3) * 2.0,
        }
    }

    /// `(u, ∇u, Hess u)` of the conformal exponent in ambient coordinates.
    pub fn conformal(&self, x: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        match &self.family {
            Family::ConformalSphere { coeffs } => harmonics::evaluate(coeffs, x),
            _ => {
                let m = x.len();
                (0.0, DVector::zeros(m), DMatrix::zeros(m, m))
            }
        }
    }

    pub fn conformal_exponent(&self, x: &DVector<f64>) -> f64 {
        match &self.family {
            Family::ConformalSphere { coeffs } => harmonics::evaluate(coeffs, x).0,
            _ => 0.0,
        }
    }

    pub fn unit_normal(&self, x: &DVector<f64>) -> DVector<f64> {
        self.level_grad(x).normalize()
    }

    /// Closest-point style projection onto the surface along the gradient.
    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        if let Family::ConformalSphere { .. } = self.family {
            return x.normalize();
        }
        let mut y = x.clone();
        for _ in 0..30 {
            let f = self.level(&y);
            let g = self.level_grad(&y);
            let step = f / g.norm_squared();
            y -= step * g;
            if step.abs() < 1e-16 {
                break;
            }
        }
        y
    }

    /// Orthonormal (Euclidean) basis of the tangent space, as columns.
    pub fn tangent_basis(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let nu = self.unit_normal(x);
        let m = nu.len();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&i, &j| nu[i].abs().partial_cmp(&nu[j].abs()).unwrap());
        let mut basis: Vec<DVector<f64>> = Vec::with_capacity(m - 1);
        for &axis in order.iter() {
            if basis.len() == m - 1 {
                break;
            }
            let mut v = DVector::zeros(m);
            v[axis] = 1.0;
            v -= nu.dot(&v) * &nu;
            for b in &basis {
                v -= b.dot(&v) * b;
            }
            let norm = v.norm();
            if norm > 1e-8 {
                basis.push(v / norm);
            }
        }
        DMatrix::from_columns(&basis)
    }

    /// Derivative of the unit normal, `Dν = (I - νν^T) Hess F / |∇F|`.
    pub fn normal_derivative(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let g = self.level_grad(x);
        let norm = g.norm();
        let nu = &g / norm;
        let m = x.len();
        let p = DMatrix::identity(m, m) - &nu * nu.transpose();
        p * self.level_hess(x) / norm
    }

    /// Shape operator as an ambient matrix: `II(v, w) = v^T S w` for tangent `v, w`.
    pub fn shape_operator(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let nu = self.unit_normal(x);
        let m = x.len();
        let p = DMatrix::identity(m, m) - &nu * nu.transpose();
        &p * self.normal_derivative(x) * &p
    }

    /// Gauss curvature of a surface at an ambient point (n = 2 only).
    pub fn gauss_curvature(&self, x: &DVector<f64>) -> f64 {
        match &self.family {
            Family::ConformalSphere { coeffs } => {
                let u = harmonics::evaluate(coeffs, x).0;
                (-2.0 * u).exp() * (1.0 - harmonics::sphere_laplacian(coeffs, x))
            }
            _ => {
                let e = self.tangent_basis(x);
                let s = e.transpose() * self.shape_operator(x) * &e;
                s[(0, 0)] * s[(1, 1)] - s[(0, 1)] * s[(1, 0)]
            }
        }
    }

    /// Jacobi curvature term `B_ab = ⟨R(e_b, t)t, e_a⟩` for a unit tangent `t`
    /// and g-orthonormal normals `e_a` (ambient vectors).
    pub fn jacobi_curvature(
        &self,
        x: &DVector<f64>,
        t: &DVector<f64>,
        normals: &[DVector<f64>],
    ) -> DMatrix<f64> {
        let k = normals.len();
        if self.is_conformal() {
            // Conformal family is 2-dimensional: B is the Gauss curvature.
            return DMatrix::from_element(1, 1, self.gauss_curvature(x));
        }
        let s = self.shape_operator(x);
        let ii = |a: &DVector<f64>, b: &DVector<f64>| (a.transpose() * &s * b)[(0, 0)];
        let tt = ii(t, t);
        DMatrix::from_fn(k, k, |a, b| {
            tt * ii(&normals[a], &normals[b]) - ii(&normals[a], t) * ii(&normals[b], t)
        })
    }

    /// Covariant acceleration `∇_{x'} x'` expressed in ambient coordinates,
    /// given position `x`, velocity `v` and ambient second derivative `a`.
    pub fn covariant_acceleration(
        &self,
        x: &DVector<f64>,
        v: &DVector<f64>,
        a: &DVector<f64>,
    ) -> DVector<f64> {
        let nu = self.unit_normal(x);
        let mut out = a - nu.dot(a) * &nu;
        if self.is_conformal() {
            let (_, g, _) = self.conformal(x);
            let pg = &g - nu.dot(&g) * &nu;
            out += 2.0 * g.dot(v) * v - v.norm_squared() * pg;
        }
        out
    }

    /// Partial derivatives of [`Self::covariant_acceleration`] with respect to
    /// `x` and `v` (the derivative in `a` is the tangential projector).
    pub fn acceleration_partials(
        &self,
        x: &DVector<f64>,
        v: &DVector<f64>,
        a: &DVector<f64>,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let m = x.len();
        let nu = self.unit_normal(x);
        let dnu = self.normal_derivative(x);
        let mut dx = -(nu.dot(a) * &dnu + &nu * (a.transpose() * &dnu));
        let mut dv = DMatrix::zeros(m, m);
        if self.is_conformal() {
            let (_, g, hu) = self.conformal(x);
            let p = DMatrix::identity(m, m) - &nu * nu.transpose();
            let pg = &p * &g;
            let v2 = v.norm_squared();
            dv += 2.0 * v * g.transpose() + 2.0 * g.dot(v) * DMatrix::identity(m, m)
                - 2.0 * &pg * v.transpose();
            let dpg = -(nu.dot(&g) * &dnu + &nu * (g.transpose() * &dnu)) + &p * &hu;
            dx += 2.0 * v * (&hu * v).transpose() - v2 * dpg;
        }
        (dx, dv)
    }

    /// Riemannian norm of an ambient tangent vector.
    pub fn norm_at(&self, x: &DVector<f64>, v: &DVector<f64>) -> f64 {
        self.conformal_exponent(x).exp() * v.norm()
    }

    // ---------------------------------------------------------------------
    // Charts (n = 2)
    // ---------------------------------------------------------------------

    fn require_surface(&self) -> Result<()> {
        if self.dim() != 2 {
            return Err(Error::Argument("chart routines are only available for surfaces".into()));
        }
        Ok(())
    }

    fn axes(&self) -> [usize; 3] {
        let k = self.pole_axis;
        [k, (k + 1) % 3, (k + 2) % 3]
    }

    fn check_domain(&self, p: [f64; 2]) -> Result<bool> {
        match &self.family {
            Family::SurfaceOfRevolution { profile } => {
                let (lo, hi) = profile.z_range;
                if !(p[0] > lo && p[0] < hi) || !(profile.r2(p[0]).0 > 0.0) {
                    return Err(Error::Domain {
                        point: p.to_vec(),
                        reason: format!("z must lie in ({lo}, {hi}) with positive radius"),
                    });
                }
                let width = hi - lo;
                Ok(profile.r2(p[0]).0 < 1e-6 || (p[0] - lo).min(hi - p[0]) < 1e-3 * width)
            }
            _ => {
                if !(p[0] > 0.0 && p[0] < std::f64::consts::PI) {
                    return Err(Error::Domain {
                        point: p.to_vec(),
                        reason: "colatitude must lie in (0, π)".into(),
                    });
                }
                Ok(p[0].sin() < 1e-3)
            }
        }
    }

    fn chart_jet(&self, p: [f64; 2]) -> ChartJet {
        match &self.family {
            Family::SurfaceOfRevolution { profile } => {
                let (z, phi) = (p[0], p[1]);
                let (r, dr, ddr) = profile.radius(z);
                let (c, s) = (phi.cos(), phi.sin());
                ChartJet {
                    x: Vector3::new(r * c, r * s, z),
                    d: [Vector3::new(dr * c, dr * s, 1.0), Vector3::new(-r * s, r * c, 0.0)],
                    dd: [
                        [Vector3::new(ddr * c, ddr * s, 0.0), Vector3::new(-dr * s, dr * c, 0.0)],
                        [Vector3::new(-dr * s, dr * c, 0.0), Vector3::new(-r * c, -r * s, 0.0)],
                    ],
                }
            }
            _ => {
                let (th, phi) = (p[0], p[1]);
                let (st, ct, sp, cp) = (th.sin(), th.cos(), phi.sin(), phi.cos());
                // Unit direction in (pole, first, second) axis order.
                let w = [ct, st * cp, st * sp];
                let w_t = [-st, ct * cp, ct * sp];
                let w_p = [0.0, -st * sp, st * cp];
                let w_tt = [-ct, -st * cp, -st * sp];
                let w_tp = [0.0, -ct * sp, ct * cp];
                let w_pp = [0.0, -st * cp, -st * sp];
                let scale: [f64; 3] = match &self.family {
                    Family::Ellipsoid { a } => {
                        let ax = self.axes();
                        [1.0 / a[ax[0]], 1.0 / a[ax[1]], 1.0 / a[ax[2]]]
                    }
                    _ => [1.0, 1.0, 1.0],
                };
                let ax = self.axes();
                let place = |src: [f64; 3]| {
                    let mut out = Vector3::zeros();
                    for i in 0..3 {
                        out[ax[i]] = src[i] * scale[i];
                    }
                    out
                };
                ChartJet {
                    x: place(w),
                    d: [place(w_t), place(w_p)],
                    dd: [[place(w_tt), place(w_tp)], [place(w_tp), place(w_pp)]],
                }
            }
        }
    }

    /// Chart point → ambient point.
    pub fn embed(&self, p: [f64; 2]) -> Result<DVector<f64>> {
        self.require_surface()?;
        self.check_domain(p)?;
        Ok(to_dvec(&self.chart_jet(p).x))
    }

    /// Ambient point → chart point.
    pub fn chart_of(&self, x: &DVector<f64>) -> Result<[f64; 2]> {
        self.require_surface()?;
        let p = match &self.family {
            Family::SurfaceOfRevolution { .. } => [x[2], x[1].atan2(x[0])],
            Family::Ellipsoid { a } => {
                let ax = self.axes();
                let w: Vec<f64> = ax.iter().map(|&i| a[i] * x[i]).collect();
                let norm = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
                [(w[0] / norm).clamp(-1.0, 1.0).acos(), w[2].atan2(w[1])]
            }
            Family::ConformalSphere { .. } => {
                let ax = self.axes();
                let norm = x.norm();
                [(x[ax[0]] / norm).clamp(-1.0, 1.0).acos(), x[ax[2]].atan2(x[ax[1]])]
            }
        };
        self.check_domain(p).map_err(|e| Error::ChartTransition(e.to_string()))?;
        Ok(p)
    }

    /// Metric tensor `g_ij` in the chart.
    pub fn metric_at(&self, p: [f64; 2]) -> Result<Matrix2<f64>> {
        self.require_surface()?;
        self.check_domain(p)?;
        Ok(self.chart_metric(p).0)
    }

    /// Metric and its first derivatives `∂_k g_ij` (analytic).
    fn chart_metric(&self, p: [f64; 2]) -> (Matrix2<f64>, [Matrix2<f64>; 2]) {
        let jet = self.chart_jet(p);
        let xd = to_dvec(&jet.x);
        let (u, grad_u, _) = self.conformal(&xd);
        let grad_u = Vector3::new(grad_u[0], grad_u[1], grad_u[2]);
        let e2u = (2.0 * u).exp();
        let g = Matrix2::from_fn(|i, j| e2u * jet.d[i].dot(&jet.d[j]));
        let dg = [0, 1].map(|k| {
            let uk = grad_u.dot(&jet.d[k]);
            Matrix2::from_fn(|i, j| {
                e2u * (2.0 * uk * jet.d[i].dot(&jet.d[j])
                    + jet.dd[i][k].dot(&jet.d[j])
                    + jet.d[i].dot(&jet.dd[j][k]))
            })
        });
        (g, dg)
    }

    fn christoffel_unchecked(&self, p: [f64; 2]) -> Christoffel {
        let (g, dg) = self.chart_metric(p);
        let ginv = g.try_inverse().unwrap_or_else(Matrix2::zeros);
        let mut gamma = [[[0.0; 2]; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    let mut acc = 0.0;
                    for l in 0..2 {
                        acc += ginv[(i, l)] * (dg[j][(l, k)] + dg[k][(l, j)] - dg[l][(j, k)]);
                    }
                    gamma[i][j][k] = 0.5 * acc;
                }
            }
        }
        gamma
    }

    /// Christoffel symbols `Γ^i_{jk}` from the analytic metric derivatives.
    pub fn christoffel_at(&self, p: [f64; 2]) -> Result<ChristoffelSample> {
        self.require_surface()?;
        let near_boundary = self.check_domain(p)?;
        Ok(ChristoffelSample { gamma: self.christoffel_unchecked(p), near_boundary })
    }

    /// Riemann tensor from fourth-order central differences of the
    /// Christoffel symbols (step `1e-4` in chart units).
    pub fn curvature_at(&self, p: [f64; 2]) -> Result<CurvatureSample> {
        self.require_surface()?;
        let near_boundary = self.check_domain(p)?;
        let h = 1e-4;
        let gamma = self.christoffel_unchecked(p);
        let mut dgamma = [[[[0.0; 2]; 2]; 2]; 2]; // [k][i][j][l] = ∂_k Γ^i_{jl}
        for k in 0..2 {
            let at = |s: f64| {
                let mut q = p;
                q[k] += s * h;
                self.christoffel_unchecked(q)
            };
            let (m2, m1, p1, p2) = (at(-2.0), at(-1.0), at(1.0), at(2.0));
            for i in 0..2 {
                for j in 0..2 {
                    for l in 0..2 {
                        dgamma[k][i][j][l] = (m2[i][j][l] - 8.0 * m1[i][j][l] + 8.0 * p1[i][j][l]
                            - p2[i][j][l])
                            / (12.0 * h);
                    }
                }
            }
        }
        let mut riemann = [[[[0.0; 2]; 2]; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        let mut v = dgamma[k][i][l][j] - dgamma[l][i][k][j];
                        for m in 0..2 {
                            v += gamma[i][k][m] * gamma[m][l][j] - gamma[i][l][m] * gamma[m][k][j];
                        }
                        riemann[i][j][k][l] = v;
                    }
                }
            }
        }
        let g = self.chart_metric(p).0;
        let r1212: f64 = (0..2).map(|m| g[(0, m)] * riemann[m][1][0][1]).sum();
        let gauss = r1212 / g.determinant();
        Ok(CurvatureSample { point: p, riemann, christoffel: gamma, gauss, near_boundary })
    }
}

/// Result of transporting vectors once around a loop.
#[derive(Debug, Clone)]
pub struct Transport {
    /// Transported images of `v0` at every node.
    pub vectors: Vec<DVector<f64>>,
    /// Holonomy of the full tangent space in a g-orthonormal basis at node 0.
    pub holonomy: DMatrix<f64>,
    /// Rotation angle of the holonomy (surfaces only), in `(-π, π]`.
    pub angle: Option<f64>,
}

/// Right-hand side of the ambient parallel-transport equation.
fn transport_rhs(
    spec: &MetricSpec,
    x: &DVector<f64>,
    xd: &DVector<f64>,
    v: &DVector<f64>,
) -> DVector<f64> {
    let nu = spec.unit_normal(x);
    let dnu = spec.normal_derivative(x) * xd;
    let mut out = -(dnu.dot(v)) * &nu;
    if spec.is_conformal() {
        let (_, g, _) = spec.conformal(x);
        let pg = &g - nu.dot(&g) * &nu;
        out += -(g.dot(xd)) * v - g.dot(v) * xd + xd.dot(v) * pg;
    }
    out
}

/// Parallel-transport `v0` (tangent at node 0) around the loop. Also returns
/// the holonomy of the whole tangent space.
pub fn parallel_transport(spec: &MetricSpec, lp: &DiscreteLoop, v0: &DVector<f64>) -> Result<Transport> {
    const SUB: usize = 4;
    let n = lp.len();
    let m = lp.ambient_dim();
    if m != spec.ambient_dim() {
        return Err(Error::Argument("loop and metric have different ambient dimension".into()));
    }
    let fine = 2 * SUB * n;
    let comps: Vec<Vec<f64>> = (0..m).map(|c| lp.component(c)).collect();
    let pos: Vec<Vec<f64>> = comps.iter().map(|c| spectral::resample(c, fine)).collect();
    let vel: Vec<Vec<f64>> = comps
        .iter()
        .map(|c| spectral::resample(&spectral::derivative(c, 1), fine))
        .collect();
    let at = |idx: usize| {
        let i = idx % fine;
        (
            DVector::from_iterator(m, pos.iter().map(|c| c[i])),
            DVector::from_iterator(m, vel.iter().map(|c| c[i])),
        )
    };
    for i in 0..fine {
        if spec.level(&at(i).0).abs() > 1e-3 || !at(i).0.iter().all(|v| v.is_finite()) {
            return Err(Error::ChartTransition(format!("loop leaves the surface near θ = {}", i as f64 / fine as f64)));
        }
    }
    let x0 = lp.node(0);
    let basis = spec.tangent_basis(&x0);
    let e0 = (-spec.conformal_exponent(&x0)).exp();
    let h = 1.0 / (SUB * n) as f64;

    let transport_one = |start: &DVector<f64>, record: bool| {
        let mut v = start.clone();
        let mut out = Vec::with_capacity(if record { n } else { 0 });
        for step in 0..SUB * n {
            if record && step % SUB == 0 {
                out.push(v.clone());
            }
            let (xa, va) = at(2 * step);
            let (xb, vb) = at(2 * step + 1);
            let (xc, vc) = at(2 * step + 2);
            let k1 = transport_rhs(spec, &xa, &va, &v);
            let k2 = transport_rhs(spec, &xb, &vb, &(&v + 0.5 * h * &k1));
            let k3 = transport_rhs(spec, &xb, &vb, &(&v + 0.5 * h * &k2));
            let k4 = transport_rhs(spec, &xc, &vc, &(&v + h * &k3));
            v += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        (v, out)
    };

    let (_, vectors) = transport_one(v0, true);
    let k = m - 1;
    let mut hol = DMatrix::zeros(k, k);
    for b in 0..k {
        let eb = basis.column(b) * e0;
        let (tb, _) = transport_one(&eb.into_owned(), false);
        for a in 0..k {
            // g-inner product with the g-orthonormal basis vector a.
            let ea = basis.column(a) * e0;
            let g = (2.0 * spec.conformal_exponent(&x0)).exp();
            hol[(a, b)] = g * ea.dot(&tb);
        }
    }
    let angle = if k == 2 { Some(hol[(1, 0)].atan2(hol[(0, 0)])) } else { None };
    Ok(Transport { vectors, holonomy: hol, angle })
}

/// One-parameter family of metrics interpolating two endpoint specs.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricPath {
    pub start: MetricSpec,
    pub end: MetricSpec,
}

fn lerp_vec(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    let len = a.len().max(b.len());
    (0..len)
        .map(|i| {
            let x = a.get(i).copied().unwrap_or(0.0);
            let y = b.get(i).copied().unwrap_or(0.0);
            (1.0 - t) * x + t * y
        })
        .collect()
}

impl MetricPath {
    pub fn new(start: MetricSpec, end: MetricSpec) -> Result<Self> {
        let same = match (&start.family, &end.family) {
            (Family::Ellipsoid { a }, Family::Ellipsoid { a: b }) => a.len() == b.len(),
            (Family::SurfaceOfRevolution { profile: p }, Family::SurfaceOfRevolution { profile: q }) => {
                p.kind == q.kind
            }
            (Family::ConformalSphere { .. }, Family::ConformalSphere { .. }) => true,
            _ => false,
        };
        if !same {
            return Err(Error::InvalidMetric("path endpoints must belong to the same family".into()));
        }
        Ok(Self { start, end })
    }

    pub fn constant(spec: MetricSpec) -> Self {
        Self { start: spec.clone(), end: spec }
    }

    pub fn at(&self, t: f64) -> Result<MetricSpec> {
        if t == 0.0 {
            return Ok(self.start.clone());
        }
        if t == 1.0 {
            return Ok(self.end.clone());
        }
        let family = match (&self.start.family, &self.end.family) {
            (Family::Ellipsoid { a }, Family::Ellipsoid { a: b }) => Family::Ellipsoid { a: lerp_vec(a, b, t) },
            (Family::SurfaceOfRevolution { profile: p }, Family::SurfaceOfRevolution { profile: q }) => {
                Family::SurfaceOfRevolution {
                    profile: Profile {
                        kind: p.kind,
                        coeffs: lerp_vec(&p.coeffs, &q.coeffs, t),
                        z_range: (
                            (1.0 - t) * p.z_range.0 + t * q.z_range.0,
                            (1.0 - t) * p.z_range.1 + t * q.z_range.1,
                        ),
                    },
                }
            }
            (Family::ConformalSphere { coeffs: a }, Family::ConformalSphere { coeffs: b }) => {
                Family::ConformalSphere { coeffs: lerp_vec(a, b, t) }
            }
            _ => unreachable!("checked in MetricPath::new"),
        };
        let spec = MetricSpec { family, pole_axis: self.start.pole_axis };
        spec.validate()?;
        Ok(spec)
    }
}
