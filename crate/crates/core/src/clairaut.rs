//! Independent closed-geodesic oracle for surfaces of revolution, based on
//! the Clairaut first integral `r² φ' = c` (arc-length parametrization).

use std::f64::consts::{PI, TAU};

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::geometry::{Family, MetricSpec, Profile};
use crate::loops::{canonicalize, DiscreteLoop};
use crate::solver::{canonical_phase, residual_norm, ClosedGeodesic};

/// Maximal number of meridional oscillations tried before giving up.
pub const MAX_OSCILLATIONS: usize = 8;

fn profile_of(spec: &MetricSpec) -> Result<&Profile> {
    match &spec.family {
        Family::SurfaceOfRevolution { profile } => Ok(profile),
        _ => Err(Error::Argument("the Clairaut oracle needs a surface of revolution".into())),
    }
}

/// State `(z, z', φ)` and its derivative along a unit-speed geodesic.
fn rhs(profile: &Profile, c: f64, y: [f64; 3]) -> [f64; 3] {
    let (r, dr, ddr) = profile.radius(y[0]);
    let phid = c / (r * r);
    let zdd = (r * dr * phid * phid - dr * ddr * y[1] * y[1]) / (1.0 + dr * dr);
    [y[1], zdd, phid]
}

fn rk4(profile: &Profile, c: f64, y: [f64; 3], h: f64) -> [f64; 3] {
    let add = |a: [f64; 3], b: [f64; 3], s: f64| [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]];
    let k1 = rhs(profile, c, y);
    let k2 = rhs(profile, c, add(y, k1, 0.5 * h));
    let k3 = rhs(profile, c, add(y, k2, 0.5 * h));
    let k4 = rhs(profile, c, add(y, k3, h));
    let mut out = y;
    for i in 0..3 {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

fn embed(profile: &Profile, z: f64, phi: f64) -> DVector<f64> {
    let r = profile.radius(z).0;
    DVector::from_vec(vec![r * phi.cos(), r * phi.sin(), z])
}

fn to_geodesic(spec: &MetricSpec, lp: DiscreteLoop, length: f64) -> Result<ClosedGeodesic> {
    let lp = canonical_phase(&lp);
    Ok(ClosedGeodesic {
        residual_norm: residual_norm(spec, &lp),
        primitive_base: canonicalize(&lp),
        loop_: lp,
        length,
        cover_degree: 1,
    })
}

/// Parallel at height `z` (a geodesic iff `r'(z) = 0`).
pub fn parallel(spec: &MetricSpec, z: f64, mesh: usize) -> Result<ClosedGeodesic> {
    let profile = profile_of(spec)?;
    let r = profile.radius(z).0;
    let lp = DiscreteLoop::from_fn(mesh, |t| embed(profile, z, TAU * t))?;
    to_geodesic(spec, lp, TAU * r)
}

/// Meridian of a closed profile through azimuth `phi`.
pub fn meridian(spec: &MetricSpec, phi: f64, mesh: usize) -> Result<ClosedGeodesic> {
    let profile = profile_of(spec)?;
    if !profile.is_closed() {
        return Err(Error::Argument("meridians close only on closed profiles".into()));
    }
    let half = meridian_half_length(profile);
    // Arc-length parametrization of the half meridian, by inverting the
    // cumulative quadrature on the angle substitution z = mid + w sin τ.
    let (lo, hi) = profile.z_range;
    let mid = 0.5 * (lo + hi);
    let w = 0.5 * (hi - lo);
    let samples = 20_000;
    let speed = |tau: f64| {
        let z = mid + w * tau.sin();
        let (q, dq, _) = profile.r2(z);
        // |d(r, z)/dτ| with r = √q, dr/dτ = q' w cos τ / (2√q).
        let dz = w * tau.cos();
        let dr = if q > 0.0 { dq * dz / (2.0 * q.sqrt()) } else { 0.0 };
        (dz * dz + dr * dr).sqrt()
    };
    let mut cum = vec![0.0; samples + 1];
    let h = PI / samples as f64;
    for i in 0..samples {
        let a = -0.5 * PI + i as f64 * h;
        cum[i + 1] = cum[i] + gauss3(&speed, a, h);
    }
    let tau_at = |s: f64| {
        let j = cum.partition_point(|&v| v < s).clamp(1, samples);
        let frac = (s - cum[j - 1]) / (cum[j] - cum[j - 1]).max(1e-300);
        -0.5 * PI + (j as f64 - 1.0 + frac) * h
    };
    let nodes = (0..mesh)
        .map(|i| {
            let s = 2.0 * half * i as f64 / mesh as f64;
            let (tau, side) = if s <= half { (tau_at(s), 1.0) } else { (tau_at(2.0 * half - s), -1.0) };
            let z = mid + w * tau.sin();
            let r = profile.r2(z).0.max(0.0).sqrt() * side;
            DVector::from_vec(vec![r * phi.cos(), r * phi.sin(), z])
        })
        .collect();
    to_geodesic(spec, DiscreteLoop::new(nodes)?, 2.0 * half)
}

/// Length of a meridian from pole to pole, by quadrature.
pub fn meridian_half_length(profile: &Profile) -> f64 {
    let (lo, hi) = profile.z_range;
    let mid = 0.5 * (lo + hi);
    let w = 0.5 * (hi - lo);
    let n = 20_000;
    let h = PI / n as f64;
    let f = |tau: f64| {
        let z = mid + w * tau.sin();
        let (q, dq, _) = profile.r2(z);
        let dz = w * tau.cos();
        let dr = if q > 0.0 { dq * dz / (2.0 * q.sqrt()) } else { 0.0 };
        (dz * dz + dr * dr).sqrt()
    };
    (0..n).map(|i| gauss3(&f, -0.5 * PI + i as f64 * h, h)).sum()
}

/// Three-point Gauss–Legendre rule on `[a, a + h]`; never samples the
/// endpoints, where the pole substitution is numerically delicate.
fn gauss3(f: &impl Fn(f64) -> f64, a: f64, h: f64) -> f64 {
    let x = (0.6f64).sqrt() * 0.5 * h;
    let m = a + 0.5 * h;
    h / 18.0 * (5.0 * f(m - x) + 8.0 * f(m) + 5.0 * f(m + x))
}

/// Integrate the Clairaut-reduced geodesic equation from height `z0` with
/// constant `c = r cos(angle to the parallel)`; returns the loops that close
/// after at most [`MAX_OSCILLATIONS`] meridional oscillations.
pub fn clairaut_shoot(spec: &MetricSpec, c: f64, z0: f64, mesh: usize) -> Result<Vec<ClosedGeodesic>> {
    let profile = profile_of(spec)?;
    let (r0, dr0, _) = profile.radius(z0);
    if c > r0 * (1.0 + 1e-12) {
        return Ok(Vec::new());
    }
    let energy = (1.0 - (c / r0).powi(2)).max(0.0) / (1.0 + dr0 * dr0);
    if energy < 1e-20 {
        // Tangent to the parallel: closes with no oscillation iff r'(z0) = 0.
        return if dr0.abs() < 1e-9 { Ok(vec![parallel(spec, z0, mesh)?]) } else { Ok(Vec::new()) };
    }
    if c == 0.0 {
        return if profile.is_closed() { Ok(vec![meridian(spec, 0.0, mesh)?]) } else { Ok(Vec::new()) };
    }
    let mut y = [z0, energy.sqrt(), 0.0];
    let h = 1e-3 * r0.min(1.0);
    let mut s = 0.0;
    let mut path: Vec<(f64, [f64; 3])> = vec![(0.0, y)];
    let mut returns = 0;
    let (lo, hi) = profile.z_range;
    let max_len = 1e3;
    while s < max_len {
        let next = rk4(profile, c, y, h);
        if !(next[0] > lo && next[0] < hi) {
            return Ok(Vec::new());
        }
        // Upward crossing of z0 marks one full oscillation.
        if y[0] < z0 && next[0] >= z0 && next[1] > 0.0 {
            let frac = (z0 - y[0]) / (next[0] - y[0]);
            let phi = y[2] + frac * (next[2] - y[2]);
            let len = s + frac * h;
            returns += 1;
            let turns = phi / TAU;
            if (turns - turns.round()).abs() * TAU < 1e-6 && turns.round() >= 1.0 {
                path.push((len, [z0, next[1], phi]));
                let lp = resample_path(profile, &path, len, mesh)?;
                return Ok(vec![to_geodesic(spec, lp, len)?]);
            }
            if returns >= MAX_OSCILLATIONS {
                return Ok(Vec::new());
            }
        }
        y = next;
        s += h;
        path.push((s, y));
    }
    Ok(Vec::new())
}

fn resample_path(profile: &Profile, path: &[(f64, [f64; 3])], len: f64, mesh: usize) -> Result<DiscreteLoop> {
    let mut j = 0;
    let nodes = (0..mesh)
        .map(|i| {
            let s = len * i as f64 / mesh as f64;
            while j + 1 < path.len() && path[j + 1].0 < s {
                j += 1;
            }
            let (s0, a) = path[j];
            let (s1, b) = path[(j + 1).min(path.len() - 1)];
            // Cubic Hermite interpolation in z, linear in φ.
            let t = if s1 > s0 { (s - s0) / (s1 - s0) } else { 0.0 };
            let hh = s1 - s0;
            let (h00, h10, h01, h11) = (
                2.0 * t * t * t - 3.0 * t * t + 1.0,
                t * t * t - 2.0 * t * t + t,
                -2.0 * t * t * t + 3.0 * t * t,
                t * t * t - t * t,
            );
            let z = h00 * a[0] + h10 * hh * a[1] + h01 * b[0] + h11 * hh * b[1];
            let phi = a[2] + t * (b[2] - a[2]);
            embed(profile, z, phi)
        })
        .collect();
    DiscreteLoop::new(nodes)
}

/// Heights of the critical points of the profile radius.
pub fn critical_heights(profile: &Profile) -> Vec<f64> {
    let (lo, hi) = profile.z_range;
    let grid = 4000;
    let dr = |z: f64| profile.radius(z).1;
    let mut out = Vec::new();
    let z_at = |i: usize| lo + (hi - lo) * i as f64 / grid as f64;
    for i in 1..grid - 1 {
        let (a, b) = (z_at(i), z_at(i + 1));
        let (fa, fb) = (dr(a), dr(b));
        if fa == 0.0 {
            out.push(a);
        } else if fa * fb < 0.0 {
            let (mut a, mut b, mut fa) = (a, b, fa);
            for _ in 0..100 {
                let m = 0.5 * (a + b);
                let fm = dr(m);
                if fm * fa <= 0.0 {
                    b = m;
                } else {
                    a = m;
                    fa = fm;
                }
            }
            out.push(0.5 * (a + b));
        }
    }
    out
}

/// Oriented lengths of the closed geodesics of length below `bound` that the
/// oracle can certify: critical parallels, meridians of closed profiles,
/// and oscillating orbits closing after at most [`MAX_OSCILLATIONS`]
/// oscillations, with all covers. Each entry is `(length, degree)`.
pub fn clairaut_lengths(spec: &MetricSpec, bound: f64) -> Result<Vec<(f64, usize)>> {
    let profile = profile_of(spec)?;
    let mut prim = Vec::new();
    for z in critical_heights(profile) {
        prim.push(TAU * profile.radius(z).0);
    }
    if profile.is_closed() {
        prim.push(2.0 * meridian_half_length(profile));
    }
    prim.extend(oscillating_lengths(profile, bound));
    let mut out = Vec::new();
    for l in prim {
        let mut d = 1;
        while l * (d as f64) < bound {
            out.push((l * d as f64, d));
            d += 1;
        }
    }
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(out)
}

/// Per-oscillation azimuth advance and length for Clairaut constant `c`,
/// within the well around a local maximum of `r` at `z_max`.
fn oscillation(profile: &Profile, c: f64, z_max: f64) -> Option<(f64, f64)> {
    let (lo, hi) = profile.z_range;
    let f = |z: f64| profile.radius(z).0 - c;
    let find = |mut a: f64, mut b: f64| -> Option<f64> {
        if f(a) * f(b) > 0.0 {
            return None;
        }
        for _ in 0..100 {
            let m = 0.5 * (a + b);
            if f(m) * f(a) > 0.0 {
                a = m;
            } else {
                b = m;
            }
        }
        Some(0.5 * (a + b))
    };
    let zl = find(lo + 1e-12, z_max)?;
    let zr = find(z_max, hi - 1e-12)?;
    // z = m + w sin τ removes the inverse-square-root endpoint behaviour.
    let m = 0.5 * (zl + zr);
    let w = 0.5 * (zr - zl);
    let n = 4000;
    let h = PI / n as f64;
    let (mut dphi, mut len) = (0.0, 0.0);
    for i in 0..n {
        let tau = -0.5 * PI + (i as f64 + 0.5) * h;
        let z = m + w * tau.sin();
        let (r, dr, _) = profile.radius(z);
        let root = (r * r - c * c).max(1e-300).sqrt();
        let jac = w * tau.cos();
        let ds = r * (1.0 + dr * dr).sqrt() / root * jac;
        len += ds * h;
        dphi += c / (r * r) * ds * h;
    }
    Some((2.0 * dphi, 2.0 * len))
}

fn oscillating_lengths(profile: &Profile, bound: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for z_max in critical_heights(profile) {
        if profile.radius(z_max).2 >= 0.0 {
            continue;
        }
        let rmax = profile.radius(z_max).0;
        let grid = 400;
        let cs: Vec<f64> = (1..grid).map(|i| rmax * i as f64 / grid as f64).collect();
        let vals: Vec<Option<(f64, f64)>> = cs.iter().map(|&c| oscillation(profile, c, z_max)).collect();
        for k in 1..=MAX_OSCILLATIONS {
            for p in 1..=4 * MAX_OSCILLATIONS {
                let target = TAU * p as f64;
                for i in 0..cs.len() - 1 {
                    let (Some(a), Some(b)) = (vals[i], vals[i + 1]) else { continue };
                    let (ga, gb) = (k as f64 * a.0 - target, k as f64 * b.0 - target);
                    if ga * gb >= 0.0 {
                        continue;
                    }
                    let (mut lo_c, mut hi_c, mut glo) = (cs[i], cs[i + 1], ga);
                    let mut len = k as f64 * a.1;
                    for _ in 0..60 {
                        let mid = 0.5 * (lo_c + hi_c);
                        let Some(v) = oscillation(profile, mid, z_max) else { break };
                        let g = k as f64 * v.0 - target;
                        len = k as f64 * v.1;
                        if g * glo > 0.0 {
                            lo_c = mid;
                            glo = g;
                        } else {
                            hi_c = mid;
                        }
                    }
                    // Primitive only when k and p are coprime.
                    if gcd(k, p) == 1 && len < bound {
                        out.push(len);
                    }
                }
            }
        }
    }
    out
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}
