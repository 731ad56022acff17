//! Discretized loops, covers, rotations and the rotation quotient.

use std::fmt::Write as _;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::geometry::MetricSpec;
use crate::spectral;

/// A closed curve sampled at `N` equally spaced parameter values
/// `θ_i = i / N` of the circle `ℝ/ℤ`, stored as ambient coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteLoop {
    nodes: Vec<DVector<f64>>,
}

impl DiscreteLoop {
    pub fn new(nodes: Vec<DVector<f64>>) -> Result<Self> {
        if nodes.len() < 4 || nodes.len() % 2 != 0 {
            return Err(Error::Argument(format!(
                "a loop needs an even number of nodes (at least 4), got {}",
                nodes.len()
            )));
        }
        let m = nodes[0].len();
        if nodes.iter().any(|x| x.len() != m || x.iter().any(|v| !v.is_finite())) {
            return Err(Error::Argument("loop nodes must be finite and of equal dimension".into()));
        }
        Ok(Self { nodes })
    }

    /// Sample `f(θ)` at `n` nodes.
    pub fn from_fn(n: usize, f: impl Fn(f64) -> DVector<f64>) -> Result<Self> {
        Self::new((0..n).map(|i| f(i as f64 / n as f64)).collect())
    }

    /// Unit-speed great circle in the plane spanned by orthonormal `u`, `v`.
    pub fn great_circle(n: usize, u: &DVector<f64>, v: &DVector<f64>) -> Result<Self> {
        let tau = std::f64::consts::TAU;
        Self::from_fn(n, |t| (tau * t).cos() * u + (tau * t).sin() * v)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn ambient_dim(&self) -> usize {
        self.nodes[0].len()
    }

    pub fn nodes(&self) -> &[DVector<f64>] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> DVector<f64> {
        self.nodes[i % self.nodes.len()].clone()
    }

    /// Samples of one ambient coordinate.
    pub fn component(&self, c: usize) -> Vec<f64> {
        self.nodes.iter().map(|x| x[c]).collect()
    }

    fn from_components(comps: &[Vec<f64>]) -> Self {
        let n = comps[0].len();
        let nodes = (0..n)
            .map(|i| DVector::from_iterator(comps.len(), comps.iter().map(|c| c[i])))
            .collect();
        Self { nodes }
    }

    /// `θ`-derivatives of order `k` at every node (spectral).
    pub fn derivative(&self, k: u32) -> Vec<DVector<f64>> {
        let comps: Vec<Vec<f64>> = (0..self.ambient_dim())
            .map(|c| spectral::derivative(&self.component(c), k))
            .collect();
        Self::from_components(&comps).nodes
    }

    /// Trigonometric interpolation to `m` nodes.
    pub fn resample(&self, m: usize) -> Result<Self> {
        let comps: Vec<Vec<f64>> = (0..self.ambient_dim())
            .map(|c| spectral::resample(&self.component(c), m))
            .collect();
        Self::new(Self::from_components(&comps).nodes)
    }

    /// Evaluate the interpolant at arbitrary parameter values.
    pub fn sample_at(&self, thetas: &[f64]) -> Vec<DVector<f64>> {
        let coeffs: Vec<_> = (0..self.ambient_dim())
            .map(|c| spectral::forward(&self.component(c)))
            .collect();
        thetas
            .iter()
            .map(|&t| DVector::from_iterator(coeffs.len(), coeffs.iter().map(|c| spectral::eval_at(c, t))))
            .collect()
    }

    /// Riemannian length, computed spectrally from the interpolant.
    pub fn length(&self, spec: &MetricSpec) -> f64 {
        let vel = self.derivative(1);
        let n = self.len() as f64;
        self.nodes
            .iter()
            .zip(vel.iter())
            .map(|(x, v)| spec.norm_at(x, v))
            .sum::<f64>()
            / n
    }

    /// Euclidean length of the chord polygon.
    pub fn chord_length(&self) -> f64 {
        self.chords().iter().sum()
    }

    pub fn chords(&self) -> Vec<f64> {
        let n = self.len();
        (0..n).map(|i| (&self.nodes[(i + 1) % n] - &self.nodes[i]).norm()).collect()
    }

    /// The `d`-fold cover `γ ∘ φ_d` on `dN` nodes.
    pub fn cover(&self, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::Argument("cover degree must be positive".into()));
        }
        let mut nodes = Vec::with_capacity(d * self.len());
        for _ in 0..d {
            nodes.extend(self.nodes.iter().cloned());
        }
        Ok(Self { nodes })
    }

    /// Cyclic shift: node `i` of the result is node `i + k` of `self`.
    pub fn rotate(&self, k: usize) -> Self {
        let n = self.len();
        Self { nodes: (0..n).map(|i| self.nodes[(i + k) % n].clone()).collect() }
    }

    /// Rotation by an arbitrary parameter offset (spectral shift).
    pub fn rotate_by(&self, delta: f64) -> Self {
        let comps: Vec<Vec<f64>> = (0..self.ambient_dim())
            .map(|c| spectral::shift(&self.component(c), delta))
            .collect();
        Self::from_components(&comps)
    }

    /// Same image, opposite orientation; node 0 is kept.
    pub fn reversed(&self) -> Self {
        let n = self.len();
        Self { nodes: (0..n).map(|i| self.nodes[(n - i) % n].clone()).collect() }
    }

    /// Largest node-wise Euclidean distance to `other` (same node count).
    pub fn max_node_distance(&self, other: &Self) -> f64 {
        assert_eq!(self.len(), other.len());
        self.nodes
            .iter()
            .zip(other.nodes.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Distance modulo rotations: the best cyclic node shift, refined to a
    /// continuous parameter shift. Returns `(distance, shift)` with
    /// `self.rotate_by(shift) ≈ other`.
    pub fn rotation_distance(&self, other: &Self) -> (f64, f64) {
        let n = self.len();
        if other.len() != n {
            let o = other.resample(n).expect("resampling a valid loop");
            return self.rotation_distance(&o);
        }
        let mut best = (f64::INFINITY, 0usize);
        for k in 0..n {
            let mut dist: f64 = 0.0;
            for i in 0..n {
                dist = dist.max((&self.nodes[(i + k) % n] - &other.nodes[i]).norm());
                if dist >= best.0 {
                    break;
                }
            }
            if dist < best.0 {
                best = (dist, k);
            }
        }
        let h = 1.0 / n as f64;
        let base = best.1 as f64 * h;
        let eval = |s: f64| self.rotate_by(base + s).max_node_distance(other);
        // Golden-section search over one node spacing either side.
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let (mut a, mut b) = (-h, h);
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        let (mut fc, mut fd) = (eval(c), eval(d));
        for _ in 0..40 {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - g * (b - a);
                fc = eval(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + g * (b - a);
                fd = eval(d);
            }
        }
        let s = 0.5 * (a + b);
        let refined = eval(s);
        if refined < best.0 {
            (refined, (base + s).rem_euclid(1.0))
        } else {
            (best.0, base)
        }
    }

    /// Reparametrize so the Riemannian speed is constant, where `weight(x)`
    /// is the conformal length factor at `x` (use `|_| 1.0` for Euclidean).
    pub fn constant_speed(&self, weight: impl Fn(&DVector<f64>) -> f64) -> Result<Self> {
        let mut current = self.clone();
        let n = self.len();
        for _ in 0..3 {
            let fine_n = 8 * n;
            let fine = current.resample(fine_n)?;
            let vel = fine.derivative(1);
            let speed: Vec<f64> = fine
                .nodes
                .iter()
                .zip(vel.iter())
                .map(|(x, v)| weight(x) * v.norm())
                .collect();
            // Cumulative arclength by the trapezoid rule on the fine grid.
            let mut cum = vec![0.0; fine_n + 1];
            for i in 0..fine_n {
                cum[i + 1] = cum[i] + 0.5 * (speed[i] + speed[(i + 1) % fine_n]) / fine_n as f64;
            }
            let total = cum[fine_n];
            if !(total > 0.0) {
                return Err(Error::Collapse { length: total });
            }
            let mut thetas = Vec::with_capacity(n);
            let mut j = 0;
            for i in 0..n {
                let target = total * i as f64 / n as f64;
                while j + 1 < fine_n && cum[j + 1] < target {
                    j += 1;
                }
                let span = cum[j + 1] - cum[j];
                let frac = if span > 0.0 { (target - cum[j]) / span } else { 0.0 };
                thetas.push((j as f64 + frac) / fine_n as f64);
            }
            let next = Self::new(current.sample_at(&thetas))?;
            let chords = next.chords();
            let (lo, hi) = chords
                .iter()
                .fold((f64::INFINITY, 0.0f64), |(lo, hi), &c| (lo.min(c), hi.max(c)));
            current = next;
            if hi - lo < 1e-12 * hi {
                break;
            }
        }
        Ok(current)
    }

    /// Flat text record: `N m` then `N` rows of coordinates (17 significant digits).
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.len(), self.ambient_dim());
        for x in &self.nodes {
            let row: Vec<String> = x.iter().map(|v| format!("{v:.16e}")).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Argument("empty loop record".into()))?;
        let head: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::Argument(format!("bad loop header {header:?}"))))
            .collect::<Result<_>>()?;
        if head.len() != 2 {
            return Err(Error::Argument(format!("bad loop header {header:?}")));
        }
        let (n, m) = (head[0], head[1]);
        let mut nodes = Vec::with_capacity(n);
        for line in lines.take(n) {
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| Error::Argument(format!("bad loop row {line:?}"))))
                .collect::<Result<_>>()?;
            if row.len() != m {
                return Err(Error::Argument(format!("expected {m} coordinates, got {}", row.len())));
            }
            nodes.push(DVector::from_vec(row));
        }
        if nodes.len() != n {
            return Err(Error::Argument(format!("expected {n} rows, got {}", nodes.len())));
        }
        Self::new(nodes)
    }
}

/// Outcome of minimal-period detection.
#[derive(Debug, Clone)]
pub struct PrimitiveDecomposition {
    pub base: DiscreteLoop,
    pub degree: usize,
    /// Set when several incompatible periods pass the threshold.
    pub ambiguous: Option<Vec<usize>>,
}

/// Largest cover degree tried by [`primitive_decompose`].
pub const MAX_DETECTED_DEGREE: usize = 12;

/// Split a loop as `base ∘ φ_d` with `d` maximal.
///
/// A degree `d` is accepted when shifting the loop by `1/d` moves every node
/// by less than `1e-5` of the chord length.
pub fn primitive_decompose(lp: &DiscreteLoop) -> PrimitiveDecomposition {
    let n = lp.len();
    let tol = 1e-5 * lp.chord_length();
    let passes: Vec<usize> = (2..=MAX_DETECTED_DEGREE.min(n / 4))
        .filter(|&d| {
            let dist = if n % d == 0 {
                lp.rotate(n / d).max_node_distance(lp)
            } else {
                lp.rotate_by(1.0 / d as f64).max_node_distance(lp)
            };
            dist < tol
        })
        .collect();
    let degree = passes.iter().copied().max().unwrap_or(1);
    let ambiguous = if passes.iter().any(|&p| degree % p != 0) {
        Some(passes.clone())
    } else {
        None
    };
    let base = if degree == 1 {
        lp.clone()
    } else if n % degree == 0 && (n / degree) % 2 == 0 && n / degree >= 4 {
        DiscreteLoop { nodes: lp.nodes[..n / degree].to_vec() }
    } else {
        let thetas: Vec<f64> = (0..n).map(|i| i as f64 / (n * degree) as f64).collect();
        DiscreteLoop { nodes: lp.sample_at(&thetas) }
    };
    PrimitiveDecomposition { base, degree, ambiguous }
}

/// A loop together with the offset that brings it to canonical position.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopClass {
    pub representative: DiscreteLoop,
    pub offset: usize,
}

fn lex_less(a: &DVector<f64>, b: &DVector<f64>, tol: f64) -> bool {
    for (x, y) in a.iter().zip(b.iter()) {
        if (x - y).abs() > tol {
            return x < y;
        }
    }
    false
}

/// Rotate so that the lexicographically smallest node comes first.
pub fn canonicalize(lp: &DiscreteLoop) -> LoopClass {
    let tol = 1e-12 * (1.0 + lp.chord_length());
    let mut best = 0;
    for i in 1..lp.len() {
        if lex_less(&lp.nodes[i], &lp.nodes[best], tol) {
            best = i;
        }
    }
    LoopClass { representative: lp.rotate(best), offset: best }
}

impl LoopClass {
    /// Same class up to `tol × chord length` after optimal rotation.
    pub fn matches(&self, other: &DiscreteLoop, tol: f64) -> bool {
        let scale = self.representative.chord_length();
        self.representative.rotation_distance(other).0 < tol * scale
    }
}
