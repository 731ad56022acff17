//! Solid harmonic polynomials of degree 1..=3 used for conformal factors on
//! the unit sphere. Restricted to `S²` they are spherical harmonics, so the
//! Laplace–Beltrami operator acts by `-l(l+1)`.

use nalgebra::{DMatrix, DVector};

type Term = (f64, [u32; 3]);

/// (degree, monomials) for each basis element, in coefficient-list order.
pub const BASIS: [(u32, &[Term]); 15] = [
    (1, &[(1.0, [1, 0, 0])]),
    (1, &[(1.0, [0, 1, 0])]),
    (1, &[(1.0, [0, 0, 1])]),
    (2, &[(1.0, [1, 1, 0])]),
    (2, &[(1.0, [0, 1, 1])]),
    (2, &[(1.0, [1, 0, 1])]),
    (2, &[(1.0, [2, 0, 0]), (-1.0, [0, 2, 0])]),
    (2, &[(2.0, [0, 0, 2]), (-1.0, [2, 0, 0]), (-1.0, [0, 2, 0])]),
    (3, &[(1.0, [3, 0, 0]), (-3.0, [1, 2, 0])]),
    (3, &[(3.0, [2, 1, 0]), (-1.0, [0, 3, 0])]),
    (3, &[(1.0, [1, 1, 1])]),
    (3, &[(1.0, [2, 0, 1]), (-1.0, [0, 2, 1])]),
    (3, &[(4.0, [1, 0, 2]), (-1.0, [3, 0, 0]), (-1.0, [1, 2, 0])]),
    (3, &[(4.0, [0, 1, 2]), (-1.0, [2, 1, 0]), (-1.0, [0, 3, 0])]),
    (3, &[(2.0, [0, 0, 3]), (-3.0, [2, 0, 1]), (-3.0, [0, 2, 1])]),
];

pub const MAX_COEFFS: usize = BASIS.len();

fn pow(x: f64, k: u32) -> f64 {
    x.powi(k as i32)
}

/// `d^j/dx^j x^k` evaluated at `x`.
fn dpow(x: f64, k: u32, j: u32) -> f64 {
    if j > k {
        return 0.0;
    }
    let mut c = 1.0;
    for i in 0..j {
        c *= (k - i) as f64;
    }
    c * pow(x, k - j)
}

/// Value, gradient and Hessian of `u = Σ c_i P_i` at the ambient point `x`.
pub fn evaluate(coeffs: &[f64], x: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
    let mut val = 0.0;
    let mut grad = DVector::zeros(3);
    let mut hess = DMatrix::zeros(3, 3);
    for (c, (_, terms)) in coeffs.iter().zip(BASIS.iter()) {
        if *c == 0.0 {
            continue;
        }
        for &(tc, p) in terms.iter() {
            let w = c * tc;
            val += w * pow(x[0], p[0]) * pow(x[1], p[1]) * pow(x[2], p[2]);
            for a in 0..3 {
                let mut d = [0u32; 3];
                d[a] = 1;
                grad[a] += w * (0..3).map(|i| dpow(x[i], p[i], d[i])).product::<f64>();
                for b in 0..3 {
                    let mut dd = [0u32; 3];
                    dd[a] += 1;
                    dd[b] += 1;
                    hess[(a, b)] += w * (0..3).map(|i| dpow(x[i], p[i], dd[i])).product::<f64>();
                }
            }
        }
    }
    (val, grad, hess)
}

/// Laplace–Beltrami of `u` on the unit sphere at a point of the sphere.
pub fn sphere_laplacian(coeffs: &[f64], x: &DVector<f64>) -> f64 {
    let mut acc = 0.0;
    for (c, (deg, terms)) in coeffs.iter().zip(BASIS.iter()) {
        if *c == 0.0 {
            continue;
        }
        let l = *deg as f64;
        let v: f64 = terms
            .iter()
            .map(|&(tc, p)| tc * pow(x[0], p[0]) * pow(x[1], p[1]) * pow(x[2], p[2]))
            .sum();
        acc -= c * l * (l + 1.0) * v;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_polynomials_are_harmonic() {
        let x = DVector::from_vec(vec![0.3, -0.7, 0.5]);
        for i in 0..MAX_COEFFS {
            let mut c = vec![0.0; MAX_COEFFS];
            c[i] = 1.0;
            let (_, _, h) = evaluate(&c, &x);
            assert!(h.trace().abs() < 1e-12, "basis {i} not harmonic");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let c: Vec<f64> = (0..MAX_COEFFS).map(|i| 0.1 * (i as f64 + 1.0).sin()).collect();
        let x = DVector::from_vec(vec![0.2, 0.4, -0.3]);
        let (_, g, h) = evaluate(&c, &x);
        let step = 1e-6;
        for a in 0..3 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[a] += step;
            xm[a] -= step;
            let (vp, gp, _) = evaluate(&c, &xp);
            let (vm, gm, _) = evaluate(&c, &xm);
            assert!(((vp - vm) / (2.0 * step) - g[a]).abs() < 1e-8);
            for b in 0..3 {
                assert!(((gp[b] - gm[b]) / (2.0 * step) - h[(a, b)]).abs() < 1e-7);
            }
        }
    }
}
