//! Dense linear algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};

use crate::math;

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// `vᵀ P v`.
pub fn quad_form(p: &Matrix, v: &Vector) -> f64 {
    let n = v.len();
    let mut acc = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += p[(i, j)] * v[j];
        }
        acc += v[i] * row;
    }
    acc
}

pub fn is_symmetric(p: &Matrix, tol: f64) -> bool {
    if !p.is_square() {
        return false;
    }
    let n = p.nrows();
    for i in 0..n {
        for j in 0..i {
            let scale = 1.0 + math::abs(p[(i, j)]).max(math::abs(p[(j, i)]));
            if math::abs(p[(i, j)] - p[(j, i)]) > tol * scale {
                return false;
            }
        }
    }
    true
}

/// Symmetric-positive-definite test via Cholesky.
pub fn is_spd(p: &Matrix) -> bool {
    is_symmetric(p, 1e-10) && p.clone().cholesky().is_some()
}

/// `(λ_min, λ_max)` of a symmetric matrix.
pub fn eigenvalue_bounds(p: &Matrix) -> (f64, f64) {
    let eig = p.clone().symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &l in eig.eigenvalues.iter() {
        lo = lo.min(l);
        hi = hi.max(l);
    }
    (lo, hi)
}

/// Principal square root of an SPD matrix.
pub fn spd_sqrt(p: &Matrix) -> Option<Matrix> {
    let eig = p.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return None;
    }
    let d = Matrix::from_diagonal(&eig.eigenvalues.map(math::sqrt));
    let q = &eig.eigenvectors;
    Some(q * d * q.transpose())
}

pub fn spd_inverse(p: &Matrix) -> Option<Matrix> {
    let inv = p.clone().cholesky()?.inverse();
    // symmetrize to remove round-off asymmetry
    Some((&inv + inv.transpose()) * 0.5)
}

/// Induced 2-norm (largest singular value).
pub fn induced_two_norm(m: &Matrix) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    let g = m.transpose() * m;
    math::sqrt(eigenvalue_bounds(&g).1.max(0.0))
}

pub fn spectral_radius(a: &Matrix) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|c| math::sqrt(c.re * c.re + c.im * c.im))
        .fold(0.0, f64::max)
}

/// Discrete algebraic Riccati equation by fixed-point iteration.
///
/// Returns `(P, K)` with the feedback convention `u = K x`.
pub fn dare(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix) -> Option<(Matrix, Matrix)> {
    let mut p = q.clone();
    for _ in 0..100_000 {
        let bt_p = b.transpose() * &p;
        let s = r + &bt_p * b;
        let s_inv = spd_inverse(&s)?;
        let gain = &s_inv * &bt_p * a;
        let next = q + a.transpose() * &p * a - a.transpose() * &p * b * &gain;
        let next = (&next + next.transpose()) * 0.5;
        let diff = (&next - &p).amax();
        p = next;
        if !p.iter().all(|v| v.is_finite()) {
            return None;
        }
        if diff <= 1e-13 * (1.0 + p.amax()) {
            let bt_p = b.transpose() * &p;
            let s_inv = spd_inverse(&(r + &bt_p * b))?;
            let k = -(s_inv * bt_p * a);
            return Some((p, k));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dare_scalar_matches_closed_form() {
        // a=1, b=1, q=1, r=1: p = (1+sqrt 5)/2
        let one = Matrix::from_element(1, 1, 1.0);
        let (p, k) = dare(&one, &one, &one, &one).unwrap();
        let golden = (1.0 + math::sqrt(5.0)) / 2.0;
        assert!((p[(0, 0)] - golden).abs() < 1e-10);
        assert!((k[(0, 0)] + golden / (1.0 + golden)).abs() < 1e-10);
    }

    #[test]
    fn sqrt_squares_back() {
        let p = Matrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let s = spd_sqrt(&p).unwrap();
        assert!((&s * &s - &p).amax() < 1e-12);
        assert!(spd_sqrt(&Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0])).is_none());
    }

    #[test]
    fn induced_norm_of_diagonal() {
        let m = Matrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, -4.0]);
        assert!((induced_two_norm(&m) - 4.0).abs() < 1e-12);
    }
}
