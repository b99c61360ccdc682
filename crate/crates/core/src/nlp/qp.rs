//! Dense strictly convex QP by the Goldfarb–Idnani dual active-set method.
//!
//! Solves `min ½ xᵀGx + cᵀx` subject to `A_eq x = b_eq`, `A_in x ≥ b_in`
//! with `G` positive definite. The factorization keeps `J = L⁻ᵀQ` and an
//! upper-triangular `R` with `Jᵀ N = [R; 0]` for the active normals `N`,
//! updated by Givens rotations on every add and drop.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{Matrix, Vector};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub status: QpStatus,
    pub x: Vector,
    /// Multipliers with `G x + c = A_eqᵀ λ_eq + A_inᵀ λ_in`, `λ_in ≥ 0`.
    pub eq_multipliers: Vector,
    pub ineq_multipliers: Vector,
    pub iterations: usize,
}

/// Problem data borrowed by [`solve_qp`].
#[derive(Debug, Clone, Copy)]
pub struct QpProblem<'a> {
    pub g: &'a Matrix,
    pub c: &'a Vector,
    pub a_eq: &'a Matrix,
    pub b_eq: &'a Vector,
    pub a_in: &'a Matrix,
    pub b_in: &'a Vector,
}

/// Returns `None` if `G` is not positive definite.
pub fn solve_qp(p: &QpProblem<'_>) -> Option<QpSolution> {
    let n = p.c.len();
    let m_eq = p.a_eq.nrows();
    let m_in = p.a_in.nrows();
    let chol = p.g.clone().cholesky()?;
    let l_inv = chol.l().solve_lower_triangular(&Matrix::identity(n, n))?;
    let mut j = l_inv.transpose();
    let mut r = Matrix::zeros(n, n);
    let mut x = -chol.solve(p.c);

    // active constraints: (id, sign) with id < m_eq for equalities
    let mut active: Vec<(usize, f64)> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut eq_done = vec![false; m_eq];

    // constraint normals as contiguous columns
    let a_eq_t = p.a_eq.transpose();
    let a_in_t = p.a_in.transpose();
    let normal = |id: usize| -> (&[f64], f64) {
        if id < m_eq {
            (col(&a_eq_t, id), p.b_eq[id])
        } else {
            (col(&a_in_t, id - m_eq), p.b_in[id - m_eq])
        }
    };
    let in_norms: Vec<f64> = (0..m_in)
        .map(|i| math::sqrt(dot(col(&a_in_t, i), col(&a_in_t, i))).max(1e-300))
        .collect();
    let mut is_active = vec![false; m_in];

    let max_iter = 50 * (n + m_eq + m_in) + 100;
    let mut iterations = 0usize;
    let mut d = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut rv = vec![0.0; n];
    let mut np = vec![0.0; n];

    loop {
        let mut pick: Option<(usize, f64)> = None;
        if let Some(e) = eq_done.iter().position(|done| !done) {
            let (a, b) = normal(e);
            let s = dot(a, x.as_slice()) - b;
            pick = Some((e, if s > 0.0 { -1.0 } else { 1.0 }));
        } else {
            let xnorm = x.amax();
            let mut worst = 0.0;
            for i in 0..m_in {
                if is_active[i] {
                    continue;
                }
                let s = dot(col(&a_in_t, i), x.as_slice()) - p.b_in[i];
                let tol = 1e-13 * (1.0 + math::abs(p.b_in[i]) + in_norms[i] * xnorm);
                if s < -tol {
                    let scaled = s / in_norms[i];
                    if scaled < worst {
                        worst = scaled;
                        pick = Some((m_eq + i, 1.0));
                    }
                }
            }
        }
        let Some((id, sign)) = pick else {
            return Some(finish(QpStatus::Optimal, x, &active, &u, m_eq, m_in, iterations));
        };
        let (a_raw, b_raw) = normal(id);
        for (t, &a) in np.iter_mut().zip(a_raw) {
            *t = sign * a;
        }
        let bp = sign * b_raw;
        let mut u_p = 0.0;

        loop {
            iterations += 1;
            if iterations > max_iter {
                return Some(finish(QpStatus::IterationLimit, x, &active, &u, m_eq, m_in, iterations));
            }
            let q = active.len();
            for (k, dk) in d.iter_mut().enumerate() {
                *dk = dot(col(&j, k), &np);
            }
            z.iter_mut().for_each(|v| *v = 0.0);
            for k in q..n {
                axpy(d[k], col(&j, k), &mut z);
            }
            for k in (0..q).rev() {
                let mut acc = d[k];
                for c in k + 1..q {
                    acc -= r[(k, c)] * rv[c];
                }
                rv[k] = acc / r[(k, k)];
            }

            let mut t1 = f64::INFINITY;
            let mut drop_at = None;
            for k in 0..q {
                if active[k].0 >= m_eq && rv[k] > 0.0 {
                    let t = u[k] / rv[k];
                    if t < t1 {
                        t1 = t;
                        drop_at = Some(k);
                    }
                }
            }
            let d_norm2: f64 = dot(&d, &d);
            let d2_norm2: f64 = dot(&d[q..], &d[q..]);
            let zn = dot(&z, &np);
            let s_p = dot(&np, x.as_slice()) - bp;
            let t2 = if d2_norm2 <= 1e-20 * d_norm2 || zn <= 0.0 {
                f64::INFINITY
            } else {
                (-s_p / zn).max(0.0)
            };

            if t2.is_infinite() {
                if id < m_eq && math::abs(s_p) <= 1e-12 * (1.0 + math::abs(bp)) {
                    eq_done[id] = true;
                    break;
                }
                let Some(l) = drop_at else {
                    return Some(finish(QpStatus::Infeasible, x, &active, &u, m_eq, m_in, iterations));
                };
                for k in 0..q {
                    u[k] -= t1 * rv[k];
                }
                u_p += t1;
                if active[l].0 >= m_eq {
                    is_active[active[l].0 - m_eq] = false;
                }
                drop_constraint(&mut j, &mut r, &mut active, &mut u, l, n);
                continue;
            }

            let t = t1.min(t2);
            axpy(t, &z, x.as_mut_slice());
            for k in 0..q {
                u[k] -= t * rv[k];
            }
            u_p += t;
            if t2 <= t1 {
                add_constraint(&mut j, &mut r, &mut d, q, n);
                active.push((id, sign));
                u.push(u_p);
                if id < m_eq {
                    eq_done[id] = true;
                } else {
                    is_active[id - m_eq] = true;
                }
                break;
            }
            let l = drop_at.expect("finite partial step has a blocking constraint");
            if active[l].0 >= m_eq {
                is_active[active[l].0 - m_eq] = false;
            }
            drop_constraint(&mut j, &mut r, &mut active, &mut u, l, n);
        }
    }
}

fn finish(
    status: QpStatus,
    x: Vector,
    active: &[(usize, f64)],
    u: &[f64],
    m_eq: usize,
    m_in: usize,
    iterations: usize,
) -> QpSolution {
    let mut eq = Vector::zeros(m_eq);
    let mut ineq = Vector::zeros(m_in);
    for (k, &(id, sign)) in active.iter().enumerate() {
        if id < m_eq {
            eq[id] = sign * u[k];
        } else {
            ineq[id - m_eq] = u[k].max(0.0);
        }
    }
    QpSolution {
        status,
        x,
        eq_multipliers: eq,
        ineq_multipliers: ineq,
        iterations,
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn col(m: &Matrix, k: usize) -> &[f64] {
    let n = m.nrows();
    &m.as_slice()[k * n..(k + 1) * n]
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn givens(a: f64, b: f64) -> (f64, f64, f64) {
    let h = libm::hypot(a, b);
    if h == 0.0 {
        (1.0, 0.0, 0.0)
    } else {
        (a / h, b / h, h)
    }
}

fn rotate_columns(j: &mut Matrix, a: usize, b: usize, c: f64, s: f64) {
    let n = j.nrows();
    let data = j.as_mut_slice();
    let (lo, hi) = data.split_at_mut(b * n);
    let ca = &mut lo[a * n..(a + 1) * n];
    let cb = &mut hi[..n];
    for (ja, jb) in ca.iter_mut().zip(cb.iter_mut()) {
        let (x, y) = (*ja, *jb);
        *ja = c * x + s * y;
        *jb = -s * x + c * y;
    }
}

/// Append `d = Jᵀn⁺` as column `q` of `R`, rotating `d[q+1..]` to zero.
fn add_constraint(j: &mut Matrix, r: &mut Matrix, d: &mut [f64], q: usize, n: usize) {
    for k in (q + 1..n).rev() {
        if d[k] == 0.0 {
            continue;
        }
        let (c, s, h) = givens(d[k - 1], d[k]);
        d[k - 1] = h;
        d[k] = 0.0;
        rotate_columns(j, k - 1, k, c, s);
    }
    for k in 0..=q {
        r[(k, q)] = d[k];
    }
}

/// Remove active constraint `l` and restore the triangular shape of `R`.
fn drop_constraint(j: &mut Matrix, r: &mut Matrix, active: &mut Vec<(usize, f64)>, u: &mut Vec<f64>, l: usize, n: usize) {
    let q = active.len();
    for c in l..q - 1 {
        for k in 0..n {
            r[(k, c)] = r[(k, c + 1)];
        }
    }
    for k in 0..n {
        r[(k, q - 1)] = 0.0;
    }
    for c in l..q - 1 {
        let (cs, sn, h) = givens(r[(c, c)], r[(c + 1, c)]);
        r[(c, c)] = h;
        r[(c + 1, c)] = 0.0;
        for cc in c + 1..q - 1 {
            let a = r[(c, cc)];
            let b = r[(c + 1, cc)];
            r[(c, cc)] = cs * a + sn * b;
            r[(c + 1, cc)] = -sn * a + cs * b;
        }
        rotate_columns(j, c, c + 1, cs, sn);
    }
    active.remove(l);
    u.remove(l);
}
