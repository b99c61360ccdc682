//! Line-search SQP on the ℓ1 merit function with damped BFGS updates, a
//! second-order correction, and an elastic feasibility restoration phase.

use super::qp::{solve_qp, QpProblem, QpSolution, QpStatus};
use super::{kkt_from_evaluation, Bounded, Evaluation, NlpOptions, NlpProblem, NlpResult, NlpStatus};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

const ARMIJO: f64 = 1e-4;
const MAX_RESTORATIONS: usize = 3;

/// Solve `p` starting from its initial guess.
pub fn solve(p: &dyn NlpProblem, opts: &NlpOptions) -> Result<NlpResult> {
    let bounded = Bounded::new(p);
    let mut x = p.initial_guess();
    if x.len() != p.n_vars() || !x.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical);
    }
    bounded.clip(&mut x);
    run(&bounded, x, opts, true)
}

fn objective_only(ev: &Evaluation, nu: f64) -> f64 {
    ev.objective + nu * ev.l1_violation()
}

fn eval_checked(p: &Bounded<'_>, x: &Vector) -> Option<Evaluation> {
    match p.evaluate(x) {
        Ok(ev) if ev.is_finite() => Some(ev),
        _ => None,
    }
}

fn subproblem(b: &Matrix, ev: &Evaluation, shift_eq: Option<&Vector>, shift_in: Option<&Vector>, feas_tol: f64) -> Option<QpSolution> {
    let b_eq = match shift_eq {
        Some(s) => -s,
        None => -&ev.eq,
    };
    let mut b_in = match shift_in {
        Some(s) => -s,
        None => -&ev.ineq,
    };
    // rows no step can move are judged by the feasibility tolerance alone
    for (r, v) in b_in.iter_mut().enumerate() {
        if *v > 0.0 && *v <= feas_tol && ev.ineq_jacobian.row(r).iter().all(|a| *a == 0.0) {
            *v = 0.0;
        }
    }
    solve_qp(&QpProblem {
        g: b,
        c: &ev.gradient,
        a_eq: &ev.eq_jacobian,
        b_eq: &b_eq,
        a_in: &ev.ineq_jacobian,
        b_in: &b_in,
    })
}

fn lagrangian_gradient(ev: &Evaluation, l_eq: &Vector, l_in: &Vector) -> Vector {
    &ev.gradient - ev.eq_jacobian.transpose() * l_eq - ev.ineq_jacobian.transpose() * l_in
}

fn result(status: NlpStatus, x: Vector, ev: &Evaluation, l_eq: Vector, l_in: Vector, it: usize) -> NlpResult {
    let kkt = kkt_from_evaluation(ev, &l_eq, &l_in);
    NlpResult {
        status,
        objective: ev.objective,
        max_violation: ev.max_violation(),
        kkt_residual: kkt,
        iterations: it,
        eq_multipliers: l_eq,
        ineq_multipliers: l_in,
        x,
    }
}

fn run(p: &Bounded<'_>, mut x: Vector, opts: &NlpOptions, allow_restoration: bool) -> Result<NlpResult> {
    let n = x.len();
    let m_eq = p.inner.n_eq();
    let m_in = p.n_ineq();
    let mut ev = eval_checked(p, &x).ok_or(Error::Numerical)?;
    let mut b = Matrix::identity(n, n);
    let mut nu = 0.0f64;
    let mut l_eq = Vector::zeros(m_eq);
    let mut l_in = Vector::zeros(m_in);
    let mut restorations = 0usize;
    let mut fresh_hessian = true;

    for it in 0..=opts.max_iter {
        let mut qp = match subproblem(&b, &ev, None, None, opts.feas_tol) {
            Some(qp) => qp,
            None => {
                b = Matrix::identity(n, n);
                fresh_hessian = true;
                continue;
            }
        };
        // boundary points of a thin feasible set: allow the smallest part
        // of the tolerance that restores a solvable linearization
        for frac in [1e-4, 1e-2, 0.5] {
            if qp.status != QpStatus::Infeasible {
                break;
            }
            let relaxed = ev.ineq.add_scalar(frac * opts.feas_tol);
            if let Some(r) = subproblem(&b, &ev, None, Some(&relaxed), opts.feas_tol) {
                if r.status == QpStatus::Optimal {
                    qp = r;
                }
            }
        }
        match qp.status {
            QpStatus::Optimal => {}
            QpStatus::Infeasible if allow_restoration && restorations < MAX_RESTORATIONS => {
                restorations += 1;
                let (xr, t) = restore(p, &x, opts)?;
                if t > opts.feas_tol {
                    return Ok(result(NlpStatus::Infeasible, x, &ev, l_eq, l_in, it));
                }
                x = xr;
                ev = eval_checked(p, &x).ok_or(Error::Numerical)?;
                b = Matrix::identity(n, n);
                fresh_hessian = true;
                continue;
            }
            QpStatus::Infeasible if !allow_restoration => {
                return Ok(result(NlpStatus::Infeasible, x, &ev, l_eq, l_in, it));
            }
            _ => return Ok(result(NlpStatus::MaxIter, x, &ev, l_eq, l_in, it)),
        }
        let d = qp.x;
        l_eq = qp.eq_multipliers;
        l_in = qp.ineq_multipliers;

        let viol = ev.max_violation();
        let kkt = kkt_from_evaluation(&ev, &l_eq, &l_in);
        if viol <= opts.feas_tol && kkt <= opts.opt_tol {
            return Ok(result(NlpStatus::Optimal, x, &ev, l_eq, l_in, it));
        }
        if it == opts.max_iter {
            break;
        }

        let lam_max = l_eq.amax().max(l_in.amax());
        if nu < lam_max * 1.1 + 1e-8 {
            nu = lam_max * 1.5 + 1e-6;
        }
        let phi0 = objective_only(&ev, nu);
        let slope = ev.gradient.dot(&d) - nu * ev.l1_violation();

        let mut accepted: Option<(Vector, Evaluation)> = None;
        let mut alpha = 1.0;
        let mut tried_soc = false;
        while alpha > 1e-12 {
            let xt = &x + &d * alpha;
            if let Some(et) = eval_checked(p, &xt) {
                if objective_only(&et, nu) <= phi0 + ARMIJO * alpha * slope.min(0.0) {
                    accepted = Some((xt, et));
                    break;
                }
                if alpha == 1.0 && !tried_soc {
                    tried_soc = true;
                    // re-linearize constraints at the trial point
                    let s_eq = &et.eq - &ev.eq_jacobian * &d;
                    let s_in = &et.ineq - &ev.ineq_jacobian * &d;
                    if let Some(soc) = subproblem(&b, &ev, Some(&s_eq), Some(&s_in), opts.feas_tol) {
                        if soc.status == QpStatus::Optimal {
                            let xs = &x + &soc.x;
                            if let Some(es) = eval_checked(p, &xs) {
                                if objective_only(&es, nu) <= phi0 + ARMIJO * slope.min(0.0) {
                                    accepted = Some((xs, es));
                                    break;
                                }
                            }
                        }
                    }
                }
            }
            alpha *= 0.5;
        }

        let Some((x_new, ev_new)) = accepted else {
            if fresh_hessian {
                return Ok(result(NlpStatus::MaxIter, x, &ev, l_eq, l_in, it));
            }
            b = Matrix::identity(n, n);
            fresh_hessian = true;
            continue;
        };

        let s = &x_new - &x;
        let mut y = lagrangian_gradient(&ev_new, &l_eq, &l_in) - lagrangian_gradient(&ev, &l_eq, &l_in);
        let bs = &b * &s;
        let sbs = s.dot(&bs);
        if sbs > 1e-300 {
            let sy = s.dot(&y);
            if sy < 0.2 * sbs {
                let theta = 0.8 * sbs / (sbs - sy);
                y = &y * theta + &bs * (1.0 - theta);
            }
            let sy = s.dot(&y);
            if sy > 1e-300 {
                b += &y * y.transpose() / sy - &bs * bs.transpose() / sbs;
                b = (&b + b.transpose()) * 0.5;
                fresh_hessian = false;
            }
        }
        x = x_new;
        ev = ev_new;
    }
    Ok(result(NlpStatus::MaxIter, x, &ev, l_eq, l_in, opts.max_iter))
}

/// `min t` s.t. `c_in + t ≥ 0`, `±c_eq + t ≥ 0`, `t ≥ 0`, in variables `(x, t)`.
struct Elastic<'a, 'b> {
    base: &'a Bounded<'b>,
    x0: Vector,
    t0: f64,
}

impl NlpProblem for Elastic<'_, '_> {
    fn n_vars(&self) -> usize {
        self.x0.len() + 1
    }

    fn n_ineq(&self) -> usize {
        self.base.n_ineq() + 2 * self.base.inner.n_eq() + 1
    }

    fn initial_guess(&self) -> Vector {
        let n = self.x0.len();
        let mut z = Vector::zeros(n + 1);
        z.rows_mut(0, n).copy_from(&self.x0);
        z[n] = self.t0;
        z
    }

    fn evaluate(&self, z: &Vector) -> Result<Evaluation> {
        let n = self.x0.len();
        let x = z.rows(0, n).into_owned();
        let t = z[n];
        let ev = self.base.evaluate(&x)?;
        let m_in = ev.ineq.len();
        let m_eq = ev.eq.len();
        let m = m_in + 2 * m_eq + 1;
        let mut c = Vector::zeros(m);
        let mut jac = Matrix::zeros(m, n + 1);
        for i in 0..m_in {
            c[i] = ev.ineq[i] + t;
            for k in 0..n {
                jac[(i, k)] = ev.ineq_jacobian[(i, k)];
            }
            jac[(i, n)] = 1.0;
        }
        for i in 0..m_eq {
            for (r, sign) in [(m_in + 2 * i, 1.0), (m_in + 2 * i + 1, -1.0)] {
                c[r] = sign * ev.eq[i] + t;
                for k in 0..n {
                    jac[(r, k)] = sign * ev.eq_jacobian[(i, k)];
                }
                jac[(r, n)] = 1.0;
            }
        }
        c[m - 1] = t;
        jac[(m - 1, n)] = 1.0;
        let mut gradient = Vector::zeros(n + 1);
        gradient[n] = 1.0;
        Ok(Evaluation {
            objective: t,
            gradient,
            eq: Vector::zeros(0),
            eq_jacobian: Matrix::zeros(0, n + 1),
            ineq: c,
            ineq_jacobian: jac,
        })
    }
}

/// Returns the restored point and its maximum violation.
fn restore(p: &Bounded<'_>, x: &Vector, opts: &NlpOptions) -> Result<(Vector, f64)> {
    let ev = p.evaluate(x)?;
    let elastic = Elastic {
        base: p,
        x0: x.clone(),
        t0: ev.max_violation().max(0.0) + 1e-3,
    };
    let wrapped = Bounded::new(&elastic);
    let inner_opts = NlpOptions {
        feas_tol: opts.feas_tol * 1e-2,
        opt_tol: opts.feas_tol * 1e-2,
        max_iter: opts.max_iter,
    };
    let r = run(&wrapped, elastic.initial_guess(), &inner_opts, false)?;
    let n = x.len();
    let xr = r.x.rows(0, n).into_owned();
    let viol = match p.evaluate(&xr) {
        Ok(e) if e.is_finite() => e.max_violation(),
        _ => f64::INFINITY,
    };
    Ok((xr, viol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nlp::{derivative_mismatch, kkt_residual, FnProblem};

    fn scalar(v: f64) -> Vector {
        Vector::from_element(1, v)
    }

    #[test]
    fn projection_onto_halfline() {
        let p = FnProblem::new(scalar(0.0), |x| ((x[0] - 1.0).powi(2), scalar(2.0 * (x[0] - 1.0))))
            .with_ineq(1, |x| (scalar(x[0] - 2.0), Matrix::from_element(1, 1, 1.0)));
        let r = solve(&p, &NlpOptions::default()).unwrap();
        assert_eq!(r.status, NlpStatus::Optimal);
        assert!((r.x[0] - 2.0).abs() < 1e-9);
        assert!((r.objective - 1.0).abs() < 1e-8);
        assert!((r.ineq_multipliers[0] - 2.0).abs() < 1e-7);
    }

    #[test]
    fn symmetric_equality() {
        let p = FnProblem::new(Vector::from_column_slice(&[3.0, -1.0]), |x| (x.dot(x), x * 2.0))
            .with_eq(1, |x| (scalar(x[0] + x[1] - 1.0), Matrix::from_row_slice(1, 2, &[1.0, 1.0])));
        let r = solve(&p, &NlpOptions::default()).unwrap();
        assert_eq!(r.status, NlpStatus::Optimal);
        assert!((r.x[0] - 0.5).abs() < 1e-9 && (r.x[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn empty_feasible_set() {
        let p = FnProblem::new(scalar(0.5), |x| (x[0] * x[0], scalar(2.0 * x[0]))).with_ineq(2, |x| {
            (
                Vector::from_column_slice(&[x[0] - 1.0, -x[0]]),
                Matrix::from_row_slice(2, 1, &[1.0, -1.0]),
            )
        });
        assert_eq!(solve(&p, &NlpOptions::default()).unwrap().status, NlpStatus::Infeasible);
    }

    #[test]
    fn feasible_within_tolerance_only() {
        // x ≥ 1 + 1e-13 and x ≤ 1, plus a row no step can move
        let p = FnProblem::new(scalar(0.0), |x| (x[0] * x[0], scalar(2.0 * x[0]))).with_ineq(3, |x| {
            (
                Vector::from_column_slice(&[x[0] - 1.0 - 1e-13, 1.0 - x[0], -1e-12]),
                Matrix::from_row_slice(3, 1, &[1.0, -1.0, 0.0]),
            )
        });
        let r = solve(&p, &NlpOptions::default()).unwrap();
        assert_eq!(r.status, NlpStatus::Optimal);
        assert!((r.x[0] - 1.0).abs() < 1e-9);
        assert!(r.max_violation <= 1e-8);
    }

    #[test]
    fn nonlinear_disc_constraint() {
        // min x + y on the unit disc: (−1/√2, −1/√2)
        let p = FnProblem::new(Vector::from_column_slice(&[0.3, 0.1]), |x| {
            (x[0] + x[1], Vector::from_column_slice(&[1.0, 1.0]))
        })
        .with_ineq(1, |x| {
            (
                scalar(1.0 - x.dot(x)),
                Matrix::from_row_slice(1, 2, &[-2.0 * x[0], -2.0 * x[1]]),
            )
        });
        let r = solve(&p, &NlpOptions::default()).unwrap();
        assert_eq!(r.status, NlpStatus::Optimal);
        let h = -libm::sqrt(0.5);
        assert!((r.x[0] - h).abs() < 1e-8 && (r.x[1] - h).abs() < 1e-8);
        assert!(r.kkt_residual <= 1e-8 && r.max_violation <= 1e-8);
    }

    #[test]
    fn infeasible_start_recovers_through_restoration() {
        // at x = 0.1 the linearization of x² ≥ 1 asks for x ≥ 5.05 while x ≤ 2
        let p = FnProblem::new(scalar(0.1), |x| ((x[0] - 3.0).powi(2), scalar(2.0 * (x[0] - 3.0)))).with_ineq(2, |x| {
            (
                Vector::from_column_slice(&[x[0] * x[0] - 1.0, 2.0 - x[0]]),
                Matrix::from_row_slice(2, 1, &[2.0 * x[0], -1.0]),
            )
        });
        let r = solve(&p, &NlpOptions::default()).unwrap();
        assert_eq!(r.status, NlpStatus::Optimal, "{r:?}");
        assert!((r.x[0] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn bounds_are_respected() {
        let p = FnProblem::new(scalar(0.0), |x| ((x[0] + 4.0).powi(2), scalar(2.0 * (x[0] + 4.0))))
            .with_bounds(scalar(-1.0), scalar(1.0));
        let r = solve(&p, &NlpOptions::default()).unwrap();
        assert_eq!(r.status, NlpStatus::Optimal);
        assert!((r.x[0] + 1.0).abs() < 1e-10);
        assert!(kkt_residual(&p, &r.x, &r.eq_multipliers, &r.ineq_multipliers).unwrap() < 1e-8);
    }

    #[test]
    fn kkt_residual_examples() {
        let p = FnProblem::new(scalar(0.0), |x| ((x[0] - 1.0).powi(2), scalar(2.0 * (x[0] - 1.0))))
            .with_ineq(1, |x| (scalar(x[0] - 2.0), Matrix::from_element(1, 1, 1.0)));
        let none = Vector::zeros(0);
        assert_eq!(kkt_residual(&p, &scalar(2.0), &none, &scalar(2.0)).unwrap(), 0.0);
        let r1 = kkt_residual(&p, &scalar(2.001), &none, &scalar(2.0)).unwrap();
        let r2 = kkt_residual(&p, &scalar(2.002), &none, &scalar(2.0)).unwrap();
        assert!((r2 / r1 - 2.0).abs() < 1e-6);
        let q = FnProblem::new(scalar(0.0), |x| ((x[0] - 1.0).powi(2), scalar(2.0 * (x[0] - 1.0))));
        assert_eq!(kkt_residual(&q, &scalar(1.0), &none, &none).unwrap(), 0.0);
    }

    #[test]
    fn derivative_check_helper() {
        let p = FnProblem::new(scalar(0.0), |x| (libm::sin(x[0]), scalar(libm::cos(x[0]))));
        assert!(derivative_mismatch(&p, &scalar(0.3), 1e-6).unwrap() < 1e-8);
        let wrong = FnProblem::new(scalar(0.0), |x| (libm::sin(x[0]), scalar(2.0 * libm::cos(x[0]))));
        assert!(derivative_mismatch(&wrong, &scalar(0.3), 1e-6).unwrap() > 0.1);
    }

    #[test]
    fn deterministic() {
        let mk = || {
            FnProblem::new(Vector::from_column_slice(&[0.3, 0.1]), |x| {
                (libm::exp(x[0]) + x[1] * x[1], Vector::from_column_slice(&[libm::exp(x[0]), 2.0 * x[1]]))
            })
            .with_ineq(1, |x| {
                (
                    scalar(x[0] + x[1] - 1.0),
                    Matrix::from_row_slice(1, 2, &[1.0, 1.0]),
                )
            })
        };
        let a = solve(&mk(), &NlpOptions::default()).unwrap();
        let b = solve(&mk(), &NlpOptions::default()).unwrap();
        assert_eq!(a, b);
    }
}
