//! Smooth constrained nonlinear programming: problem description, an SQP
//! solver with a Goldfarb–Idnani QP subsolver, and KKT diagnostics.

pub mod qp;
mod sqp;

pub use sqp::solve;

use alloc::boxed::Box;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::math;

/// Values and first derivatives of a program at one point.
///
/// Inequalities use the `c(x) ≥ 0` convention.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub objective: f64,
    pub gradient: Vector,
    pub eq: Vector,
    pub eq_jacobian: Matrix,
    pub ineq: Vector,
    pub ineq_jacobian: Matrix,
}

impl Evaluation {
    pub fn is_finite(&self) -> bool {
        self.objective.is_finite()
            && self.gradient.iter().all(|v| v.is_finite())
            && self.eq.iter().all(|v| v.is_finite())
            && self.ineq.iter().all(|v| v.is_finite())
            && self.eq_jacobian.iter().all(|v| v.is_finite())
            && self.ineq_jacobian.iter().all(|v| v.is_finite())
    }

    /// `max(|c_eq|_∞, max(−c_in, 0))`.
    pub fn max_violation(&self) -> f64 {
        let eq = self.eq.iter().fold(0.0f64, |m, v| m.max(math::abs(*v)));
        self.ineq.iter().fold(eq, |m, v| m.max(-*v))
    }

    /// `‖c_eq‖₁ + Σ max(−c_in, 0)`.
    pub fn l1_violation(&self) -> f64 {
        self.eq.iter().map(|v| math::abs(*v)).sum::<f64>() + self.ineq.iter().map(|v| (-*v).max(0.0)).sum::<f64>()
    }
}

/// A smooth nonlinear program.
pub trait NlpProblem {
    fn n_vars(&self) -> usize;

    fn n_eq(&self) -> usize {
        0
    }

    fn n_ineq(&self) -> usize {
        0
    }

    /// Variable bounds; infinite entries are absent.
    fn bounds(&self) -> (Vector, Vector) {
        let n = self.n_vars();
        (Vector::from_element(n, f64::NEG_INFINITY), Vector::from_element(n, f64::INFINITY))
    }

    fn initial_guess(&self) -> Vector;

    fn evaluate(&self, x: &Vector) -> Result<Evaluation>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NlpOptions {
    pub feas_tol: f64,
    pub opt_tol: f64,
    pub max_iter: usize,
}

impl Default for NlpOptions {
    fn default() -> Self {
        Self {
            feas_tol: 1e-8,
            opt_tol: 1e-8,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NlpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NlpResult {
    pub status: NlpStatus,
    pub x: Vector,
    pub objective: f64,
    pub max_violation: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub eq_multipliers: Vector,
    /// Multipliers of the inequality rows, then of the finite lower bounds,
    /// then of the finite upper bounds (the order used by [`kkt_residual`]).
    pub ineq_multipliers: Vector,
}

/// The problem with finite variable bounds appended as inequality rows.
pub(crate) struct Bounded<'a> {
    pub inner: &'a dyn NlpProblem,
    lower: Vec<(usize, f64)>,
    upper: Vec<(usize, f64)>,
}

impl<'a> Bounded<'a> {
    pub fn new(inner: &'a dyn NlpProblem) -> Self {
        let (lo, hi) = inner.bounds();
        let lower = lo.iter().enumerate().filter(|(_, v)| v.is_finite()).map(|(i, v)| (i, *v)).collect();
        let upper = hi.iter().enumerate().filter(|(_, v)| v.is_finite()).map(|(i, v)| (i, *v)).collect();
        Self { inner, lower, upper }
    }

    pub fn n_ineq(&self) -> usize {
        self.inner.n_ineq() + self.lower.len() + self.upper.len()
    }

    pub fn clip(&self, x: &mut Vector) {
        for &(i, v) in &self.lower {
            x[i] = x[i].max(v);
        }
        for &(i, v) in &self.upper {
            x[i] = x[i].min(v);
        }
    }

    pub fn evaluate(&self, x: &Vector) -> Result<Evaluation> {
        let mut ev = self.inner.evaluate(x)?;
        let n = x.len();
        let m_in = self.inner.n_ineq();
        if ev.gradient.len() != n
            || ev.eq.len() != self.inner.n_eq()
            || ev.ineq.len() != m_in
            || ev.eq_jacobian.shape() != (ev.eq.len(), n)
            || ev.ineq_jacobian.shape() != (m_in, n)
        {
            return Err(Error::Dimension("evaluation sizes disagree with the problem".into()));
        }
        if self.lower.is_empty() && self.upper.is_empty() {
            return Ok(ev);
        }
        let m = self.n_ineq();
        let mut c = Vector::zeros(m);
        let mut jac = Matrix::zeros(m, n);
        c.rows_mut(0, m_in).copy_from(&ev.ineq);
        jac.rows_mut(0, m_in).copy_from(&ev.ineq_jacobian);
        for (k, &(i, v)) in self.lower.iter().enumerate() {
            c[m_in + k] = x[i] - v;
            jac[(m_in + k, i)] = 1.0;
        }
        let off = m_in + self.lower.len();
        for (k, &(i, v)) in self.upper.iter().enumerate() {
            c[off + k] = v - x[i];
            jac[(off + k, i)] = -1.0;
        }
        ev.ineq = c;
        ev.ineq_jacobian = jac;
        Ok(ev)
    }
}

/// Residual of the KKT system from an evaluation and multipliers.
pub(crate) fn kkt_from_evaluation(ev: &Evaluation, eq_duals: &Vector, ineq_duals: &Vector) -> f64 {
    let stat = &ev.gradient - ev.eq_jacobian.transpose() * eq_duals - ev.ineq_jacobian.transpose() * ineq_duals;
    let mut r = stat.amax();
    for (c, l) in ev.ineq.iter().zip(ineq_duals.iter()) {
        r = r.max(math::abs(c * l)).max(-l);
    }
    r
}

/// `‖(∇f − J_eqᵀλ_eq − J_inᵀλ_in, λ_in ∘ c_in, min(λ_in, 0))‖_∞`.
///
/// `ineq_duals` covers the inequality rows followed by the finite lower
/// and then finite upper variable bounds.
pub fn kkt_residual(p: &dyn NlpProblem, x: &Vector, eq_duals: &Vector, ineq_duals: &Vector) -> Result<f64> {
    let b = Bounded::new(p);
    if eq_duals.len() != p.n_eq() || ineq_duals.len() != b.n_ineq() || x.len() != p.n_vars() {
        return Err(Error::Dimension("primal or dual length mismatch".into()));
    }
    let ev = b.evaluate(x)?;
    Ok(kkt_from_evaluation(&ev, eq_duals, ineq_duals))
}

type ScalarFn = Box<dyn Fn(&Vector) -> (f64, Vector)>;
type VectorFn = Box<dyn Fn(&Vector) -> (Vector, Matrix)>;

/// A program assembled from closures, convenient for small problems.
pub struct FnProblem {
    n: usize,
    x0: Vector,
    objective: ScalarFn,
    eq: Option<(usize, VectorFn)>,
    ineq: Option<(usize, VectorFn)>,
    bounds: Option<(Vector, Vector)>,
}

impl FnProblem {
    pub fn new(x0: Vector, objective: impl Fn(&Vector) -> (f64, Vector) + 'static) -> Self {
        Self {
            n: x0.len(),
            x0,
            objective: Box::new(objective),
            eq: None,
            ineq: None,
            bounds: None,
        }
    }

    pub fn with_eq(mut self, m: usize, c: impl Fn(&Vector) -> (Vector, Matrix) + 'static) -> Self {
        self.eq = Some((m, Box::new(c)));
        self
    }

    pub fn with_ineq(mut self, m: usize, c: impl Fn(&Vector) -> (Vector, Matrix) + 'static) -> Self {
        self.ineq = Some((m, Box::new(c)));
        self
    }

    pub fn with_bounds(mut self, lo: Vector, hi: Vector) -> Self {
        self.bounds = Some((lo, hi));
        self
    }
}

impl NlpProblem for FnProblem {
    fn n_vars(&self) -> usize {
        self.n
    }

    fn n_eq(&self) -> usize {
        self.eq.as_ref().map_or(0, |e| e.0)
    }

    fn n_ineq(&self) -> usize {
        self.ineq.as_ref().map_or(0, |e| e.0)
    }

    fn bounds(&self) -> (Vector, Vector) {
        match &self.bounds {
            Some(b) => b.clone(),
            None => (
                Vector::from_element(self.n, f64::NEG_INFINITY),
                Vector::from_element(self.n, f64::INFINITY),
            ),
        }
    }

    fn initial_guess(&self) -> Vector {
        self.x0.clone()
    }

    fn evaluate(&self, x: &Vector) -> Result<Evaluation> {
        let (objective, gradient) = (self.objective)(x);
        let (eq, eq_jacobian) = match &self.eq {
            Some((_, c)) => c(x),
            None => (Vector::zeros(0), Matrix::zeros(0, self.n)),
        };
        let (ineq, ineq_jacobian) = match &self.ineq {
            Some((_, c)) => c(x),
            None => (Vector::zeros(0), Matrix::zeros(0, self.n)),
        };
        Ok(Evaluation {
            objective,
            gradient,
            eq,
            eq_jacobian,
            ineq,
            ineq_jacobian,
        })
    }
}

/// Largest relative mismatch between supplied derivatives and central
/// differences at `x`, over the gradient and both Jacobians.
pub fn derivative_mismatch(p: &dyn NlpProblem, x: &Vector, step: f64) -> Result<f64> {
    let ev = p.evaluate(x)?;
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let h = step * (1.0 + math::abs(x[i]));
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        let ep = p.evaluate(&xp)?;
        let em = p.evaluate(&xm)?;
        let mut cmp = |analytic: f64, plus: f64, minus: f64| {
            let fd = (plus - minus) / (2.0 * h);
            let rel = math::abs(analytic - fd) / (1.0 + math::abs(analytic).max(math::abs(fd)));
            worst = worst.max(rel);
        };
        cmp(ev.gradient[i], ep.objective, em.objective);
        for r in 0..ev.eq.len() {
            cmp(ev.eq_jacobian[(r, i)], ep.eq[r], em.eq[r]);
        }
        for r in 0..ev.ineq.len() {
            cmp(ev.ineq_jacobian[(r, i)], ep.ineq[r], em.ineq[r]);
        }
    }
    Ok(worst)
}
