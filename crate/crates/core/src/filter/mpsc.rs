//! Nominal predictive safety certification for exactly known states: the
//! reference the filter must reduce to without uncertainty.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::model::{ConstraintSet, SystemModel};
use crate::nlp::{self, Evaluation, NlpOptions, NlpProblem, NlpResult, NlpStatus};

/// `min ‖π_L − u_0‖²` subject to `(x_i, u_i) ∈ Z` and `‖x_N‖_{P_f} ≤ r`.
#[derive(Debug, Clone)]
pub struct MpscProblem<'a> {
    pub model: &'a SystemModel,
    pub constraints: &'a ConstraintSet,
    pub p_f: Matrix,
    pub radius: f64,
    pub x0: Vector,
    pub u_learn: Vector,
    pub horizon: usize,
    pub start: Vector,
}

impl<'a> MpscProblem<'a> {
    pub fn new(
        model: &'a SystemModel,
        constraints: &'a ConstraintSet,
        p_f: Matrix,
        radius: f64,
        x0: Vector,
        u_learn: Vector,
        horizon: usize,
    ) -> Self {
        let start = Vector::zeros(horizon * model.n_u());
        Self {
            model,
            constraints,
            p_f,
            radius,
            x0,
            u_learn,
            horizon,
            start,
        }
    }

    pub fn inputs(&self, z: &Vector) -> Vec<Vector> {
        let m = self.model.n_u();
        (0..self.horizon).map(|i| z.rows(i * m, m).into_owned()).collect()
    }
}

impl NlpProblem for MpscProblem<'_> {
    fn n_vars(&self) -> usize {
        self.horizon * self.model.n_u()
    }

    fn n_ineq(&self) -> usize {
        self.horizon * self.constraints.len() + 1
    }

    fn initial_guess(&self) -> Vector {
        self.start.clone()
    }

    fn evaluate(&self, z: &Vector) -> Result<Evaluation> {
        let n = self.n_vars();
        let m = self.model.n_u();
        let n_x = self.model.n_x();
        let diff = &self.u_learn - z.rows(0, m);
        let mut gradient = Vector::zeros(n);
        for c in 0..m {
            gradient[c] = -2.0 * diff[c];
        }

        let rows = self.n_ineq();
        let mut ineq = Vector::zeros(rows);
        let mut jac = Matrix::zeros(rows, n);
        // dx_i/du_l for all l, propagated column by column
        let mut dx = Matrix::zeros(n_x, n);
        let mut x = self.x0.clone();
        let mut r = 0;
        for i in 0..self.horizon {
            let u = z.rows(i * m, m).into_owned();
            for h in self.constraints.rows() {
                ineq[r] = h.b - h.c_x.dot(&x) - h.c_u.dot(&u);
                for col in 0..n {
                    let mut d = 0.0;
                    for a in 0..n_x {
                        d += h.c_x[a] * dx[(a, col)];
                    }
                    jac[(r, col)] = -d;
                }
                for c in 0..m {
                    jac[(r, i * m + c)] -= h.c_u[c];
                }
                r += 1;
            }
            let (next, a, b) = self.model.step_with_jacobians(&x, &u)?;
            let mut nd = &a * &dx;
            for c in 0..m {
                for a_ in 0..n_x {
                    nd[(a_, i * m + c)] += b[(a_, c)];
                }
            }
            dx = nd;
            x = next;
        }
        let px = &self.p_f * &x;
        ineq[r] = self.radius * self.radius - x.dot(&px);
        for col in 0..n {
            jac[(r, col)] = -2.0 * px.dot(&dx.column(col));
        }
        Ok(Evaluation {
            objective: diff.norm_squared(),
            gradient,
            eq: Vector::zeros(0),
            eq_jacobian: Matrix::zeros(0, n),
            ineq,
            ineq_jacobian: jac,
        })
    }
}

/// Closed-loop driver of [`MpscProblem`] with a shifted warm start.
#[derive(Debug, Clone)]
pub struct NominalCertifier<'a> {
    pub model: &'a SystemModel,
    pub constraints: &'a ConstraintSet,
    pub p_f: Matrix,
    pub k_f: Matrix,
    pub radius: f64,
    pub horizon: usize,
    pub nlp: NlpOptions,
    previous: Option<Vec<Vector>>,
}

impl<'a> NominalCertifier<'a> {
    pub fn new(model: &'a SystemModel, constraints: &'a ConstraintSet, p_f: Matrix, k_f: Matrix, radius: f64, horizon: usize, nlp: NlpOptions) -> Self {
        Self {
            model,
            constraints,
            p_f,
            k_f,
            radius,
            horizon,
            nlp,
            previous: None,
        }
    }

    /// Certified first input for the exactly known state `x`.
    pub fn certify(&mut self, x: &Vector, u_learn: &Vector) -> Result<(Vector, NlpResult)> {
        let mut p = MpscProblem::new(self.model, self.constraints, self.p_f.clone(), self.radius, x.clone(), u_learn.clone(), self.horizon);
        let m = self.model.n_u();
        let mut guess: Vec<Vector> = match &self.previous {
            Some(prev) => prev.iter().skip(1).cloned().collect(),
            None => Vec::new(),
        };
        // extend with the terminal controller along the nominal rollout
        let mut xi = x.clone();
        for u in &guess {
            xi = self.model.step(&xi, u)?;
        }
        while guess.len() < self.horizon {
            let u = &self.k_f * &xi;
            xi = self.model.step(&xi, &u)?;
            guess.push(u);
        }
        for (i, u) in guess.iter().enumerate() {
            p.start.rows_mut(i * m, m).copy_from(u);
        }
        let r = nlp::solve(&p, &self.nlp)?;
        if r.status != NlpStatus::Optimal {
            self.previous = None;
            return Err(Error::InitialInfeasible);
        }
        let inputs = p.inputs(&r.x);
        let u0 = inputs[0].clone();
        self.previous = Some(inputs);
        Ok((u0, r))
    }
}
