//! The per-step filter program in single-shooting form.
//!
//! Decision vector: `ū_0..ū_{N−1}`, then (unless pinned) `x̄_0` and `s̄_0`.
//! Inequalities, all written `g ≥ 0`: the initial tube cone, the tightened
//! constraint rows for `i = 0..N−1`, the terminal ellipsoid and the terminal
//! tube cap.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::lyapunov::Certificate;
use crate::math;
use crate::model::{ConstraintSet, SystemModel};
use crate::nlp::{Evaluation, NlpProblem};

use super::safe_set::SafeSet;

/// Shared read-only data of a filter instance.
#[derive(Debug, Clone, Copy)]
pub struct FilterContext<'a> {
    pub model: &'a SystemModel,
    pub cert: &'a Certificate,
    pub constraints: &'a ConstraintSet,
    pub safe_set: &'a SafeSet,
}

/// A nominal plan with its tubes.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub u_bar: Vec<Vector>,
    /// `N + 1` nominal states.
    pub x_bar: Vec<Vector>,
    /// `N + 1` tube sizes.
    pub s_bar: Vec<f64>,
    /// `N + 1` predicted error bounds.
    pub e_bar: Vec<f64>,
}

impl Plan {
    pub fn horizon(&self) -> usize {
        self.u_bar.len()
    }
}

/// Supporting directions of the polygon kept inside the unit disc (`n = 2`),
/// the exact pair for `n = 1`, and the scaled box otherwise, as
/// `(directions, scale)` with `aᵢᵀz ≤ scale·s̄` implying `‖z‖ ≤ s̄`.
fn cone_faces(n: usize) -> (Vec<Vector>, f64) {
    match n {
        1 => (alloc::vec![Vector::from_element(1, 1.0), Vector::from_element(1, -1.0)], 1.0),
        2 => {
            let m = 32;
            let faces = (0..m)
                .map(|i| {
                    let t = 2.0 * PI * i as f64 / m as f64;
                    Vector::from_column_slice(&[math::cos(t), math::sin(t)])
                })
                .collect();
            (faces, math::cos(PI / m as f64))
        }
        _ => {
            let mut faces = Vec::with_capacity(2 * n);
            for i in 0..n {
                for s in [1.0, -1.0] {
                    let mut a = Vector::zeros(n);
                    a[i] = s;
                    faces.push(a);
                }
            }
            (faces, 1.0 / math::sqrt(n as f64))
        }
    }
}

#[derive(Debug, Clone)]
pub struct RpofsfProblem<'a> {
    ctx: FilterContext<'a>,
    x_hat: Vector,
    u_learn: Vector,
    horizon: usize,
    pinned: bool,
    e_pred: Vec<f64>,
    /// `s̄_i = ρ_s^i s̄_0 + s_drive[i]`.
    s_drive: Vec<f64>,
    rho_pow: Vec<f64>,
    supports: Vec<(f64, f64)>,
    radius: f64,
    /// Rows `aᵢᵀ P_s^{1/2}` of the cone constraint.
    faces: Matrix,
    face_scale: f64,
    start: Vector,
}

impl<'a> RpofsfProblem<'a> {
    /// Build the program for estimate `x_hat` with bound `e_bar`.
    ///
    /// `terminal_radius` replaces the safe-set radius when given.
    pub fn new(
        ctx: FilterContext<'a>,
        x_hat: &Vector,
        e_bar: f64,
        u_learn: &Vector,
        horizon: usize,
        pinned: bool,
        terminal_radius: Option<f64>,
    ) -> Result<Self> {
        let model = ctx.model;
        let cert = ctx.cert;
        if horizon == 0 {
            return Err(Error::Scenario("horizon must be at least 1".into()));
        }
        if !(e_bar >= 0.0) {
            return Err(Error::Scenario("error bound must be nonnegative".into()));
        }
        if x_hat.len() != model.n_x() || u_learn.len() != model.n_u() {
            return Err(Error::Dimension("estimate or input has wrong length".into()));
        }
        let w_bar = model.w_bar();
        let e_pred = cert.predicted_bounds(e_bar, horizon, w_bar);
        let mut s_drive = Vec::with_capacity(horizon + 1);
        s_drive.push(0.0);
        for i in 0..horizon {
            s_drive.push(cert.tube_update(s_drive[i], e_pred[i], w_bar));
        }
        let rho_pow: Vec<f64> = (0..=horizon).map(|i| math::powi(cert.rho_s, i)).collect();

        let vanished = || Error::TerminalSetVanished {
            e_bar: e_pred[horizon],
            s_bar: s_drive[horizon],
        };
        let radius = ctx.safe_set.radius(e_pred[horizon], s_drive[horizon]).ok_or_else(vanished)?;
        let radius = terminal_radius.unwrap_or(radius);
        if !(radius >= 0.0) {
            return Err(vanished());
        }

        let (dirs, face_scale) = cone_faces(model.n_x());
        let mut faces = Matrix::zeros(dirs.len(), model.n_x());
        for (i, a) in dirs.iter().enumerate() {
            faces.row_mut(i).copy_from(&(a.transpose() * cert.v_s.sqrt_matrix()));
        }

        let mut p = Self {
            supports: ctx.constraints.rows().iter().map(|r| cert.row_supports(r)).collect(),
            ctx,
            x_hat: x_hat.clone(),
            u_learn: u_learn.clone(),
            horizon,
            pinned,
            e_pred,
            s_drive,
            rho_pow,
            radius,
            faces,
            face_scale,
            start: Vector::zeros(0),
        };
        p.start = p.default_guess()?;
        Ok(p)
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn is_pinned(&self) -> bool {
        self.pinned
    }

    pub fn terminal_radius(&self) -> f64 {
        self.radius
    }

    pub fn predicted_bounds(&self) -> &[f64] {
        &self.e_pred
    }

    fn n_u(&self) -> usize {
        self.ctx.model.n_u()
    }

    fn n_x(&self) -> usize {
        self.ctx.model.n_x()
    }

    fn x0_index(&self) -> usize {
        self.horizon * self.n_u()
    }

    fn s0_index(&self) -> usize {
        self.x0_index() + self.n_x()
    }

    /// Split a decision vector into `(ū, x̄_0, s̄_0)`.
    pub fn unpack(&self, z: &Vector) -> (Vec<Vector>, Vector, f64) {
        let n_u = self.n_u();
        let u = (0..self.horizon).map(|i| z.rows(i * n_u, n_u).into_owned()).collect();
        if self.pinned {
            (u, self.x_hat.clone(), 0.0)
        } else {
            (u, z.rows(self.x0_index(), self.n_x()).into_owned(), z[self.s0_index()])
        }
    }

    /// Assemble a decision vector.
    pub fn pack_exact(&self, u_bar: &[Vector], x0: &Vector, s0: f64) -> Vector {
        let n_u = self.n_u();
        let mut z = Vector::zeros(self.n_vars());
        for (i, u) in u_bar.iter().take(self.horizon).enumerate() {
            z.rows_mut(i * n_u, n_u).copy_from(u);
        }
        if !self.pinned {
            z.rows_mut(self.x0_index(), self.n_x()).copy_from(x0);
            z[self.s0_index()] = s0;
        }
        z
    }

    /// Assemble a decision vector with `s̄_0` raised to cover the cone if needed.
    pub fn pack(&self, u_bar: &[Vector], x0: &Vector, s0: f64) -> Vector {
        let n_u = self.n_u();
        let mut z = Vector::zeros(self.n_vars());
        for (i, u) in u_bar.iter().take(self.horizon).enumerate() {
            z.rows_mut(i * n_u, n_u).copy_from(u);
        }
        if !self.pinned {
            z.rows_mut(self.x0_index(), self.n_x()).copy_from(x0);
            let need = (&self.faces * (x0 - &self.x_hat)).max() / self.face_scale;
            z[self.s0_index()] = s0.max(need).max(0.0);
        }
        z
    }

    /// Closed-loop rollout of `K_f` from the estimate.
    fn default_guess(&self) -> Result<Vector> {
        let mut x = self.x_hat.clone();
        let mut u = Vec::with_capacity(self.horizon);
        for _ in 0..self.horizon {
            let ui = self.ctx.safe_set.safe_input(&x);
            x = self.ctx.model.step(&x, &ui)?;
            u.push(ui);
        }
        Ok(self.pack(&u, &self.x_hat.clone(), 0.0))
    }

    pub fn set_initial_guess(&mut self, z: Vector) {
        if z.len() == self.n_vars() {
            self.start = z;
        }
    }

    /// Nominal rollout and the full plan for a decision vector.
    pub fn plan(&self, z: &Vector) -> Result<Plan> {
        let (u_bar, x0, s0) = self.unpack(z);
        let mut x_bar = Vec::with_capacity(self.horizon + 1);
        x_bar.push(x0);
        for i in 0..self.horizon {
            let next = self.ctx.model.step(&x_bar[i], &u_bar[i])?;
            x_bar.push(next);
        }
        let s_bar = (0..=self.horizon).map(|i| self.rho_pow[i] * s0 + self.s_drive[i]).collect();
        Ok(Plan {
            u_bar,
            x_bar,
            s_bar,
            e_bar: self.e_pred.clone(),
        })
    }

    /// Input actually applied for a decision vector, `ū_0 + K(x̂ − x̄_0)`.
    pub fn applied_input(&self, z: &Vector) -> Vector {
        let (u, x0, _) = self.unpack(z);
        self.ctx.cert.policy().apply(&self.x_hat, &x0, &u[0])
    }

    /// `‖π_L − π(x̂, x̄_0, ū_0)‖²`.
    pub fn modification(&self, z: &Vector) -> f64 {
        (&self.u_learn - self.applied_input(z)).norm_squared()
    }

    /// Smallest slack of the original constraints of the program, with the
    /// exact tube `V_s(x̄_0, x̂)` in place of the polygon. Negative when the
    /// candidate is infeasible.
    pub fn exact_min_slack(&self, z: &Vector) -> Result<f64> {
        let plan = self.plan(z)?;
        let (_, x0, s0) = self.unpack(z);
        let mut worst = s0 - self.ctx.cert.v_s.eval(&x0, &self.x_hat);
        if self.pinned {
            worst = 0.0;
        }
        for i in 0..self.horizon {
            for (row, &(a, c)) in self.ctx.constraints.rows().iter().zip(&self.supports) {
                let slack = row.slack(&plan.x_bar[i], &plan.u_bar[i]) - a * plan.s_bar[i] - c * self.e_pred[i];
                worst = worst.min(slack);
            }
        }
        let n = self.horizon;
        worst = worst.min(self.radius - self.ctx.safe_set.norm(&plan.x_bar[n]));
        worst = worst.min(self.ctx.safe_set.s_cap() - plan.s_bar[n]);
        worst = worst.min(self.ctx.safe_set.e_cap() - self.e_pred[n]);
        Ok(worst)
    }

    fn n_cone(&self) -> usize {
        if self.pinned {
            0
        } else {
            self.faces.nrows()
        }
    }

    fn n_terminal(&self) -> usize {
        if self.pinned {
            1
        } else {
            2
        }
    }
}

impl NlpProblem for RpofsfProblem<'_> {
    fn n_vars(&self) -> usize {
        self.horizon * self.n_u() + if self.pinned { 0 } else { self.n_x() + 1 }
    }

    fn n_ineq(&self) -> usize {
        self.n_cone() + self.horizon * self.ctx.constraints.len() + self.n_terminal()
    }

    fn bounds(&self) -> (Vector, Vector) {
        let n = self.n_vars();
        let mut lo = Vector::from_element(n, f64::NEG_INFINITY);
        let hi = Vector::from_element(n, f64::INFINITY);
        if !self.pinned {
            lo[self.s0_index()] = 0.0;
        }
        (lo, hi)
    }

    fn initial_guess(&self) -> Vector {
        self.start.clone()
    }

    fn evaluate(&self, z: &Vector) -> Result<Evaluation> {
        let model = self.ctx.model;
        let cert = self.ctx.cert;
        let n = self.n_vars();
        let n_x = self.n_x();
        let n_u = self.n_u();
        let nn = self.horizon;
        let (u_bar, x0, s0) = self.unpack(z);

        // objective
        let r = &self.u_learn - cert.policy().apply(&self.x_hat, &x0, &u_bar[0]);
        let mut gradient = Vector::zeros(n);
        gradient.rows_mut(0, n_u).copy_from(&(&r * -2.0));
        if !self.pinned {
            gradient.rows_mut(self.x0_index(), n_x).copy_from(&(cert.k.transpose() * &r * 2.0));
        }

        let m = self.n_ineq();
        let mut ineq = Vector::zeros(m);
        let mut jac = Matrix::zeros(m, n);
        let mut row = 0;

        if !self.pinned {
            let d = &self.faces * (&x0 - &self.x_hat);
            for i in 0..self.faces.nrows() {
                ineq[row] = self.face_scale * s0 - d[i];
                jac[(row, self.s0_index())] = self.face_scale;
                for c in 0..n_x {
                    jac[(row, self.x0_index() + c)] = -self.faces[(i, c)];
                }
                row += 1;
            }
        }

        // sensitivity of x̄_i with respect to the whole decision vector
        let mut sens = Matrix::zeros(n_x, n);
        if !self.pinned {
            sens.view_mut((0, self.x0_index()), (n_x, n_x)).fill_with_identity();
        }
        let mut x = x0;
        for i in 0..nn {
            for (h, &(a, c)) in self.ctx.constraints.rows().iter().zip(&self.supports) {
                let s_i = self.rho_pow[i] * s0 + self.s_drive[i];
                ineq[row] = h.slack(&x, &u_bar[i]) - a * s_i - c * self.e_pred[i];
                let g = h.c_x.transpose() * &sens;
                for col in 0..n {
                    jac[(row, col)] = -g[col];
                }
                for c_ in 0..n_u {
                    jac[(row, i * n_u + c_)] -= h.c_u[c_];
                }
                if !self.pinned {
                    jac[(row, self.s0_index())] -= a * self.rho_pow[i];
                }
                row += 1;
            }
            let (next, a_i, b_i) = model.step_with_jacobians(&x, &u_bar[i])?;
            sens = &a_i * &sens;
            let mut block = sens.view_mut((0, i * n_u), (n_x, n_u));
            block += &b_i;
            x = next;
        }

        let p_f = self.ctx.safe_set.p_f();
        let px = p_f * &x;
        ineq[row] = self.radius * self.radius - x.dot(&px);
        let g = (px.transpose() * &sens) * -2.0;
        jac.row_mut(row).copy_from(&g);
        row += 1;
        if !self.pinned {
            ineq[row] = self.ctx.safe_set.s_cap() - self.rho_pow[nn] * s0 - self.s_drive[nn];
            jac[(row, self.s0_index())] = -self.rho_pow[nn];
        }

        Ok(Evaluation {
            objective: r.norm_squared(),
            gradient,
            eq: Vector::zeros(0),
            eq_jacobian: Matrix::zeros(0, n),
            ineq,
            ineq_jacobian: jac,
        })
    }
}
