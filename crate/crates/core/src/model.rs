//! Uncertain discrete-time system `x⁺ = f(x,u) + E w`, `y = h(x,u) + F w`,
//! its RK4 discretization, constraint half-spaces and the tube feedback law.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt::Debug;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::math;

/// Continuous-time vector field `ẋ = g(x,u)`.
pub trait ContinuousDynamics: Send + Sync + Debug {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn derivative(&self, x: &Vector, u: &Vector) -> Vector;

    /// `(∂g/∂x, ∂g/∂u)`; central differences unless overridden.
    fn derivative_jacobians(&self, x: &Vector, u: &Vector) -> (Matrix, Matrix) {
        finite_difference_jacobians(x, u, |x, u| self.derivative(x, u))
    }
}

/// Nominal output map `h(x,u)`.
pub trait OutputMap: Send + Sync + Debug {
    fn output_dim(&self) -> usize;
    fn eval(&self, x: &Vector, u: &Vector) -> Vector;

    fn jacobians(&self, x: &Vector, u: &Vector) -> (Matrix, Matrix) {
        finite_difference_jacobians(x, u, |x, u| self.eval(x, u))
    }
}

/// Central-difference Jacobians of `g` with respect to both arguments.
pub fn finite_difference_jacobians<G>(x: &Vector, u: &Vector, g: G) -> (Matrix, Matrix)
where
    G: Fn(&Vector, &Vector) -> Vector,
{
    let m = g(x, u).len();
    let mut jx = Matrix::zeros(m, x.len());
    let mut ju = Matrix::zeros(m, u.len());
    for i in 0..x.len() {
        let h = 1e-6 * (1.0 + math::abs(x[i]));
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        jx.set_column(i, &((g(&xp, u) - g(&xm, u)) / (2.0 * h)));
    }
    for i in 0..u.len() {
        let h = 1e-6 * (1.0 + math::abs(u[i]));
        let mut up = u.clone();
        let mut um = u.clone();
        up[i] += h;
        um[i] -= h;
        ju.set_column(i, &((g(x, &up) - g(x, &um)) / (2.0 * h)));
    }
    (jx, ju)
}

/// `y = C x + D u`.
#[derive(Debug, Clone)]
pub struct LinearOutput {
    pub c: Matrix,
    pub d: Matrix,
}

impl LinearOutput {
    pub fn new(c: Matrix, d: Matrix) -> Self {
        Self { c, d }
    }

    /// Full-state output `y = x`.
    pub fn full_state(n_x: usize, n_u: usize) -> Self {
        Self::new(Matrix::identity(n_x, n_x), Matrix::zeros(n_x, n_u))
    }
}

impl OutputMap for LinearOutput {
    fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    fn eval(&self, x: &Vector, u: &Vector) -> Vector {
        &self.c * x + &self.d * u
    }

    fn jacobians(&self, _x: &Vector, _u: &Vector) -> (Matrix, Matrix) {
        (self.c.clone(), self.d.clone())
    }
}

/// Parameters of the nonlinear mass-spring-damper.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassSpringDamperParams {
    pub mass: f64,
    pub spring: f64,
    pub damping: f64,
}

impl Default for MassSpringDamperParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            spring: 0.33,
            damping: 1.1,
        }
    }
}

/// `ẋ₁ = x₂`, `ẋ₂ = (−k₀ e^{−x₁} x₁ − h_d x₂ + u) / M`.
#[derive(Debug, Clone)]
pub struct MassSpringDamper {
    pub params: MassSpringDamperParams,
}

impl ContinuousDynamics for MassSpringDamper {
    fn state_dim(&self) -> usize {
        2
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn derivative(&self, x: &Vector, u: &Vector) -> Vector {
        let p = &self.params;
        let spring = -p.spring * math::exp(-x[0]) * x[0];
        Vector::from_column_slice(&[x[1], (spring - p.damping * x[1] + u[0]) / p.mass])
    }

    fn derivative_jacobians(&self, x: &Vector, _u: &Vector) -> (Matrix, Matrix) {
        let p = &self.params;
        let ds = -p.spring * math::exp(-x[0]) * (1.0 - x[0]);
        let a = Matrix::from_row_slice(2, 2, &[0.0, 1.0, ds / p.mass, -p.damping / p.mass]);
        let b = Matrix::from_row_slice(2, 1, &[0.0, 1.0 / p.mass]);
        (a, b)
    }
}

/// Linear vector field `ẋ = A x + B u`.
#[derive(Debug, Clone)]
pub struct LinearDynamics {
    pub a: Matrix,
    pub b: Matrix,
}

impl ContinuousDynamics for LinearDynamics {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    fn derivative(&self, x: &Vector, u: &Vector) -> Vector {
        &self.a * x + &self.b * u
    }

    fn derivative_jacobians(&self, _x: &Vector, _u: &Vector) -> (Matrix, Matrix) {
        (self.a.clone(), self.b.clone())
    }
}

/// How the nominal map `f` is obtained.
#[derive(Debug, Clone)]
pub enum Transition {
    /// Classical RK4 with sample time `dt` over a continuous vector field.
    Rk4 {
        dynamics: Arc<dyn ContinuousDynamics>,
        dt: f64,
    },
    /// Discrete-time linear map `x⁺ = A x + B u`.
    Linear { a: Matrix, b: Matrix },
}

/// One classical RK4 step of `dynamics` with step `dt`.
pub fn rk4_step(dynamics: &dyn ContinuousDynamics, dt: f64, x: &Vector, u: &Vector) -> Result<Vector> {
    let k1 = dynamics.derivative(x, u);
    let k2 = dynamics.derivative(&(x + &k1 * (0.5 * dt)), u);
    let k3 = dynamics.derivative(&(x + &k2 * (0.5 * dt)), u);
    let k4 = dynamics.derivative(&(x + &k3 * dt), u);
    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    if next.iter().all(|v| v.is_finite()) {
        Ok(next)
    } else {
        Err(Error::IntegrationFailure)
    }
}

/// RK4 step together with `(∂x⁺/∂x, ∂x⁺/∂u)` by the chain rule through the stages.
pub fn rk4_step_with_jacobians(
    dynamics: &dyn ContinuousDynamics,
    dt: f64,
    x: &Vector,
    u: &Vector,
) -> Result<(Vector, Matrix, Matrix)> {
    let n = x.len();
    let eye = Matrix::identity(n, n);
    let k1 = dynamics.derivative(x, u);
    let (a1, b1) = dynamics.derivative_jacobians(x, u);
    let x2 = x + &k1 * (0.5 * dt);
    let k2 = dynamics.derivative(&x2, u);
    let (a2, b2) = dynamics.derivative_jacobians(&x2, u);
    let x3 = x + &k2 * (0.5 * dt);
    let k3 = dynamics.derivative(&x3, u);
    let (a3, b3) = dynamics.derivative_jacobians(&x3, u);
    let x4 = x + &k3 * dt;
    let k4 = dynamics.derivative(&x4, u);
    let (a4, b4) = dynamics.derivative_jacobians(&x4, u);

    let dk1x = a1;
    let dk1u = b1;
    let dk2x = &a2 * (&eye + &dk1x * (0.5 * dt));
    let dk2u = &a2 * &dk1u * (0.5 * dt) + b2;
    let dk3x = &a3 * (&eye + &dk2x * (0.5 * dt));
    let dk3u = &a3 * &dk2u * (0.5 * dt) + b3;
    let dk4x = &a4 * (&eye + &dk3x * dt);
    let dk4u = &a4 * &dk3u * dt + b4;

    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    if !next.iter().all(|v| v.is_finite()) {
        return Err(Error::IntegrationFailure);
    }
    let jx = eye + (dk1x + dk2x * 2.0 + dk3x * 2.0 + dk4x) * (dt / 6.0);
    let ju = (dk1u + dk2u * 2.0 + dk3u * 2.0 + dk4u) * (dt / 6.0);
    Ok((next, jx, ju))
}

/// The uncertain system together with its disturbance description.
#[derive(Debug, Clone)]
pub struct SystemModel {
    transition: Transition,
    output: Arc<dyn OutputMap>,
    e: Matrix,
    f: Matrix,
    w_inf_bound: f64,
    w_bar: f64,
    n_x: usize,
    n_u: usize,
}

impl SystemModel {
    pub fn new(
        transition: Transition,
        output: Arc<dyn OutputMap>,
        e: Matrix,
        f: Matrix,
        w_inf_bound: f64,
    ) -> Result<Self> {
        let (n_x, n_u) = match &transition {
            Transition::Rk4 { dynamics, dt } => {
                if !(*dt > 0.0) || !dt.is_finite() {
                    return Err(Error::Model(format!("sample time must be positive, got {dt}")));
                }
                (dynamics.state_dim(), dynamics.input_dim())
            }
            Transition::Linear { a, b } => {
                if !a.is_square() || b.nrows() != a.nrows() {
                    return Err(Error::Dimension(format!(
                        "A is {}x{}, B is {}x{}",
                        a.nrows(),
                        a.ncols(),
                        b.nrows(),
                        b.ncols()
                    )));
                }
                (a.nrows(), b.ncols())
            }
        };
        if !(w_inf_bound >= 0.0) || !w_inf_bound.is_finite() {
            return Err(Error::Model(format!("disturbance bound must be nonnegative, got {w_inf_bound}")));
        }
        if e.nrows() != n_x || f.nrows() != output.output_dim() || e.ncols() != f.ncols() {
            return Err(Error::Dimension(format!(
                "E is {}x{}, F is {}x{}, n_x={}, n_y={}",
                e.nrows(),
                e.ncols(),
                f.nrows(),
                f.ncols(),
                n_x,
                output.output_dim()
            )));
        }
        let n_w = e.ncols();
        let w_bar = w_inf_bound * math::sqrt(n_w as f64);
        Ok(Self {
            transition,
            output,
            e,
            f,
            w_inf_bound,
            w_bar,
            n_x,
            n_u,
        })
    }

    /// The nonlinear mass-spring-damper sampled with RK4, measured through
    /// `y = x₁ + w₃`, with `E w = [dt·w₁, dt·w₂/M]`.
    pub fn mass_spring_damper(params: MassSpringDamperParams, dt: f64, w_inf_bound: f64) -> Result<Self> {
        if !(params.mass > 0.0) {
            return Err(Error::Model(format!("mass must be positive, got {}", params.mass)));
        }
        let e = Matrix::from_row_slice(2, 3, &[dt, 0.0, 0.0, 0.0, dt / params.mass, 0.0]);
        let f = Matrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0]);
        let output = LinearOutput::new(Matrix::from_row_slice(1, 2, &[1.0, 0.0]), Matrix::zeros(1, 1));
        Self::new(
            Transition::Rk4 {
                dynamics: Arc::new(MassSpringDamper { params }),
                dt,
            },
            Arc::new(output),
            e,
            f,
            w_inf_bound,
        )
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn n_y(&self) -> usize {
        self.f.nrows()
    }

    pub fn n_w(&self) -> usize {
        self.e.ncols()
    }

    pub fn dt(&self) -> Option<f64> {
        match &self.transition {
            Transition::Rk4 { dt, .. } => Some(*dt),
            Transition::Linear { .. } => None,
        }
    }

    pub fn transition(&self) -> &Transition {
        &self.transition
    }

    pub fn output_map(&self) -> &Arc<dyn OutputMap> {
        &self.output
    }

    pub fn e(&self) -> &Matrix {
        &self.e
    }

    pub fn f(&self) -> &Matrix {
        &self.f
    }

    pub fn w_inf_bound(&self) -> f64 {
        self.w_inf_bound
    }

    /// Euclidean bound on `w` implied by the box.
    pub fn w_bar(&self) -> f64 {
        self.w_bar
    }

    /// Copy of the model with another disturbance box.
    pub fn with_disturbance_bound(&self, w_inf_bound: f64) -> Result<Self> {
        Self::new(
            self.transition.clone(),
            self.output.clone(),
            self.e.clone(),
            self.f.clone(),
            w_inf_bound,
        )
    }

    /// Copy of the model with another output map and `F`.
    pub fn with_output(&self, output: Arc<dyn OutputMap>, f: Matrix) -> Result<Self> {
        Self::new(self.transition.clone(), output, self.e.clone(), f, self.w_inf_bound)
    }

    /// Nominal map `f(x,u)`.
    pub fn step(&self, x: &Vector, u: &Vector) -> Result<Vector> {
        match &self.transition {
            Transition::Rk4 { dynamics, dt } => rk4_step(dynamics.as_ref(), *dt, x, u),
            Transition::Linear { a, b } => {
                let next = a * x + b * u;
                if next.iter().all(|v| v.is_finite()) {
                    Ok(next)
                } else {
                    Err(Error::IntegrationFailure)
                }
            }
        }
    }

    /// `f(x,u)` with its Jacobians.
    pub fn step_with_jacobians(&self, x: &Vector, u: &Vector) -> Result<(Vector, Matrix, Matrix)> {
        match &self.transition {
            Transition::Rk4 { dynamics, dt } => rk4_step_with_jacobians(dynamics.as_ref(), *dt, x, u),
            Transition::Linear { a, b } => Ok((self.step(x, u)?, a.clone(), b.clone())),
        }
    }

    pub fn check_disturbance(&self, w: &Vector) -> Result<()> {
        if w.len() != self.n_w() {
            return Err(Error::Dimension(format!("w has length {}, expected {}", w.len(), self.n_w())));
        }
        let norm = w.amax();
        if !(norm <= self.w_inf_bound) {
            return Err(Error::DisturbanceOutOfBounds {
                norm,
                bound: self.w_inf_bound,
            });
        }
        Ok(())
    }

    /// `f(x,u) + E w`.
    pub fn disturbed_step(&self, x: &Vector, u: &Vector, w: &Vector) -> Result<Vector> {
        self.check_disturbance(w)?;
        Ok(self.step(x, u)? + &self.e * w)
    }

    /// Nominal output `h(x,u)`.
    pub fn output(&self, x: &Vector, u: &Vector) -> Vector {
        self.output.eval(x, u)
    }

    pub fn output_jacobians(&self, x: &Vector, u: &Vector) -> (Matrix, Matrix) {
        self.output.jacobians(x, u)
    }

    /// `h(x,u) + F w`.
    pub fn measure(&self, x: &Vector, u: &Vector, w: &Vector) -> Result<Vector> {
        self.check_disturbance(w)?;
        Ok(self.output(x, u) + &self.f * w)
    }

    /// Minimum-norm disturbance producing the state increment `v`: `Eᵀ(EEᵀ)⁻¹v`.
    pub fn disturbance_preimage(&self, v: &Vector) -> Result<Vector> {
        let eet = &self.e * self.e.transpose();
        let chol = eet.cholesky().ok_or(Error::DegenerateDisturbanceMap)?;
        Ok(self.e.transpose() * chol.solve(v))
    }

    /// Corners of the disturbance box, in binary counting order.
    pub fn disturbance_corners(&self) -> Vec<Vector> {
        let n_w = self.n_w();
        (0..1usize << n_w)
            .map(|mask| {
                Vector::from_iterator(
                    n_w,
                    (0..n_w).map(|i| if mask >> i & 1 == 1 { self.w_inf_bound } else { -self.w_inf_bound }),
                )
            })
            .collect()
    }
}

/// A half-space `c_xᵀx + c_uᵀu ≤ b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Halfspace {
    pub c_x: Vector,
    pub c_u: Vector,
    pub b: f64,
}

impl Halfspace {
    pub fn slack(&self, x: &Vector, u: &Vector) -> f64 {
        self.b - self.c_x.dot(x) - self.c_u.dot(u)
    }
}

/// The polytopic constraint set `Z`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    rows: Vec<Halfspace>,
}

impl ConstraintSet {
    pub fn new(rows: Vec<Halfspace>) -> Result<Self> {
        for (j, r) in rows.iter().enumerate() {
            if r.c_x.iter().chain(r.c_u.iter()).all(|&c| c == 0.0) {
                return Err(Error::Model(format!("constraint row {j} has a zero normal")));
            }
            if !r.b.is_finite() {
                return Err(Error::Model(format!("constraint row {j} has a non-finite bound")));
            }
        }
        Ok(Self { rows })
    }

    /// Box constraints, two rows (upper, lower) per state then per input.
    pub fn from_box(x_lo: &[f64], x_hi: &[f64], u_lo: &[f64], u_hi: &[f64]) -> Result<Self> {
        if x_lo.len() != x_hi.len() || u_lo.len() != u_hi.len() {
            return Err(Error::Dimension("box bound lengths differ".into()));
        }
        let n_x = x_lo.len();
        let n_u = u_lo.len();
        let mut rows = Vec::new();
        let mut push = |is_state: bool, i: usize, lo: f64, hi: f64| {
            if lo > hi {
                return Err(Error::Model(format!("empty box interval [{lo}, {hi}]")));
            }
            for (sign, b) in [(1.0, hi), (-1.0, -lo)] {
                let mut c_x = Vector::zeros(n_x);
                let mut c_u = Vector::zeros(n_u);
                if is_state {
                    c_x[i] = sign;
                } else {
                    c_u[i] = sign;
                }
                rows.push(Halfspace { c_x, c_u, b });
            }
            Ok(())
        };
        for i in 0..n_x {
            push(true, i, x_lo[i], x_hi[i])?;
        }
        for i in 0..n_u {
            push(false, i, u_lo[i], u_hi[i])?;
        }
        Self::new(rows)
    }

    pub fn rows(&self) -> &[Halfspace] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Per-row slack `b − c_xᵀx − c_uᵀu`.
    pub fn slacks(&self, x: &Vector, u: &Vector) -> Vec<f64> {
        self.rows.iter().map(|r| r.slack(x, u)).collect()
    }

    pub fn min_slack(&self, x: &Vector, u: &Vector) -> f64 {
        self.rows.iter().map(|r| r.slack(x, u)).fold(f64::INFINITY, f64::min)
    }
}

/// Tube feedback `π(x̂, x̄, ū) = ū + K (x̂ − x̄)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackPolicy {
    pub k: Matrix,
}

impl FeedbackPolicy {
    pub fn new(k: Matrix) -> Self {
        Self { k }
    }

    pub fn apply(&self, x_hat: &Vector, x_bar: &Vector, u_bar: &Vector) -> Vector {
        u_bar + &self.k * (x_hat - x_bar)
    }

    /// Slope of the induced bound `‖π − ū‖ ≤ σ_π ‖x̂ − x̄‖`.
    pub fn sigma_pi(&self) -> f64 {
        linalg::induced_two_norm(&self.k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(s: &[f64]) -> Vector {
        Vector::from_column_slice(s)
    }

    fn msd() -> SystemModel {
        SystemModel::mass_spring_damper(MassSpringDamperParams::default(), 0.25, 0.01).unwrap()
    }

    /// Scalar RK4 written out stage by stage for the spring-damper.
    fn scalar_rk4(x1: f64, x2: f64, u: f64, h: f64) -> (f64, f64) {
        let g = |a: f64, b: f64| (b, -0.33 * libm::exp(-a) * a - 1.1 * b + u);
        let (a1, b1) = g(x1, x2);
        let (a2, b2) = g(x1 + h / 2.0 * a1, x2 + h / 2.0 * b1);
        let (a3, b3) = g(x1 + h / 2.0 * a2, x2 + h / 2.0 * b2);
        let (a4, b4) = g(x1 + h * a3, x2 + h * b3);
        (
            x1 + h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4),
            x2 + h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4),
        )
    }

    #[test]
    fn equilibrium_is_fixed() {
        let m = msd();
        assert_eq!(m.step(&v(&[0.0, 0.0]), &v(&[0.0])).unwrap(), v(&[0.0, 0.0]));
    }

    #[test]
    fn rk4_matches_scalar_oracle() {
        let m = msd();
        let next = m.step(&v(&[0.0, 1.0]), &v(&[0.0])).unwrap();
        let (a, b) = scalar_rk4(0.0, 1.0, 0.0, 0.25);
        assert!((next[0] - a).abs() < 1e-15 && (next[1] - b).abs() < 1e-15);
        // frozen from the oracle above
        assert!((next[0] - 0.217_899_62).abs() < 1e-7);
        assert!((next[1] - 0.752_194_16).abs() < 1e-7);
    }

    #[test]
    fn rk4_linear_decay_polynomial() {
        let dyn_ = LinearDynamics {
            a: Matrix::from_element(1, 1, -1.0),
            b: Matrix::zeros(1, 1),
        };
        let h: f64 = 0.25;
        let poly = 1.0 - h + h * h / 2.0 - h * h * h / 6.0 + h * h * h * h / 24.0;
        let next = rk4_step(&dyn_, h, &v(&[1.0]), &v(&[3.0])).unwrap();
        assert!((next[0] - poly).abs() < 1e-15);
        assert!((next[0] - 0.778_808_593_75).abs() < 1e-15);
        assert!((next[0] - libm::exp(-0.25)).abs() < 1e-5);
    }

    #[test]
    fn disturbance_enters_through_e() {
        let m = msd();
        let z = v(&[0.0, 0.0]);
        let u = v(&[0.0]);
        let a = m.disturbed_step(&z, &u, &v(&[0.01, 0.0, 0.0])).unwrap();
        assert!((a - v(&[0.0025, 0.0])).amax() < 1e-15);
        let b = m.disturbed_step(&z, &u, &v(&[0.0, 0.01, 0.0])).unwrap();
        assert!((b - v(&[0.0, 0.0025])).amax() < 1e-15);
        assert!(matches!(
            m.disturbed_step(&z, &u, &v(&[0.02, 0.0, 0.0])),
            Err(Error::DisturbanceOutOfBounds { .. })
        ));
    }

    #[test]
    fn measurement_adds_third_component() {
        let m = msd();
        let x = v(&[0.5, -1.0]);
        let u = v(&[0.0]);
        assert_eq!(m.measure(&x, &u, &v(&[0.0; 3])).unwrap()[0], 0.5);
        assert!((m.measure(&x, &u, &v(&[0.0, 0.0, 0.01])).unwrap()[0] - 0.51).abs() < 1e-15);
        assert_eq!(m.measure(&v(&[0.0, 0.0]), &u, &v(&[0.0; 3])).unwrap()[0], 0.0);
    }

    #[test]
    fn w_bar_is_box_diagonal() {
        assert!((msd().w_bar() - 0.017_320_508_075_688_77).abs() < 1e-15);
    }

    #[test]
    fn box_slacks() {
        let z = ConstraintSet::from_box(&[-0.85, -2.0], &[0.85, 2.0], &[-6.0], &[6.0]).unwrap();
        assert_eq!(z.slacks(&v(&[0.0, 0.0]), &v(&[0.0])), [0.85, 0.85, 2.0, 2.0, 6.0, 6.0]);
        assert_eq!(z.min_slack(&v(&[0.85, 0.0]), &v(&[0.0])), 0.0);
        let s = z.slacks(&v(&[0.9, 0.0]), &v(&[0.0]));
        assert!(s[0] < 0.0 && s.iter().skip(1).all(|&x| x > 0.0));
    }

    #[test]
    fn zero_normal_rejected() {
        let row = Halfspace {
            c_x: v(&[0.0]),
            c_u: v(&[0.0]),
            b: 1.0,
        };
        assert!(ConstraintSet::new(alloc::vec![row]).is_err());
    }

    #[test]
    fn feedback_arithmetic() {
        let p = FeedbackPolicy::new(Matrix::from_row_slice(1, 2, &[1.0, 0.0]));
        let xb = v(&[1.0, 1.0]);
        assert_eq!(p.apply(&xb, &xb, &v(&[2.0])), v(&[2.0]));
        let xh = v(&[1.1, 6.0]);
        assert!((p.apply(&xh, &xb, &v(&[2.0]))[0] - 2.1).abs() < 1e-12);
    }

    #[test]
    fn analytic_jacobians_match_finite_differences() {
        let m = msd();
        let x = v(&[0.3, -0.7]);
        let u = v(&[1.5]);
        let (_, jx, ju) = m.step_with_jacobians(&x, &u).unwrap();
        let (fx, fu) = finite_difference_jacobians(&x, &u, |x, u| m.step(x, u).unwrap());
        assert!((jx - fx).amax() < 1e-8);
        assert!((ju - fu).amax() < 1e-8);
    }

    #[test]
    fn preimage_reproduces_increment() {
        let m = msd();
        let d = v(&[0.3, -0.2]);
        let w = m.disturbance_preimage(&d).unwrap();
        assert!((m.e() * &w - &d).amax() < 1e-14);
        assert!(w[2].abs() < 1e-15);
    }
}
