//! Terminal safe set with a backup controller.
//!
//! The set is `{(x̄, ē, s̄) : ‖x̄‖_{P_f} ≤ α_f, ē ≤ ē_cap, s̄ ≤ s̄_cap}`. The caps
//! are forward invariant under the bound and tube recursions, the ellipsoid is
//! invariant under `x̄⁺ = f(x̄, K_f x̄)`, and every row tightened by the caps
//! holds on it.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::lyapunov::{Certificate, QuadraticIncremental};
use crate::model::{ConstraintSet, SystemModel};

#[derive(Debug, Clone, PartialEq)]
pub struct SafeSet {
    p_f: QuadraticIncremental,
    k_f: Matrix,
    alpha: f64,
    e_cap: f64,
    s_cap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafeSetOptions {
    /// Relative headroom of the caps above the steady-state bounds.
    pub cap_margin: f64,
    /// Largest radius considered.
    pub search_cap: f64,
    /// Grid points per dimension on the unit ball.
    pub grid_points: usize,
    pub bisection_steps: usize,
}

impl Default for SafeSetOptions {
    fn default() -> Self {
        Self {
            cap_margin: 1.01,
            search_cap: 1e3,
            grid_points: 41,
            bisection_steps: 60,
        }
    }
}

impl SafeSet {
    pub fn new(p_f: Matrix, k_f: Matrix, alpha: f64, e_cap: f64, s_cap: f64) -> Result<Self> {
        let p_f = QuadraticIncremental::new(p_f).map_err(|_| Error::SafeSetConstruction("P_f must be symmetric positive definite".into()))?;
        if k_f.ncols() != p_f.dim() {
            return Err(Error::Dimension("K_f has wrong column count".into()));
        }
        for (name, v) in [("radius", alpha), ("error cap", e_cap), ("tube cap", s_cap)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::SafeSetConstruction(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        Ok(Self {
            p_f,
            k_f,
            alpha,
            e_cap,
            s_cap,
        })
    }

    pub fn p_f(&self) -> &Matrix {
        self.p_f.matrix()
    }

    pub fn k_f(&self) -> &Matrix {
        &self.k_f
    }

    pub fn alpha_max(&self) -> f64 {
        self.alpha
    }

    pub fn e_cap(&self) -> f64 {
        self.e_cap
    }

    pub fn s_cap(&self) -> f64 {
        self.s_cap
    }

    /// Terminal radius for the given bounds, `None` when membership is impossible.
    pub fn radius(&self, e_bar: f64, s_bar: f64) -> Option<f64> {
        let fits = |v: f64, cap: f64| v <= cap * (1.0 + 1e-12) + 1e-15;
        (fits(e_bar, self.e_cap) && fits(s_bar, self.s_cap)).then_some(self.alpha)
    }

    pub fn norm(&self, x_bar: &Vector) -> f64 {
        self.p_f.norm(x_bar)
    }

    pub fn contains(&self, x_bar: &Vector, e_bar: f64, s_bar: f64) -> bool {
        self.radius(e_bar, s_bar).is_some_and(|r| self.norm(x_bar) <= r * (1.0 + 1e-9) + 1e-12)
    }

    /// `π_safe(x̄) = K_f x̄`.
    pub fn safe_input(&self, x_bar: &Vector) -> Vector {
        &self.k_f * x_bar
    }
}

/// LQR terminal ingredients `(P_f, K_f)` at the origin with `Q = I`, `R = I`.
pub fn lqr_terminal(model: &SystemModel) -> Result<(Matrix, Matrix)> {
    let (a, b) = origin_linearization(model)?;
    let q = Matrix::identity(model.n_x(), model.n_x());
    let r = Matrix::identity(model.n_u(), model.n_u());
    linalg::dare(&a, &b, &q, &r).ok_or_else(|| Error::SafeSetConstruction("terminal Riccati equation did not converge".into()))
}

fn origin_linearization(model: &SystemModel) -> Result<(Matrix, Matrix)> {
    let (_, a, b) = model.step_with_jacobians(&Vector::zeros(model.n_x()), &Vector::zeros(model.n_u()))?;
    Ok((a, b))
}

/// Points of the closed unit ball on a product grid, plus their radial
/// projections onto the sphere.
fn unit_ball_grid(dim: usize, points: usize) -> Vec<Vector> {
    let points = points.max(3);
    let mut out = Vec::new();
    let mut idx = alloc::vec![0usize; dim];
    loop {
        let xi = Vector::from_iterator(dim, idx.iter().map(|&i| -1.0 + 2.0 * i as f64 / (points - 1) as f64));
        let n = xi.norm();
        if n > 0.0 {
            if n <= 1.0 {
                out.push(xi.clone());
            }
            out.push(xi / n);
        }
        let mut d = 0;
        loop {
            if d == dim {
                return out;
            }
            idx[d] += 1;
            if idx[d] < points {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

/// Size the safe set for the given terminal ingredients.
///
/// The caps sit `cap_margin` above the largest steady-state error bound of
/// the offline and predicted recursions and the matching tube fixed point.
/// The radius is the largest `α ≤ search_cap` such that every row
/// tightened by the caps holds on the ellipsoid under `K_f` and the
/// nominal closed loop does not leave the ellipsoid on the grid.
pub fn size_safe_set_offline(
    model: &SystemModel,
    cert: &Certificate,
    z: &ConstraintSet,
    k_f: &Matrix,
    p_f: &Matrix,
    opts: &SafeSetOptions,
) -> Result<SafeSet> {
    let n_x = model.n_x();
    if k_f.nrows() != model.n_u() || k_f.ncols() != n_x || p_f.nrows() != n_x || p_f.ncols() != n_x {
        return Err(Error::Dimension("terminal ingredients do not match the model".into()));
    }
    let (a, b) = origin_linearization(model)?;
    let rho = linalg::spectral_radius(&(&a + &b * k_f));
    if !(rho < 1.0) {
        return Err(Error::SafeSetConstruction(format!("K_f is not stabilizing, spectral radius {rho}")));
    }
    let quad = QuadraticIncremental::new(p_f.clone()).map_err(|_| Error::SafeSetConstruction("P_f must be symmetric positive definite".into()))?;

    let w_bar = model.w_bar();
    let drive = cert.sig_ow * w_bar;
    let e_cap = opts.cap_margin * (drive / (1.0 - cert.rho_d)).max(drive / (1.0 - cert.rho_o));
    let s_cap = opts.cap_margin * cert.tube_fixed_point(e_cap, w_bar);

    let mut alpha_rows = opts.search_cap;
    for (j, row) in z.rows().iter().enumerate() {
        let room = row.b - cert.tightening_margin(row, s_cap, e_cap);
        let folded = &row.c_x + k_f.transpose() * &row.c_u;
        let support = quad.support(&folded);
        if support > 0.0 {
            alpha_rows = alpha_rows.min(room / support);
        } else if room < 0.0 {
            return Err(Error::SafeSetConstruction(format!("row {j} is violated at the origin after tightening")));
        }
    }
    if !(alpha_rows > 0.0) {
        return Err(Error::SafeSetConstruction(format!("tightened constraints leave no terminal radius ({alpha_rows})")));
    }

    let shape = quad.inverse().clone();
    let shape_sqrt = linalg::spd_sqrt(&shape).ok_or(Error::Numerical)?;
    let ball = unit_ball_grid(n_x, opts.grid_points);
    let invariant = |alpha: f64| -> bool {
        ball.iter().all(|xi| {
            let x = &shape_sqrt * xi * alpha;
            let u = k_f * &x;
            match model.step(&x, &u) {
                Ok(next) => quad.norm(&next) <= quad.norm(&x) + 1e-12 * (1.0 + alpha),
                Err(_) => false,
            }
        })
    };

    let alpha = if invariant(alpha_rows) {
        alpha_rows
    } else {
        let (mut lo, mut hi) = (0.0, alpha_rows);
        for _ in 0..opts.bisection_steps {
            let mid = 0.5 * (lo + hi);
            if invariant(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    if !(alpha > 0.0) {
        return Err(Error::SafeSetConstruction("no positive invariant radius".into()));
    }
    SafeSet::new(p_f.clone(), k_f.clone(), alpha, e_cap, s_cap)
}

/// `‖x̄⁺‖_{P_f} / ‖x̄‖_{P_f}` maximized over grid points of the ellipsoid.
pub fn contraction_factor(model: &SystemModel, safe: &SafeSet, points: usize) -> Result<f64> {
    let quad = &safe.p_f;
    let shape_sqrt = linalg::spd_sqrt(quad.inverse()).ok_or(Error::Numerical)?;
    let mut worst: f64 = 0.0;
    for xi in unit_ball_grid(model.n_x(), points) {
        let x = &shape_sqrt * xi * safe.alpha;
        let next = model.step(&x, &safe.safe_input(&x))?;
        worst = worst.max(quad.norm(&next) / quad.norm(&x));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lyapunov::CertificateInputs;
    use crate::model::{MassSpringDamperParams, Transition};
    use alloc::sync::Arc;

    fn msd() -> (SystemModel, Certificate, ConstraintSet) {
        let m = SystemModel::mass_spring_damper(MassSpringDamperParams::default(), 0.25, 0.01).unwrap();
        let c = CertificateInputs::mass_spring_damper_golden().build(&m).unwrap();
        let z = ConstraintSet::from_box(&[-0.85, -2.0], &[0.85, 2.0], &[-6.0], &[6.0]).unwrap();
        (m, c, z)
    }

    #[test]
    fn msd_safe_set_is_nonempty_at_steady_state() {
        let (m, c, z) = msd();
        let (p_f, k_f) = lqr_terminal(&m).unwrap();
        let s = size_safe_set_offline(&m, &c, &z, &k_f, &p_f, &SafeSetOptions::default()).unwrap();
        let w = m.w_bar();
        let e_star = c.sig_ow * w / (1.0 - c.rho_o);
        let s_star = c.tube_fixed_point(e_star, w);
        assert!(s.radius(e_star, s_star).unwrap() > 0.0);
        assert!(s.contains(&Vector::zeros(2), e_star, s_star));
        assert!(contraction_factor(&m, &s, 21).unwrap() <= 1.0 + 1e-12);
        // every point of the ellipsoid meets the tightened rows under K_f
        let shape = linalg::spd_sqrt(&linalg::spd_inverse(s.p_f()).unwrap()).unwrap();
        for xi in unit_ball_grid(2, 21) {
            let x = &shape * xi * s.alpha_max();
            let u = s.safe_input(&x);
            for row in z.rows() {
                assert!(row.slack(&x, &u) >= c.tightening_margin(row, s.s_cap(), s.e_cap()) - 1e-12);
            }
        }
    }

    #[test]
    fn caps_are_invariant() {
        let (m, c, z) = msd();
        let (p_f, k_f) = lqr_terminal(&m).unwrap();
        let s = size_safe_set_offline(&m, &c, &z, &k_f, &p_f, &SafeSetOptions::default()).unwrap();
        let w = m.w_bar();
        assert!(c.bound_update_offline(s.e_cap(), w) <= s.e_cap());
        assert!(c.predicted_bounds(s.e_cap(), 1, w)[1] <= s.e_cap());
        assert!(c.tube_update(s.s_cap(), s.e_cap(), w) <= s.s_cap());
    }

    #[test]
    fn radius_vanishes_outside_caps() {
        let s = SafeSet::new(Matrix::identity(2, 2), Matrix::zeros(1, 2), 0.5, 0.1, 0.2).unwrap();
        assert_eq!(s.radius(0.1, 0.2), Some(0.5));
        assert_eq!(s.radius(0.11, 0.0), None);
        assert_eq!(s.radius(0.0, 0.21), None);
        assert!(s.contains(&Vector::zeros(2), 0.0, 0.0));
        assert!(!s.contains(&Vector::from_column_slice(&[0.6, 0.0]), 0.0, 0.0));
    }

    #[test]
    fn unconstrained_linear_returns_search_cap() {
        let m = SystemModel::new(
            Transition::Linear {
                a: Matrix::from_row_slice(2, 2, &[0.9, 0.1, 0.0, 0.8]),
                b: Matrix::from_row_slice(2, 1, &[0.0, 1.0]),
            },
            Arc::new(crate::model::LinearOutput::full_state(2, 1)),
            Matrix::zeros(2, 1),
            Matrix::zeros(2, 1),
            0.0,
        )
        .unwrap();
        let c = CertificateInputs {
            p_o: Some(Matrix::identity(2, 2)),
            p_s: Some(Matrix::identity(2, 2)),
            k: Some(Matrix::zeros(1, 2)),
            l: Some(Matrix::zeros(2, 2)),
            ..CertificateInputs::mass_spring_damper()
        }
        .build(&m)
        .unwrap();
        let z = ConstraintSet::new(Vec::new()).unwrap();
        let (p_f, k_f) = lqr_terminal(&m).unwrap();
        let opts = SafeSetOptions {
            search_cap: 7.5,
            ..SafeSetOptions::default()
        };
        let s = size_safe_set_offline(&m, &c, &z, &k_f, &p_f, &opts).unwrap();
        assert_eq!(s.alpha_max(), 7.5);
    }

    #[test]
    fn destabilizing_gain_is_rejected() {
        let (m, c, z) = msd();
        let (p_f, _) = lqr_terminal(&m).unwrap();
        let k_bad = Matrix::from_row_slice(1, 2, &[40.0, 0.0]);
        assert!(matches!(
            size_safe_set_offline(&m, &c, &z, &k_bad, &p_f, &SafeSetOptions::default()),
            Err(Error::SafeSetConstruction(_))
        ));
    }
}
