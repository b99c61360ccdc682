//! Quadratic incremental Lyapunov functions, the scalar error and tube
//! recursions built on them, ellipsoidal constraint tightening and the
//! certificate bundle.

mod verify;

pub use verify::{verify_certificate_grid, GridSpec, InequalityReport, VerificationReport};

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::math;
use crate::model::{ConstraintSet, FeedbackPolicy, Halfspace, SystemModel};

/// `V(a,b) = sqrt((a−b)ᵀ P (a−b))`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticIncremental {
    p: Matrix,
    p_inv: Matrix,
    p_sqrt: Matrix,
    lambda_min: f64,
    lambda_max: f64,
}

impl QuadraticIncremental {
    pub fn new(p: Matrix) -> Result<Self> {
        if !linalg::is_spd(&p) {
            return Err(Error::Certificate(format!("matrix is not symmetric positive definite: {p}")));
        }
        let p = (&p + p.transpose()) * 0.5;
        let p_inv = linalg::spd_inverse(&p).ok_or_else(|| Error::Certificate("singular P".into()))?;
        let p_sqrt = linalg::spd_sqrt(&p).ok_or_else(|| Error::Certificate("P has no square root".into()))?;
        let (lambda_min, lambda_max) = linalg::eigenvalue_bounds(&p);
        Ok(Self {
            p,
            p_inv,
            p_sqrt,
            lambda_min,
            lambda_max,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::new(Matrix::identity(n, n)).expect("identity is SPD")
    }

    pub fn dim(&self) -> usize {
        self.p.nrows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.p
    }

    pub fn inverse(&self) -> &Matrix {
        &self.p_inv
    }

    pub fn sqrt_matrix(&self) -> &Matrix {
        &self.p_sqrt
    }

    pub fn eval(&self, a: &Vector, b: &Vector) -> f64 {
        self.norm(&(a - b))
    }

    /// `‖d‖_P`.
    pub fn norm(&self, d: &Vector) -> f64 {
        math::sqrt(linalg::quad_form(&self.p, d).max(0.0))
    }

    /// Support function of the unit ellipsoid `{‖v‖_P ≤ 1}` in direction `c`: `‖c‖_{P⁻¹}`.
    pub fn support(&self, c: &Vector) -> f64 {
        math::sqrt(linalg::quad_form(&self.p_inv, c).max(0.0))
    }

    /// Slopes of the envelopes `sqrt(λ_min)‖d‖ ≤ V ≤ sqrt(λ_max)‖d‖`.
    pub fn envelope(&self) -> (f64, f64) {
        (math::sqrt(self.lambda_min), math::sqrt(self.lambda_max))
    }
}

/// Contraction rates and slopes of the linear σ functions together with the
/// Lyapunov matrices and gains they were verified for.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub rho_d: f64,
    pub rho_o: f64,
    pub rho_s: f64,
    pub sig_dw: f64,
    pub sig_dy: f64,
    pub sig_d: f64,
    pub sig_ow: f64,
    pub sig_ol: f64,
    pub sig_olw: f64,
    pub sig_sw: f64,
    pub sig_so: f64,
    pub sig_sow: f64,
    pub sig_pi: f64,
    pub v_o: QuadraticIncremental,
    pub v_s: QuadraticIncremental,
    /// Tube feedback gain, `n_u × n_x`.
    pub k: Matrix,
    /// Observer correction gain, `n_x × n_y`.
    pub l: Matrix,
}

/// Certificate description where everything beyond the rates and the three
/// reported slopes may be left to defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct CertificateInputs {
    pub rho_d: f64,
    pub rho_o: f64,
    pub rho_s: f64,
    pub sig_ow: f64,
    pub sig_so: f64,
    pub sig_sow: f64,
    pub sig_dw: Option<f64>,
    pub sig_dy: Option<f64>,
    pub sig_d: Option<f64>,
    pub sig_ol: Option<f64>,
    pub sig_olw: Option<f64>,
    pub sig_sw: Option<f64>,
    pub sig_pi: Option<f64>,
    pub p_o: Option<Matrix>,
    pub p_s: Option<Matrix>,
    pub k: Option<Matrix>,
    pub l: Option<Matrix>,
}

impl CertificateInputs {
    /// Rates and slopes reported for the mass-spring-damper example.
    pub fn mass_spring_damper() -> Self {
        Self {
            rho_d: 0.74,
            rho_o: 0.67,
            rho_s: 0.78,
            sig_ow: 2.25,
            sig_so: 1.04,
            sig_sow: 2.23,
            sig_dw: None,
            sig_dy: None,
            sig_d: None,
            sig_ol: None,
            sig_olw: None,
            sig_sw: None,
            sig_pi: None,
            p_o: None,
            p_s: None,
            k: None,
            l: None,
        }
    }

    /// Reported rates and slopes with Lyapunov matrices and gains from an
    /// offline semidefinite design that meets them on the constraint box.
    pub fn mass_spring_damper_golden() -> Self {
        Self {
            p_o: Some(Matrix::from_row_slice(2, 2, &[9.5416, -2.8111, -2.8111, 2.4675])),
            p_s: Some(Matrix::from_row_slice(2, 2, &[6.1268, 0.9865, 0.9865, 0.7615])),
            k: Some(Matrix::from_row_slice(1, 2, &[-5.1181, -1.9115])),
            l: Some(Matrix::from_column_slice(2, 1, &[0.7886, 0.5263])),
            ..Self::mass_spring_damper()
        }
    }

    /// Fill missing gains and matrices and derive missing slopes.
    ///
    /// Missing `K` comes from an LQR design (Q=I, R=1) at the origin
    /// linearization and missing `L` from the dual Riccati predictor design.
    /// Missing `P_s` is the LQR Riccati matrix and missing `P_o` the inverse
    /// of the dual Riccati matrix, each rescaled so the disturbance slopes
    /// `σ_{o,w}` and `σ_{s,o,w}` are met with equality. Missing slopes:
    /// `σ_{d,w} = σ_{o,w}`, `σ_{d,y} = ‖P_o^{1/2} L‖`, `σ_d = sqrt(λ_max(P_o))`,
    /// `σ_{s,w} = ‖P_s^{1/2} E‖`, `σ_π = ‖K‖`, and the correction slopes
    /// `σ_{o,L} = σ_{s,o}/sqrt(λ_max(P_s))`, `σ_{o,L,w} = σ_{s,o,w}/sqrt(λ_max(P_s))`,
    /// which keep the tube inequality intact for any accepted correction.
    pub fn build(&self, model: &SystemModel) -> Result<Certificate> {
        let n_x = model.n_x();
        let n_u = model.n_u();
        let x0 = Vector::zeros(n_x);
        let u0 = Vector::zeros(n_u);
        let (_, a, b) = model.step_with_jacobians(&x0, &u0)?;
        let (c, _) = model.output_jacobians(&x0, &u0);
        let n_y = c.nrows();

        let lqr = || {
            linalg::dare(&a, &b, &Matrix::identity(n_x, n_x), &Matrix::identity(n_u, n_u))
                .ok_or_else(|| Error::Certificate("LQR Riccati iteration diverged".into()))
        };
        let dual = || {
            linalg::dare(
                &a.transpose(),
                &c.transpose(),
                &Matrix::identity(n_x, n_x),
                &Matrix::identity(n_y, n_y),
            )
            .ok_or_else(|| Error::Certificate("observer Riccati iteration diverged".into()))
        };

        let k = match &self.k {
            Some(k) => k.clone(),
            None => lqr()?.1,
        };
        let l = match &self.l {
            Some(l) => l.clone(),
            None => dual()?.1.transpose() * -1.0,
        };
        if k.nrows() != n_u || k.ncols() != n_x {
            return Err(Error::Dimension(format!("K must be {n_u}x{n_x}")));
        }
        if l.nrows() != n_x || l.ncols() != n_y {
            return Err(Error::Dimension(format!("L must be {n_x}x{n_y}")));
        }

        let p_o = match &self.p_o {
            Some(p) => p.clone(),
            None => {
                let s_inv = linalg::spd_inverse(&dual()?.0)
                    .ok_or_else(|| Error::Certificate("dual Riccati matrix singular".into()))?;
                let root = linalg::spd_sqrt(&s_inv).ok_or_else(|| Error::Certificate("P_o not SPD".into()))?;
                let gain = linalg::induced_two_norm(&(root * (model.e() - &l * model.f())));
                if gain > 0.0 {
                    s_inv * math::powi(self.sig_ow / gain, 2)
                } else {
                    s_inv
                }
            }
        };
        let p_s = match &self.p_s {
            Some(p) => p.clone(),
            None => {
                let p = lqr()?.0;
                let root = linalg::spd_sqrt(&p).ok_or_else(|| Error::Certificate("P_s not SPD".into()))?;
                let gain = linalg::induced_two_norm(&(root * &l));
                if gain > 0.0 {
                    p * math::powi(self.sig_sow / gain, 2)
                } else {
                    p
                }
            }
        };
        let v_o = QuadraticIncremental::new(p_o)?;
        let v_s = QuadraticIncremental::new(p_s)?;
        if v_o.dim() != n_x || v_s.dim() != n_x {
            return Err(Error::Dimension(format!("P_o and P_s must be {n_x}x{n_x}")));
        }
        let s_max = v_s.envelope().1;
        let cert = Certificate {
            rho_d: self.rho_d,
            rho_o: self.rho_o,
            rho_s: self.rho_s,
            sig_dw: self.sig_dw.unwrap_or(self.sig_ow),
            sig_dy: self
                .sig_dy
                .unwrap_or_else(|| linalg::induced_two_norm(&(v_o.sqrt_matrix() * &l))),
            sig_d: self.sig_d.unwrap_or(v_o.envelope().1),
            sig_ow: self.sig_ow,
            sig_ol: self.sig_ol.unwrap_or(self.sig_so / s_max),
            sig_olw: self.sig_olw.unwrap_or(self.sig_sow / s_max),
            sig_sw: self
                .sig_sw
                .unwrap_or_else(|| linalg::induced_two_norm(&(v_s.sqrt_matrix() * model.e()))),
            sig_so: self.sig_so,
            sig_sow: self.sig_sow,
            sig_pi: self.sig_pi.unwrap_or_else(|| linalg::induced_two_norm(&k)),
            v_o,
            v_s,
            k,
            l,
        };
        cert.validate()?;
        Ok(cert)
    }
}

impl Certificate {
    /// Check rates lie in (0,1) and slopes are nonnegative and finite.
    pub fn validate(&self) -> Result<()> {
        for (name, rho) in [("rho_d", self.rho_d), ("rho_o", self.rho_o), ("rho_s", self.rho_s)] {
            if !(rho > 0.0 && rho < 1.0) {
                return Err(Error::Certificate(format!("{name} must lie in (0,1), got {rho}")));
            }
        }
        for (name, s) in self.slopes() {
            if !(s >= 0.0) || !s.is_finite() {
                return Err(Error::Certificate(format!("{name} must be nonnegative, got {s}")));
            }
        }
        Ok(())
    }

    pub fn slopes(&self) -> [(&'static str, f64); 10] {
        [
            ("sig_dw", self.sig_dw),
            ("sig_dy", self.sig_dy),
            ("sig_d", self.sig_d),
            ("sig_ow", self.sig_ow),
            ("sig_ol", self.sig_ol),
            ("sig_olw", self.sig_olw),
            ("sig_sw", self.sig_sw),
            ("sig_so", self.sig_so),
            ("sig_sow", self.sig_sow),
            ("sig_pi", self.sig_pi),
        ]
    }

    pub fn policy(&self) -> FeedbackPolicy {
        FeedbackPolicy::new(self.k.clone())
    }

    /// `ρ_o ē + σ_{o,w} w̄`.
    pub fn bound_update_offline(&self, e_bar: f64, w_bar: f64) -> f64 {
        self.rho_o * e_bar + self.sig_ow * w_bar
    }

    /// `ρ_d ē + σ_{d,w}(w̄ + ‖ŵ‖) + σ_{d,y}‖ŷ − y‖`.
    pub fn bound_update_online(&self, e_bar: f64, w_bar: f64, w_hat_norm: f64, output_residual_norm: f64) -> f64 {
        self.rho_d * e_bar + self.sig_dw * (w_bar + w_hat_norm) + self.sig_dy * output_residual_norm
    }

    /// Closed form of `i` offline updates starting from `e_bar`.
    pub fn bound_predict(&self, e_bar: f64, i: usize, w_bar: f64) -> f64 {
        geometric(self.rho_o, self.sig_ow * w_bar, e_bar, i)
    }

    /// Predicted bounds `ē_{j|k}`, `j = 0..=n`, contracted with `ρ_d`.
    pub fn predicted_bounds(&self, e_bar: f64, n: usize, w_bar: f64) -> Vec<f64> {
        (0..=n).map(|j| geometric(self.rho_d, self.sig_ow * w_bar, e_bar, j)).collect()
    }

    /// `ρ_s s̄ + σ_{s,o} ē + σ_{s,o,w} w̄`.
    pub fn tube_update(&self, s_bar: f64, e_bar: f64, w_bar: f64) -> f64 {
        self.rho_s * s_bar + self.sig_so * e_bar + self.sig_sow * w_bar
    }

    /// Steady-state tube size for a constant error bound.
    pub fn tube_fixed_point(&self, e_bar: f64, w_bar: f64) -> f64 {
        (self.sig_so * e_bar + self.sig_sow * w_bar) / (1.0 - self.rho_s)
    }

    /// Support slopes of a row: `(‖c_x + Kᵀc_u‖_{P_s⁻¹}, ‖c_x‖_{P_o⁻¹})`.
    pub fn row_supports(&self, row: &Halfspace) -> (f64, f64) {
        let folded = &row.c_x + self.k.transpose() * &row.c_u;
        (self.v_s.support(&folded), self.v_o.support(&row.c_x))
    }

    /// `s̄ ‖c_x + Kᵀc_u‖_{P_s⁻¹} + ē ‖c_x‖_{P_o⁻¹}`.
    pub fn tightening_margin(&self, row: &Halfspace, s_bar: f64, e_bar: f64) -> f64 {
        let (a, c) = self.row_supports(row);
        s_bar * a + e_bar * c
    }
}

fn geometric(rho: f64, drive: f64, e0: f64, i: usize) -> f64 {
    let p = math::powi(rho, i);
    p * e0 + (1.0 - p) / (1.0 - rho) * drive
}

/// Constraint margins `m_{j,i}` for given tube and error sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct TighteningTable {
    /// `margins[j][i]` for row `j` and prediction step `i`.
    pub margins: Vec<Vec<f64>>,
}

impl TighteningTable {
    pub fn compute(cert: &Certificate, z: &ConstraintSet, s_bar: &[f64], e_bar: &[f64]) -> Result<Self> {
        if s_bar.len() != e_bar.len() {
            return Err(Error::Dimension("tube and error sequences differ in length".into()));
        }
        let margins = z
            .rows()
            .iter()
            .map(|row| {
                s_bar
                    .iter()
                    .zip(e_bar)
                    .map(|(&s, &e)| cert.tightening_margin(row, s, e))
                    .collect()
            })
            .collect();
        Ok(Self { margins })
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::model::MassSpringDamperParams;

    pub(crate) fn golden_like(model: &SystemModel) -> Certificate {
        let mut inputs = CertificateInputs::mass_spring_damper();
        inputs.sig_dw = Some(1.0);
        inputs.p_o = Some(Matrix::identity(2, 2));
        inputs.p_s = Some(Matrix::identity(2, 2));
        inputs.k = Some(Matrix::zeros(1, 2));
        inputs.l = Some(Matrix::zeros(2, 1));
        inputs.build(model).unwrap()
    }

    fn msd() -> SystemModel {
        SystemModel::mass_spring_damper(MassSpringDamperParams::default(), 0.25, 0.01).unwrap()
    }

    #[test]
    fn eval_examples() {
        let v = QuadraticIncremental::identity(2);
        let a = Vector::from_column_slice(&[3.0, 4.0]);
        assert_eq!(v.eval(&a, &a), 0.0);
        assert_eq!(v.eval(&a, &Vector::zeros(2)), 5.0);
        let w = QuadraticIncremental::new(Matrix::from_diagonal(&Vector::from_column_slice(&[4.0, 1.0]))).unwrap();
        assert_eq!(w.eval(&Vector::from_column_slice(&[1.0, 0.0]), &Vector::zeros(2)), 2.0);
    }

    #[test]
    fn non_spd_rejected() {
        assert!(QuadraticIncremental::new(Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).is_err());
    }

    #[test]
    fn offline_update_values() {
        let m = msd();
        let c = golden_like(&m);
        let w = m.w_bar();
        assert_eq!(c.bound_update_offline(0.0, 0.0), 0.0);
        // 0.67·0.1 + 2.25·0.01·sqrt(3)
        assert!((c.bound_update_offline(0.1, w) - 0.105_971_143_170_3).abs() < 1e-12);
        let fixed = c.sig_ow * w / (1.0 - c.rho_o);
        assert!((fixed - 0.118_094_373_243_3).abs() < 1e-12);
        assert!((c.bound_update_offline(fixed, w) - fixed).abs() < 1e-15);
    }

    #[test]
    fn online_update_values() {
        let m = msd();
        let c = golden_like(&m);
        assert!((c.bound_update_online(0.3, 0.0, 0.0, 0.0) - 0.74 * 0.3).abs() < 1e-15);
        assert!((c.bound_update_online(0.1, m.w_bar(), 0.0, 0.0) - 0.091_320_508_075_7).abs() < 1e-12);
    }

    #[test]
    fn predict_limits() {
        let m = msd();
        let c = golden_like(&m);
        let w = m.w_bar();
        assert_eq!(c.bound_predict(0.4, 0, w), 0.4);
        assert!((c.bound_predict(0.4, 1, w) - c.bound_update_offline(0.4, w)).abs() < 1e-15);
        let limit = c.sig_ow * w / (1.0 - c.rho_o);
        assert!((c.bound_predict(0.0, 200, w) - limit).abs() < 1e-12);
    }

    #[test]
    fn tube_values() {
        let m = msd();
        let c = golden_like(&m);
        let w = m.w_bar();
        assert_eq!(c.tube_update(0.0, 0.0, 0.0), 0.0);
        // 1.04·0.1 + 2.23·0.0173205
        assert!((c.tube_update(0.0, 0.1, w) - 0.142_624_733_008_8).abs() < 1e-12);
        let s = c.tube_fixed_point(0.1, w);
        assert!((c.tube_update(s, 0.1, w) - s).abs() < 1e-14);
    }

    #[test]
    fn margin_examples() {
        let m = msd();
        let c = golden_like(&m);
        let row = Halfspace {
            c_x: Vector::from_column_slice(&[1.0, 0.0]),
            c_u: Vector::zeros(1),
            b: 1.0,
        };
        assert_eq!(c.tightening_margin(&row, 0.0, 0.0), 0.0);
        assert!((c.tightening_margin(&row, 0.1, 0.05) - 0.15).abs() < 1e-15);
        assert!((c.tightening_margin(&row, 0.2, 0.1) - 2.0 * c.tightening_margin(&row, 0.1, 0.05)).abs() < 1e-15);
    }

    #[test]
    fn auto_gains_stabilize_linearization() {
        let m = msd();
        let c = CertificateInputs::mass_spring_damper().build(&m).unwrap();
        let (_, a, b) = m.step_with_jacobians(&Vector::zeros(2), &Vector::zeros(1)).unwrap();
        let cmat = Matrix::from_row_slice(1, 2, &[1.0, 0.0]);
        assert!(linalg::spectral_radius(&(&a + &b * &c.k)) < 1.0);
        assert!(linalg::spectral_radius(&(&a - &c.l * cmat)) < 1.0);
        let ow = linalg::induced_two_norm(&(c.v_o.sqrt_matrix() * (m.e() - &c.l * m.f())));
        assert!((ow - c.sig_ow).abs() < 1e-9);
    }

    #[test]
    fn rate_outside_unit_interval_rejected() {
        let mut i = CertificateInputs::mass_spring_damper();
        i.rho_o = 1.0;
        assert!(i.build(&msd()).is_err());
    }
}
