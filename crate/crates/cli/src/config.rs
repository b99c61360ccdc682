//! Run configuration: one TOML file with named blocks, matrices row-wise.
//!
//! Matrices, gains and the terminal safe set may be given as `"auto"`.
//! Automatic certificate entries come from Riccati designs and are only
//! trusted after grid verification.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use rpofsf::filter::{lqr_terminal, size_safe_set_offline, FilterConfig, SafeSet, SafeSetOptions};
use rpofsf::lyapunov::{Certificate, CertificateInputs, GridSpec};
use rpofsf::model::{ConstraintSet, LinearOutput, MassSpringDamper, MassSpringDamperParams, SystemModel, Transition};
use rpofsf::nlp::NlpOptions;
use rpofsf::observer::ObserverConfig;
use rpofsf::sim::{DisturbanceMode, PolicySpec, Scenario};
use rpofsf::{Matrix, Vector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Auto {
    Auto,
}

/// A row-wise matrix or `"auto"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Auto(Auto),
    Rows(Vec<Vec<f64>>),
}

impl Default for MatrixSpec {
    fn default() -> Self {
        Self::Auto(Auto::Auto)
    }
}

impl MatrixSpec {
    pub fn is_auto(&self) -> bool {
        matches!(self, Self::Auto(_))
    }

    fn resolve(&self, name: &str) -> Result<Option<Matrix>> {
        match self {
            Self::Auto(_) => Ok(None),
            Self::Rows(rows) => Ok(Some(matrix(rows).with_context(|| format!("matrix {name}"))?)),
        }
    }
}

fn matrix(rows: &[Vec<f64>]) -> Result<Matrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        bail!("rows must be nonempty and of equal length");
    }
    Ok(Matrix::from_row_iterator(r, c, rows.iter().flatten().copied()))
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub mass: f64,
    pub spring: f64,
    pub damping: f64,
    pub dt: f64,
    /// Box bound on every disturbance component.
    pub w_inf: f64,
    /// Disturbance input matrix; defaults to `[dt, 0, 0; 0, dt/M, 0]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e: Option<Vec<Vec<f64>>>,
    /// Measurement noise matrix; defaults to `[0, 0, 1]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateBlock {
    pub rho_d: f64,
    pub rho_o: f64,
    pub rho_s: f64,
    pub sig_ow: f64,
    pub sig_so: f64,
    pub sig_sow: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sig_dw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sig_dy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sig_d: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sig_ol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sig_olw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sig_sw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sig_pi: Option<f64>,
    #[serde(default)]
    pub p_o: MatrixSpec,
    #[serde(default)]
    pub p_s: MatrixSpec,
    #[serde(default)]
    pub k: MatrixSpec,
    #[serde(default)]
    pub l: MatrixSpec,
}

impl CertificateBlock {
    pub fn has_auto(&self) -> bool {
        [&self.p_o, &self.p_s, &self.k, &self.l].iter().any(|m| m.is_auto())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintsBlock {
    pub x_lo: Vec<f64>,
    pub x_hi: Vec<f64>,
    pub u_lo: Vec<f64>,
    pub u_hi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonsBlock {
    /// Prediction horizon `N` of the filter.
    #[serde(default = "default_filter_horizon")]
    pub filter: usize,
    /// Window length `M` of the moving-horizon estimator.
    #[serde(default = "default_estimator_horizon")]
    pub estimator: usize,
}

fn default_filter_horizon() -> usize {
    40
}

fn default_estimator_horizon() -> usize {
    10
}

impl Default for HorizonsBlock {
    fn default() -> Self {
        Self {
            filter: default_filter_horizon(),
            estimator: default_estimator_horizon(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyBlock {
    Sinusoid { amplitude: f64, omega: f64 },
    Constant { u: Vec<f64> },
    Linear { gain: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceKind {
    UniformBox,
    Corners,
    Zero,
}

impl From<DisturbanceKind> for DisturbanceMode {
    fn from(d: DisturbanceKind) -> Self {
        match d {
            DisturbanceKind::UniformBox => Self::UniformBox,
            DisturbanceKind::Corners => Self::Corners,
            DisturbanceKind::Zero => Self::Zero,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioBlock {
    pub x0: Vec<f64>,
    /// Defaults to `x0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_hat0: Option<Vec<f64>>,
    pub e_bar0: f64,
    pub steps: usize,
    pub seed: u64,
    pub policy: PolicyBlock,
    pub disturbance: DisturbanceKind,
    #[serde(default = "yes")]
    pub mhe: bool,
    /// Fix the initial nominal state to the estimate.
    #[serde(default)]
    pub pin_nominal: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    pub feas_tol: f64,
    pub opt_tol: f64,
    pub max_iter: usize,
    pub mhe_max_iter: usize,
}

impl Default for SolverBlock {
    fn default() -> Self {
        let nlp = NlpOptions::default();
        let mhe = ObserverConfig::default().mhe.nlp;
        Self {
            feas_tol: nlp.feas_tol,
            opt_tol: nlp.opt_tol,
            max_iter: nlp.max_iter,
            mhe_max_iter: mhe.max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyBlock {
    pub points_per_dim: usize,
    pub input_points: usize,
}

impl Default for VerifyBlock {
    fn default() -> Self {
        Self {
            points_per_dim: 50,
            input_points: 11,
        }
    }
}

/// Terminal ingredients recorded from an earlier sizing run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafeSetValues {
    pub p_f: Vec<Vec<f64>>,
    pub k_f: Vec<Vec<f64>>,
    pub alpha: f64,
    pub e_cap: f64,
    pub s_cap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SafeSetSpec {
    Auto(Auto),
    Recorded(SafeSetValues),
}

impl Default for SafeSetSpec {
    fn default() -> Self {
        Self::Auto(Auto::Auto)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub svg: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelBlock,
    pub certificate: CertificateBlock,
    pub constraints: ConstraintsBlock,
    #[serde(default)]
    pub horizons: HorizonsBlock,
    pub scenario: ScenarioBlock,
    #[serde(default)]
    pub safe_set: SafeSetSpec,
    #[serde(default)]
    pub solver: SolverBlock,
    #[serde(default)]
    pub verify: VerifyBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

/// The file could not be read or parsed.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Everything a command needs, built and checked.
#[derive(Debug, Clone)]
pub struct Setup {
    pub scenario: Scenario,
    pub grid: GridSpec,
    /// Some certificate entry was filled automatically.
    pub auto_certificate: bool,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> std::result::Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError(e.to_string()))
    }

    pub fn load(path: &Path) -> std::result::Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// The mass-spring-damper example with the golden certificate and the
    /// terminal ingredients recorded from the sizing routine.
    pub fn golden() -> Result<Self> {
        let mut c = Self {
            model: ModelBlock {
                mass: 1.0,
                spring: 0.33,
                damping: 1.1,
                dt: 0.25,
                w_inf: 0.01,
                e: None,
                f: None,
            },
            certificate: CertificateBlock::from_inputs(&CertificateInputs::mass_spring_damper_golden()),
            constraints: ConstraintsBlock {
                x_lo: vec![-0.85, -2.0],
                x_hi: vec![0.85, 2.0],
                u_lo: vec![-6.0],
                u_hi: vec![6.0],
            },
            horizons: HorizonsBlock::default(),
            scenario: ScenarioBlock {
                x0: vec![0.79, 0.7],
                x_hat0: None,
                e_bar0: 0.0,
                steps: 60,
                seed: 0,
                policy: PolicyBlock::Sinusoid {
                    amplitude: 6.0,
                    omega: 0.3,
                },
                disturbance: DisturbanceKind::UniformBox,
                mhe: true,
                pin_nominal: false,
            },
            safe_set: SafeSetSpec::default(),
            solver: SolverBlock::default(),
            verify: VerifyBlock::default(),
            output: OutputBlock::default(),
        };
        let safe = c.build()?.scenario.safe_set;
        c.safe_set = SafeSetSpec::Recorded(SafeSetValues {
            p_f: rows(safe.p_f()),
            k_f: rows(safe.k_f()),
            alpha: safe.alpha_max(),
            e_cap: safe.e_cap(),
            s_cap: safe.s_cap(),
        });
        Ok(c)
    }

    pub fn model(&self) -> Result<SystemModel> {
        let m = &self.model;
        let params = MassSpringDamperParams {
            mass: m.mass,
            spring: m.spring,
            damping: m.damping,
        };
        let base = SystemModel::mass_spring_damper(params, m.dt, m.w_inf)?;
        if m.e.is_none() && m.f.is_none() {
            return Ok(base);
        }
        let e = match &m.e {
            Some(r) => matrix(r).context("model.e")?,
            None => base.e().clone(),
        };
        let f = match &m.f {
            Some(r) => matrix(r).context("model.f")?,
            None => base.f().clone(),
        };
        Ok(SystemModel::new(
            Transition::Rk4 {
                dynamics: Arc::new(MassSpringDamper { params }),
                dt: m.dt,
            },
            Arc::new(LinearOutput::new(Matrix::from_row_slice(1, 2, &[1.0, 0.0]), Matrix::zeros(1, 1))),
            e,
            f,
            m.w_inf,
        )?)
    }

    pub fn certificate_inputs(&self) -> Result<CertificateInputs> {
        let c = &self.certificate;
        Ok(CertificateInputs {
            rho_d: c.rho_d,
            rho_o: c.rho_o,
            rho_s: c.rho_s,
            sig_ow: c.sig_ow,
            sig_so: c.sig_so,
            sig_sow: c.sig_sow,
            sig_dw: c.sig_dw,
            sig_dy: c.sig_dy,
            sig_d: c.sig_d,
            sig_ol: c.sig_ol,
            sig_olw: c.sig_olw,
            sig_sw: c.sig_sw,
            sig_pi: c.sig_pi,
            p_o: c.p_o.resolve("p_o")?,
            p_s: c.p_s.resolve("p_s")?,
            k: c.k.resolve("k")?,
            l: c.l.resolve("l")?,
        })
    }

    fn safe_set(&self, model: &SystemModel, cert: &Certificate, z: &ConstraintSet) -> Result<SafeSet> {
        Ok(match &self.safe_set {
            SafeSetSpec::Auto(_) => {
                let (p_f, k_f) = lqr_terminal(model)?;
                size_safe_set_offline(model, cert, z, &k_f, &p_f, &SafeSetOptions::default())?
            }
            SafeSetSpec::Recorded(v) => SafeSet::new(
                matrix(&v.p_f).context("safe_set.p_f")?,
                matrix(&v.k_f).context("safe_set.k_f")?,
                v.alpha,
                v.e_cap,
                v.s_cap,
            )?,
        })
    }

    /// Validated scenario and verification grid.
    pub fn build(&self) -> Result<Setup> {
        let model = self.model()?;
        let cert = self.certificate_inputs()?.build(&model)?;
        let b = &self.constraints;
        let z = ConstraintSet::from_box(&b.x_lo, &b.x_hi, &b.u_lo, &b.u_hi)?;
        let safe = self.safe_set(&model, &cert, &z)?;
        if self.horizons.filter == 0 || self.horizons.estimator == 0 {
            bail!("horizons must be at least 1");
        }
        let nlp = NlpOptions {
            feas_tol: self.solver.feas_tol,
            opt_tol: self.solver.opt_tol,
            max_iter: self.solver.max_iter,
        };
        let mut observer = ObserverConfig {
            horizon: self.horizons.estimator,
            mhe_enabled: self.scenario.mhe,
            ..ObserverConfig::default()
        };
        observer.mhe.nlp.max_iter = self.solver.mhe_max_iter;
        let s = &self.scenario;
        let policy = match &s.policy {
            PolicyBlock::Sinusoid { amplitude, omega } => PolicySpec::Sinusoid {
                amplitude: *amplitude,
                omega: *omega,
            },
            PolicyBlock::Constant { u } => PolicySpec::Constant(Vector::from_column_slice(u)),
            PolicyBlock::Linear { gain } => PolicySpec::Linear(matrix(gain).context("scenario.policy.gain")?),
        };
        let x0 = Vector::from_column_slice(&s.x0);
        let x_hat0 = s.x_hat0.as_ref().map_or_else(|| x0.clone(), |v| Vector::from_column_slice(v));
        let mut grid = GridSpec::from_constraints(&z, model.n_x(), model.n_u())?;
        grid.points_per_dim = self.verify.points_per_dim;
        grid.input_points = self.verify.input_points;
        let scenario = Scenario {
            model: Arc::new(model),
            cert: Arc::new(cert),
            constraints: Arc::new(z),
            safe_set: Arc::new(safe),
            x0,
            x_hat0,
            e_bar0: s.e_bar0,
            steps: s.steps,
            seed: s.seed,
            policy,
            disturbance: s.disturbance.into(),
            filter: FilterConfig {
                horizon: self.horizons.filter,
                pin_nominal: s.pin_nominal,
                nlp,
                terminal_override: None,
            },
            observer,
        };
        scenario.validate().map_err(|e| anyhow!("scenario: {e}"))?;
        Ok(Setup {
            scenario,
            grid,
            auto_certificate: self.certificate.has_auto(),
        })
    }
}

impl CertificateBlock {
    pub fn from_inputs(c: &CertificateInputs) -> Self {
        let spec = |m: &Option<Matrix>| m.as_ref().map_or_else(MatrixSpec::default, |m| MatrixSpec::Rows(rows(m)));
        Self {
            rho_d: c.rho_d,
            rho_o: c.rho_o,
            rho_s: c.rho_s,
            sig_ow: c.sig_ow,
            sig_so: c.sig_so,
            sig_sow: c.sig_sow,
            sig_dw: c.sig_dw,
            sig_dy: c.sig_dy,
            sig_d: c.sig_d,
            sig_ol: c.sig_ol,
            sig_olw: c.sig_olw,
            sig_sw: c.sig_sw,
            sig_pi: c.sig_pi,
            p_o: spec(&c.p_o),
            p_s: spec(&c.p_s),
            k: spec(&c.k),
            l: spec(&c.l),
        }
    }
}
