//! The safety filter: terminal safe set, per-step program, and the
//! adaptive-horizon certification loop with a safe backup.

pub mod problem;
pub mod safe_set;

pub use problem::{FilterContext, Plan, RpofsfProblem};
pub use safe_set::{lqr_terminal, size_safe_set_offline, SafeSet, SafeSetOptions};
pub mod mpsc;

use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::lyapunov::Certificate;
use crate::model::{ConstraintSet, SystemModel};
use crate::nlp::{self, NlpOptions, NlpStatus};
use crate::observer::EstimateBundle;

pub use mpsc::{MpscProblem, NominalCertifier};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    FullHorizon,
    ReducedHorizon(usize),
    SafeBackup,
}

/// Replace the terminal radius of full-horizon programs from a given step on.
/// Reduced-horizon programs keep the true safe set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminalOverride {
    pub from_step: usize,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    pub horizon: usize,
    /// Fix `x̄_0 = x̂_k` and `s̄_0 = 0` instead of optimizing them.
    pub pin_nominal: bool,
    pub nlp: NlpOptions,
    pub terminal_override: Option<TerminalOverride>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            horizon: 40,
            pin_nominal: false,
            nlp: NlpOptions::default(),
            terminal_override: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub horizon: usize,
    pub status: NlpStatus,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub max_violation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertifiedInput {
    pub u: Vector,
    pub branch: Branch,
    /// `‖π_L(x̂) − u‖²`.
    pub objective: f64,
    pub plan: Option<Plan>,
    /// Every program solved in this step, in order.
    pub solves: Vec<SolveStats>,
    /// The reduced-horizon solver failed and the shifted plan was applied.
    pub shifted_fallback: bool,
}

/// Bookkeeping between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub k: usize,
    pub k_feasible: Option<usize>,
    /// Nominal state and tube size for the next step.
    pub nominal: Option<(Vector, f64)>,
    pub plan: Option<Plan>,
}

impl FilterState {
    pub fn new() -> Self {
        Self {
            k: 0,
            k_feasible: None,
            nominal: None,
            plan: None,
        }
    }
}

impl Default for FilterState {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone)]
pub struct SafetyFilter {
    pub model: Arc<SystemModel>,
    pub cert: Arc<Certificate>,
    pub constraints: Arc<ConstraintSet>,
    pub safe_set: Arc<SafeSet>,
    pub config: FilterConfig,
}

enum Attempt {
    Solved { z: Vector, stats: SolveStats },
    Failed(Option<SolveStats>),
}

impl SafetyFilter {
    pub fn new(
        model: Arc<SystemModel>,
        cert: Arc<Certificate>,
        constraints: Arc<ConstraintSet>,
        safe_set: Arc<SafeSet>,
        config: FilterConfig,
    ) -> Result<Self> {
        if config.horizon == 0 {
            return Err(Error::Scenario("horizon must be at least 1".into()));
        }
        Ok(Self {
            model,
            cert,
            constraints,
            safe_set,
            config,
        })
    }

    pub fn context(&self) -> FilterContext<'_> {
        FilterContext {
            model: &self.model,
            cert: &self.cert,
            constraints: &self.constraints,
            safe_set: &self.safe_set,
        }
    }

    /// Program for the given estimate and horizon.
    pub fn problem(&self, bundle: &EstimateBundle, u_learn: &Vector, horizon: usize, radius: Option<f64>) -> Result<RpofsfProblem<'_>> {
        RpofsfProblem::new(
            self.context(),
            &bundle.x_hat,
            bundle.e_bar,
            u_learn,
            horizon,
            self.config.pin_nominal,
            radius,
        )
    }

    /// Previous plan shifted by one step and extended with `π_safe` to `horizon`.
    fn shifted_guess(&self, problem: &RpofsfProblem<'_>, plan: &Plan, horizon: usize, exact: bool) -> Result<Vector> {
        let mut u: Vec<Vector> = plan.u_bar.iter().skip(1).take(horizon).cloned().collect();
        let mut x = plan.x_bar[plan.horizon().min(u.len() + 1)].clone();
        while u.len() < horizon {
            let ui = self.safe_set.safe_input(&x);
            x = self.model.step(&x, &ui)?;
            u.push(ui);
        }
        let x0 = &plan.x_bar[1];
        let s0 = plan.s_bar[1];
        Ok(if exact {
            problem.pack_exact(&u, x0, s0)
        } else {
            problem.pack(&u, x0, s0)
        })
    }

    fn attempt(&self, problem: &mut RpofsfProblem<'_>, warm: Option<Vector>) -> Result<Attempt> {
        if let Some(z) = warm {
            problem.set_initial_guess(z);
        }
        let r = nlp::solve(problem, &self.config.nlp)?;
        let stats = SolveStats {
            horizon: problem.horizon(),
            status: r.status,
            iterations: r.iterations,
            kkt_residual: r.kkt_residual,
            max_violation: r.max_violation,
        };
        Ok(if r.status == NlpStatus::Optimal {
            Attempt::Solved { z: r.x, stats }
        } else {
            Attempt::Failed(Some(stats))
        })
    }

    fn accept(&self, state: &mut FilterState, problem: &RpofsfProblem<'_>, z: &Vector, u_learn: &Vector) -> Result<(Vector, f64, Plan)> {
        let plan = problem.plan(z)?;
        let u = problem.applied_input(z);
        let objective = (u_learn - &u).norm_squared();
        state.nominal = Some((plan.x_bar[1].clone(), plan.s_bar[1]));
        state.plan = Some(plan.clone());
        Ok((u, objective, plan))
    }

    /// One step of the adaptive-horizon certification.
    ///
    /// The full horizon is tried first. If it fails, the horizon shrinks to
    /// `N − (k − k_feasible)` while that is positive, and afterwards the
    /// backup controller drives the stored nominal state.
    pub fn certify_step(&self, state: &mut FilterState, bundle: &EstimateBundle, u_learn: &Vector) -> Result<CertifiedInput> {
        let k = state.k;
        let n = self.config.horizon;
        let mut solves = Vec::new();

        let radius = self
            .config
            .terminal_override
            .filter(|o| k >= o.from_step)
            .map(|o| o.radius);
        let full = match self.problem(bundle, u_learn, n, radius) {
            Ok(mut p) => {
                let warm = match &state.plan {
                    Some(plan) => Some(self.shifted_guess(&p, plan, n, false)?),
                    None => None,
                };
                let a = self.attempt(&mut p, warm)?;
                Some((p, a))
            }
            Err(Error::TerminalSetVanished { .. }) => None,
            Err(e) => return Err(e),
        };
        if let Some((p, a)) = full {
            match a {
                Attempt::Solved { z, stats } => {
                    solves.push(stats);
                    let (u, objective, plan) = self.accept(state, &p, &z, u_learn)?;
                    state.k_feasible = Some(k);
                    state.k += 1;
                    return Ok(CertifiedInput {
                        u,
                        branch: Branch::FullHorizon,
                        objective,
                        plan: Some(plan),
                        solves,
                        shifted_fallback: false,
                    });
                }
                Attempt::Failed(stats) => solves.extend(stats),
            }
        }

        let Some(k_feas) = state.k_feasible else {
            return Err(Error::InitialInfeasible);
        };
        if k < n + k_feas {
            let reduced = n - (k - k_feas);
            let previous = state.plan.clone().ok_or(Error::ContractViolation { step: k, horizon: reduced })?;
            let mut p = match self.problem(bundle, u_learn, reduced, None) {
                Ok(p) => p,
                Err(Error::TerminalSetVanished { .. }) => return Err(Error::ContractViolation { step: k, horizon: reduced }),
                Err(e) => return Err(e),
            };
            let warm = self.shifted_guess(&p, &previous, reduced, false)?;
            let (z, fallback) = match self.attempt(&mut p, Some(warm))? {
                Attempt::Solved { z, stats } => {
                    solves.push(stats);
                    (z, false)
                }
                Attempt::Failed(stats) => {
                    solves.extend(stats);
                    let shifted = self.shifted_guess(&p, &previous, reduced, true)?;
                    if p.exact_min_slack(&shifted)? < -self.config.nlp.feas_tol {
                        return Err(Error::ContractViolation { step: k, horizon: reduced });
                    }
                    (shifted, true)
                }
            };
            let (u, objective, plan) = self.accept(state, &p, &z, u_learn)?;
            state.k += 1;
            return Ok(CertifiedInput {
                u,
                branch: Branch::ReducedHorizon(reduced),
                objective,
                plan: Some(plan),
                solves,
                shifted_fallback: fallback,
            });
        }

        let (x_bar, s_bar) = state.nominal.clone().ok_or(Error::ContractViolation { step: k, horizon: 0 })?;
        let u_safe = self.safe_set.safe_input(&x_bar);
        let u = self.cert.policy().apply(&bundle.x_hat, &x_bar, &u_safe);
        let next = self.model.step(&x_bar, &u_safe)?;
        state.nominal = Some((next, self.cert.tube_update(s_bar, bundle.e_bar, self.model.w_bar())));
        state.plan = None;
        state.k += 1;
        Ok(CertifiedInput {
            objective: (u_learn - &u).norm_squared(),
            u,
            branch: Branch::SafeBackup,
            plan: None,
            solves,
            shifted_fallback: false,
        })
    }
}
