//! Closed-loop simulation: the true plant with sampled disturbances, an
//! uncertified policy, the estimator and the filter.
//!
//! Randomness comes from ChaCha8 seeded with `seed_from_u64`; a uniform
//! number is the top 53 bits of `next_u64` scaled by `2^-53`.

use alloc::sync::Arc;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};
use crate::filter::{Branch, FilterConfig, FilterState, SafeSet, SafetyFilter, SolveStats};
use crate::linalg::{Matrix, Vector};
use crate::lyapunov::Certificate;
use crate::math;
use crate::model::{ConstraintSet, SystemModel};
use crate::observer::{EstimateSource, MheOutcome, Observer, ObserverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DisturbanceMode {
    UniformBox,
    Corners,
    Zero,
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform on `[0, 1)`.
pub fn uniform01(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// A disturbance in the box `‖w‖∞ ≤ bound`.
pub fn sample_disturbance(mode: DisturbanceMode, n_w: usize, bound: f64, rng: &mut ChaCha8Rng) -> Vector {
    match mode {
        DisturbanceMode::Zero => Vector::zeros(n_w),
        DisturbanceMode::UniformBox => Vector::from_iterator(n_w, (0..n_w).map(|_| bound * (2.0 * uniform01(rng) - 1.0))),
        DisturbanceMode::Corners => Vector::from_iterator(
            n_w,
            (0..n_w).map(|_| if rng.next_u64() >> 63 == 1 { bound } else { -bound }),
        ),
    }
}

/// `amplitude · sin(omega · k)`.
pub fn sinusoidal_policy(k: usize, amplitude: f64, omega: f64) -> f64 {
    amplitude * math::sin(omega * k as f64)
}

/// The uncertified policy `π_L`, evaluated on the estimate only.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicySpec {
    /// The same sinusoid on every input.
    Sinusoid { amplitude: f64, omega: f64 },
    Constant(Vector),
    /// `u = G x̂`.
    Linear(Matrix),
}

impl Default for PolicySpec {
    fn default() -> Self {
        Self::Sinusoid {
            amplitude: 6.0,
            omega: 0.3,
        }
    }
}

impl PolicySpec {
    pub fn input(&self, k: usize, x_hat: &Vector, n_u: usize) -> Vector {
        match self {
            Self::Sinusoid { amplitude, omega } => Vector::from_element(n_u, sinusoidal_policy(k, *amplitude, *omega)),
            Self::Constant(u) => u.clone(),
            Self::Linear(g) => g * x_hat,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub model: Arc<SystemModel>,
    pub cert: Arc<Certificate>,
    pub constraints: Arc<ConstraintSet>,
    pub safe_set: Arc<SafeSet>,
    pub x0: Vector,
    pub x_hat0: Vector,
    pub e_bar0: f64,
    pub steps: usize,
    pub seed: u64,
    pub policy: PolicySpec,
    pub disturbance: DisturbanceMode,
    pub filter: FilterConfig,
    pub observer: ObserverConfig,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Scenario("steps must be at least 1".into()));
        }
        if self.x0.len() != self.model.n_x() || self.x_hat0.len() != self.model.n_x() {
            return Err(Error::Dimension("initial state has wrong length".into()));
        }
        let e = self.cert.v_o.eval(&self.x_hat0, &self.x0);
        if !(e <= self.e_bar0) {
            return Err(Error::Scenario(alloc::format!(
                "initial error {e} exceeds the initial bound {}",
                self.e_bar0
            )));
        }
        if let PolicySpec::Constant(u) = &self.policy {
            if u.len() != self.model.n_u() {
                return Err(Error::Dimension("constant policy has wrong length".into()));
            }
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub x: Vector,
    pub x_hat: Vector,
    pub e_bar: f64,
    /// `ē_k − V_o(x̂_k, x_k)`.
    pub bound_margin: f64,
    pub source: EstimateSource,
    pub mhe: MheOutcome,
    pub u_learn: Vector,
    pub u_applied: Vector,
    pub branch: Option<Branch>,
    pub objective: f64,
    pub slacks: Vec<f64>,
    pub min_slack: f64,
    pub y: Vector,
    pub solves: Vec<SolveStats>,
    /// The shifted previous plan was applied after a failed reduced solve.
    pub shifted_fallback: bool,
    pub mhe_stats: Option<(f64, f64)>,
}

impl StepRecord {
    pub fn solver_iterations(&self) -> usize {
        self.solves.iter().map(|s| s.iterations).sum()
    }
}

/// Run the loop. The true state is only used by the plant and for logging.
pub fn run_closed_loop(scenario: &Scenario, filtered: bool) -> Result<Vec<StepRecord>> {
    scenario.validate()?;
    let model = scenario.model.as_ref();
    let mut rng = rng(scenario.seed);
    let mut observer = Observer::new(
        scenario.model.clone(),
        scenario.cert.clone(),
        scenario.observer,
        scenario.x_hat0.clone(),
        scenario.e_bar0,
    )?;
    let filter = SafetyFilter::new(
        scenario.model.clone(),
        scenario.cert.clone(),
        scenario.constraints.clone(),
        scenario.safe_set.clone(),
        scenario.filter,
    )?;
    let mut state = FilterState::new();

    let mut x = scenario.x0.clone();
    let mut last: Option<(Vector, Vector)> = None;
    let mut records = Vec::with_capacity(scenario.steps);
    for k in 0..scenario.steps {
        let mut mhe = MheOutcome::Disabled;
        let mut mhe_stats = None;
        if let Some((u, y)) = &last {
            let (_, report) = observer.advance(u, y)?;
            mhe = report.mhe;
            mhe_stats = report.mhe_kkt;
        }
        let bundle = observer.current().clone();
        let u_learn = scenario.policy.input(k, &bundle.x_hat, model.n_u());
        let (u, branch, objective, solves, shifted_fallback) = if filtered {
            let c = filter.certify_step(&mut state, &bundle, &u_learn)?;
            (c.u, Some(c.branch), c.objective, c.solves, c.shifted_fallback)
        } else {
            (u_learn.clone(), None, 0.0, Vec::new(), false)
        };
        let w = sample_disturbance(scenario.disturbance, model.n_w(), model.w_inf_bound(), &mut rng);
        let y = model.measure(&x, &u, &w)?;
        let slacks = scenario.constraints.slacks(&x, &u);
        records.push(StepRecord {
            k,
            bound_margin: bundle.e_bar - scenario.cert.v_o.eval(&bundle.x_hat, &x),
            x: x.clone(),
            x_hat: bundle.x_hat.clone(),
            e_bar: bundle.e_bar,
            source: bundle.source,
            mhe,
            u_learn,
            u_applied: u.clone(),
            branch,
            objective,
            min_slack: slacks.iter().copied().fold(f64::INFINITY, f64::min),
            slacks,
            y: y.clone(),
            solves,
            shifted_fallback,
            mhe_stats,
        });
        x = model.disturbed_step(&x, &u, &w)?;
        last = Some((u, y));
    }
    Ok(records)
}

/// Aggregate statistics over runs; `merge` is associative and commutative.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloSummary {
    pub runs: usize,
    pub steps: usize,
    pub min_slack: f64,
    pub min_bound_margin: f64,
    /// Counts of full-horizon, reduced-horizon and backup steps.
    pub branches: [usize; 3],
    /// Runs in which some constraint row was violated.
    pub violating_runs: usize,
    /// Largest KKT residual and constraint violation of optimal solves.
    pub worst_kkt: f64,
    pub worst_violation: f64,
    pub shifted_fallbacks: usize,
}

impl MonteCarloSummary {
    pub fn empty() -> Self {
        Self {
            runs: 0,
            steps: 0,
            min_slack: f64::INFINITY,
            min_bound_margin: f64::INFINITY,
            branches: [0; 3],
            violating_runs: 0,
            worst_kkt: 0.0,
            worst_violation: 0.0,
            shifted_fallbacks: 0,
        }
    }

    pub fn from_run(records: &[StepRecord]) -> Self {
        let mut s = Self::empty();
        s.runs = 1;
        s.steps = records.len();
        for r in records {
            s.min_slack = s.min_slack.min(r.min_slack);
            s.min_bound_margin = s.min_bound_margin.min(r.bound_margin);
            match r.branch {
                Some(Branch::FullHorizon) => s.branches[0] += 1,
                Some(Branch::ReducedHorizon(_)) => s.branches[1] += 1,
                Some(Branch::SafeBackup) => s.branches[2] += 1,
                None => {}
            }
            for st in r.solves.iter().filter(|st| st.status == crate::nlp::NlpStatus::Optimal) {
                s.worst_kkt = s.worst_kkt.max(st.kkt_residual);
                s.worst_violation = s.worst_violation.max(st.max_violation);
            }
            s.shifted_fallbacks += usize::from(r.shifted_fallback);
            if let Some((kkt, viol)) = r.mhe_stats {
                s.worst_kkt = s.worst_kkt.max(kkt);
                s.worst_violation = s.worst_violation.max(viol);
            }
        }
        if s.min_slack < 0.0 {
            s.violating_runs = 1;
        }
        s
    }

    pub fn merge(&self, other: &Self) -> Self {
        Self {
            runs: self.runs + other.runs,
            steps: self.steps + other.steps,
            min_slack: self.min_slack.min(other.min_slack),
            min_bound_margin: self.min_bound_margin.min(other.min_bound_margin),
            branches: [
                self.branches[0] + other.branches[0],
                self.branches[1] + other.branches[1],
                self.branches[2] + other.branches[2],
            ],
            violating_runs: self.violating_runs + other.violating_runs,
            worst_kkt: self.worst_kkt.max(other.worst_kkt),
            worst_violation: self.worst_violation.max(other.worst_violation),
            shifted_fallbacks: self.shifted_fallbacks + other.shifted_fallbacks,
        }
    }
}

/// Seed of run `i` of a campaign.
pub fn run_seed(base: u64, i: usize) -> u64 {
    base.wrapping_add(i as u64)
}

/// Sequential campaign over seeds `base + i`.
pub fn monte_carlo(template: &Scenario, runs: usize, filtered: bool) -> Result<MonteCarloSummary> {
    if runs == 0 {
        return Err(Error::Scenario("runs must be at least 1".into()));
    }
    let mut total = MonteCarloSummary::empty();
    for i in 0..runs {
        let records = run_closed_loop(&template.with_seed(run_seed(template.seed, i)), filtered)?;
        total = total.merge(&MonteCarloSummary::from_run(&records));
    }
    Ok(total)
}

/// [`monte_carlo`] spread over `threads` workers pulling run indices from a
/// shared counter. The merge is order independent, so the summary does not
/// depend on scheduling.
#[cfg(feature = "std")]
pub fn monte_carlo_parallel(template: &Scenario, runs: usize, filtered: bool, threads: usize) -> Result<MonteCarloSummary> {
    use core::sync::atomic::{AtomicUsize, Ordering};
    if runs == 0 {
        return Err(Error::Scenario("runs must be at least 1".into()));
    }
    let next = AtomicUsize::new(0);
    let workers = threads.clamp(1, runs);
    let results: Vec<Result<MonteCarloSummary>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                scope.spawn(|| {
                    let mut acc = MonteCarloSummary::empty();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= runs {
                            return Ok(acc);
                        }
                        let records = run_closed_loop(&template.with_seed(run_seed(template.seed, i)), filtered)?;
                        acc = acc.merge(&MonteCarloSummary::from_run(&records));
                    }
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or(Err(Error::Scenario("worker panicked".into()))))
            .collect()
    });
    let mut total = MonteCarloSummary::empty();
    for r in results {
        total = total.merge(&r?);
    }
    Ok(total)
}

/// Golden mass-spring-damper scenario: reference constants, golden certificate,
/// LQR terminal ingredients and 60 steps from `[0.79, 0.7]`.
pub fn golden_scenario() -> Result<Scenario> {
    use crate::filter::{lqr_terminal, size_safe_set_offline, SafeSetOptions};
    use crate::lyapunov::CertificateInputs;
    use crate::model::MassSpringDamperParams;
    let model = SystemModel::mass_spring_damper(MassSpringDamperParams::default(), 0.25, 0.01)?;
    let cert = CertificateInputs::mass_spring_damper_golden().build(&model)?;
    let z = ConstraintSet::from_box(&[-0.85, -2.0], &[0.85, 2.0], &[-6.0], &[6.0])?;
    let (p_f, k_f) = lqr_terminal(&model)?;
    let safe = size_safe_set_offline(&model, &cert, &z, &k_f, &p_f, &SafeSetOptions::default())?;
    let x0 = Vector::from_column_slice(&[0.79, 0.7]);
    Ok(Scenario {
        model: Arc::new(model),
        cert: Arc::new(cert),
        constraints: Arc::new(z),
        safe_set: Arc::new(safe),
        x_hat0: x0.clone(),
        x0,
        e_bar0: 0.0,
        steps: 60,
        seed: 0,
        policy: PolicySpec::default(),
        disturbance: DisturbanceMode::UniformBox,
        filter: FilterConfig::default(),
        observer: ObserverConfig::default(),
    })
}

/// The golden scenario without uncertainty: full-state noiseless output,
/// zero disturbance, exact initial estimate and the nominal state pinned to
/// the estimate. The filter must then act like nominal predictive safety
/// certification.
pub fn nominal_scenario() -> Result<Scenario> {
    use crate::filter::{lqr_terminal, size_safe_set_offline, SafeSetOptions};
    use crate::lyapunov::CertificateInputs;
    use crate::model::LinearOutput;
    let golden = golden_scenario()?;
    let model = golden
        .model
        .with_disturbance_bound(0.0)?
        .with_output(Arc::new(LinearOutput::full_state(2, 1)), Matrix::zeros(2, 3))?;
    let gold = CertificateInputs::mass_spring_damper_golden();
    let l1 = gold.l.clone().ok_or(Error::Certificate("golden gain missing".into()))?;
    let mut l = Matrix::zeros(2, 2);
    l.set_column(0, &l1.column(0));
    let cert = CertificateInputs { l: Some(l), ..gold }.build(&model)?;
    let (p_f, k_f) = lqr_terminal(&model)?;
    let safe = size_safe_set_offline(&model, &cert, &golden.constraints, &k_f, &p_f, &SafeSetOptions::default())?;
    let mut observer = ObserverConfig::default();
    observer.mhe_enabled = false;
    Ok(Scenario {
        model: Arc::new(model),
        cert: Arc::new(cert),
        safe_set: Arc::new(safe),
        disturbance: DisturbanceMode::Zero,
        filter: FilterConfig {
            pin_nominal: true,
            ..golden.filter
        },
        observer,
        ..golden
    })
}

/// States and inputs of the scenario's plant under nominal certification
/// with the safe set's terminal ingredients and radius at zero uncertainty.
pub fn run_nominal_certification(scenario: &Scenario) -> Result<Vec<(Vector, Vector, crate::nlp::NlpResult)>> {
    use crate::filter::NominalCertifier;
    scenario.validate()?;
    let safe = &scenario.safe_set;
    let radius = safe.radius(0.0, 0.0).ok_or(Error::TerminalSetVanished { e_bar: 0.0, s_bar: 0.0 })?;
    let mut cert = NominalCertifier::new(
        &scenario.model,
        &scenario.constraints,
        safe.p_f().clone(),
        safe.k_f().clone(),
        radius,
        scenario.filter.horizon,
        scenario.filter.nlp,
    );
    let mut x = scenario.x0.clone();
    let mut out = Vec::with_capacity(scenario.steps);
    for k in 0..scenario.steps {
        let u_learn = scenario.policy.input(k, &x, scenario.model.n_u());
        let (u, r) = cert.certify(&x, &u_learn)?;
        let next = scenario.model.step(&x, &u)?;
        out.push((x, u, r));
        x = next;
    }
    Ok(out)
}
