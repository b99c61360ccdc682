//! End-to-end acceptance checks on the golden mass-spring-damper example.
//! Prints one PASS/FAIL line per criterion and exits non-zero if any fails.

use std::process::ExitCode;
use std::sync::Arc;

use rpofsf::filter::{Branch, FilterState, NominalCertifier, SafetyFilter, SolveStats, TerminalOverride};
use rpofsf::linalg::{Matrix, Vector};
use rpofsf::lyapunov::{verify_certificate_grid, Certificate, CertificateInputs, GridSpec};
use rpofsf::math;
use rpofsf::model::{LinearOutput, SystemModel, Transition};
use rpofsf::nlp::{NlpResult, NlpStatus};
use rpofsf::observer::{mhe_solve, EstimateBundle, EstimateSource, MheBuffer, MheEntry, MheOptions};
use rpofsf::sim::{
    golden_scenario, monte_carlo_parallel, nominal_scenario, rng, run_closed_loop, run_nominal_certification, run_seed,
    uniform01, MonteCarloSummary, Scenario,
};

const RUNS: usize = 100;
const SLACK_TOL: f64 = 1e-9;
const KKT_TOL: f64 = 1e-6;
const VIOLATION_TOL: f64 = 1e-8;

/// Worst residuals of every optimal solve seen so far.
#[derive(Default)]
struct SolverAudit {
    solves: usize,
    kkt: f64,
    violation: f64,
}

impl SolverAudit {
    fn add(&mut self, kkt: f64, violation: f64) {
        self.solves += 1;
        self.kkt = self.kkt.max(kkt);
        self.violation = self.violation.max(violation);
    }

    fn stats(&mut self, s: &[SolveStats]) {
        for st in s.iter().filter(|st| st.status == NlpStatus::Optimal) {
            self.add(st.kkt_residual, st.max_violation);
        }
    }

    fn nlp(&mut self, r: &NlpResult) {
        if r.status == NlpStatus::Optimal {
            self.add(r.kkt_residual, r.max_violation);
        }
    }

    fn summary(&mut self, s: &MonteCarloSummary) {
        // the summary already keeps the worst optimal residuals
        self.add(s.worst_kkt, s.worst_violation);
    }
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn v(s: &[f64]) -> Vector {
    Vector::from_column_slice(s)
}

fn filter_of(s: &Scenario) -> SafetyFilter {
    SafetyFilter::new(s.model.clone(), s.cert.clone(), s.constraints.clone(), s.safe_set.clone(), s.filter).unwrap()
}

fn bundle(x: &Vector, e_bar: f64) -> EstimateBundle {
    EstimateBundle {
        x_hat: x.clone(),
        e_bar,
        source: EstimateSource::Luenberger,
        k: 0,
    }
}

fn campaign(audit: &mut SolverAudit) -> (Outcome, Outcome) {
    let golden = golden_scenario().unwrap();
    let filtered = monte_carlo_parallel(&golden, RUNS, true, threads()).unwrap();
    audit.summary(&filtered);

    // the plant never sees the estimate without the filter, so the estimator is skipped
    let mut open = golden.clone();
    open.observer.mhe_enabled = false;
    let mut missed = Vec::new();
    for i in 0..RUNS {
        let records = run_closed_loop(&open.with_seed(run_seed(golden.seed, i)), false).unwrap();
        if !records.iter().any(|r| r.x[0] > 0.85) {
            missed.push(i);
        }
    }
    let c1 = outcome(
        filtered.min_slack >= -SLACK_TOL && missed.is_empty(),
        format!(
            "filtered min slack {:.3e} over {} runs, unfiltered runs without an x1 violation: {:?}",
            filtered.min_slack, filtered.runs, missed
        ),
    );
    let c2 = outcome(
        filtered.min_bound_margin >= -SLACK_TOL,
        format!("min bound margin {:.3e}", filtered.min_bound_margin),
    );
    (c1, c2)
}

fn recursion() -> Outcome {
    let s = golden_scenario().unwrap();
    let c = &s.cert;
    let w = s.model.w_bar();
    let mut r = rng(3);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let e0 = uniform01(&mut r);
        let i = (uniform01(&mut r) * 101.0) as usize;
        let mut e = e0;
        for _ in 0..i {
            e = c.bound_update_offline(e, w);
        }
        worst = worst.max((c.bound_predict(e0, i, w) - e).abs());
    }
    outcome(worst <= 1e-12, format!("largest deviation {worst:.3e} over 1000 draws"))
}

fn nominal_equivalence(audit: &mut SolverAudit) -> Outcome {
    let s = nominal_scenario().unwrap();
    let filter = filter_of(&s);
    let radius = s.safe_set.radius(0.0, 0.0).unwrap();
    let mut r = rng(11);
    let (mut compared, mut tries, mut first_gap, mut disagree) = (0, 0, 0.0f64, 0);
    while compared < 20 && tries < 200 {
        tries += 1;
        let x = v(&[-0.85 + 1.7 * uniform01(&mut r), -2.0 + 4.0 * uniform01(&mut r)]);
        let u_learn = Vector::from_element(1, -6.0 + 12.0 * uniform01(&mut r));
        let mut nominal = NominalCertifier::new(
            &s.model,
            &s.constraints,
            s.safe_set.p_f().clone(),
            s.safe_set.k_f().clone(),
            radius,
            s.filter.horizon,
            s.filter.nlp,
        );
        match (nominal.certify(&x, &u_learn), filter.certify_step(&mut FilterState::new(), &bundle(&x, 0.0), &u_learn)) {
            (Ok((u, res)), Ok(c)) => {
                audit.nlp(&res);
                audit.stats(&c.solves);
                first_gap = first_gap.max((u[0] - c.u[0]).abs());
                compared += 1;
            }
            (Err(_), Err(_)) => {}
            _ => disagree += 1,
        }
    }

    let mut s30 = s.clone();
    s30.steps = 30;
    let run = run_closed_loop(&s30, true).unwrap();
    let oracle = run_nominal_certification(&s30).unwrap();
    let mut traj_gap: f64 = 0.0;
    for (a, (x, u, res)) in run.iter().zip(&oracle) {
        audit.stats(&a.solves);
        audit.nlp(res);
        traj_gap = traj_gap.max((&a.x - x).amax()).max((&a.u_applied - u).amax());
    }
    outcome(
        compared == 20 && disagree == 0 && first_gap <= 1e-4 && traj_gap <= 1e-4 && run.len() == 30,
        format!("{compared} states, first-input gap {first_gap:.3e}, feasibility disagreements {disagree}, 30-step gap {traj_gap:.3e}"),
    )
}

fn minimal_modification(audit: &mut SolverAudit) -> Outcome {
    let s = golden_scenario().unwrap();
    let filter = filter_of(&s);
    let mut r = rng(5);
    let mut worst: f64 = 0.0;
    let mut not_full = 0;
    for _ in 0..20 {
        let x = v(&[-0.3 + 0.6 * uniform01(&mut r), -0.5 + uniform01(&mut r)]);
        let u_learn = Vector::from_element(1, -0.5 + uniform01(&mut r));
        match filter.certify_step(&mut FilterState::new(), &bundle(&x, 0.0), &u_learn) {
            Ok(c) => {
                audit.stats(&c.solves);
                not_full += usize::from(c.branch != Branch::FullHorizon);
                worst = worst.max((&c.u - &u_learn).amax());
            }
            Err(_) => not_full += 1,
        }
    }
    outcome(
        worst <= 1e-6 && not_full == 0,
        format!("largest modification {worst:.3e}, non-full-horizon steps {not_full}"),
    )
}

fn consistent_buffer(m: &SystemModel, len: usize, anchor_bound: f64) -> MheBuffer {
    let mut buf = MheBuffer::new(len);
    let mut x = v(&[0.5, 0.3]);
    for k in 0..len {
        let u = v(&[(k as f64).sin()]);
        let y = m.output(&x, &u);
        buf.push(MheEntry {
            u: u.clone(),
            y,
            anchor: x.clone(),
            anchor_bound,
        });
        x = m.step(&x, &u).unwrap();
    }
    buf
}

fn scalar_mhe_setup() -> (SystemModel, Certificate) {
    // x⁺ = 0.9x + w₁, y = x + w₂
    let m = SystemModel::new(
        Transition::Linear {
            a: Matrix::from_element(1, 1, 0.9),
            b: Matrix::zeros(1, 1),
        },
        Arc::new(LinearOutput::new(Matrix::from_element(1, 1, 1.0), Matrix::zeros(1, 1))),
        Matrix::from_row_slice(1, 2, &[1.0, 0.0]),
        Matrix::from_row_slice(1, 2, &[0.0, 1.0]),
        0.05,
    )
    .unwrap();
    let c = CertificateInputs {
        rho_d: 0.8,
        rho_o: 0.7,
        rho_s: 0.8,
        sig_ow: 1.0,
        sig_so: 1.0,
        sig_sow: 1.0,
        sig_dw: Some(1.0),
        sig_dy: Some(2.0),
        sig_d: Some(1.5),
        sig_ol: None,
        sig_olw: None,
        sig_sw: None,
        sig_pi: None,
        p_o: Some(Matrix::from_element(1, 1, 1.0)),
        p_s: Some(Matrix::from_element(1, 1, 1.0)),
        k: Some(Matrix::zeros(1, 1)),
        l: Some(Matrix::from_element(1, 1, 0.5)),
    }
    .build(&m)
    .unwrap();
    (m, c)
}

fn mhe_optimum(audit: &mut SolverAudit) -> Outcome {
    let s = golden_scenario().unwrap();
    let (m, c) = (s.model.as_ref(), s.cert.as_ref());
    let w = m.w_bar();
    let mut worst: f64 = 0.0;
    for len in [1usize, 5, 10] {
        let est = mhe_solve(m, c, &consistent_buffer(m, len, 0.07), &MheOptions::default(), None).unwrap();
        audit.add(est.kkt_residual, est.max_violation);
        let p = math::powi(c.rho_d, len);
        let analytic = c.sig_dw * w * (1.0 - p) / (1.0 - c.rho_d) + p * 0.07;
        worst = worst.max((est.cost - analytic).abs());
    }

    let (m, c) = scalar_mhe_setup();
    let mut buf = MheBuffer::new(1);
    buf.push(MheEntry {
        u: v(&[0.0]),
        y: v(&[0.43]),
        anchor: v(&[0.3]),
        anchor_bound: 0.2,
    });
    let est = mhe_solve(&m, &c, &buf, &MheOptions::default(), None).unwrap();
    audit.add(est.kkt_residual, est.max_violation);
    // brute force over the anchor offset and the output noise; w₁ = 0 at the optimum
    let w_bar = m.w_bar();
    let mut best = f64::INFINITY;
    for i in 0..=2000 {
        let x = 0.6 * i as f64 / 2000.0;
        for k in 0..=100 {
            let w2 = -0.05 + 0.1 * k as f64 / 100.0;
            let cost = c.sig_dw * (w_bar + w2.abs()) + c.sig_dy * (x + w2 - 0.43).abs() + 0.8 * 0.2 + 0.8 * 1.5 * (x - 0.3).abs();
            best = best.min(cost);
        }
    }
    let grid_gap = (est.cost - best).abs();
    outcome(
        worst <= 1e-6 && grid_gap <= 1e-3,
        format!("analytic gap {worst:.3e}, scalar grid gap {grid_gap:.3e}"),
    )
}

fn scalar_verifier(rho: f64) -> f64 {
    let m = SystemModel::new(
        Transition::Linear {
            a: Matrix::from_element(1, 1, 0.5),
            b: Matrix::zeros(1, 1),
        },
        Arc::new(LinearOutput::new(Matrix::from_element(1, 1, 1.0), Matrix::zeros(1, 1))),
        Matrix::from_element(1, 1, 1.0),
        Matrix::zeros(1, 1),
        0.1,
    )
    .unwrap();
    let c = CertificateInputs {
        rho_d: rho,
        rho_o: rho,
        rho_s: rho,
        sig_ow: 1.0,
        sig_so: 1.0,
        sig_sow: 1.0,
        sig_dw: Some(1.0),
        sig_dy: Some(0.0),
        sig_d: Some(1.0),
        sig_ol: Some(0.0),
        sig_olw: Some(0.0),
        sig_sw: Some(1.0),
        sig_pi: Some(0.0),
        p_o: Some(Matrix::from_element(1, 1, 1.0)),
        p_s: Some(Matrix::from_element(1, 1, 1.0)),
        k: Some(Matrix::zeros(1, 1)),
        l: Some(Matrix::zeros(1, 1)),
    }
    .build(&m)
    .unwrap();
    let grid = GridSpec::new(vec![-1.0], vec![1.0], vec![-1.0], vec![1.0]);
    verify_certificate_grid(&c, &m, &c.policy(), &grid).unwrap().min_slack()
}

fn verifier() -> Outcome {
    let exact = scalar_verifier(0.5);
    let optimistic = scalar_verifier(0.4);
    let s = golden_scenario().unwrap();
    let grid = GridSpec::from_constraints(&s.constraints, 2, 1).unwrap();
    let golden = verify_certificate_grid(&s.cert, &s.model, &s.cert.policy(), &grid).unwrap();
    outcome(
        exact.abs() <= 1e-12 && optimistic < -grid.tolerance && golden.passed() && grid.points_per_dim == 50,
        format!(
            "scalar slack {exact:.3e} at 0.5, {optimistic:.3e} at 0.4, golden grid min slack {:.3e}",
            golden.min_slack()
        ),
    )
}

fn branch_coverage(audit: &mut SolverAudit) -> Outcome {
    let mut s = golden_scenario().unwrap();
    s.filter.terminal_override = Some(TerminalOverride { from_step: 5, radius: -1.0 });
    let records = run_closed_loop(&s, true).unwrap();
    audit.summary(&MonteCarloSummary::from_run(&records));
    // phase 0 full, 1 reduced, 2 backup; the sequence must be monotone and visit all three
    let phase = |b: Option<Branch>| match b {
        Some(Branch::FullHorizon) => 0,
        Some(Branch::ReducedHorizon(_)) => 1,
        _ => 2,
    };
    let phases: Vec<u8> = records.iter().map(|r| phase(r.branch)).collect();
    let ordered = phases.windows(2).all(|w| w[0] <= w[1]);
    let seen = [0, 1, 2].map(|p| phases.iter().filter(|&&q| q == p).count());
    let min_slack = records.iter().map(|r| r.min_slack).fold(f64::INFINITY, f64::min);
    outcome(
        ordered && seen.iter().all(|&n| n > 0) && min_slack >= -SLACK_TOL,
        format!(
            "full/reduced/backup steps {}/{}/{}, ordered {ordered}, min slack {min_slack:.3e}",
            seen[0], seen[1], seen[2]
        ),
    )
}

fn main() -> ExitCode {
    let mut audit = SolverAudit::default();
    let (c1, c2) = campaign(&mut audit);
    let c3 = recursion();
    let c4 = nominal_equivalence(&mut audit);
    let c5 = minimal_modification(&mut audit);
    let c6 = mhe_optimum(&mut audit);
    let c7 = verifier();
    let c8 = branch_coverage(&mut audit);
    let c9 = outcome(
        audit.kkt <= KKT_TOL && audit.violation <= VIOLATION_TOL,
        format!(
            "worst kkt {:.3e}, worst violation {:.3e} over {} audited results",
            audit.kkt, audit.violation, audit.solves
        ),
    );
    let names = [
        "closed-loop safety over 100 runs",
        "estimation bound validity",
        "closed-form bound recursion",
        "nominal certification equivalence",
        "minimal modification",
        "moving-horizon optimum",
        "certificate verifier",
        "branch coverage",
        "solver soundness",
    ];
    let mut all = true;
    for (i, (name, o)) in names.iter().zip([c1, c2, c3, c4, c5, c6, c7, c8, c9]).enumerate() {
        println!("{} criterion {}: {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
        all &= o.pass;
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
