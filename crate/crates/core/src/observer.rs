//! State estimation with certified error bounds: the Luenberger-style
//! observer with offline and online bound recursions, the moving-horizon
//! estimator with runtime validity checks, and min-bound selection.

use alloc::collections::VecDeque;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::lyapunov::Certificate;
use crate::math;
use crate::model::SystemModel;
use crate::nlp::{self, Evaluation, NlpOptions, NlpProblem, NlpStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimateSource {
    Mhe,
    Luenberger,
}

/// Estimate `x̂_k` with a validated bound `V_o(x̂_k, x_k) ≤ ē_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateBundle {
    pub x_hat: Vector,
    pub e_bar: f64,
    pub source: EstimateSource,
    pub k: usize,
}

/// `f(x̂,u) + L (y − h(x̂,u))`.
pub fn luenberger_update(model: &SystemModel, cert: &Certificate, x_hat: &Vector, u: &Vector, y: &Vector) -> Result<Vector> {
    Ok(model.step(x_hat, u)? + &cert.l * (y - model.output(x_hat, u)))
}

/// One buffered measurement with the selected estimate of the same step.
#[derive(Debug, Clone, PartialEq)]
pub struct MheEntry {
    pub u: Vector,
    pub y: Vector,
    pub anchor: Vector,
    pub anchor_bound: f64,
}

/// The last `M` input/output pairs, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct MheBuffer {
    horizon: usize,
    entries: VecDeque<MheEntry>,
}

impl MheBuffer {
    pub fn new(horizon: usize) -> Self {
        Self {
            horizon,
            entries: VecDeque::with_capacity(horizon + 1),
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, entry: MheEntry) {
        if self.horizon == 0 {
            return;
        }
        self.entries.push_back(entry);
        while self.entries.len() > self.horizon {
            self.entries.pop_front();
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = &MheEntry> {
        self.entries.iter()
    }

    /// Estimate and bound at the oldest buffered step.
    pub fn anchor(&self) -> Option<(&Vector, f64)> {
        self.entries.front().map(|e| (&e.anchor, e.anchor_bound))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MheOptions {
    pub nlp: NlpOptions,
    /// Largest accepted gap between an epigraph variable and its norm.
    pub cut_tol: f64,
    pub max_cut_rounds: usize,
}

impl Default for MheOptions {
    fn default() -> Self {
        Self {
            nlp: NlpOptions {
                max_iter: 1000,
                ..NlpOptions::default()
            },
            cut_tol: 1e-9,
            max_cut_rounds: 8,
        }
    }
}

/// Cut directions and a starting point carried from one solve to the next,
/// indexed chronologically over the window.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MheWarmStart {
    pub w_cuts: Vec<Vec<Vector>>,
    pub y_cuts: Vec<Vec<Vector>>,
    pub x_cuts: Vec<Vector>,
    pub states: Vec<Vector>,
    pub w_hat: Vec<Vector>,
}

impl MheWarmStart {
    /// Drop the oldest step after the window slid forward.
    pub fn shift(&mut self) {
        for v in [&mut self.w_cuts, &mut self.y_cuts] {
            if !v.is_empty() {
                v.remove(0);
            }
        }
        if !self.w_hat.is_empty() {
            self.w_hat.remove(0);
        }
        if !self.states.is_empty() {
            self.states.remove(0);
        }
    }
}

/// Axis cuts plus the most recent refinements.
fn trim_cuts(mut cuts: Vec<Vector>, dim: usize, keep: usize) -> Vec<Vector> {
    let base = 2 * dim;
    if cuts.len() > base + keep {
        cuts.drain(base..cuts.len() - keep);
    }
    cuts
}

/// Solution of the moving-horizon program.
#[derive(Debug, Clone, PartialEq)]
pub struct MheEstimate {
    /// Forward-propagated terminal state.
    pub x_hat: Vector,
    /// Cost evaluated with exact norms at the returned decision.
    pub cost: f64,
    pub x_start: Vector,
    pub w_hat: Vec<Vector>,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub max_violation: f64,
    pub warm: MheWarmStart,
}

/// Norm epigraphs are linearized by supporting hyperplanes `t ≥ aᵀz`
/// for unit directions `a`, refined by cutting planes.
struct MheProgram<'a> {
    model: &'a SystemModel,
    cert: &'a Certificate,
    data: Vec<&'a MheEntry>,
    anchor: &'a Vector,
    anchor_bound: f64,
    w_cuts: Vec<Vec<Vector>>,
    y_cuts: Vec<Vec<Vector>>,
    x_cuts: Vec<Vector>,
    start: Vector,
}

struct Layout {
    n_x: usize,
    n_w: usize,
    m: usize,
}

impl Layout {
    fn w(&self, j: usize) -> usize {
        self.n_x + j * self.n_w
    }
    fn t(&self, j: usize) -> usize {
        self.n_x + self.m * self.n_w + j
    }
    fn v(&self, j: usize) -> usize {
        self.n_x + self.m * self.n_w + self.m + j
    }
    fn tau(&self) -> usize {
        self.n_x + self.m * self.n_w + 2 * self.m
    }
    fn len(&self) -> usize {
        self.tau() + 1
    }
}

/// States `ξ_0..ξ_M`, residuals `r_j` and sensitivities of the forward simulation.
struct Rollout {
    states: Vec<Vector>,
    residuals: Vec<Vector>,
    /// `∂r_j/∂z` restricted to the state and disturbance variables.
    residual_jac: Vec<Matrix>,
}

impl<'a> MheProgram<'a> {
    fn layout(&self) -> Layout {
        Layout {
            n_x: self.model.n_x(),
            n_w: self.model.n_w(),
            m: self.data.len(),
        }
    }

    fn weight(&self, j: usize) -> f64 {
        // chronological index j has backward index M − j
        math::powi(self.cert.rho_d, self.data.len() - 1 - j)
    }

    fn rollout(&self, z: &Vector, derivatives: bool) -> Result<Rollout> {
        let lay = self.layout();
        let n_x = lay.n_x;
        let n_w = lay.n_w;
        let cols = n_x + lay.m * n_w;
        let mut xi = z.rows(0, n_x).into_owned();
        let mut sens = Matrix::zeros(n_x, cols);
        if derivatives {
            sens.view_mut((0, 0), (n_x, n_x)).fill_with_identity();
        }
        let mut states = Vec::with_capacity(lay.m + 1);
        let mut residuals = Vec::with_capacity(lay.m);
        let mut residual_jac = Vec::with_capacity(lay.m);
        for (j, entry) in self.data.iter().enumerate() {
            let w = z.rows(lay.w(j), n_w).into_owned();
            let r = self.model.output(&xi, &entry.u) + self.model.f() * &w - &entry.y;
            let (next, a) = if derivatives {
                let (c, _) = self.model.output_jacobians(&xi, &entry.u);
                let mut jr = &c * &sens;
                jr.view_mut((0, lay.w(j)), (r.len(), n_w)).copy_from(self.model.f());
                residual_jac.push(jr);
                let (next, a, _) = self.model.step_with_jacobians(&xi, &entry.u)?;
                (next, Some(a))
            } else {
                (self.model.step(&xi, &entry.u)?, None)
            };
            residuals.push(r);
            states.push(xi.clone());
            xi = next + self.model.e() * &w;
            if let Some(a) = a {
                sens = &a * &sens;
                sens.view_mut((0, lay.w(j)), (n_x, n_w)).copy_from(self.model.e());
            }
        }
        states.push(xi);
        Ok(Rollout {
            states,
            residuals,
            residual_jac,
        })
    }

    /// Cost with exact norms.
    fn exact_cost(&self, z: &Vector, roll: &Rollout) -> f64 {
        let lay = self.layout();
        let c = self.cert;
        let w_bar = self.model.w_bar();
        let mut j_cost = 0.0;
        for j in 0..lay.m {
            let w = z.rows(lay.w(j), lay.n_w);
            j_cost += self.weight(j) * (c.sig_dw * (w_bar + w.norm()) + c.sig_dy * roll.residuals[j].norm());
        }
        let tail = math::powi(c.rho_d, lay.m);
        let dx = z.rows(0, lay.n_x) - self.anchor;
        j_cost + tail * self.anchor_bound + tail * c.sig_d * dx.norm()
    }

    fn n_cuts(&self) -> usize {
        self.w_cuts.iter().map(Vec::len).sum::<usize>() + self.y_cuts.iter().map(Vec::len).sum::<usize>() + self.x_cuts.len()
    }
}

impl NlpProblem for MheProgram<'_> {
    fn n_vars(&self) -> usize {
        self.layout().len()
    }

    fn n_ineq(&self) -> usize {
        self.n_cuts()
    }

    fn bounds(&self) -> (Vector, Vector) {
        let lay = self.layout();
        let n = lay.len();
        let mut lo = Vector::from_element(n, f64::NEG_INFINITY);
        let mut hi = Vector::from_element(n, f64::INFINITY);
        let b = self.model.w_inf_bound();
        for j in 0..lay.m {
            for i in 0..lay.n_w {
                lo[lay.w(j) + i] = -b;
                hi[lay.w(j) + i] = b;
            }
        }
        (lo, hi)
    }

    fn initial_guess(&self) -> Vector {
        self.start.clone()
    }

    fn evaluate(&self, z: &Vector) -> Result<Evaluation> {
        let lay = self.layout();
        let n = lay.len();
        let c = self.cert;
        let w_bar = self.model.w_bar();
        let roll = self.rollout(z, true)?;

        let mut gradient = Vector::zeros(n);
        let mut objective = 0.0;
        for j in 0..lay.m {
            let wt = self.weight(j);
            objective += wt * (c.sig_dw * (w_bar + z[lay.t(j)]) + c.sig_dy * z[lay.v(j)]);
            gradient[lay.t(j)] = wt * c.sig_dw;
            gradient[lay.v(j)] = wt * c.sig_dy;
        }
        let tail = math::powi(c.rho_d, lay.m);
        objective += tail * self.anchor_bound + tail * c.sig_d * z[lay.tau()];
        gradient[lay.tau()] = tail * c.sig_d;

        let m = self.n_cuts();
        let mut ineq = Vector::zeros(m);
        let mut jac = Matrix::zeros(m, n);
        let mut row = 0;
        for j in 0..lay.m {
            for a in &self.w_cuts[j] {
                let w = z.rows(lay.w(j), lay.n_w);
                ineq[row] = z[lay.t(j)] - a.dot(&w);
                jac[(row, lay.t(j))] = 1.0;
                for i in 0..lay.n_w {
                    jac[(row, lay.w(j) + i)] = -a[i];
                }
                row += 1;
            }
        }
        let cols = lay.n_x + lay.m * lay.n_w;
        for j in 0..lay.m {
            for a in &self.y_cuts[j] {
                ineq[row] = z[lay.v(j)] - a.dot(&roll.residuals[j]);
                jac[(row, lay.v(j))] = 1.0;
                let g = a.transpose() * &roll.residual_jac[j];
                for col in 0..cols {
                    jac[(row, col)] = -g[col];
                }
                row += 1;
            }
        }
        let dx = z.rows(0, lay.n_x) - self.anchor;
        for a in &self.x_cuts {
            ineq[row] = z[lay.tau()] - a.dot(&dx);
            jac[(row, lay.tau())] = 1.0;
            for i in 0..lay.n_x {
                jac[(row, i)] = -a[i];
            }
            row += 1;
        }
        Ok(Evaluation {
            objective,
            gradient,
            eq: Vector::zeros(0),
            eq_jacobian: Matrix::zeros(0, n),
            ineq,
            ineq_jacobian: jac,
        })
    }
}

fn axis_cuts(dim: usize) -> Vec<Vector> {
    let mut out = Vec::with_capacity(2 * dim);
    for i in 0..dim {
        for s in [1.0, -1.0] {
            let mut a = Vector::zeros(dim);
            a[i] = s;
            out.push(a);
        }
    }
    out
}

/// Solve the moving-horizon program on the buffered data.
///
/// Decision variables are the initial state of the window and the
/// disturbance sequence, which is kept inside the disturbance box.
pub fn mhe_solve(
    model: &SystemModel,
    cert: &Certificate,
    buf: &MheBuffer,
    opts: &MheOptions,
    warm: Option<&MheWarmStart>,
) -> Result<MheEstimate> {
    let (anchor, anchor_bound) = buf.anchor().ok_or(Error::MheUnavailable)?;
    let m = buf.len();
    let n_x = model.n_x();
    let n_w = model.n_w();
    let n_y = model.n_y();
    let mut program = MheProgram {
        model,
        cert,
        data: buf.entries().collect(),
        anchor,
        anchor_bound,
        w_cuts: vec![axis_cuts(n_w); m],
        y_cuts: vec![axis_cuts(n_y); m],
        x_cuts: axis_cuts(n_x),
        start: Vector::zeros(0),
    };
    let lay = program.layout();
    let mut z = Vector::zeros(lay.len());
    z.rows_mut(0, n_x).copy_from(anchor);
    if let Some(w) = warm {
        for j in 0..m {
            if let Some(c) = w.w_cuts.get(j) {
                program.w_cuts[j] = c.clone();
            }
            if let Some(c) = w.y_cuts.get(j) {
                program.y_cuts[j] = c.clone();
            }
            if let Some(wh) = w.w_hat.get(j) {
                let b = model.w_inf_bound();
                z.rows_mut(lay.w(j), n_w).copy_from(&wh.map(|v| v.clamp(-b, b)));
            }
        }
        if !w.x_cuts.is_empty() {
            program.x_cuts = w.x_cuts.clone();
        }
        if let Some(x0) = w.states.first() {
            z.rows_mut(0, n_x).copy_from(x0);
        }
    }
    let mut iterations = 0;
    let mut last = None;
    for _ in 0..opts.max_cut_rounds.max(1) {
        // lift epigraph variables onto the exact norms so the start is feasible
        let roll = program.rollout(&z, false)?;
        for j in 0..m {
            z[lay.t(j)] = z.rows(lay.w(j), n_w).norm();
            z[lay.v(j)] = roll.residuals[j].norm();
        }
        z[lay.tau()] = (z.rows(0, n_x) - anchor).norm();
        program.start = z.clone();
        let r = nlp::solve(&program, &opts.nlp)?;
        iterations += r.iterations;
        if r.status != NlpStatus::Optimal {
            return Err(Error::MheUnavailable);
        }
        z = r.x.clone();
        last = Some(r);

        let roll = program.rollout(&z, false)?;
        let mut converged = true;
        let gap_tol = opts.cut_tol;
        let mut add = |cuts: &mut Vec<Vector>, v: Vector, t: f64| {
            let nv = v.norm();
            if nv - t > gap_tol {
                converged = false;
                cuts.push(v / nv);
            }
        };
        for j in 0..m {
            add(&mut program.w_cuts[j], z.rows(lay.w(j), n_w).into_owned(), z[lay.t(j)]);
            add(&mut program.y_cuts[j], roll.residuals[j].clone(), z[lay.v(j)]);
        }
        add(&mut program.x_cuts, z.rows(0, n_x) - anchor, z[lay.tau()]);
        if converged {
            break;
        }
    }
    let r = last.ok_or(Error::MheUnavailable)?;
    let roll = program.rollout(&z, false)?;
    let cost = program.exact_cost(&z, &roll);
    let keep = 8;
    let warm = MheWarmStart {
        w_cuts: program.w_cuts.into_iter().map(|c| trim_cuts(c, n_w, keep)).collect(),
        y_cuts: program.y_cuts.into_iter().map(|c| trim_cuts(c, n_y, keep)).collect(),
        x_cuts: trim_cuts(program.x_cuts, n_x, keep),
        states: roll.states.clone(),
        w_hat: (0..m).map(|j| z.rows(lay.w(j), n_w).into_owned()).collect(),
    };
    Ok(MheEstimate {
        warm,
        x_hat: roll.states[m].clone(),
        cost,
        x_start: z.rows(0, n_x).into_owned(),
        w_hat: (0..m).map(|j| z.rows(lay.w(j), n_w).into_owned()).collect(),
        iterations,
        kkt_residual: r.kkt_residual,
        max_violation: r.max_violation,
    })
}

/// Runtime robustness test for an MHE candidate.
///
/// `prior_bounds[i]` is the selected bound `ē_{k−i}`; the candidate for
/// step `k+1` must satisfy the correction bound
/// `‖x̂_MHE − f(x̂_k,u_k)‖ ≤ σ_{o,L} ē_k + σ_{o,L,w} w̄` and stay below the
/// prediction envelope `bound_predict(ē_{k−i}, i+1)` for every prior bound.
pub fn mhe_validity_check(cert: &Certificate, e_mhe: f64, correction_norm: f64, prior_bounds: &[f64], w_bar: f64) -> bool {
    let Some(&e_k) = prior_bounds.first() else {
        return false;
    };
    if !(correction_norm <= cert.sig_ol * e_k + cert.sig_olw * w_bar) {
        return false;
    }
    prior_bounds
        .iter()
        .enumerate()
        .all(|(i, &e)| e_mhe <= cert.bound_predict(e, i + 1, w_bar))
}

/// A candidate estimate with its bound.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub bound: f64,
    pub x_hat: Vector,
    pub source: EstimateSource,
}

/// Pick the smallest bound; MHE wins ties.
pub fn select_estimate(candidates: &[Candidate], k: usize) -> Result<EstimateBundle> {
    let mut best: Option<&Candidate> = None;
    for c in candidates.iter().filter(|c| c.bound >= 0.0 && c.bound.is_finite()) {
        best = match best {
            None => Some(c),
            Some(b) if c.bound < b.bound => Some(c),
            Some(b) if c.bound == b.bound && c.source == EstimateSource::Mhe => Some(c),
            keep => keep,
        };
    }
    let b = best.ok_or(Error::EstimationFailure)?;
    Ok(EstimateBundle {
        x_hat: b.x_hat.clone(),
        e_bar: b.bound,
        source: b.source,
        k,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObserverConfig {
    pub horizon: usize,
    pub mhe_enabled: bool,
    pub mhe: MheOptions,
}

impl Default for ObserverConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            mhe_enabled: true,
            mhe: MheOptions::default(),
        }
    }
}

/// What happened to the MHE candidate in the last update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MheOutcome {
    Disabled,
    Unavailable,
    Rejected { cost: f64 },
    Accepted { cost: f64 },
}

/// Diagnostics of one observer update.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateReport {
    pub offline: f64,
    pub online: f64,
    pub mhe: MheOutcome,
    pub mhe_iterations: usize,
    pub mhe_kkt: Option<(f64, f64)>,
}

/// Sequential estimator state.
#[derive(Debug, Clone)]
pub struct Observer {
    model: Arc<SystemModel>,
    cert: Arc<Certificate>,
    config: ObserverConfig,
    current: EstimateBundle,
    buffer: MheBuffer,
    /// Selected bounds, newest first.
    bounds: VecDeque<f64>,
    warm: Option<MheWarmStart>,
}

impl Observer {
    pub fn new(model: Arc<SystemModel>, cert: Arc<Certificate>, config: ObserverConfig, x_hat0: Vector, e_bar0: f64) -> Result<Self> {
        if x_hat0.len() != model.n_x() {
            return Err(Error::Dimension("initial estimate has wrong length".into()));
        }
        if !(e_bar0 >= 0.0) {
            return Err(Error::Scenario("initial error bound must be nonnegative".into()));
        }
        Ok(Self {
            buffer: MheBuffer::new(config.horizon),
            bounds: VecDeque::from(vec![e_bar0]),
            warm: None,
            current: EstimateBundle {
                x_hat: x_hat0,
                e_bar: e_bar0,
                source: EstimateSource::Luenberger,
                k: 0,
            },
            model,
            cert,
            config,
        })
    }

    pub fn current(&self) -> &EstimateBundle {
        &self.current
    }

    pub fn buffer(&self) -> &MheBuffer {
        &self.buffer
    }

    /// Consume `(u_k, y_k)` and produce the bundle for step `k+1`.
    pub fn advance(&mut self, u: &Vector, y: &Vector) -> Result<(EstimateBundle, UpdateReport)> {
        let model = self.model.as_ref();
        let cert = self.cert.as_ref();
        let w_bar = model.w_bar();
        let prev = self.current.clone();

        let f_prev = model.step(&prev.x_hat, u)?;
        let innovation = y - model.output(&prev.x_hat, u);
        let correction = &cert.l * &innovation;
        let x_lu = &f_prev + &correction;
        let offline = cert.bound_update_offline(prev.e_bar, w_bar);
        let w_hat = model.disturbance_preimage(&correction)?;
        let online = cert.bound_update_online(prev.e_bar, w_bar, w_hat.norm(), innovation.norm());

        let slides = self.buffer.len() == self.buffer.horizon();
        self.buffer.push(MheEntry {
            u: u.clone(),
            y: y.clone(),
            anchor: prev.x_hat.clone(),
            anchor_bound: prev.e_bar,
        });

        let mut candidates = vec![
            Candidate {
                bound: offline,
                x_hat: x_lu.clone(),
                source: EstimateSource::Luenberger,
            },
            Candidate {
                bound: online,
                x_hat: x_lu,
                source: EstimateSource::Luenberger,
            },
        ];
        let mut report = UpdateReport {
            offline,
            online,
            mhe: MheOutcome::Disabled,
            mhe_iterations: 0,
            mhe_kkt: None,
        };
        if self.config.mhe_enabled && self.config.horizon > 0 {
            if slides {
                if let Some(w) = self.warm.as_mut() {
                    w.shift();
                }
            }
            let solved = mhe_solve(model, cert, &self.buffer, &self.config.mhe, self.warm.as_ref());
            self.warm = solved.as_ref().ok().map(|e| e.warm.clone());
            report.mhe = match solved {
                Ok(est) => {
                    report.mhe_iterations = est.iterations;
                    report.mhe_kkt = Some((est.kkt_residual, est.max_violation));
                    let correction_norm = (&est.x_hat - &f_prev).norm();
                    let priors: Vec<f64> = self.bounds.iter().copied().collect();
                    if mhe_validity_check(cert, est.cost, correction_norm, &priors, w_bar) {
                        candidates.push(Candidate {
                            bound: est.cost,
                            x_hat: est.x_hat,
                            source: EstimateSource::Mhe,
                        });
                        MheOutcome::Accepted { cost: est.cost }
                    } else {
                        MheOutcome::Rejected { cost: est.cost }
                    }
                }
                Err(Error::MheUnavailable) => MheOutcome::Unavailable,
                Err(e) => return Err(e),
            };
        }
        let next = select_estimate(&candidates, prev.k + 1)?;
        self.bounds.push_front(next.e_bar);
        self.bounds.truncate(self.config.horizon.max(1));
        self.current = next.clone();
        Ok((next, report))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lyapunov::CertificateInputs;
    use crate::model::{LinearOutput, MassSpringDamperParams, Transition};

    fn v(s: &[f64]) -> Vector {
        Vector::from_column_slice(s)
    }

    fn cand(bound: f64, source: EstimateSource) -> Candidate {
        Candidate {
            bound,
            x_hat: v(&[bound]),
            source,
        }
    }

    #[test]
    fn selection_examples() {
        let lu = EstimateSource::Luenberger;
        let mhe = EstimateSource::Mhe;
        let b = select_estimate(&[cand(0.10, lu), cand(0.08, lu), cand(0.12, mhe)], 3).unwrap();
        assert_eq!((b.e_bar, b.source), (0.08, lu));
        let b = select_estimate(&[cand(0.10, lu), cand(0.08, lu), cand(0.08, mhe)], 3).unwrap();
        assert_eq!((b.e_bar, b.source), (0.08, mhe));
        let b = select_estimate(&[cand(0.10, lu), cand(0.08, lu)], 3).unwrap();
        assert_eq!((b.e_bar, b.source), (0.08, lu));
        assert_eq!(select_estimate(&[], 0), Err(Error::EstimationFailure));
    }

    fn msd_cert() -> (SystemModel, Certificate) {
        let m = SystemModel::mass_spring_damper(MassSpringDamperParams::default(), 0.25, 0.01).unwrap();
        let c = CertificateInputs::mass_spring_damper_golden().build(&m).unwrap();
        (m, c)
    }

    #[test]
    fn validity_check_examples() {
        let (m, c) = msd_cert();
        let w = m.w_bar();
        assert!(mhe_validity_check(&c, 0.0, 0.0, &[0.0], w));
        let edge = c.bound_predict(0.05, 1, w);
        assert!(mhe_validity_check(&c, edge, 0.0, &[0.05], w));
        assert!(!mhe_validity_check(&c, edge + 1e-12, 0.0, &[0.05], w));
        let corr_edge = c.sig_ol * 0.05 + c.sig_olw * w;
        assert!(mhe_validity_check(&c, 0.0, corr_edge, &[0.05], w));
        assert!(!mhe_validity_check(&c, 0.0, corr_edge * (1.0 + 1e-9), &[0.05], w));
    }

    #[test]
    fn luenberger_examples() {
        let (m, c) = msd_cert();
        let x = v(&[0.2, -0.3]);
        let u = v(&[1.0]);
        let f = m.step(&x, &u).unwrap();
        assert_eq!(luenberger_update(&m, &c, &x, &u, &m.output(&x, &u)).unwrap(), f);
        let y1 = v(&[0.4]);
        let y2 = v(&[-0.1]);
        let mid = (&y1 + &y2) * 0.5;
        let a = luenberger_update(&m, &c, &x, &u, &y1).unwrap();
        let b = luenberger_update(&m, &c, &x, &u, &y2).unwrap();
        let cm = luenberger_update(&m, &c, &x, &u, &mid).unwrap();
        assert!((a + b - cm * 2.0).amax() < 1e-14);
        let mut zero_l = c.clone();
        zero_l.l = Matrix::zeros(2, 1);
        assert_eq!(luenberger_update(&m, &zero_l, &x, &u, &y1).unwrap(), f);
    }

    fn consistent_buffer(m: &SystemModel, len: usize, anchor_bound: f64) -> MheBuffer {
        let mut buf = MheBuffer::new(len);
        let mut x = v(&[0.5, 0.3]);
        for k in 0..len {
            let u = v(&[libm::sin(k as f64)]);
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

    #[test]
    fn mhe_consistent_data_hits_analytic_optimum() {
        let (m, c) = msd_cert();
        let w = m.w_bar();
        for len in [1usize, 5, 10] {
            let buf = consistent_buffer(&m, len, 0.07);
            let est = mhe_solve(&m, &c, &buf, &MheOptions::default(), None).unwrap();
            let p = math::powi(c.rho_d, len);
            let analytic = c.sig_dw * w * (1.0 - p) / (1.0 - c.rho_d) + p * 0.07;
            assert!((est.cost - analytic).abs() < 1e-6, "len {len}: {} vs {analytic}", est.cost);
        }
    }

    #[test]
    fn mhe_perfect_data_recovers_state() {
        let m = SystemModel::mass_spring_damper(MassSpringDamperParams::default(), 0.25, 0.0).unwrap();
        let c = CertificateInputs::mass_spring_damper_golden().build(&m).unwrap();
        let buf = consistent_buffer(&m, 4, 0.0);
        let est = mhe_solve(&m, &c, &buf, &MheOptions::default(), None).unwrap();
        let mut x = buf.anchor().unwrap().0.clone();
        for e in buf.entries() {
            x = m.step(&x, &e.u).unwrap();
        }
        assert!(est.cost.abs() < 1e-9);
        assert!((est.x_hat - x).amax() < 1e-9);
    }

    #[test]
    fn mhe_scalar_matches_grid_search() {
        // x⁺ = 0.9x + w₁, y = x + w₂, one measurement
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
        let mut buf = MheBuffer::new(1);
        buf.push(MheEntry {
            u: v(&[0.0]),
            y: v(&[0.43]),
            anchor: v(&[0.3]),
            anchor_bound: 0.2,
        });
        let est = mhe_solve(&m, &c, &buf, &MheOptions::default(), None).unwrap();
        // the output residual depends on (x₋₁, w₂) and the cost on |w| = ‖(w₁, w₂)‖;
        // w₁ only enters the propagated state, so the optimum has w₁ = 0
        let w_bar = m.w_bar();
        let mut best = f64::INFINITY;
        let steps = 2000;
        for i in 0..=steps {
            let x = 0.0 + 0.6 * i as f64 / steps as f64;
            for k in 0..=100 {
                let w2 = -0.05 + 0.1 * k as f64 / 100.0;
                let cost = c.sig_dw * (w_bar + libm::fabs(w2))
                    + c.sig_dy * libm::fabs(x + w2 - 0.43)
                    + 0.8 * 0.2
                    + 0.8 * 1.5 * libm::fabs(x - 0.3);
                best = best.min(cost);
            }
        }
        assert!((est.cost - best).abs() < 1e-3, "{} vs {best}", est.cost);
    }

    #[test]
    fn buffer_keeps_last_m() {
        let mut b = MheBuffer::new(3);
        for k in 0..5 {
            b.push(MheEntry {
                u: v(&[k as f64]),
                y: v(&[0.0]),
                anchor: v(&[k as f64]),
                anchor_bound: k as f64,
            });
        }
        assert_eq!(b.len(), 3);
        assert_eq!(b.anchor().unwrap().1, 2.0);
    }
}
