//! Grid verification of the incremental Lyapunov inequalities.
//!
//! Pairs `(x, x̃)` are formed from a grid point and a neighbour at a set of
//! index strides per dimension, so the dynamics can be precomputed once per
//! grid point and input. Disturbances are taken at the box corners (and
//! zero); for inequalities that involve two disturbances only their
//! difference matters, because the disturbance enters affinely.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use super::Certificate;
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::math;
use crate::model::{ConstraintSet, FeedbackPolicy, SystemModel};

/// Sampling resolution of the verifier.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub state_lo: Vec<f64>,
    pub state_hi: Vec<f64>,
    pub points_per_dim: usize,
    pub input_lo: Vec<f64>,
    pub input_hi: Vec<f64>,
    pub input_points: usize,
    /// Index strides forming `(x, x̃)` pairs; the product over dimensions of `{0, ±s}`.
    pub pair_strides: Vec<usize>,
    /// Strides for the nominal-state offset in the tube and CLF checks.
    pub tube_strides: Vec<usize>,
    /// Axis strides for the true-state offset in the tube check.
    pub estimate_strides: Vec<usize>,
    pub tolerance: f64,
}

impl GridSpec {
    pub fn new(state_lo: Vec<f64>, state_hi: Vec<f64>, input_lo: Vec<f64>, input_hi: Vec<f64>) -> Self {
        Self {
            state_lo,
            state_hi,
            points_per_dim: 50,
            input_lo,
            input_hi,
            input_points: 11,
            pair_strides: vec![1, 3, 10, 25, 49],
            tube_strides: vec![2, 10],
            estimate_strides: vec![1, 5],
            tolerance: 1e-9,
        }
    }

    /// Grid over the bounding box of the axis-aligned rows of `z`.
    pub fn from_constraints(z: &ConstraintSet, n_x: usize, n_u: usize) -> Result<Self> {
        let mut lo = vec![f64::NEG_INFINITY; n_x + n_u];
        let mut hi = vec![f64::INFINITY; n_x + n_u];
        for row in z.rows() {
            let coeffs: Vec<f64> = row.c_x.iter().chain(row.c_u.iter()).copied().collect();
            let nonzero: Vec<usize> = (0..coeffs.len()).filter(|&i| coeffs[i] != 0.0).collect();
            if let [i] = nonzero[..] {
                let bound = row.b / coeffs[i];
                if coeffs[i] > 0.0 {
                    hi[i] = hi[i].min(bound);
                } else {
                    lo[i] = lo[i].max(bound);
                }
            }
        }
        if lo.iter().chain(hi.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Model("constraint set has no bounded box for gridding".into()));
        }
        Ok(Self::new(
            lo[..n_x].to_vec(),
            hi[..n_x].to_vec(),
            lo[n_x..].to_vec(),
            hi[n_x..].to_vec(),
        ))
    }

    fn axis(lo: f64, hi: f64, points: usize, i: usize) -> f64 {
        if points <= 1 {
            0.5 * (lo + hi)
        } else {
            lo + (hi - lo) * (i as f64) / ((points - 1) as f64)
        }
    }
}

/// Worst sample of one inequality family.
#[derive(Debug, Clone, PartialEq)]
pub struct InequalityReport {
    pub name: &'static str,
    pub min_slack: f64,
    pub samples: u64,
    /// Named coordinates of the arg-worst sample.
    pub worst: Vec<(&'static str, Vec<f64>)>,
}

/// Outcome of a verification run.
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub checks: Vec<InequalityReport>,
    pub tolerance: f64,
}

impl VerificationReport {
    pub fn min_slack(&self) -> f64 {
        self.checks.iter().map(|c| c.min_slack).fold(f64::INFINITY, f64::min)
    }

    pub fn worst(&self) -> Option<&InequalityReport> {
        self.checks
            .iter()
            .min_by(|a, b| a.min_slack.partial_cmp(&b.min_slack).unwrap_or(core::cmp::Ordering::Equal))
    }

    pub fn passed(&self) -> bool {
        self.min_slack() >= -self.tolerance
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<22} {:>14} {:>12}", "inequality", "min slack", "samples")?;
        for c in &self.checks {
            writeln!(f, "{:<22} {:>14.6e} {:>12}", c.name, c.min_slack, c.samples)?;
        }
        if let Some(w) = self.worst() {
            let loc: Vec<String> = w.worst.iter().map(|(n, v)| format!("{n}={v:?}")).collect();
            writeln!(f, "worst: {} at {}", w.name, loc.join(" "))?;
        }
        write!(
            f,
            "result: {} (min slack {:.6e}, tolerance {:e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.min_slack(),
            self.tolerance
        )
    }
}

struct Tracker {
    report: InequalityReport,
}

impl Tracker {
    fn new(name: &'static str) -> Self {
        Self {
            report: InequalityReport {
                name,
                min_slack: f64::INFINITY,
                samples: 0,
                worst: Vec::new(),
            },
        }
    }

    #[inline]
    fn record<F>(&mut self, slack: f64, location: F)
    where
        F: FnOnce() -> Vec<(&'static str, Vec<f64>)>,
    {
        self.report.samples += 1;
        if slack < self.report.min_slack || slack.is_nan() {
            self.report.min_slack = if slack.is_nan() { f64::NEG_INFINITY } else { slack };
            self.report.worst = location();
        }
    }
}

/// `sqrt(vᵀPv)` for a row-major `n×n` matrix.
#[inline]
fn pnorm(p: &[f64], v: &[f64]) -> f64 {
    let n = v.len();
    let mut acc = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += p[i * n + j] * v[j];
        }
        acc += v[i] * row;
    }
    math::sqrt(acc.max(0.0))
}

#[inline]
fn norm2(v: &[f64]) -> f64 {
    math::sqrt(v.iter().map(|a| a * a).sum())
}

fn row_major(m: &crate::linalg::Matrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

#[inline]
fn matvec(m: &[f64], cols: usize, v: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for j in 0..cols {
            acc += m[i * cols + j] * v[j];
        }
        *o = acc;
    }
}

/// Cartesian product of `{0, ±s : s ∈ strides}` over `n` dimensions.
fn offset_stencil(n: usize, strides: &[usize]) -> Vec<Vec<isize>> {
    let mut values = vec![0isize];
    for &s in strides {
        values.push(s as isize);
        values.push(-(s as isize));
    }
    let mut out = vec![Vec::new()];
    for _ in 0..n {
        let mut next = Vec::with_capacity(out.len() * values.len());
        for prefix in &out {
            for &v in &values {
                let mut p = prefix.clone();
                p.push(v);
                next.push(p);
            }
        }
        out = next;
    }
    out
}

/// `{0} ∪ {±s e_i}`.
fn axis_stencil(n: usize, strides: &[usize]) -> Vec<Vec<isize>> {
    let mut out = vec![vec![0isize; n]];
    for i in 0..n {
        for &s in strides {
            for sign in [1isize, -1] {
                let mut o = vec![0isize; n];
                o[i] = sign * s as isize;
                out.push(o);
            }
        }
    }
    out
}

fn dedup(vectors: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        if !out.iter().any(|o| o == &v) {
            out.push(v);
        }
    }
    out
}

struct Grid {
    n: usize,
    points: usize,
    coords: Vec<Vec<f64>>,
    index: Vec<Vec<usize>>,
}

impl Grid {
    fn new(lo: &[f64], hi: &[f64], points: usize) -> Self {
        let n = lo.len();
        let total = points.pow(n as u32);
        let mut coords = Vec::with_capacity(total);
        let mut index = Vec::with_capacity(total);
        for flat in 0..total {
            let mut rem = flat;
            let mut idx = vec![0usize; n];
            for d in (0..n).rev() {
                idx[d] = rem % points;
                rem /= points;
            }
            coords.push((0..n).map(|d| GridSpec::axis(lo[d], hi[d], points, idx[d])).collect());
            index.push(idx);
        }
        Self {
            n,
            points,
            coords,
            index,
        }
    }

    fn shift(&self, flat: usize, offset: &[isize]) -> Option<usize> {
        let mut out = 0usize;
        for d in 0..self.n {
            let i = self.index[flat][d] as isize + offset[d];
            if i < 0 || i >= self.points as isize {
                return None;
            }
            out = out * self.points + i as usize;
        }
        Some(out)
    }
}

/// Check the decrease and bounding inequalities of `cert` on a grid.
///
/// Families checked: i-IOSS decrease of `V_o` (`ioss_decrease`), observer
/// contraction and correction bounds (`observer_contraction`,
/// `observer_correction`), CLF decrease of `V_s` under `policy`
/// (`clf_decrease`), the feedback slope (`feedback_bound`), the cross
/// propagation of the tube through the observer (`tube_propagation`) and
/// the continuity slope of `V_o` (`continuity`).
pub fn verify_certificate_grid(
    cert: &Certificate,
    model: &SystemModel,
    policy: &FeedbackPolicy,
    grid: &GridSpec,
) -> Result<VerificationReport> {
    let n_x = model.n_x();
    let n_u = model.n_u();
    let n_y = model.n_y();
    if grid.state_lo.len() != n_x || grid.state_hi.len() != n_x {
        return Err(Error::Dimension(format!("grid state box must have {n_x} entries")));
    }
    if grid.input_lo.len() != n_u || grid.input_hi.len() != n_u {
        return Err(Error::Dimension(format!("grid input box must have {n_u} entries")));
    }
    if policy.k.nrows() != n_u || policy.k.ncols() != n_x {
        return Err(Error::Dimension(format!("policy gain must be {n_u}x{n_x}")));
    }

    let states = Grid::new(&grid.state_lo, &grid.state_hi, grid.points_per_dim);
    let inputs = Grid::new(&grid.input_lo, &grid.input_hi, grid.input_points);
    let n_g = states.coords.len();
    let n_in = inputs.coords.len();

    // f and h on every (grid state, grid input)
    let mut f_grid = vec![0.0; n_g * n_in * n_x];
    let mut h_grid = vec![0.0; n_g * n_in * n_y];
    for g in 0..n_g {
        let x = Vector::from_column_slice(&states.coords[g]);
        for iu in 0..n_in {
            let u = Vector::from_column_slice(&inputs.coords[iu]);
            let fx = model.step(&x, &u)?;
            let hx = model.output(&x, &u);
            let at = g * n_in + iu;
            f_grid[at * n_x..(at + 1) * n_x].copy_from_slice(fx.as_slice());
            h_grid[at * n_y..(at + 1) * n_y].copy_from_slice(hx.as_slice());
        }
    }
    let f_at = |g: usize, iu: usize| &f_grid[(g * n_in + iu) * n_x..(g * n_in + iu + 1) * n_x];
    let h_at = |g: usize, iu: usize| &h_grid[(g * n_in + iu) * n_y..(g * n_in + iu + 1) * n_y];

    let p_o = row_major(cert.v_o.matrix());
    let p_s = row_major(cert.v_s.matrix());
    let l = row_major(&cert.l);
    let e = row_major(model.e());
    let fm = row_major(model.f());
    let n_w = model.n_w();
    let w_bar = model.w_bar();

    let mut single: Vec<Vec<f64>> = vec![vec![0.0; n_w]];
    single.extend(model.disturbance_corners().into_iter().map(|c| c.as_slice().to_vec()));
    let mut diffs = Vec::new();
    for a in &single {
        for b in &single {
            diffs.push(a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<f64>>());
        }
    }
    let diffs = dedup(diffs);
    let map = |m: &[f64], rows: usize, w: &[f64]| {
        let mut out = vec![0.0; rows];
        matvec(m, n_w, w, &mut out);
        out
    };
    let lmul = |v: &[f64]| {
        let mut out = vec![0.0; n_x];
        matvec(&l, n_y, v, &mut out);
        out
    };

    let pair_offsets = offset_stencil(n_x, &grid.pair_strides);
    let tube_offsets = offset_stencil(n_x, &grid.tube_strides);
    let estimate_offsets = axis_stencil(n_x, &grid.estimate_strides);
    let step: Vec<f64> = (0..n_x)
        .map(|d| {
            if grid.points_per_dim > 1 {
                (grid.state_hi[d] - grid.state_lo[d]) / ((grid.points_per_dim - 1) as f64)
            } else {
                0.0
            }
        })
        .collect();
    let physical = |o: &[isize]| -> Vec<f64> { o.iter().zip(&step).map(|(&i, s)| i as f64 * s).collect() };
    let diff_of = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x - y).collect() };
    let loc2 = |x: &[f64], xt: &[f64], u: &[f64], w: &[f64]| {
        vec![("x", x.to_vec()), ("x_tilde", xt.to_vec()), ("u", u.to_vec()), ("w", w.to_vec())]
    };

    let mut checks = Vec::new();

    // i-IOSS decrease, observer contraction and correction on (x, x̃) pairs
    {
        let mut ioss = Tracker::new("ioss_decrease");
        let mut contraction = Tracker::new("observer_contraction");
        let mut correction = Tracker::new("observer_correction");
        let ioss_w: Vec<(Vec<f64>, Vec<f64>, f64, &Vec<f64>)> = diffs
            .iter()
            .map(|dw| (map(&e, n_x, dw), map(&fm, n_y, dw), norm2(dw), dw))
            .collect();
        // contraction: x̂⁺ − x⁺ = Δf + L(h(x) − h(x̂)) + (L F − E) w
        let obs_w: Vec<(Vec<f64>, Vec<f64>, f64, &Vec<f64>)> = single
            .iter()
            .map(|w| {
                let fw = map(&fm, n_y, w);
                let lfw = lmul(&fw);
                let ew = map(&e, n_x, w);
                (diff_of(&lfw, &ew), lfw, norm2(w), w)
            })
            .collect();
        let mut a = vec![0.0; n_x];
        let mut b = vec![0.0; n_y];
        for g in 0..n_g {
            for off in &pair_offsets {
                let Some(g2) = states.shift(g, off) else { continue };
                let dx = diff_of(&states.coords[g], &states.coords[g2]);
                let v0 = pnorm(&p_o, &dx);
                for iu in 0..n_in {
                    let df = diff_of(f_at(g, iu), f_at(g2, iu));
                    let dh = diff_of(h_at(g, iu), h_at(g2, iu));
                    for (ew, fw, nw, dw) in &ioss_w {
                        for i in 0..n_x {
                            a[i] = df[i] + ew[i];
                        }
                        for i in 0..n_y {
                            b[i] = dh[i] + fw[i];
                        }
                        let slack = cert.rho_d * v0 + cert.sig_dw * nw + cert.sig_dy * norm2(&b) - pnorm(&p_o, &a);
                        ioss.record(slack, || {
                            loc2(&states.coords[g], &states.coords[g2], &inputs.coords[iu], dw)
                        });
                    }
                    // x̂ = grid point g, x = g2
                    let innov = lmul(&diff_of(h_at(g2, iu), h_at(g, iu)));
                    for (lfe, lfw, nw, w) in &obs_w {
                        for i in 0..n_x {
                            a[i] = df[i] + innov[i] + lfe[i];
                        }
                        let slack = cert.rho_o * v0 + cert.sig_ow * nw - pnorm(&p_o, &a);
                        contraction.record(slack, || {
                            loc2(&states.coords[g], &states.coords[g2], &inputs.coords[iu], w)
                        });
                        for i in 0..n_x {
                            a[i] = innov[i] + lfw[i];
                        }
                        let slack = cert.sig_ol * v0 + cert.sig_olw * nw - norm2(&a);
                        correction.record(slack, || {
                            loc2(&states.coords[g], &states.coords[g2], &inputs.coords[iu], w)
                        });
                    }
                }
            }
        }
        checks.push(ioss.report);
        checks.push(contraction.report);
        checks.push(correction.report);
    }

    // CLF decrease: x⁺ = f(x,u) + E w, x̃⁺ = f(x̃, u + K(x̃ − x)) + E w̃
    {
        let mut clf = Tracker::new("clf_decrease");
        let clf_w: Vec<(Vec<f64>, f64, &Vec<f64>)> = diffs.iter().map(|dw| (map(&e, n_x, dw), norm2(dw), dw)).collect();
        let mut a = vec![0.0; n_x];
        for g in 0..n_g {
            let x = Vector::from_column_slice(&states.coords[g]);
            for off in &tube_offsets {
                let Some(g2) = states.shift(g, off) else { continue };
                let xt = Vector::from_column_slice(&states.coords[g2]);
                let v0 = pnorm(&p_s, &diff_of(x.as_slice(), xt.as_slice()));
                for iu in 0..n_in {
                    let u = Vector::from_column_slice(&inputs.coords[iu]);
                    let ut = policy.apply(&xt, &x, &u);
                    let ft = model.step(&xt, &ut)?;
                    let df = diff_of(f_at(g, iu), ft.as_slice());
                    for (ew, nw, dw) in &clf_w {
                        for i in 0..n_x {
                            a[i] = df[i] + ew[i];
                        }
                        let slack = cert.rho_s * v0 + cert.sig_sw * nw - pnorm(&p_s, &a);
                        clf.record(slack, || loc2(x.as_slice(), xt.as_slice(), u.as_slice(), dw));
                    }
                }
            }
        }
        checks.push(clf.report);
    }

    // ‖π(x̃, x, u) − u‖ ≤ σ_π ‖x − x̃‖
    {
        let mut fb = Tracker::new("feedback_bound");
        let k = row_major(&policy.k);
        let mut ku = vec![0.0; n_u];
        for off in &pair_offsets {
            let d = physical(off);
            matvec(&k, n_x, &d, &mut ku);
            let slack = cert.sig_pi * norm2(&d) - norm2(&ku);
            fb.record(slack, || vec![("x_tilde_minus_x", d.clone())]);
        }
        checks.push(fb.report);
    }

    // V_s(f(x̄,ū), f̂(x̂,u,y)) ≤ ρ_s V_s(x̄,x̂) + σ_{s,o} V_o(x̂,x) + σ_{s,o,w} w̄,
    // u = π(x̂, x̄, ū), y = h(x,u) + F w
    {
        let mut tube = Tracker::new("tube_propagation");
        let fw_set = dedup(single.iter().map(|w| map(&fm, n_y, w)).collect());
        let mut innov = vec![0.0; n_y];
        let mut corr = vec![0.0; n_x];
        let mut a = vec![0.0; n_x];
        for g in 0..n_g {
            let x_hat = Vector::from_column_slice(&states.coords[g]);
            for off_bar in &tube_offsets {
                let Some(gb) = states.shift(g, off_bar) else { continue };
                let x_bar = Vector::from_column_slice(&states.coords[gb]);
                let vs = pnorm(&p_s, &diff_of(x_bar.as_slice(), x_hat.as_slice()));
                for iu in 0..n_in {
                    let u_bar = Vector::from_column_slice(&inputs.coords[iu]);
                    let u = policy.apply(&x_hat, &x_bar, &u_bar);
                    let f_hat = model.step(&x_hat, &u)?;
                    let h_hat = model.output(&x_hat, &u);
                    let x_bar_next = f_at(gb, iu);
                    for off_x in &estimate_offsets {
                        let Some(gx) = states.shift(g, off_x) else { continue };
                        let x = Vector::from_column_slice(&states.coords[gx]);
                        let vo = pnorm(&p_o, &diff_of(x_hat.as_slice(), x.as_slice()));
                        let h_true = model.output(&x, &u);
                        for fw in &fw_set {
                            for i in 0..n_y {
                                innov[i] = h_true[i] + fw[i] - h_hat[i];
                            }
                            matvec(&l, n_y, &innov, &mut corr);
                            for i in 0..n_x {
                                a[i] = x_bar_next[i] - f_hat[i] - corr[i];
                            }
                            let slack = cert.rho_s * vs + cert.sig_so * vo + cert.sig_sow * w_bar - pnorm(&p_s, &a);
                            tube.record(slack, || {
                                vec![
                                    ("x_bar", x_bar.as_slice().to_vec()),
                                    ("x_hat", x_hat.as_slice().to_vec()),
                                    ("x", x.as_slice().to_vec()),
                                    ("u_bar", u_bar.as_slice().to_vec()),
                                    ("f_w", fw.clone()),
                                ]
                            });
                        }
                    }
                }
            }
        }
        checks.push(tube.report);
    }

    // |V_o(x̂,x) − V_o(x̃,x)| ≤ σ_d ‖x̂ − x̃‖; only differences matter
    {
        let mut cont = Tracker::new("continuity");
        let phys: Vec<Vec<f64>> = pair_offsets.iter().map(|o| physical(o)).collect();
        let norms: Vec<f64> = phys.iter().map(|d| pnorm(&p_o, d)).collect();
        for i in 0..phys.len() {
            for j in 0..phys.len() {
                let gap = norm2(&diff_of(&phys[i], &phys[j]));
                let slack = cert.sig_d * gap - math::abs(norms[i] - norms[j]);
                cont.record(slack, || vec![("x_hat_minus_x", phys[i].clone()), ("x_tilde_minus_x", phys[j].clone())]);
            }
        }
        checks.push(cont.report);
    }

    Ok(VerificationReport {
        checks,
        tolerance: grid.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::lyapunov::CertificateInputs;
    use crate::model::{LinearOutput, Transition};
    use alloc::sync::Arc;

    fn scalar_model() -> SystemModel {
        SystemModel::new(
            Transition::Linear {
                a: Matrix::from_element(1, 1, 0.5),
                b: Matrix::zeros(1, 1),
            },
            Arc::new(LinearOutput::new(Matrix::from_element(1, 1, 1.0), Matrix::zeros(1, 1))),
            Matrix::from_element(1, 1, 1.0),
            Matrix::zeros(1, 1),
            0.1,
        )
        .unwrap()
    }

    fn scalar_cert(model: &SystemModel, rho: f64) -> Certificate {
        CertificateInputs {
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
        .build(model)
        .unwrap()
    }

    fn scalar_grid() -> GridSpec {
        GridSpec::new(vec![-1.0], vec![1.0], vec![-1.0], vec![1.0])
    }

    #[test]
    fn scalar_contraction_exact_rate_passes_with_zero_slack() {
        let m = scalar_model();
        let c = scalar_cert(&m, 0.5);
        let r = verify_certificate_grid(&c, &m, &c.policy(), &scalar_grid()).unwrap();
        assert!(r.passed(), "{r}");
        assert!(r.min_slack().abs() <= 1e-12, "{r}");
    }

    #[test]
    fn scalar_contraction_optimistic_rate_fails() {
        let m = scalar_model();
        let c = scalar_cert(&m, 0.4);
        let r = verify_certificate_grid(&c, &m, &c.policy(), &scalar_grid()).unwrap();
        assert!(!r.passed());
        let ioss = r.checks.iter().find(|c| c.name == "ioss_decrease").unwrap();
        assert!(ioss.min_slack < 0.0);
    }

    #[test]
    fn stencils() {
        assert_eq!(offset_stencil(2, &[1, 3]).len(), 25);
        assert_eq!(axis_stencil(2, &[1, 5]).len(), 9);
    }

    #[test]
    fn report_mentions_result() {
        let m = scalar_model();
        let c = scalar_cert(&m, 0.5);
        let r = verify_certificate_grid(&c, &m, &c.policy(), &scalar_grid()).unwrap();
        let text = alloc::format!("{r}");
        assert!(text.contains("PASS") && text.contains("ioss_decrease"));
    }
}
