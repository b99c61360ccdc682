//! Subcommands. Each returns the process exit code.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rpofsf::filter::{FilterState, SafetyFilter};
use rpofsf::lyapunov::verify_certificate_grid;
use rpofsf::observer::{EstimateBundle, EstimateSource};
use rpofsf::sim::{monte_carlo_parallel, run_closed_loop, MonteCarloSummary};
use rpofsf::Vector;

use crate::config::{RunConfig, Setup};
use crate::log::{read_run, write_run, write_solver_log};
use crate::plot::{Ellipse, Figure, Trajectory};

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    Usage = 1,
    Certificate = 2,
    Safety = 3,
}

/// Slack below which a filtered run counts as a safety regression.
pub const SAFETY_TOL: f64 = 1e-9;

fn usage(e: impl std::fmt::Display) -> Exit {
    eprintln!("error: {e}");
    Exit::Usage
}

/// Simulation failures: a broken certification contract is a safety
/// regression, everything else a setup problem.
fn sim_error(e: rpofsf::Error) -> Exit {
    eprintln!("error: {e}");
    match e {
        rpofsf::Error::ContractViolation { .. } => Exit::Safety,
        _ => Exit::Usage,
    }
}

fn load(path: &Path) -> Result<(RunConfig, Setup), Exit> {
    let cfg = RunConfig::load(path).map_err(usage)?;
    let setup = cfg.build().map_err(|e| usage(format!("{e:#}")))?;
    Ok((cfg, setup))
}

/// Grid verification; prints the report and returns whether it passed.
fn check_certificate(setup: &Setup) -> Result<bool, Exit> {
    let s = &setup.scenario;
    let report = verify_certificate_grid(&s.cert, &s.model, &s.cert.policy(), &setup.grid).map_err(usage)?;
    eprint!("{report}");
    Ok(report.passed())
}

pub fn verify(config: &Path) -> Exit {
    let run = || -> Result<Exit, Exit> {
        let (_, setup) = load(config)?;
        let passed = check_certificate(&setup)?;
        let safe = &setup.scenario.safe_set;
        eprintln!(
            "terminal set: alpha = {}, e_cap = {}, s_cap = {}",
            safe.alpha_max(),
            safe.e_cap(),
            safe.s_cap()
        );
        Ok(if passed { Exit::Ok } else { Exit::Certificate })
    };
    run().unwrap_or_else(|e| e)
}

fn writer(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| p.display().to_string())?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn solver_log_path(out: &Path) -> PathBuf {
    let mut name = out.file_stem().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".solver.csv");
    out.with_file_name(name)
}

#[derive(Debug, Clone, Default)]
pub struct RunArgs {
    pub unfiltered: bool,
    pub steps: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub no_verify: bool,
}

pub fn run(config: &Path, args: &RunArgs) -> Exit {
    let inner = || -> Result<Exit, Exit> {
        let (cfg, mut setup) = load(config)?;
        if let Some(n) = args.steps {
            if n == 0 {
                return Err(usage("--steps must be at least 1"));
            }
            setup.scenario.steps = n;
        }
        if let Some(seed) = args.seed {
            setup.scenario.seed = seed;
        }
        if (!args.no_verify || setup.auto_certificate) && !check_certificate(&setup)? {
            return Ok(Exit::Certificate);
        }
        let records = run_closed_loop(&setup.scenario, !args.unfiltered).map_err(sim_error)?;
        let out = args.out.clone().or_else(|| cfg.output.csv.clone().map(PathBuf::from));
        write_run(writer(out.as_deref()).map_err(usage)?, &records).map_err(usage)?;
        if let Some(p) = &out {
            write_solver_log(writer(Some(&solver_log_path(p))).map_err(usage)?, &records).map_err(usage)?;
        }
        let summary = MonteCarloSummary::from_run(&records);
        eprintln!("{}", summary_line(&summary));
        Ok(if !args.unfiltered && summary.min_slack < -SAFETY_TOL {
            Exit::Safety
        } else {
            Exit::Ok
        })
    };
    inner().unwrap_or_else(|e| e)
}

pub const SUMMARY_HEADER: [&str; 11] = [
    "runs",
    "steps",
    "min_slack",
    "min_bound_margin",
    "full",
    "reduced",
    "backup",
    "violating_runs",
    "worst_kkt",
    "worst_violation",
    "shifted_fallbacks",
];

fn summary_line(s: &MonteCarloSummary) -> String {
    format!(
        "runs {} steps {} min slack {:.6e} min bound margin {:.6e} branches full/reduced/backup {}/{}/{} violating runs {} worst kkt {:.2e} worst violation {:.2e}",
        s.runs,
        s.steps,
        s.min_slack,
        s.min_bound_margin,
        s.branches[0],
        s.branches[1],
        s.branches[2],
        s.violating_runs,
        s.worst_kkt,
        s.worst_violation
    )
}

pub fn write_summary<W: Write>(out: W, s: &MonteCarloSummary) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    w.write_record([
        s.runs.to_string(),
        s.steps.to_string(),
        s.min_slack.to_string(),
        s.min_bound_margin.to_string(),
        s.branches[0].to_string(),
        s.branches[1].to_string(),
        s.branches[2].to_string(),
        s.violating_runs.to_string(),
        s.worst_kkt.to_string(),
        s.worst_violation.to_string(),
        s.shifted_fallbacks.to_string(),
    ])?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct McArgs {
    pub runs: usize,
    pub unfiltered: bool,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub no_verify: bool,
}

pub fn mc(config: &Path, args: &McArgs) -> Exit {
    let inner = || -> Result<Exit, Exit> {
        if args.runs == 0 {
            return Err(usage("--runs must be at least 1"));
        }
        let (_, setup) = load(config)?;
        if (!args.no_verify || setup.auto_certificate) && !check_certificate(&setup)? {
            return Ok(Exit::Certificate);
        }
        let threads = args
            .threads
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        let summary = monte_carlo_parallel(&setup.scenario, args.runs, !args.unfiltered, threads).map_err(sim_error)?;
        println!("{}", summary_line(&summary));
        if let Some(p) = &args.out {
            write_summary(writer(Some(p)).map_err(usage)?, &summary).map_err(usage)?;
        }
        Ok(if !args.unfiltered && summary.min_slack < -SAFETY_TOL {
            Exit::Safety
        } else {
            Exit::Ok
        })
    };
    inner().unwrap_or_else(|e| e)
}

/// Step interval of the estimation-bound ellipses.
const BOUND_STRIDE: usize = 10;

pub fn plot(csvs: &[PathBuf], out: &Path, config: Option<&Path>) -> Exit {
    let inner = || -> Result<Exit, Exit> {
        let cfg = match config {
            Some(p) => RunConfig::load(p).map_err(usage)?,
            None => RunConfig::golden().map_err(usage)?,
        };
        let setup = cfg.build().map_err(|e| usage(format!("{e:#}")))?;
        let s = &setup.scenario;
        let b = &cfg.constraints;
        let mut fig = Figure {
            x_lo: [b.x_lo[0], b.x_lo[1]],
            x_hi: [b.x_hi[0], b.x_hi[1]],
            trajectories: Vec::new(),
            ellipses: Vec::new(),
        };
        let mut first_plan_drawn = false;
        for path in csvs {
            let file = File::open(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            let rows = read_run(file).map_err(|e| usage(format!("{}: {e:#}", path.display())))?;
            if rows.is_empty() {
                return Err(usage(format!("{}: no data rows", path.display())));
            }
            let filtered = rows[0].branch.is_some();
            fig.trajectories.push(Trajectory {
                label: format!("{} ({})", path.display(), if filtered { "filtered" } else { "unfiltered" }),
                class: if filtered { "filtered" } else { "unfiltered" },
                points: rows.iter().map(|r| r.x).collect(),
            });
            for r in rows.iter().step_by(BOUND_STRIDE).filter(|r| r.e_bar > 0.0) {
                fig.ellipses.push(Ellipse {
                    center: r.x_hat,
                    p: s.cert.v_o.matrix().clone(),
                    radius: r.e_bar,
                    class: "bound",
                });
            }
            if filtered && !first_plan_drawn {
                // tubes of the first open-loop plan
                first_plan_drawn = true;
                let filter = SafetyFilter::new(s.model.clone(), s.cert.clone(), s.constraints.clone(), s.safe_set.clone(), s.filter)
                    .map_err(usage)?;
                let bundle = EstimateBundle {
                    x_hat: Vector::from_column_slice(&rows[0].x_hat),
                    e_bar: rows[0].e_bar,
                    source: EstimateSource::Luenberger,
                    k: 0,
                };
                let u_learn = Vector::from_element(1, rows[0].u_learn);
                if let Ok(c) = filter.certify_step(&mut FilterState::new(), &bundle, &u_learn) {
                    if let Some(plan) = c.plan {
                        for (x, sb) in plan.x_bar.iter().zip(&plan.s_bar).filter(|(_, sb)| **sb > 0.0) {
                            fig.ellipses.push(Ellipse {
                                center: [x[0], x[1]],
                                p: s.cert.v_s.matrix().clone(),
                                radius: *sb,
                                class: "tube",
                            });
                        }
                    }
                }
            }
        }
        std::fs::write(out, fig.render()).map_err(|e| usage(format!("{}: {e}", out.display())))?;
        Ok(Exit::Ok)
    };
    inner().unwrap_or_else(|e| e)
}
