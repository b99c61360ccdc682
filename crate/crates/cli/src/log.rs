//! CSV run logs. The main log has a fixed schema; solver statistics go to a
//! companion file with one row per solved program.

use std::io::{Read, Write};

use anyhow::{bail, Context, Result};
use rpofsf::filter::Branch;
use rpofsf::nlp::NlpStatus;
use rpofsf::sim::StepRecord;

pub const HEADER: [&str; 11] = [
    "k", "x1", "x2", "xhat1", "xhat2", "ebar", "u_learn", "u_applied", "branch", "min_slack", "y",
];

pub const SOLVER_HEADER: [&str; 8] = ["k", "program", "horizon", "status", "iterations", "kkt", "violation", "fallback"];

/// One parsed row of the main log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub k: usize,
    pub x: [f64; 2],
    pub x_hat: [f64; 2],
    pub e_bar: f64,
    pub u_learn: f64,
    pub u_applied: f64,
    pub branch: Option<Branch>,
    pub min_slack: f64,
    pub y: f64,
}

pub fn branch_label(b: Option<Branch>) -> String {
    match b {
        None => "unfiltered".into(),
        Some(Branch::FullHorizon) => "full".into(),
        Some(Branch::ReducedHorizon(n)) => format!("reduced:{n}"),
        Some(Branch::SafeBackup) => "backup".into(),
    }
}

pub fn parse_branch(s: &str) -> Result<Option<Branch>> {
    Ok(match s {
        "unfiltered" => None,
        "full" => Some(Branch::FullHorizon),
        "backup" => Some(Branch::SafeBackup),
        _ => match s.strip_prefix("reduced:") {
            Some(n) => Some(Branch::ReducedHorizon(n.parse().with_context(|| format!("branch {s}"))?)),
            None => bail!("unknown branch {s}"),
        },
    })
}

fn status_label(s: NlpStatus) -> &'static str {
    match s {
        NlpStatus::Optimal => "optimal",
        NlpStatus::Infeasible => "infeasible",
        NlpStatus::MaxIter => "max_iter",
    }
}

pub fn write_run<W: Write>(out: W, records: &[StepRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER)?;
    for r in records {
        if r.x.len() != 2 || r.u_applied.len() != 1 || r.y.len() != 1 {
            bail!("the log schema holds two states, one input and one output");
        }
        w.write_record([
            r.k.to_string(),
            r.x[0].to_string(),
            r.x[1].to_string(),
            r.x_hat[0].to_string(),
            r.x_hat[1].to_string(),
            r.e_bar.to_string(),
            r.u_learn[0].to_string(),
            r.u_applied[0].to_string(),
            branch_label(r.branch),
            r.min_slack.to_string(),
            r.y[0].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_solver_log<W: Write>(out: W, records: &[StepRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SOLVER_HEADER)?;
    for r in records {
        for s in &r.solves {
            w.write_record([
                r.k.to_string(),
                "filter".into(),
                s.horizon.to_string(),
                status_label(s.status).into(),
                s.iterations.to_string(),
                s.kkt_residual.to_string(),
                s.max_violation.to_string(),
                r.shifted_fallback.to_string(),
            ])?;
        }
        if let Some((kkt, viol)) = r.mhe_stats {
            w.write_record([
                r.k.to_string(),
                "estimator".into(),
                String::new(),
                "optimal".into(),
                String::new(),
                kkt.to_string(),
                viol.to_string(),
                "false".into(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_run<R: Read>(input: R) -> Result<Vec<LogRow>> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers()?.clone();
    if header.iter().ne(HEADER.iter().copied()) {
        bail!("unexpected header {:?}", header.iter().collect::<Vec<_>>());
    }
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let num = |j: usize| -> Result<f64> {
            rec[j]
                .parse::<f64>()
                .with_context(|| format!("row {}: column {} is not a number", i + 1, HEADER[j]))
        };
        rows.push(LogRow {
            k: rec[0].parse().with_context(|| format!("row {}: bad step", i + 1))?,
            x: [num(1)?, num(2)?],
            x_hat: [num(3)?, num(4)?],
            e_bar: num(5)?,
            u_learn: num(6)?,
            u_applied: num(7)?,
            branch: parse_branch(&rec[8])?,
            min_slack: num(9)?,
            y: num(10)?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_locked() {
        assert_eq!(HEADER.join(","), "k,x1,x2,xhat1,xhat2,ebar,u_learn,u_applied,branch,min_slack,y");
    }

    #[test]
    fn branch_labels_round_trip() {
        for b in [None, Some(Branch::FullHorizon), Some(Branch::ReducedHorizon(17)), Some(Branch::SafeBackup)] {
            assert_eq!(parse_branch(&branch_label(b)).unwrap(), b);
        }
        assert!(parse_branch("sideways").is_err());
    }

    #[test]
    fn wrong_header_is_rejected() {
        assert!(read_run("a,b\n1,2\n".as_bytes()).is_err());
    }
}
