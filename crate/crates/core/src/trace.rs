//! Per-step trace rows and their CSV form.
//!
//! Columns, in order: `t,px,py,theta,action,policy,l,Q,R,err,q,B,Vnext`.
//! `action` is the steering sign (-1, 0, 1), `policy` is `task` or `safe`,
//! `err` is 0 or 1. Reals are written in shortest round-trip form so a trace
//! can be replayed bit-exactly; infinities appear as `inf` and `-inf`.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};

use crate::env::{Action, DubinsState};
use crate::policies::PolicyTag;
use crate::{Error, Result};

pub const TRACE_HEADER: &str = "t,px,py,theta,action,policy,l,Q,R,err,q,B,Vnext";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    /// Calibration step, starting at 1 whenever calibration starts fresh.
    pub t: u64,
    pub state: DubinsState,
    pub action: Action,
    pub policy: PolicyTag,
    /// Failure margin at `state`.
    pub l: f64,
    /// `Q(y_t, u_t)`.
    pub q_theta: f64,
    /// Realized target `R_t`.
    pub r: f64,
    pub err: bool,
    /// Quantile in force when `u_t` was chosen.
    pub quantile: f64,
    /// Lower bound `B_t` on `v_next`.
    pub b: f64,
    /// `V(y_{t+1})` of the actual successor, before any respawn.
    pub v_next: f64,
}

pub fn write_trace(records: &[StepRecord], w: impl Write) -> Result<()> {
    let mut w = BufWriter::new(w);
    writeln!(w, "{TRACE_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.t,
            r.state.px,
            r.state.py,
            r.state.theta,
            r.action.sign(),
            r.policy.name(),
            r.l,
            r.q_theta,
            r.r,
            u8::from(r.err),
            r.quantile,
            r.b,
            r.v_next
        )?;
    }
    w.flush()?;
    Ok(())
}

fn parse_f64(field: &str, line: usize, name: &str) -> Result<f64> {
    field.parse::<f64>().map_err(|_| Error::MalformedTrace(format!("line {line}: bad {name} {field:?}")))
}

pub fn read_trace(r: impl Read) -> Result<Vec<StepRecord>> {
    let mut lines = BufReader::new(r).lines();
    let header = lines.next().transpose()?;
    if header.as_deref().map(str::trim_end) != Some(TRACE_HEADER) {
        return Err(Error::MalformedTrace("missing or unexpected header".into()));
    }
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        let lineno = n + 2;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != 13 {
            return Err(Error::MalformedTrace(format!("line {lineno}: expected 13 fields, got {}", f.len())));
        }
        let bad = |what: &str| Error::MalformedTrace(format!("line {lineno}: bad {what}"));
        let t = f[0].parse::<u64>().map_err(|_| bad("t"))?;
        let action = f[4].parse::<i64>().ok().and_then(Action::from_sign).ok_or_else(|| bad("action"))?;
        let policy = PolicyTag::from_name(f[5]).ok_or_else(|| bad("policy"))?;
        let err = match f[9] {
            "0" => false,
            "1" => true,
            _ => return Err(bad("err")),
        };
        let theta = parse_f64(f[3], lineno, "theta")?;
        out.push(StepRecord {
            t,
            state: DubinsState { px: parse_f64(f[1], lineno, "px")?, py: parse_f64(f[2], lineno, "py")?, theta },
            action,
            policy,
            l: parse_f64(f[6], lineno, "l")?,
            q_theta: parse_f64(f[7], lineno, "Q")?,
            r: parse_f64(f[8], lineno, "R")?,
            err,
            quantile: parse_f64(f[10], lineno, "q")?,
            b: parse_f64(f[11], lineno, "B")?,
            v_next: parse_f64(f[12], lineno, "Vnext")?,
        });
    }
    Ok(out)
}
