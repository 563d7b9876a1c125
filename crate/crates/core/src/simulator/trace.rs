use std::fmt::Write as _;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{ActiveSeg, SimError};
use crate::feedback::PopovLedger;

/// One row of a simulation trace. At a switching instant `mode`, `device`,
/// `u` and `y` are right limits; `u_left` and `y_left` are the values at `t^-`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t: f64,
    pub mode: usize,
    pub device: usize,
    pub x: DVector<f64>,
    pub u: f64,
    pub y: f64,
    /// `int_0^t y u`.
    pub e: f64,
    pub g_floor: f64,
    /// `int_0^t phi(y) y`.
    pub popov: f64,
    pub u_left: f64,
    pub y_left: f64,
}

impl TraceRecord {
    #[allow(clippy::too_many_arguments)]
    pub(super) fn new(
        t: f64,
        seg: &ActiveSeg,
        x: &DVector<f64>,
        u: f64,
        y: f64,
        e: f64,
        g_floor: f64,
        popov: f64,
        u_left: f64,
        y_left: f64,
    ) -> Self {
        Self {
            t,
            mode: seg.mode,
            device: seg.device,
            x: x.clone(),
            u,
            y,
            e,
            g_floor,
            popov,
            u_left,
            y_left,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Diverged { t: f64 },
}

/// Sidecar metadata written next to a CSV trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceMeta {
    pub digest: String,
    pub dt: f64,
    pub solver: String,
    pub status: RunStatus,
    pub horizon: f64,
}

/// Realized statistics of one activation interval.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalStats {
    pub start: f64,
    pub end: f64,
    pub mode: usize,
    pub device: usize,
    pub g_start: f64,
    pub g_end: f64,
    pub int_u2: f64,
    pub max_u2: f64,
}

impl IntervalStats {
    pub(super) fn open(start: f64, mode: usize, device: usize, g: f64) -> Self {
        Self {
            start,
            end: start,
            mode,
            device,
            g_start: g,
            g_end: g,
            int_u2: 0.0,
            max_u2: 0.0,
        }
    }
    pub(super) fn observe_u2(&mut self, u2: f64) {
        self.max_u2 = self.max_u2.max(u2);
    }
}

#[derive(Debug, Clone)]
pub struct SimulationTrace {
    pub records: Vec<TraceRecord>,
    pub meta: TraceMeta,
    pub ledger: PopovLedger,
    /// Energy floor at each realized switching instant.
    pub floor_at_instants: Vec<(f64, f64)>,
    pub intervals: Vec<IntervalStats>,
}

impl SimulationTrace {
    pub fn state_dim(&self) -> usize {
        self.records.first().map(|r| r.x.len()).unwrap_or(0)
    }

    pub fn end_time(&self) -> f64 {
        self.records.last().map(|r| r.t).unwrap_or(0.0)
    }

    /// `E(t)` by linear interpolation between grid points.
    pub fn energy(&self, t: f64) -> Result<f64, SimError> {
        let end = self.end_time();
        if !(t >= 0.0 && t <= end + 1e-12 * end.max(1.0)) {
            return Err(SimError::Range { t, horizon: end });
        }
        let i = self.records.partition_point(|r| r.t < t);
        if i == 0 {
            return Ok(self.records[0].e);
        }
        if i >= self.records.len() {
            return Ok(self.records.last().unwrap().e);
        }
        let (a, b) = (&self.records[i - 1], &self.records[i]);
        Ok(a.e + (b.e - a.e) * (t - a.t) / (b.t - a.t))
    }

    pub fn state_norms(&self) -> Vec<(f64, f64)> {
        self.records.iter().map(|r| (r.t, r.x.norm())).collect()
    }

    pub fn min_floor(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.g_floor)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn csv_header(&self) -> String {
        let mut h = String::from("t,mode,device");
        for i in 0..self.state_dim() {
            let _ = write!(h, ",x{i}");
        }
        h.push_str(",u,y,E,g_floor,popov");
        h
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.csv_header();
        out.push('\n');
        for r in &self.records {
            let _ = write!(out, "{},{},{}", format_g12(r.t), r.mode, r.device);
            for v in r.x.iter() {
                out.push(',');
                out.push_str(&format_g12(*v));
            }
            for v in [r.u, r.y, r.e, r.g_floor, r.popov] {
                out.push(',');
                out.push_str(&format_g12(v));
            }
            out.push('\n');
        }
        out
    }
}

/// Formats like C `%.12g`.
pub fn format_g12(v: f64) -> String {
    const P: i32 = 12;
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() {
            "-0".into()
        } else {
            "0".into()
        };
    }
    let sci = format!("{:.*e}", (P - 1) as usize, v);
    let (mant, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if !(-4..P).contains(&exp) {
        let mant = trim_zeros(mant);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mant}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (P - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{v:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Parsed CSV row as written by [`SimulationTrace::to_csv`].
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub t: f64,
    pub mode: usize,
    pub device: usize,
    pub x: Vec<f64>,
    pub u: f64,
    pub y: f64,
    pub e: f64,
    pub g_floor: f64,
    pub popov: f64,
}

/// Reads a CSV trace back; `Err` carries a message naming the offending line.
pub fn read_trace_csv(text: &str) -> Result<Vec<CsvRow>, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty trace")?;
    let cols: Vec<&str> = header.split(',').collect();
    let n = cols
        .len()
        .checked_sub(8)
        .ok_or("trace header has too few columns")?;
    let expected: Vec<String> = ["t", "mode", "device"]
        .iter()
        .map(|s| s.to_string())
        .chain((0..n).map(|i| format!("x{i}")))
        .chain(
            ["u", "y", "E", "g_floor", "popov"]
                .iter()
                .map(|s| s.to_string()),
        )
        .collect();
    if cols != expected {
        return Err(format!("unexpected trace header '{header}'"));
    }
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols.len() {
            return Err(format!(
                "line {} has {} fields, expected {}",
                k + 2,
                f.len(),
                cols.len()
            ));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| format!("line {}: bad number '{s}'", k + 2))
        };
        let int = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| format!("line {}: bad id '{s}'", k + 2))
        };
        rows.push(CsvRow {
            t: num(f[0])?,
            mode: int(f[1])?,
            device: int(f[2])?,
            x: f[3..3 + n]
                .iter()
                .map(|s| num(s))
                .collect::<Result<_, _>>()?,
            u: num(f[3 + n])?,
            y: num(f[4 + n])?,
            e: num(f[5 + n])?,
            g_floor: num(f[6 + n])?,
            popov: num(f[7 + n])?,
        });
    }
    Ok(rows)
}
