//! Fixed-step integration of the closed-loop switched system with energy,
//! Popov-integral and energy-floor monitors.

mod parseval;
mod trace;

pub use parseval::{
    lower_bound_check, parseval_crosscheck, LowerBoundCheck, LowerBoundMargin, ParsevalReport,
    SegmentEnergy,
};
pub use trace::{
    format_g12, read_trace_csv, CsvRow, IntervalStats, RunStatus, SimulationTrace, TraceMeta,
    TraceRecord,
};

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feedback::{FeedbackDevice, FeedbackError, PopovLedger};
use crate::lti::{classify_pr, FrequencyGrid, LtiError, StateSpaceMode};
use crate::supervisor::{
    ClassifiedInstant, EnergyFloor, InstantClass, ResidenceDeadline, SupervisorError,
    SwitchingSchedule,
};

pub const SOLVER_NAME: &str = "rk4-fixed-step";
/// State norm beyond which a run is declared divergent.
pub const DIVERGENCE_NORM: f64 = 1e12;
const OUTPUT_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no output fixed point at t = {t} (residual {residual:e})")]
    FixedPoint { t: f64, residual: f64 },
    #[error("state norm exceeded {DIVERGENCE_NORM:e} at t = {t}")]
    Diverged { t: f64, trace: Box<SimulationTrace> },
    #[error("time {t} outside the trace horizon [0, {horizon}]")]
    Range { t: f64, horizon: f64 },
    #[error("not applicable: {0}")]
    Applicability(String),
    #[error(transparent)]
    Lti(#[from] LtiError),
    #[error(transparent)]
    Feedback(#[from] FeedbackError),
    #[error(transparent)]
    Supervisor(#[from] SupervisorError),
}

/// Exogenous injection `w(t)` added to the feedback output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Probe {
    /// `w(t) = amplitude exp(-rate t)`.
    Exponential { amplitude: f64, rate: f64 },
    /// Linear interpolation through `(t, w)` points, zero outside their span.
    Tabulated { points: Vec<(f64, f64)> },
}

impl Probe {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Probe::Exponential { amplitude, rate } => amplitude * (-rate * t).exp(),
            Probe::Tabulated { points } => {
                let (Some(first), Some(last)) = (points.first(), points.last()) else {
                    return 0.0;
                };
                if t < first.0 || t > last.0 {
                    return 0.0;
                }
                let i = points.partition_point(|p| p.0 <= t);
                if i >= points.len() {
                    return last.1;
                }
                let (a, b) = (points[i - 1], points[i]);
                a.1 + (b.1 - a.1) * (t - a.0) / (b.0 - a.0)
            }
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        match self {
            Probe::Exponential { amplitude, rate } if amplitude.is_finite() && rate.is_finite() => {
                Ok(())
            }
            Probe::Tabulated { points }
                if !points.is_empty()
                    && points.iter().all(|p| p.0.is_finite() && p.1.is_finite())
                    && points.windows(2).all(|w| w[1].0 > w[0].0) =>
            {
                Ok(())
            }
            _ => Err(SimError::Config(
                "probe parameters must be finite with increasing times".into(),
            )),
        }
    }
}

/// A complete simulation setup.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub modes: Vec<StateSpaceMode>,
    pub devices: Vec<FeedbackDevice>,
    pub schedule: SwitchingSchedule,
    pub x0: DVector<f64>,
    pub horizon: f64,
    pub dt: f64,
    pub probe: Option<Probe>,
    pub frequency_grid: FrequencyGrid,
}

fn validate_family(
    modes: &[StateSpaceMode],
    devices: &[FeedbackDevice],
    x0: &DVector<f64>,
) -> Result<(), SimError> {
    let Some(first) = modes.first() else {
        return Err(SimError::Config("at least one mode is required".into()));
    };
    let n = first.order();
    for m in modes {
        if m.order() != n {
            return Err(SimError::Config(format!(
                "mode {} has order {} but mode {} has order {n}",
                m.id(),
                m.order(),
                first.id()
            )));
        }
        if modes.iter().filter(|o| o.id() == m.id()).count() > 1 {
            return Err(SimError::Config(format!("duplicate mode id {}", m.id())));
        }
    }
    for d in devices {
        if devices.iter().filter(|o| o.id() == d.id()).count() > 1 {
            return Err(SimError::Config(format!("duplicate device id {}", d.id())));
        }
    }
    if x0.len() != n {
        return Err(SimError::Config(format!(
            "x0 has length {} but the state has dimension {n}",
            x0.len()
        )));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(SimError::Config("x0 must be finite".into()));
    }
    Ok(())
}

fn check_loop(mode: &StateSpaceMode, device: &FeedbackDevice) -> Result<(), SimError> {
    if mode.d() != 0.0 && !(mode.d() > 0.0 && device.is_monotone()) {
        return Err(SimError::Config(format!(
            "mode {} has feedthrough {} and device {} is {}; the output equation needs d > 0 and a nondecreasing device",
            mode.id(),
            mode.d(),
            device.id(),
            if device.is_monotone() { "nondecreasing" } else { "not nondecreasing" }
        )));
    }
    Ok(())
}

fn check_time_params(horizon: f64, dt: f64) -> Result<(), SimError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(SimError::Config(format!("dt must be positive, got {dt}")));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(SimError::Config(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    Ok(())
}

impl Scenario {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        modes: Vec<StateSpaceMode>,
        devices: Vec<FeedbackDevice>,
        schedule: SwitchingSchedule,
        x0: DVector<f64>,
        horizon: f64,
        dt: f64,
        probe: Option<Probe>,
        frequency_grid: FrequencyGrid,
    ) -> Result<Self, SimError> {
        validate_family(&modes, &devices, &x0)?;
        check_time_params(horizon, dt)?;
        if horizon < schedule.last_instant() {
            return Err(SimError::Config(format!(
                "horizon {horizon} ends before the last switching instant {}",
                schedule.last_instant()
            )));
        }
        if let Some(p) = &probe {
            p.validate()?;
        }
        frequency_grid.validate()?;
        let scenario = Self {
            modes,
            devices,
            schedule,
            x0,
            horizon,
            dt,
            probe,
            frequency_grid,
        };
        for iv in scenario.schedule.intervals(Some(horizon)) {
            let mode = scenario.mode(iv.mode).ok_or_else(|| {
                SimError::Config(format!("schedule references unknown mode {}", iv.mode))
            })?;
            let device = scenario.device(iv.device).ok_or_else(|| {
                SimError::Config(format!("schedule references unknown device {}", iv.device))
            })?;
            check_loop(mode, device)?;
        }
        Ok(scenario)
    }

    pub fn mode(&self, id: usize) -> Option<&StateSpaceMode> {
        self.modes.iter().find(|m| m.id() == id)
    }
    pub fn device(&self, id: usize) -> Option<&FeedbackDevice> {
        self.devices.iter().find(|d| d.id() == id)
    }
    pub fn with_dt(mut self, dt: f64) -> Result<Self, SimError> {
        check_time_params(self.horizon, dt)?;
        self.dt = dt;
        Ok(self)
    }
    pub fn is_zero_state(&self) -> bool {
        self.x0.iter().all(|&v| v == 0.0)
    }
}

/// Solves `y = c^T x - d phi(y, t) + d w` and returns `(y, u, phi)` with
/// `u = -phi + w`. `left` evaluates the device at `t^-`.
pub fn output_solve(
    mode: &StateSpaceMode,
    x: &DVector<f64>,
    device: &FeedbackDevice,
    t: f64,
    w: f64,
    left: bool,
) -> Result<(f64, f64, f64), SimError> {
    let phi = |y: f64| {
        if left {
            device.phi_left(y, t)
        } else {
            device.phi(y, t)
        }
    };
    let r = mode.c().dot(x);
    let d = mode.d();
    if d == 0.0 {
        let p = phi(r);
        return Ok((r, -p + w, p));
    }
    check_loop(mode, device)?;
    let rhs = r + d * w;
    let f = |y: f64| y + d * phi(y) - rhs;
    let tol = OUTPUT_TOL * rhs.abs().max(r.abs()).max(1.0);

    let y0 = rhs;
    let f0 = f(y0);
    if f0.abs() <= tol {
        let p = phi(y0);
        return Ok((y0, -p + w, p));
    }
    // f is strictly increasing, so expand away from y0 until the sign flips.
    let mut step = y0.abs().max(1.0);
    let (mut lo, mut hi, mut flo, mut fhi);
    if f0 > 0.0 {
        hi = y0;
        fhi = f0;
        lo = y0 - step;
        flo = f(lo);
        while flo > 0.0 {
            step *= 2.0;
            lo = y0 - step;
            flo = f(lo);
            if !lo.is_finite() {
                return Err(SimError::FixedPoint { t, residual: f0 });
            }
        }
    } else {
        lo = y0;
        flo = f0;
        hi = y0 + step;
        fhi = f(hi);
        while fhi < 0.0 {
            step *= 2.0;
            hi = y0 + step;
            fhi = f(hi);
            if !hi.is_finite() {
                return Err(SimError::FixedPoint { t, residual: f0 });
            }
        }
    }
    // Illinois false position with bisection fallback.
    let mut side = 0i8;
    let mut best = if flo.abs() < fhi.abs() {
        (lo, flo)
    } else {
        (hi, fhi)
    };
    for _ in 0..400 {
        if best.1.abs() <= tol || hi - lo <= f64::EPSILON * hi.abs().max(lo.abs()).max(1e-300) {
            break;
        }
        let mut y = (lo * fhi - hi * flo) / (fhi - flo);
        if !(y > lo && y < hi) {
            y = 0.5 * (lo + hi);
        }
        let fy = f(y);
        if fy.abs() < best.1.abs() {
            best = (y, fy);
        }
        if fy > 0.0 {
            hi = y;
            fhi = fy;
            if side == 1 {
                flo *= 0.5;
            }
            side = 1;
        } else {
            lo = y;
            flo = fy;
            if side == -1 {
                fhi *= 0.5;
            }
            side = -1;
        }
    }
    if best.1.abs() > tol {
        return Err(SimError::FixedPoint {
            t,
            residual: best.1,
        });
    }
    let p = phi(best.0);
    Ok((best.0, -p + w, p))
}

/// How long a supervised segment stays active.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Dwell {
    Fixed(f64),
    /// Leave a negative-class mode at the last grid point before the online
    /// maximum residence deadline; `cap` replaces the running maximum of `u^2`.
    MaxResidence {
        safety: f64,
        cap: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlanSegment {
    pub mode: usize,
    pub device: usize,
    pub dwell: Dwell,
    pub marked: bool,
}

/// Setup for a supervised run whose switching instants are decided online.
#[derive(Debug, Clone)]
pub struct SupervisedRun {
    pub modes: Vec<StateSpaceMode>,
    pub devices: Vec<FeedbackDevice>,
    pub plan: Vec<PlanSegment>,
    pub x0: DVector<f64>,
    pub horizon: f64,
    pub dt: f64,
    pub probe: Option<Probe>,
    pub frequency_grid: FrequencyGrid,
}

#[derive(Debug, Clone, Copy)]
enum SegEnd {
    At(f64),
    Deadline { safety: f64, cap: Option<f64> },
    Open,
}

#[derive(Debug, Clone, Copy)]
struct ActiveSeg {
    mode: usize,
    device: usize,
    marked: bool,
    end: SegEnd,
    deadline: Option<ResidenceDeadline>,
}

struct Engine<'a> {
    modes: BTreeMap<usize, &'a StateSpaceMode>,
    devices: BTreeMap<usize, &'a FeedbackDevice>,
    classes: BTreeMap<usize, Option<ClassifiedInstant>>,
    probe: Option<&'a Probe>,
    dt: f64,
    horizon: f64,
    breakpoints: Vec<f64>,
}

enum Source<'a> {
    Schedule(&'a SwitchingSchedule),
    Plan(&'a [PlanSegment]),
}

impl<'a> Engine<'a> {
    fn new(
        modes: &'a [StateSpaceMode],
        devices: &'a [FeedbackDevice],
        probe: Option<&'a Probe>,
        dt: f64,
        horizon: f64,
        grid: &FrequencyGrid,
        used_devices: &[usize],
    ) -> Self {
        let classes = modes
            .iter()
            .map(|m| {
                let c = classify_pr(m, grid)
                    .ok()
                    .map(|c| crate::supervisor::classify_instant(0.0, m.id(), &c));
                (m.id(), c)
            })
            .collect();
        let mut breakpoints: Vec<f64> = devices
            .iter()
            .filter(|d| used_devices.contains(&d.id()))
            .flat_map(|d| d.breakpoints())
            .filter(|&t| t > 0.0 && t < horizon)
            .collect();
        breakpoints.sort_by(|a, b| a.partial_cmp(b).unwrap());
        breakpoints.dedup();
        Self {
            modes: modes.iter().map(|m| (m.id(), m)).collect(),
            devices: devices.iter().map(|d| (d.id(), d)).collect(),
            classes,
            probe,
            dt,
            horizon,
            breakpoints,
        }
    }

    fn w(&self, t: f64) -> f64 {
        self.probe.map(|p| p.eval(t)).unwrap_or(0.0)
    }

    fn out(
        &self,
        seg: &ActiveSeg,
        x: &DVector<f64>,
        t: f64,
        left: bool,
    ) -> Result<(f64, f64, f64), SimError> {
        output_solve(
            self.modes[&seg.mode],
            x,
            self.devices[&seg.device],
            t,
            self.w(t),
            left,
        )
    }

    fn run(
        &self,
        source: Source<'_>,
        x0: &DVector<f64>,
    ) -> Result<(SimulationTrace, SwitchingSchedule), SimError> {
        let snap = 1e-9 * self.dt;
        let gamma = self
            .devices
            .values()
            .map(|d| d.gamma())
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        let mut ledger = PopovLedger::new(gamma);
        let mut floor = EnergyFloor::new();
        let mut floor_valid = true;
        let mut energy = 0.0;

        let mut sti: Vec<(f64, usize)> = Vec::new();
        let mut sti0: Vec<(f64, usize)> = Vec::new();
        let mut marked: Vec<f64> = Vec::new();
        let mut intervals: Vec<IntervalStats> = Vec::new();

        let plan_len = match &source {
            Source::Schedule(s) => s.sti().len(),
            Source::Plan(p) => p.len(),
        };
        if plan_len == 0 {
            return Err(SimError::Config("empty switching plan".into()));
        }
        let mut next_idx = 0usize;
        let mut x = x0.clone();
        let mut t = 0.0;
        let mut records: Vec<TraceRecord> = Vec::new();

        // Builds the segment `idx` starting at `t`.
        let make_seg = |idx: usize, t: f64| -> ActiveSeg {
            match &source {
                Source::Schedule(s) => {
                    let (_, mode) = s.sti()[idx];
                    let end = s
                        .sti()
                        .get(idx + 1)
                        .map(|n| SegEnd::At(n.0))
                        .unwrap_or(SegEnd::Open);
                    ActiveSeg {
                        mode,
                        device: s.device_at(s.sti()[idx].0),
                        marked: s.is_marked(s.sti()[idx].0),
                        end,
                        deadline: None,
                    }
                }
                Source::Plan(p) => {
                    let seg = p[idx];
                    let end = if idx + 1 == p.len() {
                        SegEnd::Open
                    } else {
                        match seg.dwell {
                            Dwell::Fixed(d) => SegEnd::At(t + d),
                            Dwell::MaxResidence { safety, cap } => SegEnd::Deadline { safety, cap },
                        }
                    };
                    ActiveSeg {
                        mode: seg.mode,
                        device: seg.device,
                        marked: seg.marked,
                        end,
                        deadline: None,
                    }
                }
            }
        };

        let mut seg = make_seg(0, 0.0);
        next_idx += 1;
        let (y0, u0, _) = self.out(&seg, &x, 0.0, false)?;
        let mut u = u0;
        self.begin_floor(&mut floor, &mut floor_valid, &seg, 0.0, u0);
        self.arm_deadline(&mut seg, &floor, 0.0)?;
        sti.push((0.0, seg.mode));
        sti0.push((0.0, seg.device));
        if seg.marked {
            marked.push(0.0);
        }
        let mut first = IntervalStats::open(0.0, seg.mode, seg.device, floor.value());
        first.observe_u2(u0 * u0);
        intervals.push(first);
        records.push(TraceRecord::new(
            0.0,
            &seg,
            &x,
            u0,
            y0,
            energy,
            floor_value(&floor, floor_valid),
            ledger.integral(),
            u0,
            y0,
        ));

        let mut status = RunStatus::Completed;
        while t < self.horizon - snap {
            // switches due at the current grid point; the row at `t` becomes a switch row
            let mut switched = false;
            while self.expired(&seg, &floor, t, snap) && next_idx < plan_len {
                let cand = make_seg(next_idx, t);
                next_idx += 1;
                if cand.mode == seg.mode && cand.device == seg.device {
                    seg.end = cand.end;
                    seg.deadline = None;
                    self.arm_deadline(&mut seg, &floor, t)?;
                    continue;
                }
                seg = cand;
                switched = true;
                let (_, u_r, _) = self.out(&seg, &x, t, false)?;
                self.begin_floor(&mut floor, &mut floor_valid, &seg, t, u_r);
                self.arm_deadline(&mut seg, &floor, t)?;
            }
            if switched {
                let (y_r, u_r, _) = self.out(&seg, &x, t, false)?;
                match sti.last_mut() {
                    Some(last) if last.0 == t => *last = (t, seg.mode),
                    _ => sti.push((t, seg.mode)),
                }
                if sti0.last().map(|s| s.1) != Some(seg.device) {
                    match sti0.last_mut() {
                        Some(last) if last.0 == t => *last = (t, seg.device),
                        _ => sti0.push((t, seg.device)),
                    }
                }
                marked.retain(|&m| m != t);
                if seg.marked {
                    marked.push(t);
                }
                let mut iv = IntervalStats::open(t, seg.mode, seg.device, floor.value());
                iv.observe_u2(u_r * u_r);
                match intervals.last_mut() {
                    Some(last) if last.start == t => *last = iv,
                    _ => intervals.push(iv),
                }
                let row = records
                    .last_mut()
                    .expect("a row exists at the current time");
                row.mode = seg.mode;
                row.device = seg.device;
                row.u = u_r;
                row.y = y_r;
                row.g_floor = floor_value(&floor, floor_valid);
                u = u_r;
            }

            // next grid point: lattice, segment end, deadline, device breakpoint or horizon
            let k_next = (t / self.dt + 1e-9).floor() + 1.0;
            let lattice = k_next * self.dt;
            let mut event = self.horizon;
            if let SegEnd::At(te) = seg.end {
                if te > t + snap {
                    event = event.min(te);
                }
            }
            if let Some(d) = self.deadline(&seg, floor.running_max_u2()) {
                if d > t + snap && next_idx < plan_len {
                    event = event.min(d);
                }
            }
            if let Some(&bp) = self.breakpoints.iter().find(|&&b| b > t + snap) {
                event = event.min(bp);
            }
            let mut t_b = if event <= lattice + snap {
                event
            } else {
                lattice
            };

            // A step that raises max u^2 can pull the deadline before its end;
            // shorten it to the new deadline, or switch now if that is `t`.
            let (step, y_left, u_left, phi_left, max_u2) = loop {
                let step = self.rk4_step(&seg, &x, t, t_b - t)?;
                let (y_l, u_l, phi_l) = self.out(&seg, &step.x, t_b, true)?;
                let max_u2 = step.max_u2.max(u * u).max(u_l * u_l);
                match self.deadline(&seg, floor.running_max_u2().max(max_u2)) {
                    Some(d) if next_idx < plan_len && t_b > d + snap => {
                        if d > t + snap {
                            t_b = d;
                            continue;
                        }
                        break (None, y_l, u_l, phi_l, max_u2);
                    }
                    _ => break (Some(step), y_l, u_l, phi_l, max_u2),
                }
            };
            let Some(step) = step else {
                seg.end = SegEnd::At(t);
                continue;
            };
            let h = t_b - t;
            x = step.x;
            energy += step.energy;
            ledger.advance(step.popov, y_left, phi_left, h);
            let g = if floor_valid {
                floor.observe(t_b, step.int_u2, max_u2)
            } else {
                f64::NAN
            };
            if let Some(iv) = intervals.last_mut() {
                iv.int_u2 += step.int_u2;
                iv.observe_u2(max_u2);
                iv.end = t_b;
                iv.g_end = g;
            }
            t = t_b;

            let norm = x.norm();
            if !(norm <= DIVERGENCE_NORM) {
                status = RunStatus::Diverged { t };
                if norm.is_finite() {
                    records.push(TraceRecord::new(
                        t,
                        &seg,
                        &x,
                        u_left,
                        y_left,
                        energy,
                        g,
                        ledger.integral(),
                        u_left,
                        y_left,
                    ));
                }
                break;
            }
            // right limit equals the left limit except at device breakpoints
            let (y_r, u_r, _) = self.out(&seg, &x, t, false)?;
            u = u_r;
            records.push(TraceRecord::new(
                t,
                &seg,
                &x,
                u_r,
                y_r,
                energy,
                g,
                ledger.integral(),
                u_left,
                y_left,
            ));
        }

        // Device-only switches repeat the mode, so the distinct-neighbour rule is not applied.
        let realized = SwitchingSchedule::new(sti, sti0, marked, 0.0, Some(usize::MAX), 1)?;
        let trace = SimulationTrace {
            records,
            meta: TraceMeta {
                digest: String::new(),
                dt: self.dt,
                solver: SOLVER_NAME.into(),
                status,
                horizon: self.horizon,
            },
            ledger,
            floor_at_instants: floor.at_instants.clone(),
            intervals,
        };
        if let RunStatus::Diverged { t } = status {
            return Err(SimError::Diverged {
                t,
                trace: Box::new(trace),
            });
        }
        Ok((trace, realized))
    }

    fn begin_floor(
        &self,
        floor: &mut EnergyFloor,
        valid: &mut bool,
        seg: &ActiveSeg,
        t: f64,
        u_right: f64,
    ) {
        match self.classes.get(&seg.mode).and_then(|c| c.as_ref()) {
            Some(template) => {
                let inst = ClassifiedInstant {
                    t,
                    ..template.clone()
                };
                floor.begin_interval(t, &inst);
                floor.observe_start_sample(u_right * u_right);
            }
            None => *valid = false,
        }
    }

    fn arm_deadline(
        &self,
        seg: &mut ActiveSeg,
        floor: &EnergyFloor,
        t: f64,
    ) -> Result<(), SimError> {
        if let SegEnd::Deadline { safety, .. } = seg.end {
            let class = self.classes.get(&seg.mode).and_then(|c| c.as_ref());
            match class {
                Some(c) if c.class == InstantClass::Negative => {
                    seg.deadline = Some(ResidenceDeadline::new(t, floor.value(), c.max_abs_re, safety)?);
                }
                _ => {
                    return Err(SimError::Config(format!(
                        "maximum-residence dwell requires a mode with negative real-part minimum (mode {})",
                        seg.mode
                    )))
                }
            }
        }
        Ok(())
    }

    fn expired(&self, seg: &ActiveSeg, floor: &EnergyFloor, t: f64, snap: f64) -> bool {
        match seg.end {
            SegEnd::At(te) => te <= t + snap,
            SegEnd::Open => false,
            SegEnd::Deadline { .. } => self
                .deadline(seg, floor.running_max_u2())
                .is_none_or(|d| d <= t + snap),
        }
    }

    /// Online deadline of a maximum-residence segment given the running `max u^2`.
    fn deadline(&self, seg: &ActiveSeg, running_max_u2: f64) -> Option<f64> {
        match seg.end {
            SegEnd::Deadline { cap, .. } => seg
                .deadline
                .map(|d| d.deadline(cap.unwrap_or(running_max_u2))),
            _ => None,
        }
    }

    fn rk4_step(
        &self,
        seg: &ActiveSeg,
        x: &DVector<f64>,
        t: f64,
        h: f64,
    ) -> Result<StepResult, SimError> {
        let mode = self.modes[&seg.mode];
        let f = |xs: &DVector<f64>,
                 ts: f64,
                 left: bool|
         -> Result<(DVector<f64>, f64, f64, f64), SimError> {
            let (y, u, phi) = self.out(seg, xs, ts, left)?;
            Ok((mode.a() * xs + mode.b() * u, y, u, phi))
        };
        let (k1, y1, u1, p1) = f(x, t, false)?;
        let x2 = x + &k1 * (0.5 * h);
        let (k2, y2, u2, p2) = f(&x2, t + 0.5 * h, false)?;
        let x3 = x + &k2 * (0.5 * h);
        let (k3, y3, u3, p3) = f(&x3, t + 0.5 * h, false)?;
        let x4 = x + &k3 * h;
        let (k4, y4, u4, p4) = f(&x4, t + h, true)?;
        let w6 = h / 6.0;
        Ok(StepResult {
            x: x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * w6,
            energy: w6 * (y1 * u1 + 2.0 * y2 * u2 + 2.0 * y3 * u3 + y4 * u4),
            popov: w6 * (p1 * y1 + 2.0 * p2 * y2 + 2.0 * p3 * y3 + p4 * y4),
            int_u2: w6 * (u1 * u1 + 2.0 * u2 * u2 + 2.0 * u3 * u3 + u4 * u4),
            max_u2: [u1, u2, u3, u4].iter().map(|v| v * v).fold(0.0, f64::max),
        })
    }
}

struct StepResult {
    x: DVector<f64>,
    energy: f64,
    popov: f64,
    int_u2: f64,
    max_u2: f64,
}

fn floor_value(floor: &EnergyFloor, valid: bool) -> f64 {
    if valid {
        floor.value()
    } else {
        f64::NAN
    }
}

/// Integrates the scenario along its fixed schedule.
pub fn simulate(scenario: &Scenario) -> Result<SimulationTrace, SimError> {
    let engine = Engine::new(
        &scenario.modes,
        &scenario.devices,
        scenario.probe.as_ref(),
        scenario.dt,
        scenario.horizon,
        &scenario.frequency_grid,
        &scenario.schedule.device_ids(),
    );
    engine
        .run(Source::Schedule(&scenario.schedule), &scenario.x0)
        .map(|(t, _)| t)
}

/// Integrates a plan whose switching instants are decided online; returns
/// the trace and the realized schedule. After the last segment the final mode
/// stays active until the horizon.
pub fn simulate_supervised(
    run: &SupervisedRun,
) -> Result<(SimulationTrace, SwitchingSchedule), SimError> {
    validate_family(&run.modes, &run.devices, &run.x0)?;
    check_time_params(run.horizon, run.dt)?;
    if let Some(p) = &run.probe {
        p.validate()?;
    }
    for seg in &run.plan {
        let mode = run
            .modes
            .iter()
            .find(|m| m.id() == seg.mode)
            .ok_or_else(|| {
                SimError::Config(format!("plan references unknown mode {}", seg.mode))
            })?;
        let device = run
            .devices
            .iter()
            .find(|d| d.id() == seg.device)
            .ok_or_else(|| {
                SimError::Config(format!("plan references unknown device {}", seg.device))
            })?;
        check_loop(mode, device)?;
        match seg.dwell {
            Dwell::Fixed(d) if !(d >= 0.0 && d.is_finite()) => {
                return Err(SimError::Config(format!(
                    "fixed dwell must be finite and nonnegative, got {d}"
                )))
            }
            Dwell::MaxResidence { safety, cap }
                if !(safety > 0.0 && safety <= 1.0) || cap.is_some_and(|c| !(c >= 0.0)) =>
            {
                return Err(SimError::Config(
                    "maximum-residence dwell needs safety in (0, 1] and a nonnegative cap".into(),
                ))
            }
            _ => {}
        }
    }
    let used: Vec<usize> = run.plan.iter().map(|s| s.device).collect();
    let engine = Engine::new(
        &run.modes,
        &run.devices,
        run.probe.as_ref(),
        run.dt,
        run.horizon,
        &run.frequency_grid,
        &used,
    );
    engine.run(Source::Plan(&run.plan), &run.x0)
}
