//! Analysis pipeline behind the `analyze`, `bounds` and `check` commands.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::{json, Value};

use crate::feedback::{
    tail_floor_check, window_floor_check, FloorOutcome, PopovLedger, SwitchingExtent,
};
use crate::lti::{classify_pr, decay_envelope, is_hurwitz, DecayEnvelope, PrClassification};
use crate::lyapunov::{lyapunov_battery, CommonLyapunovReport};
use crate::scenario::LoadedScenario;
use crate::simulator::{simulate, CsvRow, SimError, SimulationTrace};
use crate::supervisor::{
    classify_schedule, contraction_check, hyperstability_verdict, max_residence_bound,
    min_residence_bound, saturation_vanishing_check, AnalysisVerdict, DeviceAssessment,
    InstantClass, InstantClassification, MarkedCheck, NegativeInterval, ResidenceCheck,
    VerdictContext, VerdictKind,
};

/// Tolerance for the energy and floor invariants checked on traces.
pub const TOL_INVARIANT: f64 = 1e-6;

/// Finite numbers as JSON numbers, infinities as strings, NaN as null.
pub fn jnum(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else if x.is_nan() {
        Value::Null
    } else if x > 0.0 {
        json!("infinity")
    } else {
        json!("-infinity")
    }
}

fn jopt(x: Option<f64>) -> Value {
    x.map(jnum).unwrap_or(Value::Null)
}

#[derive(Debug, Clone, Serialize)]
pub struct ModeEntry {
    pub mode_id: usize,
    pub hurwitz: Option<bool>,
    pub classification: Option<PrClassification>,
    pub envelope: Option<DecayEnvelope>,
    pub errors: Vec<String>,
}

/// Sampled input and floor values for one run: `(t, u)` samples with right
/// limits, plus `(t, g)` and the Popov ledger.
struct RunData {
    rows: Vec<(f64, f64, f64)>,
    left_u: Vec<(f64, f64)>,
    ledger: PopovLedger,
}

impl RunData {
    fn from_trace(trace: &SimulationTrace) -> Self {
        Self {
            rows: trace
                .records
                .iter()
                .map(|r| (r.t, r.u, r.g_floor))
                .collect(),
            left_u: trace.records.iter().map(|r| (r.t, r.u_left)).collect(),
            ledger: trace.ledger.clone(),
        }
    }

    fn from_csv(rows: &[CsvRow], gamma: f64) -> Result<Self, String> {
        let ledger =
            PopovLedger::from_samples(gamma, rows.iter().map(|r| (r.t, r.popov)).collect())
                .map_err(|e| e.to_string())?;
        Ok(Self {
            rows: rows.iter().map(|r| (r.t, r.u, r.g_floor)).collect(),
            left_u: rows.iter().map(|r| (r.t, r.u)).collect(),
            ledger,
        })
    }

    fn end(&self) -> f64 {
        self.rows.last().map(|r| r.0).unwrap_or(0.0)
    }

    /// `g` at the first sample at or after `t`.
    fn g_at(&self, t: f64) -> f64 {
        let i = self.rows.partition_point(|r| r.0 < t);
        self.rows.get(i).map(|r| r.2).unwrap_or(f64::NAN)
    }

    /// Realized `max u^2` on `[start, end]` (left limit at `end`).
    fn max_u2(&self, start: f64, end: f64) -> f64 {
        if start > self.end() {
            return f64::NAN;
        }
        let body = self
            .rows
            .iter()
            .filter(|r| r.0 >= start && r.0 < end)
            .map(|r| r.1 * r.1);
        let tail = self.left_u.iter().filter(|r| r.0 == end).map(|r| r.1 * r.1);
        body.chain(tail).fold(0.0, f64::max)
    }
}

/// Outcome of the full analysis.
pub struct Analysis {
    pub modes: Vec<ModeEntry>,
    pub instants: Option<InstantClassification>,
    pub lyapunov: Option<CommonLyapunovReport>,
    pub lyapunov_error: Option<String>,
    pub residence: Vec<ResidenceCheck>,
    pub marked: Vec<MarkedCheck>,
    pub popov: Value,
    pub simulation_status: String,
    pub verdict: Option<AnalysisVerdict>,
    pub errors: Vec<String>,
}

fn mode_entries(loaded: &LoadedScenario) -> Vec<ModeEntry> {
    let sc = &loaded.scenario;
    sc.modes
        .iter()
        .map(|m| {
            let mut errors = Vec::new();
            let hurwitz = is_hurwitz(m.a())
                .map_err(|e| errors.push(e.to_string()))
                .ok();
            let classification = classify_pr(m, &sc.frequency_grid)
                .map_err(|e| errors.push(format!("classification: {e}")))
                .ok();
            let envelope = decay_envelope(m.a(), loaded.analysis.eps_margin)
                .map_err(|e| errors.push(format!("decay envelope: {e}")))
                .ok();
            ModeEntry {
                mode_id: m.id(),
                hurwitz,
                classification,
                envelope,
                errors,
            }
        })
        .collect()
}

fn popov_checks(
    loaded: &LoadedScenario,
    ledger: &PopovLedger,
) -> (Vec<FloorOutcome>, Option<FloorOutcome>, Vec<String>) {
    let sc = &loaded.scenario;
    let mut errors = Vec::new();
    let end = ledger.time();
    let windows: Vec<FloorOutcome> = sc
        .schedule
        .intervals(Some(sc.horizon))
        .iter()
        .filter(|iv| iv.start < end)
        .filter_map(|iv| {
            window_floor_check(ledger, iv.start, iv.end.min(end))
                .map_err(|e| errors.push(e.to_string()))
                .ok()
        })
        .collect();
    let last = sc.schedule.last_instant();
    let tail = if last <= end {
        tail_floor_check(ledger, last, SwitchingExtent::Finite)
            .map_err(|e| errors.push(e.to_string()))
            .ok()
    } else {
        None
    };
    (windows, tail, errors)
}

fn floor_json(o: &FloorOutcome) -> Value {
    json!({
        "start": jnum(o.start),
        "end": jnum(o.end),
        "pass": o.pass,
        "min_margin": jnum(o.min_margin),
        "first_violation": jopt(o.first_violation.map(|d| o.start + d)),
    })
}

fn residence_inputs(loaded: &LoadedScenario, run: Option<&RunData>) -> (Vec<f64>, Vec<f64>) {
    let sc = &loaded.scenario;
    let intervals = sc.schedule.intervals(Some(sc.horizon));
    let g = intervals
        .iter()
        .map(|iv| run.map(|r| r.g_at(iv.start)).unwrap_or(f64::NAN))
        .collect();
    let u2 = intervals
        .iter()
        .map(|iv| match (loaded.analysis.u_sq_cap, run) {
            (Some(cap), _) => cap,
            (None, Some(r)) => r.max_u2(iv.start, iv.end),
            (None, None) => f64::NAN,
        })
        .collect();
    (g, u2)
}

fn envelopes(modes: &[ModeEntry]) -> BTreeMap<usize, DecayEnvelope> {
    modes
        .iter()
        .filter_map(|m| m.envelope.map(|e| (m.mode_id, e)))
        .collect()
}

/// Runs classification, the Lyapunov battery, a reference simulation for the
/// energy floor, the residence checks and the composite verdict.
pub fn analyze(loaded: &LoadedScenario) -> Analysis {
    let sc = &loaded.scenario;
    let mut errors = Vec::new();
    let modes = mode_entries(loaded);
    for m in &modes {
        for e in &m.errors {
            if !e.starts_with("decay envelope") {
                errors.push(format!("mode {}: {e}", m.mode_id));
            }
        }
    }
    let classifications: BTreeMap<usize, PrClassification> = modes
        .iter()
        .filter_map(|m| m.classification.clone().map(|c| (m.mode_id, c)))
        .collect();
    let hurwitz: BTreeMap<usize, bool> = modes
        .iter()
        .filter_map(|m| m.hurwitz.map(|h| (m.mode_id, h)))
        .collect();
    let instants = classify_schedule(&sc.schedule, &classifications)
        .map_err(|e| errors.push(e.to_string()))
        .ok();

    let (lyapunov, lyapunov_error) = match lyapunov_battery(&sc.modes, &loaded.analysis.battery) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };

    let (run, simulation_status) = match simulate(sc) {
        Ok(tr) => (Some(RunData::from_trace(&tr)), "completed".to_string()),
        Err(SimError::Diverged { t, trace }) => (
            Some(RunData::from_trace(&trace)),
            format!("diverged at t = {t}"),
        ),
        Err(e) => (None, format!("failed: {e}")),
    };

    let (g, u2) = residence_inputs(loaded, run.as_ref());
    let residence = instants
        .as_ref()
        .map(|inst| ResidenceCheck::evaluate(&sc.schedule, inst, &g, &u2, sc.horizon))
        .unwrap_or_default();
    let marked = match loaded.analysis.delta {
        Some(delta) => MarkedCheck::evaluate(&sc.schedule, &envelopes(&modes), delta, sc.horizon),
        None => Vec::new(),
    };

    let (popov, ledger_pass) = match &run {
        Some(r) => {
            let (windows, tail, errs) = popov_checks(loaded, &r.ledger);
            let pass = errs.is_empty()
                && windows.iter().all(|w| w.pass)
                && tail.as_ref().is_none_or(|t| t.pass);
            let v = json!({
                "gamma": jnum(r.ledger.gamma()),
                "final_integral": jnum(r.ledger.integral()),
                "violated_at": jopt(r.ledger.violated_at()),
                "interval_checks": windows.iter().map(floor_json).collect::<Vec<_>>(),
                "tail_check": tail.as_ref().map(floor_json),
                "errors": errs,
            });
            (v, Some(pass))
        }
        None => (json!({ "errors": ["no trace available"] }), None),
    };

    let used = sc.schedule.device_ids();
    let devices = DeviceAssessment {
        switching_independent: sc.schedule.sti0().len() == 1,
        all_sector: sc
            .devices
            .iter()
            .filter(|d| used.contains(&d.id()))
            .all(|d| d.is_sector()),
        ledger_pass,
    };

    let verdict = instants.as_ref().and_then(|inst| {
        let ctx = VerdictContext {
            classifications: &classifications,
            hurwitz: &hurwitz,
            schedule: &sc.schedule,
            instants: inst,
            extent: SwitchingExtent::Finite,
            lyapunov: lyapunov.as_ref(),
            devices,
            residence: &residence,
            marked: &marked,
        };
        hyperstability_verdict(&ctx)
            .map_err(|e| errors.push(e.to_string()))
            .ok()
    });

    Analysis {
        modes,
        instants,
        lyapunov,
        lyapunov_error,
        residence,
        marked,
        popov,
        simulation_status,
        verdict,
        errors,
    }
}

impl Analysis {
    /// Undetermined verdicts caused by component errors exit with 2.
    pub fn exit_code(&self) -> i32 {
        match &self.verdict {
            None => 2,
            Some(v) if v.kind == VerdictKind::Undetermined && !self.errors.is_empty() => 2,
            _ => 0,
        }
    }

    pub fn to_json(&self, loaded: &LoadedScenario, timestamp: &str) -> Value {
        let modes: Vec<Value> = self
            .modes
            .iter()
            .map(|m| {
                json!({
                    "mode_id": m.mode_id,
                    "hurwitz": m.hurwitz,
                    "classification": m.classification.as_ref().map(|c| serde_json::to_value(c).expect("serializable")),
                    "decay_envelope": m.envelope.map(|e| json!({ "K": jnum(e.k), "rho": jnum(e.rho) })),
                    "errors": m.errors,
                })
            })
            .collect();
        let residence: Vec<Value> = self
            .residence
            .iter()
            .map(|r| {
                json!({
                    "interval": r.index,
                    "start": jnum(r.start),
                    "mode": r.mode,
                    "dwell": jnum(r.dwell),
                    "g_start": jnum(r.g_start),
                    "max_abs_re": jnum(r.max_abs_re),
                    "max_u_sq": jnum(r.max_u_sq),
                    "max_residence": jopt(r.bound),
                    "margin": jopt(r.bound.map(|b| b - r.dwell)),
                    "preceded_by_spr": r.preceded_by_spr,
                    "within_bound": r.within_bound,
                })
            })
            .collect();
        let marked: Vec<Value> = self
            .marked
            .iter()
            .map(|m| {
                json!({
                    "t": jnum(m.t),
                    "mode": m.mode,
                    "dwell": jnum(m.dwell),
                    "min_residence": jopt(m.required),
                    "pass": m.pass,
                    "detail": m.detail,
                })
            })
            .collect();
        let lyapunov = match (&self.lyapunov, &self.lyapunov_error) {
            (Some(r), _) => serde_json::to_value(r).expect("serializable"),
            (None, Some(e)) => json!({ "error": e }),
            (None, None) => Value::Null,
        };
        let scoping = if loaded.scenario.is_zero_state() && loaded.scenario.probe.is_some() {
            "energy lower bounds apply: zero initial state with a probe input"
        } else {
            "energy lower bounds are asserted only for zero-state probe runs"
        };
        json!({
            "spec_version": crate::scenario::SPEC_VERSION,
            "timestamp": timestamp,
            "scenario_digest": loaded.digest,
            "modes": modes,
            "instants": self.instants,
            "residence": residence,
            "marked": marked,
            "lyapunov": lyapunov,
            "popov": self.popov,
            "simulation": { "status": self.simulation_status, "energy_scope": scoping },
            "verdict": self.verdict,
            "errors": self.errors,
        })
    }
}

/// One row of the bounds table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundRow {
    pub kind: &'static str,
    pub t: f64,
    pub mode: usize,
    pub value: Option<f64>,
    pub inputs: String,
}

/// Source of the input magnitude for the maximum-residence bound.
pub enum InputSource<'a> {
    Trace(&'a [CsvRow]),
    Cap(f64),
}

/// Maximum-residence bounds for negative-class intervals and minimum-residence
/// requirements for marked instants.
pub fn bounds_table(
    loaded: &LoadedScenario,
    source: InputSource<'_>,
) -> Result<(Vec<BoundRow>, Vec<String>), String> {
    let sc = &loaded.scenario;
    let modes = mode_entries(loaded);
    let classifications: BTreeMap<usize, PrClassification> = modes
        .iter()
        .filter_map(|m| m.classification.clone().map(|c| (m.mode_id, c)))
        .collect();
    let instants = classify_schedule(&sc.schedule, &classifications).map_err(|e| e.to_string())?;
    let intervals = sc.schedule.intervals(Some(sc.horizon));
    let mut rows = Vec::new();
    let mut notes = Vec::new();

    let negative: Vec<_> = intervals
        .iter()
        .filter(|iv| instants.at(iv.index).class == InstantClass::Negative)
        .collect();
    if negative.is_empty() {
        notes.push("no negative-class intervals; no maximum residence constraints".to_string());
    } else {
        let gamma = sc.devices.iter().map(|d| d.gamma()).fold(0.0, f64::max);
        let run = match &source {
            InputSource::Trace(rows) => RunData::from_csv(rows, gamma)?,
            InputSource::Cap(_) => match simulate(sc) {
                Ok(tr) => RunData::from_trace(&tr),
                Err(SimError::Diverged { trace, .. }) => RunData::from_trace(&trace),
                Err(e) => return Err(e.to_string()),
            },
        };
        for iv in negative {
            let inst = instants.at(iv.index);
            let g = run.g_at(iv.start);
            let u2 = match source {
                InputSource::Cap(c) => c,
                InputSource::Trace(_) => run.max_u2(iv.start, iv.end),
            };
            let value = max_residence_bound(g, inst.max_abs_re, u2).ok();
            rows.push(BoundRow {
                kind: "max_residence",
                t: iv.start,
                mode: iv.mode,
                value,
                inputs: format!(
                    "g = {g:.6}, max|Re G| = {:.6}, max u^2 = {u2:.6}",
                    inst.max_abs_re
                ),
            });
        }
    }

    if let Some(delta) = loaded.analysis.delta {
        let env = envelopes(&modes);
        let marked: Vec<usize> = intervals
            .iter()
            .filter(|iv| iv.marked)
            .map(|iv| iv.index)
            .collect();
        for (k, &i) in marked.iter().enumerate() {
            let Some(&next) = marked.get(k + 1) else {
                continue;
            };
            let iv = intervals[i];
            let Some(me) = env.get(&iv.mode) else {
                notes.push(format!("no decay envelope for mode {}", iv.mode));
                continue;
            };
            let mut inter = Vec::new();
            let mut desc = Vec::new();
            for mid in &intervals[i + 1..next] {
                if let Some(e) = env.get(&mid.mode) {
                    inter.push((*e, mid.length()));
                    desc.push(format!(
                        "(K = {:.6}, rho = {:.6}, T = {:.6})",
                        e.k,
                        e.rho,
                        mid.length()
                    ));
                }
            }
            let value = min_residence_bound(me, &inter, delta).ok();
            rows.push(BoundRow {
                kind: "min_residence",
                t: iv.start,
                mode: iv.mode,
                value,
                inputs: format!(
                    "K = {:.6}, rho = {:.6}, delta = {delta}, intermediates [{}]",
                    me.k,
                    me.rho,
                    desc.join(", ")
                ),
            });
        }
    } else if !sc.schedule.marked().is_empty() {
        notes.push("marked instants present but no delta given".into());
    }
    Ok((rows, notes))
}

/// Pass/fail of one trace invariant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantResult {
    pub name: &'static str,
    /// `None` when not applicable to this trace.
    pub pass: Option<bool>,
    pub detail: String,
}

fn inv(name: &'static str, pass: Option<bool>, detail: impl Into<String>) -> InvariantResult {
    InvariantResult {
        name,
        pass,
        detail: detail.into(),
    }
}

/// Runs the trace invariant suite.
pub fn check_trace(loaded: &LoadedScenario, rows: &[CsvRow]) -> Vec<InvariantResult> {
    let sc = &loaded.scenario;
    let mut out = Vec::new();
    let gamma = sc.devices.iter().map(|d| d.gamma()).fold(0.0, f64::max);
    let probe_run = sc.is_zero_state() && sc.probe.is_some();

    let min_g = rows.iter().map(|r| r.g_floor).fold(f64::INFINITY, f64::min);
    if rows.iter().any(|r| r.g_floor.is_nan()) {
        out.push(inv("floor_nonnegative", None, "energy floor unavailable"));
    } else {
        let first_neg = rows
            .iter()
            .find(|r| r.g_floor < -TOL_INVARIANT)
            .map(|r| r.t);
        out.push(inv(
            "floor_nonnegative",
            Some(first_neg.is_none()),
            match first_neg {
                Some(t) => format!("g < 0 first at t = {t}; min g = {min_g:.6e}"),
                None => format!("min g = {min_g:.6e}"),
            },
        ));
    }

    if probe_run {
        let min_e = rows.iter().map(|r| r.e).fold(f64::INFINITY, f64::min);
        let max_e = rows.iter().map(|r| r.e).fold(f64::NEG_INFINITY, f64::max);
        out.push(inv(
            "energy_nonnegative",
            Some(min_e >= -TOL_INVARIANT),
            format!("min E = {min_e:.6e}"),
        ));
        out.push(inv(
            "energy_bounded",
            Some(max_e <= gamma + TOL_INVARIANT),
            format!("max E = {max_e:.6e}, gamma = {gamma}"),
        ));
        let mut worst = f64::INFINITY;
        let mut at = None;
        for &(t, _) in sc.schedule.sti() {
            if let Some(r) = rows.iter().find(|r| r.t >= t) {
                let m = r.e - r.g_floor;
                if m < worst {
                    worst = m;
                    at = Some(r.t);
                }
            }
        }
        if let Some(r) = rows.last() {
            if r.e - r.g_floor < worst {
                worst = r.e - r.g_floor;
                at = Some(r.t);
            }
        }
        out.push(inv(
            "energy_above_floor",
            Some(!(worst < -TOL_INVARIANT)),
            format!("min E - g = {worst:.6e} at t = {}", at.unwrap_or(0.0)),
        ));
    } else {
        for name in ["energy_nonnegative", "energy_bounded", "energy_above_floor"] {
            out.push(inv(
                name,
                None,
                "energy bounds apply to zero-state probe runs only",
            ));
        }
    }

    let open_loop = rows.iter().all(|r| r.u == 0.0);
    match loaded.analysis.delta {
        Some(delta) if open_loop && sc.schedule.marked().len() >= 2 => {
            let norms: Vec<(f64, f64)> = rows
                .iter()
                .map(|r| (r.t, r.x.iter().map(|v| v * v).sum::<f64>().sqrt()))
                .collect();
            match contraction_check(&norms, sc.schedule.marked(), delta) {
                Ok(c) => {
                    let ratios: Vec<String> = c
                        .ratios
                        .iter()
                        .map(|r| format!("{:.6}", r.2.unwrap_or(f64::NAN)))
                        .collect();
                    out.push(inv(
                        "contraction",
                        Some(c.pass),
                        format!("ratios [{}], delta = {delta}", ratios.join(", ")),
                    ))
                }
                Err(e) => out.push(inv("contraction", Some(false), e.to_string())),
            }
        }
        _ => out.push(inv(
            "contraction",
            None,
            "needs an open-loop trace, two marked instants and delta",
        )),
    }

    match RunData::from_csv(rows, gamma) {
        Ok(run) => {
            let (windows, tail, errs) = popov_checks(loaded, &run.ledger);
            let failed = windows.iter().chain(tail.iter()).find(|w| !w.pass);
            let pass = errs.is_empty() && failed.is_none();
            let detail = match (failed, errs.first()) {
                (_, Some(e)) => e.clone(),
                (Some(w), _) => format!(
                    "floor violated in window starting {} at t = {}",
                    w.start,
                    w.start + w.first_violation.unwrap_or(0.0)
                ),
                (None, None) => format!(
                    "final integral {:.6e}, gamma = {gamma}",
                    run.ledger.integral()
                ),
            };
            out.push(inv("popov_floor", Some(pass), detail));
        }
        Err(e) => out.push(inv("popov_floor", Some(false), e)),
    }

    match loaded.analysis.saturation {
        Some(p) => {
            let modes = mode_entries(loaded);
            let classes: BTreeMap<usize, PrClassification> = modes
                .iter()
                .filter_map(|m| m.classification.clone().map(|c| (m.mode_id, c)))
                .collect();
            match classify_schedule(&sc.schedule, &classes) {
                Ok(inst) => {
                    let negs: Vec<NegativeInterval> = sc
                        .schedule
                        .intervals(Some(sc.horizon))
                        .iter()
                        .filter(|iv| inst.at(iv.index).class == InstantClass::Negative)
                        .map(|iv| NegativeInterval {
                            start: iv.start,
                            end: iv.end,
                            mode: iv.mode,
                            has_integrator: classes[&iv.mode].has_integrator,
                        })
                        .collect();
                    let samples: Vec<(f64, f64)> = rows.iter().map(|r| (r.t, r.u)).collect();
                    match saturation_vanishing_check(
                        &samples, &negs, p.k, p.lambda, p.lambda0, gamma,
                    ) {
                        Ok(s) => out.push(inv(
                            "saturation_vanishing",
                            Some(s.pass),
                            format!(
                                "ceiling {:.6}, lambda required {:.6}, first violation {:?}",
                                s.ceiling,
                                s.lambda_required,
                                s.first_violation.map(|v| v.0)
                            ),
                        )),
                        Err(e) => out.push(inv("saturation_vanishing", None, e.to_string())),
                    }
                }
                Err(e) => out.push(inv("saturation_vanishing", Some(false), e.to_string())),
            }
        }
        None => out.push(inv(
            "saturation_vanishing",
            None,
            "K_sat, lambda_sat and lambda0 not given",
        )),
    }
    out
}
