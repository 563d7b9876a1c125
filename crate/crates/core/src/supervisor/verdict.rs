use std::collections::BTreeMap;

use serde::Serialize;

use super::floor::{InstantClass, InstantClassification};
use super::residence::{max_residence_bound, min_residence_bound};
use super::{SupervisorError, SwitchingSchedule};
use crate::feedback::SwitchingExtent;
use crate::lti::{DecayEnvelope, PrClassification};
use crate::lyapunov::CommonLyapunovReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum VerdictKind {
    UnconditionallyAsymptoticallyHyperstable,
    NotUnconditional,
    ConditionallyAsymptoticallyHyperstable,
    Undetermined,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Condition {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisVerdict {
    pub kind: VerdictKind,
    pub conditions: Vec<Condition>,
    /// Names of the failed conditions behind an `Undetermined` verdict.
    pub failed: Vec<String>,
    pub notes: Vec<String>,
}

/// How the feedback devices relate to the Popov inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeviceAssessment {
    /// A single device is active for all time.
    pub switching_independent: bool,
    /// Every device satisfies `phi y >= 0` pointwise.
    pub all_sector: bool,
    /// Outcome of the recorded interval and tail floor checks, when a trace exists.
    pub ledger_pass: Option<bool>,
}

impl DeviceAssessment {
    pub fn popov_holds(&self) -> bool {
        self.all_sector || self.ledger_pass == Some(true)
    }
}

/// Maximum-residence evaluation of one negative-class interval.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidenceCheck {
    pub index: usize,
    pub start: f64,
    pub mode: usize,
    pub dwell: f64,
    pub g_start: f64,
    pub max_abs_re: f64,
    pub max_u_sq: f64,
    /// `None` when the floor was already depleted.
    pub bound: Option<f64>,
    pub preceded_by_spr: bool,
    pub within_bound: bool,
}

impl ResidenceCheck {
    /// Evaluates every negative-class interval. `g_at_instants[i]` is the
    /// floor at the start of interval `i`, `max_u_sq[i]` the input bound used
    /// on it (realized maximum or a declared cap).
    pub fn evaluate(
        schedule: &SwitchingSchedule,
        instants: &InstantClassification,
        g_at_instants: &[f64],
        max_u_sq: &[f64],
        horizon: f64,
    ) -> Vec<ResidenceCheck> {
        schedule
            .intervals(Some(horizon))
            .iter()
            .filter(|iv| instants.at(iv.index).class == InstantClass::Negative)
            .map(|iv| {
                let inst = instants.at(iv.index);
                let g = g_at_instants.get(iv.index).copied().unwrap_or(f64::NAN);
                let u2 = max_u_sq.get(iv.index).copied().unwrap_or(f64::NAN);
                let bound = max_residence_bound(g, inst.max_abs_re, u2).ok();
                let dwell = iv.length().max(0.0);
                ResidenceCheck {
                    index: iv.index,
                    start: iv.start,
                    mode: iv.mode,
                    dwell,
                    g_start: g,
                    max_abs_re: inst.max_abs_re,
                    max_u_sq: u2,
                    bound,
                    preceded_by_spr: iv.index > 0
                        && instants.at(iv.index - 1).strictly_positive_real,
                    within_bound: bound.is_some_and(|b| b.is_infinite() || dwell < b),
                }
            })
            .collect()
    }
}

/// Minimum-residence evaluation of one marked instant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarkedCheck {
    pub t: f64,
    pub mode: usize,
    pub dwell: f64,
    /// `None` for the last marked instant (nothing to contract towards) or
    /// when the bound is undefined.
    pub required: Option<f64>,
    pub pass: bool,
    pub detail: String,
}

impl MarkedCheck {
    /// Dwell requirements for each marked instant, using the intervals up to
    /// the next marked instant as intermediates.
    pub fn evaluate(
        schedule: &SwitchingSchedule,
        envelopes: &BTreeMap<usize, DecayEnvelope>,
        delta: f64,
        horizon: f64,
    ) -> Vec<MarkedCheck> {
        let intervals = schedule.intervals(Some(horizon));
        let marked_idx: Vec<usize> = intervals
            .iter()
            .filter(|iv| iv.marked)
            .map(|iv| iv.index)
            .collect();
        marked_idx
            .iter()
            .enumerate()
            .map(|(k, &i)| {
                let iv = intervals[i];
                let Some(&next) = marked_idx.get(k + 1) else {
                    return MarkedCheck {
                        t: iv.start,
                        mode: iv.mode,
                        dwell: iv.length(),
                        required: None,
                        pass: true,
                        detail: "no later marked instant".into(),
                    };
                };
                let Some(marked_env) = envelopes.get(&iv.mode) else {
                    return MarkedCheck {
                        t: iv.start,
                        mode: iv.mode,
                        dwell: iv.length(),
                        required: None,
                        pass: false,
                        detail: format!("no decay envelope for mode {}", iv.mode),
                    };
                };
                let mut inter = Vec::new();
                for mid in &intervals[i + 1..next] {
                    match envelopes.get(&mid.mode) {
                        Some(env) => inter.push((*env, mid.length())),
                        None => {
                            return MarkedCheck {
                                t: iv.start,
                                mode: iv.mode,
                                dwell: iv.length(),
                                required: None,
                                pass: false,
                                detail: format!("no decay envelope for mode {}", mid.mode),
                            }
                        }
                    }
                }
                match min_residence_bound(marked_env, &inter, delta) {
                    Ok(req) => {
                        // dwells are compared with a relative slack for rounding
                        let pass = iv.length() >= req * (1.0 - 1e-9);
                        MarkedCheck {
                            t: iv.start,
                            mode: iv.mode,
                            dwell: iv.length(),
                            required: Some(req),
                            pass,
                            detail: format!("dwell {:.6} vs required {:.6}", iv.length(), req),
                        }
                    }
                    Err(e) => MarkedCheck {
                        t: iv.start,
                        mode: iv.mode,
                        dwell: iv.length(),
                        required: None,
                        pass: false,
                        detail: e.to_string(),
                    },
                }
            })
            .collect()
    }
}

/// Everything the verdict needs, computed beforehand by the component analyses.
pub struct VerdictContext<'a> {
    pub classifications: &'a BTreeMap<usize, PrClassification>,
    pub hurwitz: &'a BTreeMap<usize, bool>,
    pub schedule: &'a SwitchingSchedule,
    pub instants: &'a InstantClassification,
    pub extent: SwitchingExtent,
    pub lyapunov: Option<&'a CommonLyapunovReport>,
    pub devices: DeviceAssessment,
    pub residence: &'a [ResidenceCheck],
    pub marked: &'a [MarkedCheck],
}

fn cond(name: &str, pass: bool, detail: impl Into<String>) -> Condition {
    Condition {
        name: name.into(),
        pass,
        detail: detail.into(),
    }
}

fn ids(v: &[usize]) -> String {
    let s: Vec<String> = v.iter().map(|i| i.to_string()).collect();
    s.join(", ")
}

/// Composite hyperstability verdict, tried in the order unconditional,
/// not-unconditional, conditional, undetermined.
pub fn hyperstability_verdict(
    ctx: &VerdictContext<'_>,
) -> Result<AnalysisVerdict, SupervisorError> {
    let mut notes = Vec::new();
    for mode in ctx.schedule.mode_ids() {
        if !ctx.classifications.contains_key(&mode) {
            return Err(SupervisorError::UnclassifiedMode(mode));
        }
    }

    let non_spr: Vec<usize> = ctx
        .classifications
        .iter()
        .filter(|(_, c)| !c.is_strictly_positive_real)
        .map(|(&id, _)| id)
        .collect();
    let all_spr = cond(
        "all_modes_spr",
        non_spr.is_empty(),
        if non_spr.is_empty() {
            "every mode is strictly positive real".to_string()
        } else {
            format!("not strictly positive real: modes {}", ids(&non_spr))
        },
    );
    let (common, witness) = match ctx.lyapunov {
        Some(l) => (
            cond(
                "common_lyapunov",
                l.exists_certificate,
                match &l.certificate {
                    Some(c) if l.exists_certificate => format!("validated P ({})", c.source),
                    _ => "no validated common P".to_string(),
                },
            ),
            cond(
                "nonexistence_witness",
                l.has_nonexistence_witness(),
                l.necessary_test_failures
                    .first()
                    .map(|f| format!("{}: {}", f.test, f.witness))
                    .unwrap_or_else(|| "no witness recorded".into()),
            ),
        ),
        None => (
            cond(
                "common_lyapunov",
                false,
                "modes differ in state dimension or the battery did not run",
            ),
            cond("nonexistence_witness", false, "no witness recorded"),
        ),
    };
    let device = cond(
        "device_popov",
        ctx.devices.popov_holds(),
        if ctx.devices.all_sector {
            "every device satisfies phi*y >= 0".to_string()
        } else {
            match ctx.devices.ledger_pass {
                Some(true) => "recorded interval and tail floors hold".into(),
                Some(false) => "recorded Popov floor violated".into(),
                None => "non-sector device without a recorded trace".into(),
            }
        },
    );

    let hurwitz_ids: Vec<usize> = ctx
        .hurwitz
        .iter()
        .filter(|(_, &h)| h)
        .map(|(&id, _)| id)
        .collect();
    let hurwitz_member = cond(
        "hurwitz_member",
        !hurwitz_ids.is_empty(),
        if hurwitz_ids.is_empty() {
            "no mode has a Hurwitz state matrix".to_string()
        } else {
            format!("Hurwitz modes: {}", ids(&hurwitz_ids))
        },
    );
    let first = ctx.instants.at(0);
    let first_spr = cond(
        "first_activation_spr",
        first.strictly_positive_real,
        format!("mode {} active at t = 0", first.mode),
    );
    let unpreceded: Vec<f64> = ctx
        .residence
        .iter()
        .filter(|r| !r.preceded_by_spr)
        .map(|r| r.start)
        .collect();
    let preceded = cond(
        "negative_intervals_preceded_by_spr",
        unpreceded.is_empty(),
        if unpreceded.is_empty() {
            format!("{} negative-class intervals checked", ctx.residence.len())
        } else {
            format!("not preceded by a strictly positive real interval: t = {unpreceded:?}")
        },
    );
    let exceeding: Vec<String> = ctx
        .residence
        .iter()
        .filter(|r| !r.within_bound)
        .map(|r| match r.bound {
            Some(b) => format!("t = {}: dwell {:.6} >= bound {:.6}", r.start, r.dwell, b),
            None => format!("t = {}: floor depleted (g = {:.3e})", r.start, r.g_start),
        })
        .collect();
    let max_res = cond(
        "max_residence",
        exceeding.is_empty(),
        if exceeding.is_empty() {
            "all negative-class dwells within bound".to_string()
        } else {
            exceeding.join("; ")
        },
    );
    let short: Vec<String> = ctx
        .marked
        .iter()
        .filter(|m| !m.pass)
        .map(|m| format!("t = {}: {}", m.t, m.detail))
        .collect();
    let min_res = cond(
        "min_residence",
        short.is_empty(),
        if short.is_empty() {
            format!("{} marked instants checked", ctx.marked.len())
        } else {
            short.join("; ")
        },
    );
    let unstable_marked: Vec<usize> = ctx
        .marked
        .iter()
        .map(|m| m.mode)
        .filter(|id| {
            !(ctx.hurwitz.get(id).copied().unwrap_or(false)
                && ctx
                    .classifications
                    .get(id)
                    .is_some_and(|c| c.is_strictly_positive_real))
        })
        .collect();
    let marked_stable = cond(
        "marked_modes_stable",
        unstable_marked.is_empty(),
        if unstable_marked.is_empty() {
            "marked modes are Hurwitz and strictly positive real".to_string()
        } else {
            format!(
                "marked modes not Hurwitz and strictly positive real: {}",
                ids(&unstable_marked)
            )
        },
    );

    let mut conditional = vec![
        hurwitz_member,
        first_spr,
        preceded,
        max_res,
        min_res,
        marked_stable,
        device.clone(),
    ];
    if ctx.extent == SwitchingExtent::Finite {
        let last = ctx.schedule.sti().last().map(|s| s.1).unwrap_or(first.mode);
        let ok = ctx.hurwitz.get(&last).copied().unwrap_or(false)
            && ctx
                .classifications
                .get(&last)
                .is_some_and(|c| c.is_positive_real);
        conditional.push(cond(
            "last_activation_pr",
            ok,
            format!("mode {last} remains active after the last switch"),
        ));
    } else {
        notes.push("schedule has no last activation; last-activation condition not applied".into());
    }
    if ctx.instants.instants.iter().any(|i| i.finite_grid_floor) {
        notes.push("relative-degree-one strictly positive real modes counted as positive class with their finite-grid minimum".into());
    }

    let unconditional_ok = all_spr.pass && common.pass && device.pass;
    let not_unconditional = all_spr.pass && witness.pass;
    let conditional_ok = conditional.iter().all(|c| c.pass);
    let kind = if unconditional_ok {
        VerdictKind::UnconditionallyAsymptoticallyHyperstable
    } else if not_unconditional {
        VerdictKind::NotUnconditional
    } else if conditional_ok {
        VerdictKind::ConditionallyAsymptoticallyHyperstable
    } else {
        VerdictKind::Undetermined
    };
    let failed = if kind == VerdictKind::Undetermined {
        conditional
            .iter()
            .filter(|c| !c.pass)
            .map(|c| c.name.clone())
            .collect()
    } else {
        Vec::new()
    };
    let mut conditions = vec![all_spr, common, witness];
    conditions.extend(conditional);
    Ok(AnalysisVerdict {
        kind,
        conditions,
        failed,
        notes,
    })
}
