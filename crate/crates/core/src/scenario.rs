//! JSON scenario files: parsing, validation and content digest.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::feedback::{DeviceKind, FeedbackDevice, DEFAULT_GAMMA};
use crate::linalg::from_rows;
use crate::lti::{FrequencyGrid, StateSpaceMode};
use crate::lyapunov::{BatteryOptions, Combination};
use crate::simulator::{Probe, Scenario};
use crate::supervisor::SwitchingSchedule;

pub const SPEC_VERSION: u32 = 1;
pub const DEFAULT_EPS_MARGIN: f64 = 0.1;
const DEFAULT_SEARCH_DIRECTIONS: usize = 32;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    spec_version: u32,
    modes: Vec<ModeSpec>,
    devices: Vec<DeviceSpec>,
    schedule: ScheduleSpec,
    simulation: SimulationSpec,
    #[serde(default)]
    analysis: AnalysisSpec,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModeSpec {
    id: usize,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    c: Vec<f64>,
    d: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DeviceSpec {
    id: usize,
    kind: String,
    #[serde(default)]
    params: Map<String, Value>,
    gamma: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StiEntry {
    t: f64,
    mode: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sti0Entry {
    t: f64,
    device: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleSpec {
    sti: Vec<StiEntry>,
    sti0: Vec<Sti0Entry>,
    #[serde(default)]
    marked: Vec<f64>,
    #[serde(default)]
    min_dwell: f64,
    xi: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulationSpec {
    x0: Vec<f64>,
    horizon: f64,
    dt: f64,
    #[serde(default)]
    probe: Option<Probe>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnalysisSpec {
    #[serde(default)]
    frequency_grid: FrequencyGrid,
    eps_margin: Option<f64>,
    delta: Option<f64>,
    lambda0: Option<f64>,
    #[serde(rename = "K_sat")]
    k_sat: Option<f64>,
    lambda_sat: Option<f64>,
    lyapunov: Option<LyapunovSpec>,
    u_sq_cap: Option<f64>,
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LyapunovSpec {
    #[serde(rename = "P")]
    p: Option<Vec<Vec<f64>>>,
    #[serde(rename = "X_families", default)]
    x_families: Vec<Vec<Vec<Vec<f64>>>>,
    #[serde(default)]
    combos: Vec<ComboSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComboSpec {
    alphas: Vec<f64>,
    betas: Vec<f64>,
}

/// Saturation-vanishing parameters; the check runs only when all three are given.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaturationParams {
    pub k: f64,
    pub lambda: f64,
    pub lambda0: f64,
}

#[derive(Debug, Clone)]
pub struct AnalysisConfig {
    pub eps_margin: f64,
    pub delta: Option<f64>,
    pub saturation: Option<SaturationParams>,
    pub u_sq_cap: Option<f64>,
    pub battery: BatteryOptions,
}

#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub analysis: AnalysisConfig,
    /// SHA-256 of the canonical (key-sorted, whitespace-free) JSON document.
    pub digest: String,
}

/// Canonical digest of a scenario document.
pub fn scenario_digest(text: &str) -> Result<String, ScenarioError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    Ok(digest_value(&value))
}

fn digest_value(value: &Value) -> String {
    // serde_json maps are key-sorted, so this serialization is canonical.
    let canonical = serde_json::to_string(value).expect("a parsed value serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

pub fn load_scenario(path: &Path) -> Result<LoadedScenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scenario(&text)
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation(msg.into())
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, ScenarioError> {
    let m = from_rows(rows).ok_or_else(|| {
        invalid(format!(
            "{what}: rows must be non-empty and of equal length"
        ))
    })?;
    if !m.is_square() {
        return Err(invalid(format!(
            "{what}: expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m)
}

fn positive(v: Option<f64>, name: &str) -> Result<Option<f64>, ScenarioError> {
    match v {
        Some(x) if !(x > 0.0 && x.is_finite()) => Err(invalid(format!(
            "{name} must be positive and finite, got {x}"
        ))),
        _ => Ok(v),
    }
}

pub fn parse_scenario(text: &str) -> Result<LoadedScenario, ScenarioError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    let digest = digest_value(&value);
    let file: ScenarioFile =
        serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    if file.spec_version != SPEC_VERSION {
        return Err(invalid(format!(
            "spec_version {} is not supported (expected {SPEC_VERSION})",
            file.spec_version
        )));
    }

    let mut modes = Vec::with_capacity(file.modes.len());
    for m in &file.modes {
        let a = matrix(&m.a, &format!("mode {} A", m.id))?;
        let mode = StateSpaceMode::new(
            m.id,
            a,
            DVector::from_vec(m.b.clone()),
            DVector::from_vec(m.c.clone()),
            m.d,
        )
        .map_err(|e| invalid(format!("mode {}: {e}", m.id)))?;
        modes.push(mode);
    }

    let mut devices = Vec::with_capacity(file.devices.len());
    for d in &file.devices {
        let mut obj = d.params.clone();
        if obj.contains_key("kind") {
            return Err(invalid(format!(
                "device {}: params must not contain 'kind'",
                d.id
            )));
        }
        obj.insert("kind".into(), Value::String(d.kind.clone()));
        let kind: DeviceKind = serde_json::from_value(Value::Object(obj))
            .map_err(|e| invalid(format!("device {}: {e}", d.id)))?;
        let device = FeedbackDevice::new(d.id, kind, d.gamma.unwrap_or(DEFAULT_GAMMA))
            .map_err(|e| invalid(format!("device {}: {e}", d.id)))?;
        devices.push(device);
    }

    let sched = &file.schedule;
    let schedule = SwitchingSchedule::new(
        sched.sti.iter().map(|s| (s.t, s.mode)).collect(),
        sched.sti0.iter().map(|s| (s.t, s.device)).collect(),
        sched.marked.clone(),
        sched.min_dwell,
        sched.xi,
        modes.len(),
    )
    .map_err(|e| invalid(e.to_string()))?;
    for &(t, m) in schedule.sti() {
        if !modes.iter().any(|x| x.id() == m) {
            return Err(invalid(format!(
                "sti instant {t} activates unknown mode {m}"
            )));
        }
    }
    for &(t, d) in schedule.sti0() {
        if !devices.iter().any(|x| x.id() == d) {
            return Err(invalid(format!(
                "sti0 instant {t} activates unknown device {d}"
            )));
        }
    }

    let sim = &file.simulation;
    let an = file.analysis;
    let scenario = Scenario::new(
        modes,
        devices,
        schedule,
        DVector::from_vec(sim.x0.clone()),
        sim.horizon,
        sim.dt,
        sim.probe.clone(),
        an.frequency_grid,
    )
    .map_err(|e| invalid(e.to_string()))?;

    let eps_margin = positive(an.eps_margin, "eps_margin")?.unwrap_or(DEFAULT_EPS_MARGIN);
    let delta = match an.delta {
        Some(d) if !(d > 0.0 && d < 1.0) => {
            return Err(invalid(format!("delta must lie in (0, 1), got {d}")))
        }
        d => d,
    };
    if !scenario.schedule.marked().is_empty() && delta.is_none() {
        return Err(invalid("marked instants require analysis.delta"));
    }
    let k_sat = positive(an.k_sat, "K_sat")?;
    let lambda_sat = positive(an.lambda_sat, "lambda_sat")?;
    let lambda0 = positive(an.lambda0, "lambda0")?;
    let saturation = match (k_sat, lambda_sat, lambda0) {
        (Some(k), Some(lambda), Some(lambda0)) => Some(SaturationParams { k, lambda, lambda0 }),
        (None, None, None) => None,
        _ => {
            return Err(invalid(
                "K_sat, lambda_sat and lambda0 must be given together",
            ))
        }
    };
    let u_sq_cap = match an.u_sq_cap {
        Some(c) if !(c >= 0.0 && c.is_finite()) => {
            return Err(invalid(format!("u_sq_cap must be nonnegative, got {c}")))
        }
        c => c,
    };

    let n = scenario.x0.len();
    let p = scenario.modes.len();
    let mut battery = BatteryOptions {
        eps_margin,
        seed: an.seed.unwrap_or(0),
        search_directions: DEFAULT_SEARCH_DIRECTIONS,
        ..Default::default()
    };
    if let Some(l) = an.lyapunov {
        if let Some(rows) = l.p {
            let pm = matrix(&rows, "lyapunov P")?;
            if pm.nrows() != n {
                return Err(invalid(format!(
                    "lyapunov P is {0}x{0} but the state has dimension {n}",
                    pm.nrows()
                )));
            }
            battery.user_p = Some(pm);
        }
        for (k, fam) in l.x_families.iter().enumerate() {
            if fam.len() != p {
                return Err(invalid(format!(
                    "X family {k} has {} matrices for {p} modes",
                    fam.len()
                )));
            }
            let mats = fam
                .iter()
                .map(|rows| matrix(rows, &format!("X family {k}")))
                .collect::<Result<Vec<_>, _>>()?;
            if mats.iter().any(|m| m.nrows() != n) {
                return Err(invalid(format!(
                    "X family {k} has matrices of the wrong dimension"
                )));
            }
            battery.x_families.push(mats);
        }
        for (k, c) in l.combos.into_iter().enumerate() {
            if c.alphas.len() != p || c.betas.len() != p {
                return Err(invalid(format!("combo {k} needs {p} alphas and {p} betas")));
            }
            battery.combos.push(Combination {
                alphas: c.alphas,
                betas: c.betas,
            });
        }
    }

    Ok(LoadedScenario {
        scenario,
        analysis: AnalysisConfig {
            eps_margin,
            delta,
            saturation,
            u_sq_cap,
            battery,
        },
        digest,
    })
}
