//! Nonlinear feedback devices `phi(y, t)` and the running Popov integral
//! `int_0^t phi(y, tau) y(tau) dtau` with its floor checks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeedbackError {
    #[error("unknown device index {0}")]
    UnknownDevice(usize),
    #[error("invalid device parameters: {0}")]
    Parameter(String),
    #[error("ledger covers [0, {available}] but [0, {requested}] was requested")]
    Coverage { requested: f64, available: f64 },
    #[error("check not applicable: {0}")]
    Applicability(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DeviceKind {
    /// `phi = k y`; any sign of `k` is accepted so destabilizing gains can be studied.
    Linear { k: f64 },
    /// Smooth monotone nonlinearity with incremental gain between `k1` (near zero)
    /// and `k2` (for large `|y|`): `phi = y (k1 + (k2 - k1)(1 - exp(-y^2)))`.
    Sector { k1: f64, k2: f64 },
    /// `phi = clamp(k y, -limit, limit)`.
    Saturation { k: f64, limit: f64 },
    /// `phi = amplitude * sign(y)` for `|y| > threshold`, zero otherwise.
    Relay { threshold: f64, amplitude: f64 },
    /// `phi = k(t) y` with `k` piecewise constant, right-continuous at the breakpoints.
    TimeVaryingGain { breakpoints: Vec<(f64, f64)> },
    /// Piecewise-linear interpolation through `(y, phi)` points, constant outside.
    Tabulated { points: Vec<(f64, f64)> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeedbackDevice {
    id: usize,
    kind: DeviceKind,
    gamma: f64,
}

pub const DEFAULT_GAMMA: f64 = 1.0;

fn finite(v: f64, what: &str) -> Result<(), FeedbackError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(FeedbackError::Parameter(format!("{what} must be finite")))
    }
}

impl FeedbackDevice {
    pub fn new(id: usize, kind: DeviceKind, gamma: f64) -> Result<Self, FeedbackError> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(FeedbackError::Parameter(format!(
                "gamma must be positive, got {gamma}"
            )));
        }
        match &kind {
            DeviceKind::Linear { k } => finite(*k, "k")?,
            DeviceKind::Sector { k1, k2 } => {
                finite(*k1, "k1")?;
                finite(*k2, "k2")?;
                if k1 > k2 {
                    return Err(FeedbackError::Parameter(format!(
                        "sector needs k1 <= k2, got [{k1}, {k2}]"
                    )));
                }
            }
            DeviceKind::Saturation { k, limit } => {
                finite(*k, "k")?;
                if !(*limit > 0.0) || !limit.is_finite() {
                    return Err(FeedbackError::Parameter(format!(
                        "saturation limit must be positive, got {limit}"
                    )));
                }
            }
            DeviceKind::Relay {
                threshold,
                amplitude,
            } => {
                if !(*threshold >= 0.0) || !threshold.is_finite() {
                    return Err(FeedbackError::Parameter(
                        "relay threshold must be nonnegative".into(),
                    ));
                }
                finite(*amplitude, "amplitude")?;
            }
            DeviceKind::TimeVaryingGain { breakpoints } => {
                if breakpoints.first().map(|b| b.0) != Some(0.0) {
                    return Err(FeedbackError::Parameter(
                        "gain schedule must start at t = 0".into(),
                    ));
                }
                if breakpoints.windows(2).any(|w| !(w[1].0 > w[0].0)) {
                    return Err(FeedbackError::Parameter(
                        "gain breakpoints must strictly increase".into(),
                    ));
                }
                if breakpoints
                    .iter()
                    .any(|&(t, k)| !t.is_finite() || !(k >= 0.0) || !k.is_finite())
                {
                    return Err(FeedbackError::Parameter(
                        "gains must be finite and nonnegative".into(),
                    ));
                }
            }
            DeviceKind::Tabulated { points } => {
                if points.is_empty() {
                    return Err(FeedbackError::Parameter(
                        "tabulated device needs at least one point".into(),
                    ));
                }
                if points.windows(2).any(|w| !(w[1].0 > w[0].0)) {
                    return Err(FeedbackError::Parameter(
                        "tabulated abscissae must strictly increase".into(),
                    ));
                }
                if points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
                    return Err(FeedbackError::Parameter(
                        "tabulated points must be finite".into(),
                    ));
                }
            }
        }
        Ok(Self { id, kind, gamma })
    }

    pub fn id(&self) -> usize {
        self.id
    }
    pub fn kind(&self) -> &DeviceKind {
        &self.kind
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Tolerance applied to floor checks: `1e-6 (1 + gamma)`.
    pub fn tol_popov(&self) -> f64 {
        tol_popov(self.gamma)
    }

    /// `phi(y, t)`.
    pub fn phi(&self, y: f64, t: f64) -> f64 {
        match &self.kind {
            DeviceKind::TimeVaryingGain { breakpoints } => gain_at(breakpoints, t, false) * y,
            _ => self.phi_static(y),
        }
    }

    /// `phi(y, t^-)`: the left limit in time, differing from [`phi`](Self::phi)
    /// only at gain breakpoints.
    pub fn phi_left(&self, y: f64, t: f64) -> f64 {
        match &self.kind {
            DeviceKind::TimeVaryingGain { breakpoints } => gain_at(breakpoints, t, true) * y,
            _ => self.phi_static(y),
        }
    }

    fn phi_static(&self, y: f64) -> f64 {
        match &self.kind {
            DeviceKind::Linear { k } => k * y,
            DeviceKind::Sector { k1, k2 } => y * (k1 + (k2 - k1) * (1.0 - (-y * y).exp())),
            DeviceKind::Saturation { k, limit } => (k * y).clamp(-limit, *limit),
            DeviceKind::Relay {
                threshold,
                amplitude,
            } => {
                if y.abs() > *threshold {
                    amplitude * y.signum()
                } else {
                    0.0
                }
            }
            DeviceKind::Tabulated { points } => interpolate(points, y),
            DeviceKind::TimeVaryingGain { .. } => unreachable!("time-varying gain needs t"),
        }
    }

    /// Nondecreasing in `y` for every fixed `t`.
    pub fn is_monotone(&self) -> bool {
        match &self.kind {
            DeviceKind::Linear { k } => *k >= 0.0,
            // d/dy = k1 + (k2 - k1)(1 - e^{-y^2} + 2 y^2 e^{-y^2}) >= k1 since k2 >= k1
            DeviceKind::Sector { k1, .. } => *k1 >= 0.0,
            DeviceKind::Saturation { k, .. } => *k >= 0.0,
            DeviceKind::Relay { amplitude, .. } => *amplitude >= 0.0,
            DeviceKind::TimeVaryingGain { .. } => true,
            DeviceKind::Tabulated { points } => points.windows(2).all(|w| w[1].1 >= w[0].1),
        }
    }

    /// `phi(y, t) y >= 0` for all `y`, `t`; such a device satisfies the Popov
    /// inequality with any `gamma > 0`.
    pub fn is_sector(&self) -> bool {
        match &self.kind {
            DeviceKind::Linear { k } => *k >= 0.0,
            DeviceKind::Sector { k1, .. } => *k1 >= 0.0,
            DeviceKind::Saturation { k, .. } => *k >= 0.0,
            DeviceKind::Relay { amplitude, .. } => *amplitude >= 0.0,
            DeviceKind::TimeVaryingGain { .. } => true,
            DeviceKind::Tabulated { points } => {
                points.iter().all(|&(y, p)| y * p >= 0.0) && interpolate(points, 0.0) == 0.0
            }
        }
    }

    /// Instants where `phi` jumps in time.
    pub fn breakpoints(&self) -> Vec<f64> {
        match &self.kind {
            DeviceKind::TimeVaryingGain { breakpoints } => {
                breakpoints.iter().skip(1).map(|b| b.0).collect()
            }
            _ => Vec::new(),
        }
    }
}

pub fn tol_popov(gamma: f64) -> f64 {
    1e-6 * (1.0 + gamma)
}

fn gain_at(breakpoints: &[(f64, f64)], t: f64, left: bool) -> f64 {
    let idx = if left {
        breakpoints.partition_point(|b| b.0 < t)
    } else {
        breakpoints.partition_point(|b| b.0 <= t)
    };
    breakpoints[idx.saturating_sub(1)].1
}

fn interpolate(points: &[(f64, f64)], y: f64) -> f64 {
    let first = points[0];
    let last = points[points.len() - 1];
    if y <= first.0 {
        return first.1;
    }
    if y >= last.0 {
        return last.1;
    }
    let i = points.partition_point(|p| p.0 <= y);
    let (a, b) = (points[i - 1], points[i]);
    a.1 + (b.1 - a.1) * (y - a.0) / (b.0 - a.0)
}

/// `u = -phi_{j0}(y, t)` for the device with id `j0`.
pub fn feedback_output(
    devices: &[FeedbackDevice],
    j0: usize,
    y: f64,
    t: f64,
) -> Result<f64, FeedbackError> {
    let device = devices
        .iter()
        .find(|d| d.id() == j0)
        .ok_or(FeedbackError::UnknownDevice(j0))?;
    Ok(-device.phi(y, t))
}

/// Running Popov integral with recorded samples `(t, integral)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PopovLedger {
    gamma: f64,
    samples: Vec<(f64, f64)>,
    #[serde(skip)]
    integrand: Option<f64>,
    violated_at: Option<f64>,
}

impl PopovLedger {
    pub fn new(gamma: f64) -> Self {
        Self {
            gamma,
            samples: vec![(0.0, 0.0)],
            integrand: None,
            violated_at: None,
        }
    }

    /// Ledger over externally computed samples; the first sample must be `(0, 0)`.
    pub fn from_samples(gamma: f64, samples: Vec<(f64, f64)>) -> Result<Self, FeedbackError> {
        if samples.first() != Some(&(0.0, 0.0)) {
            return Err(FeedbackError::Parameter(
                "ledger must start at (0, 0)".into(),
            ));
        }
        if samples.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(FeedbackError::Parameter(
                "ledger times must strictly increase".into(),
            ));
        }
        let mut ledger = Self {
            gamma,
            samples: vec![(0.0, 0.0)],
            integrand: None,
            violated_at: None,
        };
        for &(t, v) in &samples[1..] {
            ledger.push(t, v);
        }
        Ok(ledger)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn integral(&self) -> f64 {
        self.samples.last().map(|s| s.1).unwrap_or(0.0)
    }
    pub fn time(&self) -> f64 {
        self.samples.last().map(|s| s.0).unwrap_or(0.0)
    }
    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }
    /// First time the integral crossed `-gamma`, recorded once it fell below
    /// `-gamma - tol_popov`.
    pub fn violated_at(&self) -> Option<f64> {
        self.violated_at
    }

    /// Sets the integrand value at the current time, e.g. the right limit after
    /// a switch.
    pub fn restart_integrand(&mut self, y: f64, phi: f64) {
        self.integrand = Some(y * phi);
    }

    /// Trapezoidal step of length `dt` ending at the sample `(y, phi)`.
    pub fn update(&mut self, y: f64, phi: f64, dt: f64) {
        let value = y * phi;
        let prev = self.integrand.unwrap_or(value);
        let t = self.time() + dt;
        let next = self.integral() + 0.5 * dt * (prev + value);
        self.integrand = Some(value);
        self.push(t, next);
    }

    /// Step of length `dt` with an externally computed increment; `(y, phi)`
    /// is the integrand sample at the end of the step.
    pub fn advance(&mut self, increment: f64, y_end: f64, phi_end: f64, dt: f64) {
        let t = self.time() + dt;
        let next = self.integral() + increment;
        self.integrand = Some(y_end * phi_end);
        self.push(t, next);
    }

    /// Appends a sample at absolute time `t`.
    pub fn push(&mut self, t: f64, value: f64) {
        let (t_prev, v_prev) = *self.samples.last().unwrap();
        let floor = -self.gamma;
        if self.violated_at.is_none() && value < floor - tol_popov(self.gamma) {
            let crossing = if v_prev > floor && value < v_prev {
                t_prev + (t - t_prev) * (v_prev - floor) / (v_prev - value)
            } else {
                t_prev
            };
            self.violated_at = Some(crossing);
        }
        self.samples.push((t, value));
    }

    /// Integral at `t` by linear interpolation between samples.
    pub fn value_at(&self, t: f64) -> Result<f64, FeedbackError> {
        let end = self.time();
        if t < 0.0 || t > end * (1.0 + 1e-12) + 1e-12 {
            return Err(FeedbackError::Coverage {
                requested: t,
                available: end,
            });
        }
        let i = self.samples.partition_point(|s| s.0 <= t);
        if i >= self.samples.len() {
            return Ok(self.integral());
        }
        let (a, b) = (self.samples[i - 1], self.samples[i]);
        Ok(a.1 + (b.1 - a.1) * (t - a.0) / (b.0 - a.0))
    }

    /// Whether the integral stays above `-gamma - tol` at every sample.
    pub fn global_check(&self) -> bool {
        let floor = -self.gamma - tol_popov(self.gamma);
        self.samples.iter().all(|s| s.1 >= floor)
    }
}

/// Result of a floor check over one window of the ledger.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FloorOutcome {
    pub start: f64,
    pub end: f64,
    pub pass: bool,
    /// `min (integral + gamma)` over the checked points.
    pub min_margin: f64,
    /// Offset from `start` of the first point below the floor.
    pub first_violation: Option<f64>,
}

fn check_points(
    ledger: &PopovLedger,
    start: f64,
    points: impl Iterator<Item = f64>,
) -> Result<FloorOutcome, FeedbackError> {
    let floor = -ledger.gamma() - tol_popov(ledger.gamma());
    let mut min_margin = f64::INFINITY;
    let mut first_violation = None;
    let mut end = start;
    for t in points {
        let v = ledger.value_at(t)?;
        min_margin = min_margin.min(v + ledger.gamma());
        if first_violation.is_none() && v < floor {
            first_violation = Some(t - start);
        }
        end = end.max(t);
    }
    Ok(FloorOutcome {
        start,
        end,
        pass: first_violation.is_none(),
        min_margin,
        first_violation,
    })
}

/// Checks `int_0^{t_i + eta} phi y >= -gamma` at every offset in `eta_grid`.
pub fn interval_floor_check(
    ledger: &PopovLedger,
    t_i: f64,
    eta_grid: &[f64],
) -> Result<FloorOutcome, FeedbackError> {
    let max_eta = eta_grid.iter().copied().fold(0.0, f64::max);
    if t_i + max_eta > ledger.time() * (1.0 + 1e-12) + 1e-12 {
        return Err(FeedbackError::Coverage {
            requested: t_i + max_eta,
            available: ledger.time(),
        });
    }
    check_points(ledger, t_i, eta_grid.iter().map(|eta| t_i + eta))
}

/// Checks the floor on `[start, end)` at every ledger sample in that window
/// and at `start` itself.
pub fn window_floor_check(
    ledger: &PopovLedger,
    start: f64,
    end: f64,
) -> Result<FloorOutcome, FeedbackError> {
    if end > ledger.time() * (1.0 + 1e-12) + 1e-12 {
        return Err(FeedbackError::Coverage {
            requested: end,
            available: ledger.time(),
        });
    }
    let inner = ledger
        .samples()
        .iter()
        .map(|s| s.0)
        .filter(move |&t| t > start && t < end);
    check_points(ledger, start, std::iter::once(start).chain(inner))
}

/// Whether a schedule has finitely many switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SwitchingExtent {
    Finite,
    Unbounded,
}

/// Floor check on `[t_q, end of ledger]` after the last switch `t_q`.
pub fn tail_floor_check(
    ledger: &PopovLedger,
    t_q: f64,
    extent: SwitchingExtent,
) -> Result<FloorOutcome, FeedbackError> {
    if extent == SwitchingExtent::Unbounded {
        return Err(FeedbackError::Applicability(
            "tail check needs a schedule with a last switching instant".into(),
        ));
    }
    if t_q > ledger.time() {
        return Err(FeedbackError::Coverage {
            requested: t_q,
            available: ledger.time(),
        });
    }
    let inner = ledger
        .samples()
        .iter()
        .map(|s| s.0)
        .filter(move |&t| t > t_q);
    check_points(ledger, t_q, std::iter::once(t_q).chain(inner))
}
