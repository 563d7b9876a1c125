use std::collections::BTreeMap;

use serde::Serialize;

use super::{SupervisorError, SwitchingSchedule};
use crate::lti::{PrClass, PrClassification};

/// Class of a switching instant by the sign of `min Re G(j omega)` of the mode
/// it activates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum InstantClass {
    #[serde(rename = "p")]
    Positive,
    #[serde(rename = "n")]
    Negative,
    #[serde(rename = "z")]
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassifiedInstant {
    pub t: f64,
    pub mode: usize,
    pub class: InstantClass,
    /// 1 for positive and zero classes, 0 for negative.
    pub mu: u8,
    /// Coefficient multiplying `int u^2` in the floor (positive class only).
    pub floor_coefficient: f64,
    pub max_abs_re: f64,
    pub strictly_positive_real: bool,
    /// Strictly positive real with `min Re = 0` only in the infinite-frequency
    /// limit; accounted as positive with its finite-grid minimum.
    pub finite_grid_floor: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstantClassification {
    pub instants: Vec<ClassifiedInstant>,
}

impl InstantClassification {
    pub fn times(&self, class: InstantClass) -> Vec<f64> {
        self.instants
            .iter()
            .filter(|i| i.class == class)
            .map(|i| i.t)
            .collect()
    }
    pub fn at(&self, index: usize) -> &ClassifiedInstant {
        &self.instants[index]
    }
}

pub(crate) fn classify_instant(t: f64, mode: usize, c: &PrClassification) -> ClassifiedInstant {
    let (class, coeff, flagged) = match c.class {
        PrClass::PositiveMin => (InstantClass::Positive, c.min_re, false),
        PrClass::ZeroMin if c.is_strictly_positive_real => {
            (InstantClass::Positive, c.finite_min_re, true)
        }
        PrClass::ZeroMin => (InstantClass::Zero, 0.0, false),
        PrClass::NegativeMin => (InstantClass::Negative, 0.0, false),
    };
    ClassifiedInstant {
        t,
        mode,
        class,
        mu: u8::from(class != InstantClass::Negative),
        floor_coefficient: coeff,
        max_abs_re: c.max_abs_re,
        strictly_positive_real: c.is_strictly_positive_real,
        finite_grid_floor: flagged,
    }
}

/// Partitions the switching instants into positive, negative and zero classes.
pub fn classify_schedule(
    schedule: &SwitchingSchedule,
    classifications: &BTreeMap<usize, PrClassification>,
) -> Result<InstantClassification, SupervisorError> {
    let instants = schedule
        .sti()
        .iter()
        .map(|&(t, mode)| {
            classifications
                .get(&mode)
                .map(|c| classify_instant(t, mode, c))
                .ok_or(SupervisorError::UnclassifiedMode(mode))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(InstantClassification { instants })
}

/// Floor increment over one activation interval `[start, end]` from sampled
/// input `(t, u)`: `coeff * int u^2` for the positive class,
/// `-(end - start) * max_abs_re * max u^2` for the negative class, zero otherwise.
pub fn floor_increment(
    class: InstantClass,
    floor_coefficient: f64,
    max_abs_re: f64,
    window: &[(f64, f64)],
    start: f64,
    end: f64,
) -> Result<f64, SupervisorError> {
    let tol = 1e-9 * (1.0 + end.abs());
    let (first, last) = match (window.first(), window.last()) {
        (Some(f), Some(l)) => (f.0, l.0),
        _ => (f64::NAN, f64::NAN),
    };
    if !(first <= start + tol && last >= end - tol) {
        return Err(SupervisorError::Coverage {
            start,
            end,
            covered_start: first,
            covered_end: last,
        });
    }
    let inside: Vec<(f64, f64)> = window
        .iter()
        .copied()
        .filter(|&(t, _)| t >= start - tol && t <= end + tol)
        .collect();
    Ok(match class {
        InstantClass::Positive => {
            let integral: f64 = inside
                .windows(2)
                .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 * w[0].1 + w[1].1 * w[1].1))
                .sum();
            floor_coefficient * integral
        }
        InstantClass::Negative => {
            let max_u2 = inside.iter().map(|s| s.1 * s.1).fold(0.0, f64::max);
            -(end - start) * max_abs_re * max_u2
        }
        InstantClass::Zero => 0.0,
    })
}

/// Running energy floor `g(t)`, advanced step by step during a simulation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyFloor {
    /// `g` at each switching instant.
    pub at_instants: Vec<(f64, f64)>,
    start: f64,
    g_start: f64,
    mu: bool,
    coefficient: f64,
    max_abs_re: f64,
    int_u2: f64,
    max_u2: f64,
    value: f64,
}

impl Default for EnergyFloor {
    fn default() -> Self {
        Self::new()
    }
}

impl EnergyFloor {
    /// `g(0) = 0`.
    pub fn new() -> Self {
        Self {
            at_instants: Vec::new(),
            start: 0.0,
            g_start: 0.0,
            mu: true,
            coefficient: 0.0,
            max_abs_re: 0.0,
            int_u2: 0.0,
            max_u2: 0.0,
            value: 0.0,
        }
    }

    /// Closes the current interval at `t` and opens one for `instant`.
    pub fn begin_interval(&mut self, t: f64, instant: &ClassifiedInstant) {
        self.at_instants.push((t, self.value));
        self.start = t;
        self.g_start = self.value;
        self.mu = instant.class != InstantClass::Negative;
        self.coefficient = if instant.class == InstantClass::Positive {
            instant.floor_coefficient
        } else {
            0.0
        };
        self.max_abs_re = instant.max_abs_re;
        self.int_u2 = 0.0;
        self.max_u2 = 0.0;
    }

    /// Records `u^2` samples seen so far in the interval; `int_u2_increment`
    /// is the integral of `u^2` over the latest step ending at `t`.
    pub fn observe(&mut self, t: f64, int_u2_increment: f64, max_u2_in_step: f64) -> f64 {
        self.int_u2 += int_u2_increment;
        self.max_u2 = self.max_u2.max(max_u2_in_step);
        self.value = if self.mu {
            self.g_start + self.coefficient * self.int_u2
        } else {
            self.g_start - (t - self.start) * self.max_abs_re * self.max_u2
        };
        self.value
    }

    /// Registers a `u^2` sample at the current interval start without advancing time.
    pub fn observe_start_sample(&mut self, u2: f64) {
        self.max_u2 = self.max_u2.max(u2);
    }

    pub fn value(&self) -> f64 {
        self.value
    }
    pub fn interval_start(&self) -> f64 {
        self.start
    }
    pub fn g_at_interval_start(&self) -> f64 {
        self.g_start
    }
    pub fn running_max_u2(&self) -> f64 {
        self.max_u2
    }
    pub fn max_abs_re(&self) -> f64 {
        self.max_abs_re
    }
}
