//! Switching laws, per-instant classes, the energy floor, residence-time bounds
//! and the composite hyperstability verdict.

mod floor;
mod residence;
mod schedule;
mod verdict;

pub(crate) use floor::classify_instant;
pub use floor::{
    classify_schedule, floor_increment, ClassifiedInstant, EnergyFloor, InstantClass,
    InstantClassification,
};
pub use residence::{
    contraction_check, max_residence_bound, min_residence_bound, saturation_vanishing_check,
    ContractionOutcome, NegativeInterval, ResidenceDeadline, SaturationOutcome, DEADLINE_SAFETY,
    TOL_CONTR,
};
pub use schedule::{Interval, SwitchingSchedule, DEFAULT_XI};
pub use verdict::{
    hyperstability_verdict, AnalysisVerdict, Condition, DeviceAssessment, MarkedCheck,
    ResidenceCheck, VerdictContext, VerdictKind,
};

use thiserror::Error;

use crate::lti::LtiError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SupervisorError {
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("mode {0} has no classification")]
    UnclassifiedMode(usize),
    #[error(
        "input window covers [{covered_start}, {covered_end}] but [{start}, {end}] is required"
    )]
    Coverage {
        start: f64,
        end: f64,
        covered_start: f64,
        covered_end: f64,
    },
    #[error("energy floor is already depleted (g = {g})")]
    FloorDepleted { g: f64 },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("stability requirement violated: {0}")]
    Stability(String),
    #[error("check not applicable: {0}")]
    Applicability(String),
    #[error(transparent)]
    Lti(#[from] LtiError),
}
