use serde::Serialize;

use super::SupervisorError;

/// Default bound on the index gap between consecutive marked instants.
pub const DEFAULT_XI: usize = 64;

/// Switching instants of the linear block (`sti`) and of the feedback device
/// (`sti0`), plus the marked subset used for minimum-residence supervision.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwitchingSchedule {
    sti: Vec<(f64, usize)>,
    sti0: Vec<(f64, usize)>,
    marked: Vec<f64>,
    min_dwell: f64,
    xi: usize,
}

/// One activation interval `[start, end)`; `end` is infinite for the last one
/// unless a horizon is supplied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub index: usize,
    pub start: f64,
    pub end: f64,
    pub mode: usize,
    pub device: usize,
    pub marked: bool,
}

impl Interval {
    pub fn length(&self) -> f64 {
        self.end - self.start
    }
}

fn fmt_t(t: f64) -> String {
    format!("{t}")
}

impl SwitchingSchedule {
    /// Validates and builds a schedule. `mode_count` is the size of the mode
    /// family; consecutive modes must differ when it exceeds one.
    pub fn new(
        sti: Vec<(f64, usize)>,
        sti0: Vec<(f64, usize)>,
        marked: Vec<f64>,
        min_dwell: f64,
        xi: Option<usize>,
        mode_count: usize,
    ) -> Result<Self, SupervisorError> {
        let err = |m: String| Err(SupervisorError::Schedule(m));
        if !(min_dwell >= 0.0) || !min_dwell.is_finite() {
            return err(format!(
                "min_dwell must be finite and nonnegative, got {min_dwell}"
            ));
        }
        let xi = xi.unwrap_or(DEFAULT_XI);
        if xi == 0 {
            return err("xi must be positive".into());
        }
        if sti.first().map(|s| s.0) != Some(0.0) {
            return err("sti must start at t = 0".into());
        }
        if sti0.first().map(|s| s.0) != Some(0.0) {
            return err("sti0 must start at t = 0".into());
        }
        if sti.iter().chain(&sti0).any(|s| !s.0.is_finite())
            || marked.iter().any(|t| !t.is_finite())
        {
            return err("switching instants must be finite".into());
        }
        for w in sti.windows(2) {
            if !(w[1].0 > w[0].0) {
                return err(format!(
                    "sti instants must strictly increase ({} then {})",
                    fmt_t(w[0].0),
                    fmt_t(w[1].0)
                ));
            }
            if w[1].0 - w[0].0 < min_dwell {
                return err(format!(
                    "sti gap {} -> {} is shorter than min_dwell {}",
                    fmt_t(w[0].0),
                    fmt_t(w[1].0),
                    fmt_t(min_dwell)
                ));
            }
            if mode_count > 1 && w[0].1 == w[1].1 {
                return err(format!(
                    "consecutive activations at {} and {} repeat mode {}",
                    fmt_t(w[0].0),
                    fmt_t(w[1].0),
                    w[0].1
                ));
            }
        }
        for w in sti0.windows(2) {
            if !(w[1].0 > w[0].0) {
                return err(format!(
                    "sti0 instants must strictly increase ({} then {})",
                    fmt_t(w[0].0),
                    fmt_t(w[1].0)
                ));
            }
        }
        let index_of = |t: f64| sti.iter().position(|s| s.0 == t);
        for s in &sti0 {
            if index_of(s.0).is_none() {
                return err(format!("sti0 instant {} not in sti", fmt_t(s.0)));
            }
        }
        let mut marked_idx = Vec::with_capacity(marked.len());
        for &t in &marked {
            match index_of(t) {
                Some(i) => marked_idx.push(i),
                None => return err(format!("marked instant {} not in sti", fmt_t(t))),
            }
        }
        if marked_idx.windows(2).any(|w| w[1] <= w[0]) {
            return err("marked instants must strictly increase".into());
        }
        for w in marked_idx.windows(2) {
            if w[1] - w[0] > xi {
                return err(format!(
                    "marked instants {} and {} are {} switches apart, more than xi = {xi}",
                    fmt_t(sti[w[0]].0),
                    fmt_t(sti[w[1]].0),
                    w[1] - w[0]
                ));
            }
        }
        Ok(Self {
            sti,
            sti0,
            marked,
            min_dwell,
            xi,
        })
    }

    pub fn sti(&self) -> &[(f64, usize)] {
        &self.sti
    }
    pub fn sti0(&self) -> &[(f64, usize)] {
        &self.sti0
    }
    pub fn marked(&self) -> &[f64] {
        &self.marked
    }
    pub fn min_dwell(&self) -> f64 {
        self.min_dwell
    }
    pub fn xi(&self) -> usize {
        self.xi
    }
    pub fn last_instant(&self) -> f64 {
        self.sti.last().map(|s| s.0).unwrap_or(0.0)
    }
    pub fn mode_ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.sti.iter().map(|s| s.1).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
    pub fn device_ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.sti0.iter().map(|s| s.1).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Active mode at `t` (right-continuous).
    pub fn mode_at(&self, t: f64) -> usize {
        let i = self.sti.partition_point(|s| s.0 <= t);
        self.sti[i.saturating_sub(1)].1
    }

    /// Active device at `t` (right-continuous).
    pub fn device_at(&self, t: f64) -> usize {
        let i = self.sti0.partition_point(|s| s.0 <= t);
        self.sti0[i.saturating_sub(1)].1
    }

    pub fn is_marked(&self, t: f64) -> bool {
        self.marked.contains(&t)
    }

    /// Activation intervals; the last one ends at `horizon` (infinite if `None`).
    pub fn intervals(&self, horizon: Option<f64>) -> Vec<Interval> {
        let end_last = horizon.unwrap_or(f64::INFINITY);
        self.sti
            .iter()
            .enumerate()
            .map(|(i, &(start, mode))| Interval {
                index: i,
                start,
                end: self.sti.get(i + 1).map(|s| s.0).unwrap_or(end_last),
                mode,
                device: self.device_at(start),
                marked: self.is_marked(start),
            })
            .collect()
    }
}
