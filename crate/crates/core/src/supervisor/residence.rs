use serde::Serialize;

use super::SupervisorError;
use crate::lti::DecayEnvelope;

/// Fraction of the maximum residence bound used for online deadlines.
pub const DEADLINE_SAFETY: f64 = 0.95;
/// Relative slack on contraction ratios.
pub const TOL_CONTR: f64 = 1e-3;

/// Longest admissible stay `g / (max|Re G| max u^2)` in a mode with negative
/// real-part minimum, infinite when the input vanishes.
pub fn max_residence_bound(g: f64, max_abs_re: f64, max_u_sq: f64) -> Result<f64, SupervisorError> {
    if g < 0.0 {
        return Err(SupervisorError::FloorDepleted { g });
    }
    if !(max_abs_re >= 0.0) || !(max_u_sq >= 0.0) {
        return Err(SupervisorError::Parameter(format!(
            "max|Re G| and max u^2 must be nonnegative, got {max_abs_re} and {max_u_sq}"
        )));
    }
    let denom = max_abs_re * max_u_sq;
    if denom == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(g / denom)
}

/// Online deadline for the current negative-class interval, re-tightened as
/// the running maximum of `u^2` grows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidenceDeadline {
    pub start: f64,
    pub g_start: f64,
    pub max_abs_re: f64,
    pub safety: f64,
}

impl ResidenceDeadline {
    pub fn new(
        start: f64,
        g_start: f64,
        max_abs_re: f64,
        safety: f64,
    ) -> Result<Self, SupervisorError> {
        if !(safety > 0.0 && safety <= 1.0) {
            return Err(SupervisorError::Parameter(format!(
                "safety factor must lie in (0, 1], got {safety}"
            )));
        }
        if g_start < 0.0 {
            return Err(SupervisorError::FloorDepleted { g: g_start });
        }
        Ok(Self {
            start,
            g_start,
            max_abs_re,
            safety,
        })
    }

    /// Latest admissible switch time given the running maximum of `u^2`.
    pub fn deadline(&self, running_max_u2: f64) -> f64 {
        match max_residence_bound(self.g_start, self.max_abs_re, running_max_u2) {
            Ok(b) => self.start + self.safety * b,
            Err(_) => self.start,
        }
    }
}

/// Minimum dwell `T*` in a marked Hurwitz mode so that the product of decay
/// factors since the previous marked instant is at most `delta`:
/// `T* = max(0, (ln K* + sum ln K_l - sum rho_l T_l - ln delta) / rho*)`.
pub fn min_residence_bound(
    marked: &DecayEnvelope,
    intermediates: &[(DecayEnvelope, f64)],
    delta: f64,
) -> Result<f64, SupervisorError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(SupervisorError::Parameter(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    if !(marked.rho > 0.0) {
        return Err(SupervisorError::Stability(format!(
            "marked mode must be Hurwitz (decay rate {})",
            marked.rho
        )));
    }
    let mut numerator = marked.k.ln() - delta.ln();
    for (env, dwell) in intermediates {
        if !(*dwell >= 0.0) || !dwell.is_finite() {
            return Err(SupervisorError::Parameter(format!(
                "intermediate dwell must be finite, got {dwell}"
            )));
        }
        numerator += env.k.ln() - env.rho * dwell;
    }
    Ok((numerator / marked.rho).max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionOutcome {
    /// `(t_k, t_{k+1}, ratio)`; `None` where `||x(t_k)||` is negligible.
    pub ratios: Vec<(f64, f64, Option<f64>)>,
    pub pass: bool,
    pub max_ratio: Option<f64>,
}

/// `||x(t*_{k+1})|| / ||x(t*_k)|| <= delta (1 + TOL_CONTR)` over consecutive
/// marked instants; `norms` holds `(t, ||x(t)||)` samples.
pub fn contraction_check(
    norms: &[(f64, f64)],
    marked: &[f64],
    delta: f64,
) -> Result<ContractionOutcome, SupervisorError> {
    let lookup = |t: f64| -> Result<f64, SupervisorError> {
        let i = norms.partition_point(|s| s.0 < t - 1e-9 * (1.0 + t.abs()));
        match norms.get(i) {
            Some(&(ts, v)) if (ts - t).abs() <= 1e-9 * (1.0 + t.abs()) => Ok(v),
            _ => Err(SupervisorError::Coverage {
                start: t,
                end: t,
                covered_start: norms.first().map(|s| s.0).unwrap_or(f64::NAN),
                covered_end: norms.last().map(|s| s.0).unwrap_or(f64::NAN),
            }),
        }
    };
    let mut ratios = Vec::new();
    let mut pass = true;
    let mut max_ratio: Option<f64> = None;
    for w in marked.windows(2) {
        let a = lookup(w[0])?;
        let b = lookup(w[1])?;
        if a < 1e-12 {
            ratios.push((w[0], w[1], None));
            continue;
        }
        let r = b / a;
        if r > delta * (1.0 + TOL_CONTR) {
            pass = false;
        }
        max_ratio = Some(max_ratio.map_or(r, |m| m.max(r)));
        ratios.push((w[0], w[1], Some(r)));
    }
    Ok(ContractionOutcome {
        ratios,
        pass,
        max_ratio,
    })
}

/// A negative-class activation interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NegativeInterval {
    pub start: f64,
    pub end: f64,
    pub mode: usize,
    pub has_integrator: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaturationOutcome {
    pub pass: bool,
    pub envelope_pass: bool,
    pub lambda_pass: bool,
    /// `max(lambda0, max ln T_i / (2 T_i))`; `lambda` must exceed it.
    pub lambda_required: f64,
    /// Energy ceiling `gamma + K^2 / (1 - exp(-2 lambda0 t*))`, or `gamma`
    /// without negative intervals.
    pub ceiling: f64,
    pub t_star: Option<f64>,
    /// First sample `(t, interval index)` exceeding the envelope.
    pub first_violation: Option<(f64, usize)>,
}

/// Checks `|u(t)| <= K exp(-lambda t_i)` on every negative-class interval
/// and the admissibility of `lambda`.
pub fn saturation_vanishing_check(
    samples: &[(f64, f64)],
    intervals: &[NegativeInterval],
    k: f64,
    lambda: f64,
    lambda0: f64,
    gamma: f64,
) -> Result<SaturationOutcome, SupervisorError> {
    if !(k > 0.0 && lambda > 0.0 && lambda0 > 0.0) {
        return Err(SupervisorError::Parameter(format!(
            "K, lambda and lambda0 must be positive, got {k}, {lambda}, {lambda0}"
        )));
    }
    if let Some(iv) = intervals.iter().find(|iv| iv.has_integrator) {
        return Err(SupervisorError::Applicability(format!(
            "mode {} active on the negative interval at t = {} has a pole at s = 0",
            iv.mode, iv.start
        )));
    }
    let mut lambda_required = lambda0;
    for iv in intervals {
        let len = iv.end - iv.start;
        if len.is_finite() && len > 0.0 {
            lambda_required = lambda_required.max(len.ln() / (2.0 * len));
        }
    }
    let mut first_violation = None;
    'outer: for (idx, iv) in intervals.iter().enumerate() {
        let cap = k * (-lambda * iv.start).exp();
        for &(t, u) in samples.iter().filter(|s| s.0 >= iv.start && s.0 < iv.end) {
            if u.abs() > cap * (1.0 + 1e-12) {
                first_violation = Some((t, idx));
                break 'outer;
            }
        }
    }
    let t_star = intervals.first().map(|iv| iv.start);
    let ceiling = match t_star {
        Some(ts) => gamma + k * k / (1.0 - (-2.0 * lambda0 * ts).exp()),
        None => gamma,
    };
    let envelope_pass = first_violation.is_none();
    let lambda_pass = lambda > lambda_required;
    Ok(SaturationOutcome {
        pass: envelope_pass && lambda_pass,
        envelope_pass,
        lambda_pass,
        lambda_required,
        ceiling,
        t_star,
        first_violation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_residence_examples() {
        assert!((max_residence_bound(0.4, 2.0, 0.1).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(max_residence_bound(0.0, 2.0, 0.1).unwrap(), 0.0);
        assert_eq!(max_residence_bound(0.4, 2.0, 0.0).unwrap(), f64::INFINITY);
        assert_eq!(
            max_residence_bound(-0.1, 2.0, 0.1),
            Err(SupervisorError::FloorDepleted { g: -0.1 })
        );
    }

    #[test]
    fn deadline_shrinks_as_input_grows() {
        let d = ResidenceDeadline::new(1.0, 0.4, 2.0, DEADLINE_SAFETY).unwrap();
        assert_eq!(d.deadline(0.0), f64::INFINITY);
        assert!((d.deadline(0.1) - (1.0 + 0.95 * 2.0)).abs() < 1e-12);
        assert!(d.deadline(0.2) < d.deadline(0.1));
    }

    #[test]
    fn min_residence_examples() {
        let t = min_residence_bound(&DecayEnvelope { k: 2.0, rho: 1.0 }, &[], 0.5).unwrap();
        assert!((t - 4f64.ln()).abs() < 1e-12);
        assert!((2.0 * (-t).exp() - 0.5).abs() < 1e-12);

        let t = min_residence_bound(
            &DecayEnvelope { k: 1.0, rho: 1.0 },
            &[(DecayEnvelope { k: 1.0, rho: -0.5 }, 1.0)],
            0.5,
        )
        .unwrap();
        assert!((t - (0.5 + 2f64.ln())).abs() < 1e-12);
        assert!(((0.5f64).exp() * (-t).exp() - 0.5).abs() < 1e-12);

        let t = min_residence_bound(
            &DecayEnvelope { k: 1.0, rho: 1.0 },
            &[(DecayEnvelope { k: 1.0, rho: 0.3 }, 2.0)],
            0.9,
        )
        .unwrap();
        assert_eq!(t, 0.0);

        assert!(matches!(
            min_residence_bound(&DecayEnvelope { k: 1.0, rho: 1.0 }, &[], 1.0),
            Err(SupervisorError::Parameter(_))
        ));
        assert!(matches!(
            min_residence_bound(&DecayEnvelope { k: 1.0, rho: -1.0 }, &[], 0.5),
            Err(SupervisorError::Stability(_))
        ));
    }

    #[test]
    fn contraction_examples() {
        let t = 2f64.ln();
        let norms: Vec<(f64, f64)> = (0..4)
            .map(|k| (k as f64 * t, (-(k as f64) * t).exp()))
            .collect();
        let marked: Vec<f64> = norms.iter().map(|s| s.0).collect();
        let out = contraction_check(&norms, &marked, 0.5).unwrap();
        assert!(out.pass);
        assert!(out
            .ratios
            .iter()
            .all(|r| (r.2.unwrap() - 0.5).abs() < 1e-12));

        let zeros: Vec<(f64, f64)> = marked.iter().map(|&t| (t, 0.0)).collect();
        let out = contraction_check(&zeros, &marked, 0.5).unwrap();
        assert!(out.pass && out.ratios.iter().all(|r| r.2.is_none()));

        assert!(matches!(
            contraction_check(&norms, &[0.0, 10.0], 0.5),
            Err(SupervisorError::Coverage { .. })
        ));
    }

    #[test]
    fn saturation_examples() {
        let out = saturation_vanishing_check(&[(0.0, 5.0)], &[], 1.0, 1.0, 0.5, 1.0).unwrap();
        assert!(out.pass);
        assert_eq!(out.ceiling, 1.0);

        let ivs = [
            NegativeInterval {
                start: 1.0,
                end: 2.0,
                mode: 2,
                has_integrator: false,
            },
            NegativeInterval {
                start: 3.0,
                end: 4.0,
                mode: 2,
                has_integrator: false,
            },
        ];
        let out = saturation_vanishing_check(&[], &ivs, 1.0, 0.6, 0.5, 1.0).unwrap();
        assert_eq!(out.lambda_required, 0.5);
        assert!(out.lambda_pass);

        let samples = vec![(1.0, 0.1), (1.5, 0.2), (3.5, 1.0)];
        let out = saturation_vanishing_check(&samples, &ivs, 1.0, 0.6, 0.5, 1.0).unwrap();
        assert!(!out.pass);
        assert_eq!(out.first_violation, Some((3.5, 1)));

        let with_integrator = [NegativeInterval {
            start: 1.0,
            end: 2.0,
            mode: 3,
            has_integrator: true,
        }];
        assert!(matches!(
            saturation_vanishing_check(&[], &with_integrator, 1.0, 1.0, 0.5, 1.0),
            Err(SupervisorError::Applicability(_))
        ));
    }
}
