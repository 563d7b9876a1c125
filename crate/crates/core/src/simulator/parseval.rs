use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::Serialize;

use super::{SimError, SimulationTrace};
use crate::lti::{freq_response, transfer_function, StateSpaceMode};

/// Nyquist bands of the sampled transform integrated before the analytic tail.
const BANDS: usize = 16;
const LOWER_BOUND_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentEnergy {
    pub start: f64,
    pub end: f64,
    pub mode: usize,
    /// `E(end) - E(start)` from the trace.
    pub time_domain: f64,
    /// `(1/pi) int_0^inf Re G(j omega) |U(j omega)|^2 d omega` for the truncated input.
    pub frequency_domain: f64,
    /// `|x(start)|`; the two values agree only when this is negligible.
    pub carried_state_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParsevalReport {
    pub segments: Vec<SegmentEnergy>,
    pub time_total: f64,
    pub frequency_total: f64,
    pub abs_err: f64,
    pub rel_err: f64,
}

/// Recomputes the trace energy in the frequency domain, segment by segment,
/// from the Fourier transform of the piecewise-linear input. Needs `x(0) = 0`.
pub fn parseval_crosscheck(
    trace: &SimulationTrace,
    modes: &[StateSpaceMode],
) -> Result<ParsevalReport, SimError> {
    let first = trace
        .records
        .first()
        .ok_or_else(|| SimError::Applicability("empty trace".into()))?;
    if first.x.iter().any(|&v| v != 0.0) {
        return Err(SimError::Applicability(
            "energy cross-check needs a zero initial state".into(),
        ));
    }
    let dt = trace.meta.dt;
    let mut segments = Vec::with_capacity(trace.intervals.len());
    for iv in &trace.intervals {
        if iv.end <= iv.start {
            continue;
        }
        let mode = modes.iter().find(|m| m.id() == iv.mode).ok_or_else(|| {
            SimError::Config(format!("trace references unknown mode {}", iv.mode))
        })?;
        let samples = segment_samples(trace, iv.start, iv.end);
        let freq = truncated_energy(mode, &samples, iv.start, iv.end, dt)?;
        let time = trace.energy(iv.end)? - trace.energy(iv.start)?;
        let carried = trace
            .records
            .iter()
            .find(|r| r.t >= iv.start)
            .map(|r| r.x.norm())
            .unwrap_or(0.0);
        segments.push(SegmentEnergy {
            start: iv.start,
            end: iv.end,
            mode: iv.mode,
            time_domain: time,
            frequency_domain: freq,
            carried_state_norm: carried,
        });
    }
    let time_total = trace.energy(trace.end_time())?;
    let frequency_total: f64 = segments.iter().map(|s| s.frequency_domain).sum();
    let abs_err = (time_total - frequency_total).abs();
    let rel_err = abs_err / time_total.abs().max(1e-300);
    Ok(ParsevalReport {
        segments,
        time_total,
        frequency_total,
        abs_err,
        rel_err,
    })
}

/// `(t, u)` on `[start, end]` using the right limit at `start` and the left
/// limit at `end`.
fn segment_samples(trace: &SimulationTrace, start: f64, end: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for r in &trace.records {
        if r.t < start {
            continue;
        }
        if r.t < end || r.t == start {
            out.push((r.t, r.u));
        } else {
            out.push((r.t, r.u_left));
            break;
        }
    }
    out
}

fn interp(samples: &[(f64, f64)], t: f64) -> f64 {
    let i = samples.partition_point(|s| s.0 <= t);
    if i == 0 {
        return samples[0].1;
    }
    if i >= samples.len() {
        return samples.last().unwrap().1;
    }
    let (a, b) = (samples[i - 1], samples[i]);
    a.1 + (b.1 - a.1) * (t - a.0) / (b.0 - a.0)
}

/// `sinc^2(theta / 2)`: transform weight of an interior hat function.
fn hat_weight(theta: f64) -> f64 {
    if theta.abs() < 1e-4 {
        1.0 - theta * theta / 12.0
    } else {
        let s = (0.5 * theta).sin() / (0.5 * theta);
        s * s
    }
}

/// `int_0^1 (1 - s) e^{-j theta s} ds`: weight of the leading half hat.
fn half_hat_weight(theta: f64) -> Complex64 {
    if theta.abs() < 1e-2 {
        let mut term = Complex64::new(1.0, 0.0);
        let mut sum = Complex64::new(0.0, 0.0);
        let z = Complex64::new(0.0, -theta);
        for m in 0..12 {
            let mf = m as f64;
            sum += term / ((mf + 1.0) * (mf + 2.0));
            term = term * z / (mf + 1.0);
        }
        sum
    } else {
        let c = Complex64::new(0.0, theta);
        1.0 / c - (1.0 - (-c).exp()) / (c * c)
    }
}

fn truncated_energy(
    mode: &StateSpaceMode,
    samples: &[(f64, f64)],
    start: f64,
    end: f64,
    dt: f64,
) -> Result<f64, SimError> {
    let g = transfer_function(mode)?;
    let len = end - start;
    let m = ((len / dt).round() as usize).max(1);
    let h = len / m as f64;
    let f: Vec<f64> = (0..=m)
        .map(|k| {
            if k == m {
                samples.last().unwrap().1
            } else {
                interp(samples, start + k as f64 * h)
            }
        })
        .collect();
    let n = (8 * (m + 1)).max(1024).next_power_of_two();
    let mut buf: Vec<Complex64> = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(n, Complex64::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);

    let (f0, fm) = (f[0], f[m]);
    let total = BANDS * n;
    let dtheta = 2.0 * std::f64::consts::PI / n as f64;
    let mut acc = 0.0;
    for i in 0..=total {
        let theta = i as f64 * dtheta;
        let omega = theta / h;
        let s = buf[i % n];
        let phase_m = Complex64::from_polar(1.0, -(((i % n) * m % n) as f64) * dtheta);
        let w = hat_weight(theta);
        let r = half_hat_weight(theta);
        let spec = (s * w + (r - w) * f0 + (r.conj() - w) * fm * phase_m) * h;
        let re_g = freq_response(&g, omega)?.re;
        let v = re_g * spec.norm_sqr();
        acc += if i == 0 || i == total { 0.5 * v } else { v };
    }
    let omega_max = total as f64 * dtheta / h;
    let integral = acc * dtheta / h;
    let tail = g.high_frequency_limit() * (f0 * f0 + fm * fm) / omega_max;
    Ok((integral + tail) / std::f64::consts::PI)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LowerBoundMargin {
    pub t: f64,
    pub energy: f64,
    pub floor: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LowerBoundCheck {
    pub margins: Vec<LowerBoundMargin>,
    pub min_margin: f64,
    pub pass: bool,
}

/// `E(t) - g(t)` at every switching instant and at the end of the trace.
pub fn lower_bound_check(trace: &SimulationTrace) -> Result<LowerBoundCheck, SimError> {
    let mut times: Vec<f64> = trace.floor_at_instants.iter().map(|p| p.0).collect();
    times.push(trace.end_time());
    times.dedup();
    let mut margins = Vec::with_capacity(times.len());
    for t in times {
        let idx = trace
            .records
            .partition_point(|r| r.t < t)
            .min(trace.records.len() - 1);
        let floor = trace.records[idx].g_floor;
        if floor.is_nan() {
            return Err(SimError::Applicability(
                "energy floor unavailable for an unclassified mode".into(),
            ));
        }
        let energy = trace.energy(t)?;
        margins.push(LowerBoundMargin {
            t,
            energy,
            floor,
            margin: energy - floor,
        });
    }
    let min_margin = margins
        .iter()
        .map(|m| m.margin)
        .fold(f64::INFINITY, f64::min);
    Ok(LowerBoundCheck {
        pass: min_margin >= -LOWER_BOUND_TOL,
        min_margin,
        margins,
    })
}
