//! Acceptance suite: one line per criterion, nonzero exit on any failure.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use hyperswitch::cli::analysis_report;
use hyperswitch::feedback::{DeviceKind, FeedbackDevice};
use hyperswitch::lti::{
    classify_pr, decay_envelope, Frequency, FrequencyGrid, PrClass, StateSpaceMode,
};
use hyperswitch::lyapunov::{lyapunov_form, perturbation_radius, solve_lyapunov};
use hyperswitch::scenario::parse_scenario;
use hyperswitch::simulator::{
    lower_bound_check, parseval_crosscheck, simulate, simulate_supervised, Dwell, PlanSegment,
    Probe, Scenario, SupervisedRun,
};
use hyperswitch::supervisor::{
    contraction_check, min_residence_bound, saturation_vanishing_check, NegativeInterval,
    SwitchingSchedule,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn sym_max_eig(m: &DMatrix<f64>) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    s.symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

fn single(
    mode: StateSpaceMode,
    device: FeedbackDevice,
    x0: Vec<f64>,
    horizon: f64,
    probe: Option<Probe>,
) -> Scenario {
    let schedule = SwitchingSchedule::new(
        vec![(0.0, mode.id())],
        vec![(0.0, device.id())],
        vec![],
        0.0,
        None,
        1,
    )
    .unwrap();
    Scenario::new(
        vec![mode],
        vec![device],
        schedule,
        DVector::from_vec(x0),
        horizon,
        0.01,
        probe,
        FrequencyGrid::default(),
    )
    .unwrap()
}

fn linear(k: f64) -> FeedbackDevice {
    FeedbackDevice::new(1, DeviceKind::Linear { k }, 1.0).unwrap()
}

fn scalar_scenario() -> Scenario {
    let m = StateSpaceMode::from_rows(1, &[&[-1.0]], &[1.0], &[1.0], 0.0).unwrap();
    single(m, linear(1.0), vec![1.0], 5.0, None)
}

fn parseval_scenario() -> Scenario {
    let m = StateSpaceMode::from_rows(1, &[&[-1.0]], &[1.0], &[1.0], 1.0).unwrap();
    let dev = FeedbackDevice::new(1, DeviceKind::Sector { k1: 0.5, k2: 1.5 }, 1.0).unwrap();
    single(
        m,
        dev,
        vec![0.0],
        30.0,
        Some(Probe::Exponential {
            amplitude: 1.0,
            rate: 1.0,
        }),
    )
}

fn criterion_1() -> Outcome {
    let tr = simulate(&scalar_scenario()).unwrap();
    let max_err = tr
        .records
        .iter()
        .map(|r| (r.x[0] - (-2.0 * r.t).exp()).abs())
        .fold(0.0, f64::max);
    let e5 = tr.energy(5.0).unwrap();
    let e_err = (e5 - ((-20f64).exp() - 1.0) / 4.0).abs();
    outcome(
        max_err < 1e-6 && e_err < 1e-6,
        format!("max |x - e^-2t| = {max_err:.2e}, |E(5) - exact| = {e_err:.2e}"),
    )
}

fn criterion_2() -> Outcome {
    let grid = FrequencyGrid::default();
    let lag = classify_pr(
        &StateSpaceMode::from_rows(1, &[&[-1.0]], &[1.0], &[1.0], 0.0).unwrap(),
        &grid,
    )
    .unwrap();
    let lead = classify_pr(
        &StateSpaceMode::from_rows(2, &[&[-1.0]], &[1.0], &[1.0], 1.0).unwrap(),
        &grid,
    )
    .unwrap();
    let unstable = classify_pr(
        &StateSpaceMode::from_rows(3, &[&[1.0]], &[1.0], &[1.0], 0.0).unwrap(),
        &grid,
    )
    .unwrap();
    let ok1 = lag.is_strictly_positive_real && lag.class == PrClass::ZeroMin;
    let ok2 = lead.is_strictly_positive_real
        && lead.class == PrClass::PositiveMin
        && (lead.min_re - 1.0).abs() <= 1e-6;
    let ok3 = unstable.class == PrClass::NegativeMin
        && (unstable.min_re + 1.0).abs() <= 1e-6
        && unstable.argmin_omega == Frequency::Finite(0.0);
    outcome(
        ok1 && ok2 && ok3,
        format!(
            "1/(s+1): {:?}; (s+2)/(s+1): min_re = {:.9}; 1/(s-1): min_re = {:.9} at {:?}",
            lag.class, lead.min_re, unstable.min_re, unstable.argmin_omega
        ),
    )
}

fn criterion_3() -> Outcome {
    let sc = parseval_scenario();
    let tr = simulate(&sc).unwrap();
    let rep = parseval_crosscheck(&tr, &sc.modes).unwrap();
    outcome(
        rep.rel_err < 1e-3,
        format!(
            "time {:.9}, frequency {:.9}, relative error {:.2e}",
            rep.time_total, rep.frequency_total, rep.rel_err
        ),
    )
}

/// Random instants with distinct consecutive modes from `pool`.
fn random_schedule(
    rng: &mut rand_chacha::ChaCha8Rng,
    pool: &[usize],
    devices: &[usize],
    switches: usize,
) -> SwitchingSchedule {
    let mut t = 0.0;
    let mut sti = vec![(0.0, pool[rng.gen_range(0..pool.len())])];
    let mut sti0 = vec![(0.0, devices[0])];
    for _ in 0..switches {
        t += rng.gen_range(0.3..2.5);
        let prev = sti.last().unwrap().1;
        let choices: Vec<usize> = pool.iter().copied().filter(|&m| m != prev).collect();
        sti.push((t, choices[rng.gen_range(0..choices.len())]));
        if rng.gen_bool(0.4) {
            let cur = sti0.last().unwrap().1;
            let next = devices.iter().copied().find(|&d| d != cur).unwrap_or(cur);
            if next != cur {
                sti0.push((t, next));
            }
        }
    }
    SwitchingSchedule::new(sti, sti0, vec![], 0.0, None, pool.len()).unwrap()
}

fn energy_envelope_ok(
    tr: &hyperswitch::simulator::SimulationTrace,
    gamma: f64,
) -> (bool, f64, f64, f64) {
    let min_g = tr.min_floor();
    let min_e = tr.records.iter().map(|r| r.e).fold(f64::INFINITY, f64::min);
    let max_e = tr
        .records
        .iter()
        .map(|r| r.e)
        .fold(f64::NEG_INFINITY, f64::max);
    let lb = lower_bound_check(tr).unwrap();
    (
        min_g >= -1e-6 && min_e >= -1e-6 && max_e <= gamma + 1e-6 && lb.pass,
        min_g,
        min_e,
        max_e,
    )
}

fn criterion_4() -> Outcome {
    let mut worst_g = f64::INFINITY;
    let mut e_range = (f64::INFINITY, f64::NEG_INFINITY);
    let mut fails = Vec::new();

    for seed in 0..50u64 {
        let mut rng = common::rng(1000 + seed);
        let n = rng.gen_range(2..=3);
        let modes: Vec<_> = (1..=3)
            .map(|id| common::spr_mode(&mut rng, id, n))
            .collect();
        let devices: Vec<_> = (1..=2)
            .map(|id| common::sector_device(&mut rng, id))
            .collect();
        let switches = rng.gen_range(3..=7);
        let schedule = random_schedule(&mut rng, &[1, 2, 3], &[1, 2], switches);
        let horizon = schedule.last_instant() + 3.0;
        let probe = Probe::Exponential {
            amplitude: 0.3,
            rate: rng.gen_range(0.3..1.0),
        };
        let sc = Scenario::new(
            modes,
            devices,
            schedule,
            DVector::zeros(n),
            horizon,
            0.01,
            Some(probe),
            FrequencyGrid::default(),
        )
        .unwrap();
        let tr = simulate(&sc).unwrap();
        let (ok, g, lo, hi) = energy_envelope_ok(&tr, 1.0);
        worst_g = worst_g.min(g);
        e_range = (e_range.0.min(lo), e_range.1.max(hi));
        if !ok {
            fails.push(format!("all-SPR seed {seed}"));
        }
    }

    let mut detected = 0;
    let mut worst_ratio: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = common::rng(2000 + seed);
        let n = rng.gen_range(2..=3);
        let modes = vec![
            common::spr_mode(&mut rng, 1, n),
            common::spr_mode(&mut rng, 2, n),
            common::negative_mode(&mut rng, 3, n),
        ];
        let devices = vec![common::sector_device(&mut rng, 1)];
        let plan = vec![
            PlanSegment {
                mode: 1,
                device: 1,
                dwell: Dwell::Fixed(rng.gen_range(0.5..2.0)),
                marked: false,
            },
            PlanSegment {
                mode: 3,
                device: 1,
                dwell: Dwell::MaxResidence {
                    safety: 0.95,
                    cap: None,
                },
                marked: false,
            },
            PlanSegment {
                mode: 2,
                device: 1,
                dwell: Dwell::Fixed(rng.gen_range(0.5..2.0)),
                marked: false,
            },
            PlanSegment {
                mode: 1,
                device: 1,
                dwell: Dwell::Fixed(1.0),
                marked: false,
            },
        ];
        let probe = Probe::Exponential {
            amplitude: 0.3,
            rate: rng.gen_range(0.3..1.0),
        };
        let run = SupervisedRun {
            modes: modes.clone(),
            devices: devices.clone(),
            plan,
            x0: DVector::zeros(n),
            horizon: 400.0,
            dt: 0.01,
            probe: Some(probe.clone()),
            frequency_grid: FrequencyGrid::default(),
        };
        let (tr, realized) = simulate_supervised(&run).unwrap();
        let (ok, g, lo, hi) = energy_envelope_ok(&tr, 1.0);
        worst_g = worst_g.min(g);
        e_range = (e_range.0.min(lo), e_range.1.max(hi));

        // realized dwell against the bound evaluated with the realized input
        let neg = tr
            .intervals
            .iter()
            .find(|iv| iv.mode == 3)
            .expect("negative interval present");
        let m = classify_pr(&modes[2], &FrequencyGrid::default())
            .unwrap()
            .max_abs_re;
        let bound = neg.g_start / (m * neg.max_u2);
        let ratio = (neg.end - neg.start) / bound;
        worst_ratio = worst_ratio.max(ratio);
        if !ok || ratio > 0.95 * (1.0 + 1e-9) || neg.end <= neg.start || neg.end >= run.horizon {
            fails.push(format!("supervised seed {seed} (dwell/bound = {ratio:.4})"));
        }

        // double the negative-class dwell and replay on a fixed schedule
        let dwell = neg.end - neg.start;
        let shift = |t: f64| if t > neg.start + 1e-12 { t + dwell } else { t };
        let sti: Vec<(f64, usize)> = realized.sti().iter().map(|&(t, m)| (shift(t), m)).collect();
        let sti0: Vec<(f64, usize)> = realized
            .sti0()
            .iter()
            .map(|&(t, d)| (shift(t), d))
            .collect();
        let doubled = SwitchingSchedule::new(sti, sti0, vec![], 0.0, None, 3).unwrap();
        let horizon = doubled.last_instant() + 2.0;
        let sc = Scenario::new(
            modes,
            devices,
            doubled,
            DVector::zeros(n),
            horizon,
            0.01,
            Some(probe),
            FrequencyGrid::default(),
        )
        .unwrap();
        if simulate(&sc).unwrap().min_floor() < 0.0 {
            detected += 1;
        }
    }
    let pass = fails.is_empty() && detected == 20;
    outcome(
        pass,
        format!(
            "min g = {worst_g:.2e}, E in [{:.2e}, {:.4}], max dwell/bound = {worst_ratio:.4}, doubled-dwell detections {detected}/20{}",
            e_range.0,
            e_range.1,
            if fails.is_empty() { String::new() } else { format!(", failures: {}", fails.join("; ")) }
        ),
    )
}

fn criterion_5() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for seed in 0..20u64 {
        let mut rng = common::rng(3000 + seed);
        let n = rng.gen_range(2..=3);
        let modes: Vec<_> = (1..=3)
            .map(|id| common::spr_mode(&mut rng, id, n))
            .collect();
        for m in &modes {
            let alpha = m
                .a()
                .complex_eigenvalues()
                .iter()
                .map(|z| z.re)
                .fold(f64::NEG_INFINITY, f64::max);
            ok &= alpha <= -0.5;
        }
        let devices: Vec<_> = (1..=2)
            .map(|id| common::sector_device(&mut rng, id))
            .collect();
        let schedule = random_schedule(&mut rng, &[1, 2, 3], &[1, 2], 6);
        let x0 = common::unit_vector(&mut rng, n);
        let sc = Scenario::new(
            modes,
            devices,
            schedule,
            x0,
            20.0,
            0.01,
            None,
            FrequencyGrid::default(),
        )
        .unwrap();
        let tr = simulate(&sc).unwrap();
        let u = tr.records.last().unwrap().u.abs();
        worst = worst.max(u);
    }
    outcome(ok && worst < 1e-3, format!("max |u(20)| = {worst:.2e}"))
}

fn criterion_6() -> Outcome {
    let mut inside_violations = 0;
    let mut outside_violations = 0;
    let mut radii = Vec::new();
    for seed in 0..5u64 {
        let mut rng = common::rng(4000 + seed);
        let a = common::random_hurwitz(&mut rng, 3);
        let anchor = StateSpaceMode::new(
            1,
            a.clone(),
            DVector::from_element(3, 1.0),
            DVector::from_element(3, 1.0),
            0.0,
        )
        .unwrap();
        let p = solve_lyapunov(&a, &DMatrix::identity(3, 3)).unwrap();
        let alpha = a
            .complex_eigenvalues()
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max);
        let r = perturbation_radius(&anchor, &p, 0.05 * alpha.abs())
            .unwrap()
            .radius;
        radii.push(r);
        for _ in 0..1000 {
            let dir = common::gaussian_matrix(&mut rng, 3, 1.0);
            let dir = &dir / dir.norm();
            let spectral = dir.singular_values().max();
            for (scale, counter) in [
                (0.98, &mut inside_violations),
                (3.0, &mut outside_violations),
            ] {
                let ai = &a + &dir * (scale * r / spectral);
                if sym_max_eig(&lyapunov_form(&ai, &p)) >= 0.0 {
                    *counter += 1;
                }
            }
        }
    }
    outcome(
        inside_violations == 0 && outside_violations > 0,
        format!(
            "radii {:?}, violations at 0.98r: {inside_violations}/5000, at 3r: {outside_violations}/5000",
            radii.iter().map(|r| format!("{r:.3e}")).collect::<Vec<_>>()
        ),
    )
}

fn open_loop_schedule_run(
    modes: Vec<StateSpaceMode>,
    sti: Vec<(f64, usize)>,
    marked: Vec<f64>,
    horizon: f64,
    x0: DVector<f64>,
) -> hyperswitch::simulator::SimulationTrace {
    let p = modes.len();
    let schedule = SwitchingSchedule::new(sti, vec![(0.0, 1)], marked, 0.0, None, p).unwrap();
    let sc = Scenario::new(
        modes,
        vec![linear(0.0)],
        schedule,
        x0,
        horizon,
        0.01,
        None,
        FrequencyGrid::default(),
    )
    .unwrap();
    simulate(&sc).unwrap()
}

fn criterion_7() -> Outcome {
    let delta = 0.5;
    let mut max_ratio: f64 = 0.0;
    let mut ok = true;
    for seed in 0..50u64 {
        let mut rng = common::rng(5000 + seed);
        let n = rng.gen_range(2..=3);
        let mut modes = Vec::new();
        for id in 1..=4 {
            let a = if id == 4 {
                // mildly unstable intermediate
                common::random_hurwitz(&mut rng, n) + DMatrix::identity(n, n) * 1.7
            } else {
                common::random_hurwitz(&mut rng, n)
            };
            let b = common::unit_vector(&mut rng, n);
            modes.push(StateSpaceMode::new(id, a, b.clone(), b, 0.0).unwrap());
        }
        let env: Vec<_> = modes
            .iter()
            .map(|m| {
                let alpha = m
                    .a()
                    .complex_eigenvalues()
                    .iter()
                    .map(|z| z.re)
                    .fold(f64::NEG_INFINITY, f64::max);
                decay_envelope(m.a(), 0.1 * alpha.abs().max(0.1)).unwrap()
            })
            .collect();
        let marked_modes = [1usize, 2, 3];
        let mut t = 0.0;
        let mut sti = Vec::new();
        let mut marked = Vec::new();
        let blocks = 3;
        let mut prev = 0usize;
        for blk in 0..blocks {
            let m = *marked_modes
                .iter()
                .filter(|&&m| m != prev)
                .nth(rng.gen_range(0..2))
                .unwrap();
            let k = rng.gen_range(1..=2);
            let mut inter = Vec::new();
            let mut last = m;
            for _ in 0..k {
                let choices: Vec<usize> = (1..=4).filter(|&x| x != last).collect();
                let c = choices[rng.gen_range(0..choices.len())];
                inter.push((c, rng.gen_range(0.2..1.0)));
                last = c;
            }
            sti.push((t, m));
            marked.push(t);
            if blk + 1 == blocks {
                break;
            }
            let ints: Vec<_> = inter.iter().map(|&(c, d)| (env[c - 1], d)).collect();
            let t_star = min_residence_bound(&env[m - 1], &ints, delta)
                .unwrap()
                .max(0.01);
            t += t_star;
            for &(c, d) in &inter {
                sti.push((t, c));
                t += d;
            }
            prev = last;
        }
        let horizon = t + 1.0;
        let x0 = common::unit_vector(&mut rng, n);
        let tr = open_loop_schedule_run(modes, sti, marked.clone(), horizon, x0);
        let c = contraction_check(&tr.state_norms(), &marked, delta).unwrap();
        ok &= c.pass;
        max_ratio = max_ratio.max(c.max_ratio.unwrap_or(0.0));
    }

    // unstable-intermediate fixture: marked -I, intermediate 0.5 I for 1 time unit
    let stable = StateSpaceMode::new(
        1,
        -DMatrix::identity(2, 2),
        DVector::from_element(2, 1.0),
        DVector::from_element(2, 1.0),
        0.0,
    )
    .unwrap();
    let growing = StateSpaceMode::new(
        2,
        DMatrix::identity(2, 2) * 0.5,
        DVector::from_element(2, 1.0),
        DVector::from_element(2, 1.0),
        0.0,
    )
    .unwrap();
    let e1 = decay_envelope(stable.a(), 0.1).unwrap();
    let e2 = decay_envelope(growing.a(), 0.1).unwrap();
    let t_star = min_residence_bound(&e1, &[(e2, 1.0)], delta).unwrap();
    let half = 0.5 * t_star;
    let tr = open_loop_schedule_run(
        vec![stable, growing],
        vec![(0.0, 1), (half, 2), (half + 1.0, 1)],
        vec![0.0, half + 1.0],
        half + 2.0,
        DVector::from_vec(vec![0.6, 0.8]),
    );
    let halved = contraction_check(&tr.state_norms(), &[0.0, half + 1.0], delta).unwrap();
    let halved_ratio = halved.max_ratio.unwrap();
    outcome(
        ok && max_ratio <= delta * (1.0 + 1e-3) && halved_ratio > delta,
        format!("max ratio at T* = {max_ratio:.6} (delta {delta}); fixture T* = {t_star:.4}, ratio at T*/2 = {halved_ratio:.4}"),
    )
}

/// `int_0^T exp(A^T t) Q exp(A t) dt` by composite Simpson, using nalgebra's
/// matrix exponential for the step propagator.
fn lyapunov_quadrature(a: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    let alpha = a
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    let horizon = 40.0 / alpha.abs();
    let h0 = (0.05 / a.norm()).min(0.02);
    let steps = ((horizon / h0).ceil() as usize + 1) & !1;
    let h = horizon / steps as f64;
    let step = (a * h).exp();
    let mut m = DMatrix::identity(a.nrows(), a.ncols());
    let mut acc = DMatrix::zeros(a.nrows(), a.ncols());
    for k in 0..=steps {
        let w = if k == 0 || k == steps {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += (m.transpose() * q * &m) * w;
        m = &step * m;
    }
    acc * (h / 3.0)
}

fn criterion_8() -> Outcome {
    let mut worst_res: f64 = 0.0;
    let mut worst_quad: f64 = 0.0;
    for seed in 0..100u64 {
        let mut rng = common::rng(6000 + seed);
        let n = rng.gen_range(1..=5);
        let a = common::random_hurwitz(&mut rng, n);
        let mq = common::gaussian_matrix(&mut rng, n, 1.0);
        let q = &mq * mq.transpose() + DMatrix::identity(n, n);
        let p = solve_lyapunov(&a, &q).unwrap();
        let res = (lyapunov_form(&a, &p) + &q).norm() / q.norm();
        worst_res = worst_res.max(res);
        let pq = lyapunov_quadrature(&a, &q);
        worst_quad = worst_quad.max((&pq - &p).norm() / p.norm());
    }
    outcome(
        worst_res < 1e-8 && worst_quad < 1e-5,
        format!(
            "max relative residual {worst_res:.2e}, max quadrature disagreement {worst_quad:.2e}"
        ),
    )
}

fn criterion_9() -> Outcome {
    let (k, lambda0, gamma) = (1.5, 0.2, 1.0);
    let intervals = [(2.0, 3.5), (5.0, 7.0), (9.0, 9.8)];
    let negs: Vec<NegativeInterval> = intervals
        .iter()
        .map(|&(s, e)| NegativeInterval {
            start: s,
            end: e,
            mode: 2,
            has_integrator: false,
        })
        .collect();
    let required = intervals
        .iter()
        .map(|&(s, e)| (e - s).ln() / (2.0 * (e - s)))
        .fold(lambda0, f64::max);
    let lambda = 2.0 * required;
    let samples: Vec<(f64, f64)> = (0..=1200)
        .map(|i| {
            let t = i as f64 * 0.01;
            let u = match intervals.iter().find(|&&(s, e)| t >= s && t < e) {
                Some(&(s, _)) => k * (-lambda * s).exp() * (-(t - s)).exp(),
                None => 3.0,
            };
            (t, u)
        })
        .collect();
    let good = saturation_vanishing_check(&samples, &negs, k, lambda, lambda0, gamma).unwrap();
    let expected = gamma + k * k / (1.0 - (-2.0 * lambda0 * intervals[0].0).exp());
    let scaled: Vec<(f64, f64)> = samples.iter().map(|&(t, u)| (t, 1.1 * u)).collect();
    let bad = saturation_vanishing_check(&scaled, &negs, k, lambda, lambda0, gamma).unwrap();
    let first = bad.first_violation;
    outcome(
        good.pass
            && (good.ceiling - expected).abs() <= 1e-9
            && !bad.pass
            && first.map(|v| v.0) == Some(2.0),
        format!(
            "ceiling {:.12} vs {expected:.12}; scaled trace first violation {first:?}",
            good.ceiling
        ),
    )
}

fn scenario_json(a: f64, d: f64, device: &str, x0: f64, horizon: f64, probe: &str) -> String {
    format!(
        r#"{{"spec_version": 1,
"modes": [{{"id": 1, "A": [[{a}]], "b": [1.0], "c": [1.0], "d": {d}}}],
"devices": [{{"id": 1, {device}, "gamma": 1.0}}],
"schedule": {{"sti": [{{"t": 0.0, "mode": 1}}], "sti0": [{{"t": 0.0, "device": 1}}]}},
"simulation": {{"x0": [{x0}], "horizon": {horizon}, "dt": 0.01, "probe": {probe}}}}}"#
    )
}

fn criterion_10() -> Outcome {
    let files = [
        scenario_json(
            -1.0,
            0.0,
            r#""kind": "linear", "params": {"k": 1.0}"#,
            1.0,
            5.0,
            "null",
        ),
        scenario_json(
            -1.0,
            0.0,
            r#""kind": "linear", "params": {"k": 1.0}"#,
            0.0,
            2.0,
            "null",
        ),
        scenario_json(
            -1.0,
            1.0,
            r#""kind": "linear", "params": {"k": 1.0}"#,
            0.0,
            2.0,
            "null",
        ),
        scenario_json(
            1.0,
            0.0,
            r#""kind": "linear", "params": {"k": 0.0}"#,
            0.0,
            2.0,
            "null",
        ),
        scenario_json(
            -1.0,
            1.0,
            r#""kind": "sector", "params": {"k1": 0.5, "k2": 1.5}"#,
            0.0,
            30.0,
            r#"{"kind": "exponential", "amplitude": 1.0, "rate": 1.0}"#,
        ),
    ];
    let mut same = true;
    for text in &files {
        let loaded = parse_scenario(text).unwrap();
        let run = || {
            let csv = simulate(&loaded.scenario)
                .map(|t| t.to_csv())
                .unwrap_or_default();
            let (report, _) = analysis_report(&loaded, "fixed");
            (csv, report)
        };
        same &= run() == run();
    }
    let direct = |f: fn() -> Scenario| simulate(&f()).unwrap().to_csv();
    same &= direct(scalar_scenario) == direct(scalar_scenario);
    same &= direct(parseval_scenario) == direct(parseval_scenario);
    outcome(
        same,
        format!(
            "{} scenario reports and traces byte-identical across repeated runs",
            files.len() + 2
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome, f64);

fn main() {
    let criteria: [Criterion; 10] = [
        ("closed-form scalar integration", criterion_1, 1.0),
        ("positive-real classification corpus", criterion_2, 1.0),
        ("frequency-domain energy cross-check", criterion_3, 5.0),
        ("energy floor and energy bounds", criterion_4, 60.0),
        ("closed-loop convergence", criterion_5, 30.0),
        ("common-storage perturbation radius", criterion_6, 30.0),
        ("minimum residence contraction", criterion_7, 30.0),
        ("Lyapunov solver accuracy", criterion_8, 10.0),
        ("saturation-vanishing checker", criterion_9, 5.0),
        ("determinism", criterion_10, 60.0),
    ];
    let mut failed = 0;
    for (i, (name, f, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f));
        let secs = start.elapsed().as_secs_f64();
        let (pass, detail) = match result {
            Ok(o) => (o.pass && secs <= *budget, o.detail),
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {:<40} {}  [{secs:.2}s / {budget}s] {detail}",
            i + 1,
            name,
            if pass { "PASS" } else { "FAIL" }
        );
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
