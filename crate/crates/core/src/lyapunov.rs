//! Lyapunov equations and common quadratic Lyapunov function tests for a
//! family of modes.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::linalg::{
    is_symmetric, nnls, serialize_rows, spectral_abscissa, sym_eig_range, symmetrize,
};
use crate::lti::{decay_envelope, is_hurwitz, LtiError, StateSpaceMode};

/// Relative tolerance on Lyapunov residuals and on definiteness decisions.
pub const TOL_LYAP: f64 = 1e-9;
const WITNESS_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LyapunovError {
    #[error("matrix is not Hurwitz (spectral abscissa {abscissa})")]
    Stability { abscissa: f64 },
    #[error("matrix is not symmetric positive definite: {0}")]
    Definiteness(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("mode {mode_id} has a singular state matrix")]
    Singular { mode_id: usize },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Lti(#[from] LtiError),
}

fn sym_index(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    // row-major upper triangle
    i * n - i * (i + 1) / 2 + j
}

fn require_spd(m: &DMatrix<f64>, what: &str) -> Result<(), LyapunovError> {
    if !m.is_square() {
        return Err(LyapunovError::Dimension(format!("{what} must be square")));
    }
    if !is_symmetric(m, 1e-10) {
        return Err(LyapunovError::Definiteness(format!(
            "{what} is not symmetric"
        )));
    }
    let (lo, hi) = sym_eig_range(m);
    if !(lo > TOL_LYAP * hi.abs().max(1.0)) {
        return Err(LyapunovError::Definiteness(format!(
            "{what} has smallest eigenvalue {lo}"
        )));
    }
    Ok(())
}

/// Solves `A^T P + P A = -Q` for symmetric `P`.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>, LyapunovError> {
    if !a.is_square() || q.shape() != a.shape() {
        return Err(LyapunovError::Dimension(format!(
            "A is {:?}, Q is {:?}",
            a.shape(),
            q.shape()
        )));
    }
    if !is_hurwitz(a)? {
        return Err(LyapunovError::Stability {
            abscissa: spectral_abscissa(a),
        });
    }
    require_spd(q, "Q")?;

    let n = a.nrows();
    let m = n * (n + 1) / 2;
    let mut lhs = DMatrix::<f64>::zeros(m, m);
    let mut rhs = DVector::<f64>::zeros(m);
    for r in 0..n {
        for s in r..n {
            let row = sym_index(n, r, s);
            // (A^T P)_{rs} + (P A)_{rs} = sum_k A_{kr} P_{ks} + P_{rk} A_{ks}
            for k in 0..n {
                lhs[(row, sym_index(n, k, s))] += a[(k, r)];
                lhs[(row, sym_index(n, r, k))] += a[(k, s)];
            }
            rhs[row] = -q[(r, s)];
        }
    }
    let lu = lhs.clone().lu();
    let mut sol = lu.solve(&rhs).ok_or_else(|| LyapunovError::Stability {
        abscissa: spectral_abscissa(a),
    })?;
    // one step of iterative refinement
    let resid = &rhs - &lhs * &sol;
    if let Some(corr) = lu.solve(&resid) {
        sol += corr;
    }
    let p = DMatrix::from_fn(n, n, |i, j| sol[sym_index(n, i, j)]);
    Ok(p)
}

/// `A^T P + P A`.
pub fn lyapunov_form(a: &DMatrix<f64>, p: &DMatrix<f64>) -> DMatrix<f64> {
    a.transpose() * p + p * a
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeDefiniteness {
    pub mode_id: usize,
    /// Largest eigenvalue of `A_i^T P + P A_i`.
    pub lambda_max: f64,
    pub negative_definite: bool,
}

/// Per-mode decision whether `A_i^T P + P A_i` is negative definite.
pub fn check_common_p(p: &DMatrix<f64>, modes: &[StateSpaceMode]) -> Vec<ModeDefiniteness> {
    modes
        .iter()
        .map(|mode| {
            let (_, lambda_max) = sym_eig_range(&lyapunov_form(mode.a(), p));
            ModeDefiniteness {
                mode_id: mode.id(),
                lambda_max,
                negative_definite: lambda_max < -TOL_LYAP,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbationRadius {
    pub anchor_id: usize,
    pub eps: f64,
    pub radius: f64,
    /// Envelope constant of the anchor.
    pub k: f64,
    pub lambda_min_q: f64,
    pub lambda_max_q: f64,
    /// Upper bound `K^2 lambda_max(Q) / (2 (|alpha| - eps))` on `lambda_max(P)`.
    pub p_norm_bound: f64,
}

/// Radius of the 2-norm ball around `anchor.A` whose members all share `P`.
///
/// `Q = -(A^T P + P A)` must be positive definite; `eps` must lie strictly
/// between zero and minus the spectral abscissa of the anchor.
pub fn perturbation_radius(
    anchor: &StateSpaceMode,
    p: &DMatrix<f64>,
    eps: f64,
) -> Result<PerturbationRadius, LyapunovError> {
    let a = anchor.a();
    if p.shape() != a.shape() {
        return Err(LyapunovError::Dimension(
            "P and anchor A differ in size".into(),
        ));
    }
    if !is_hurwitz(a)? {
        return Err(LyapunovError::Stability {
            abscissa: spectral_abscissa(a),
        });
    }
    let decay = -spectral_abscissa(a);
    if !(eps > 0.0 && eps < decay) {
        return Err(LyapunovError::Parameter(format!(
            "eps must lie in (0, {decay}), got {eps}"
        )));
    }
    require_spd(p, "P")?;
    let q = -symmetrize(&lyapunov_form(a, p));
    let (lambda_min_q, lambda_max_q) = sym_eig_range(&q);
    if !(lambda_min_q > 0.0) {
        return Err(LyapunovError::Definiteness(format!(
            "anchor Q has smallest eigenvalue {lambda_min_q}"
        )));
    }
    let env = decay_envelope(a, eps)?;
    let k2 = env.k * env.k;
    Ok(PerturbationRadius {
        anchor_id: anchor.id(),
        eps,
        radius: lambda_min_q * (decay - eps) / (k2 * lambda_max_q),
        k: env.k,
        lambda_min_q,
        lambda_max_q,
        p_norm_bound: k2 * lambda_max_q / (2.0 * (decay - eps)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Definiteness {
    Negative,
    Zero,
    Indefinite,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SumConditionResult {
    pub lambda_max: f64,
    pub outcome: Definiteness,
}

/// Definiteness of `sum_i (A_i X_i + X_i A_i^T)` for one family `X_i >= 0`.
pub fn sum_condition(
    modes: &[StateSpaceMode],
    xs: &[DMatrix<f64>],
) -> Result<SumConditionResult, LyapunovError> {
    if modes.len() != xs.len() {
        return Err(LyapunovError::Input(format!(
            "{} modes but {} X matrices",
            modes.len(),
            xs.len()
        )));
    }
    let Some(first) = modes.first() else {
        return Err(LyapunovError::Input("empty mode list".into()));
    };
    let n = first.order();
    let mut sum = DMatrix::<f64>::zeros(n, n);
    let mut scale = 0.0;
    let mut any_nonzero = false;
    for (mode, x) in modes.iter().zip(xs) {
        if x.shape() != (n, n) || mode.order() != n {
            return Err(LyapunovError::Dimension(format!(
                "X for mode {} must be {n}x{n}",
                mode.id()
            )));
        }
        if !is_symmetric(x, 1e-10) {
            return Err(LyapunovError::Input(format!(
                "X for mode {} is not symmetric",
                mode.id()
            )));
        }
        let (lo, hi) = sym_eig_range(x);
        if lo < -TOL_LYAP * hi.abs().max(1.0) {
            return Err(LyapunovError::Input(format!(
                "X for mode {} is not positive semidefinite (eigenvalue {lo})",
                mode.id()
            )));
        }
        if x.amax() > 0.0 {
            any_nonzero = true;
        }
        let ax = mode.a() * x;
        scale += 2.0 * ax.norm();
        sum += &ax + ax.transpose();
    }
    if !any_nonzero {
        return Err(LyapunovError::Input("X family is identically zero".into()));
    }
    let (_, lambda_max) = sym_eig_range(&sum);
    let scale = scale.max(f64::MIN_POSITIVE);
    let outcome = if sum.norm() <= TOL_LYAP * scale {
        Definiteness::Zero
    } else if lambda_max < -TOL_LYAP * scale {
        Definiteness::Negative
    } else {
        Definiteness::Indefinite
    };
    Ok(SumConditionResult {
        lambda_max,
        outcome,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScreenWitness {
    pub mode_id: usize,
    /// True when the failing member is `A_i^{-1}` rather than `A_i`.
    pub inverted: bool,
    pub spectral_abscissa: f64,
}

/// First non-Hurwitz member of `{A_i} ∪ {A_i^{-1}}`.
pub fn inverse_set_screen(
    modes: &[StateSpaceMode],
) -> Result<Option<ScreenWitness>, LyapunovError> {
    let mut inverses = Vec::with_capacity(modes.len());
    for mode in modes {
        let inv = mode
            .a()
            .clone()
            .try_inverse()
            .filter(|m| m.iter().all(|v| v.is_finite()))
            .ok_or(LyapunovError::Singular { mode_id: mode.id() })?;
        inverses.push(inv);
    }
    for mode in modes {
        if !is_hurwitz(mode.a())? {
            return Ok(Some(ScreenWitness {
                mode_id: mode.id(),
                inverted: false,
                spectral_abscissa: spectral_abscissa(mode.a()),
            }));
        }
    }
    for (mode, inv) in modes.iter().zip(&inverses) {
        if !is_hurwitz(inv)? {
            return Ok(Some(ScreenWitness {
                mode_id: mode.id(),
                inverted: true,
                spectral_abscissa: spectral_abscissa(inv),
            }));
        }
    }
    Ok(None)
}

/// Whether `sum_i (alpha_i A_i + beta_i A_i^{-1})` is Hurwitz. A `false`
/// result rules out a common quadratic Lyapunov function.
pub fn combo_necessary_test(
    modes: &[StateSpaceMode],
    alphas: &[f64],
    betas: &[f64],
) -> Result<bool, LyapunovError> {
    Ok(is_hurwitz(&combination(modes, alphas, betas)?)?)
}

fn combination(
    modes: &[StateSpaceMode],
    alphas: &[f64],
    betas: &[f64],
) -> Result<DMatrix<f64>, LyapunovError> {
    if alphas.len() != modes.len() || betas.len() != modes.len() {
        return Err(LyapunovError::Input(
            "need one alpha and one beta per mode".into(),
        ));
    }
    if alphas
        .iter()
        .chain(betas)
        .any(|w| !(w.is_finite() && *w >= 0.0))
    {
        return Err(LyapunovError::Input(
            "weights must be finite and nonnegative".into(),
        ));
    }
    if alphas.iter().chain(betas).all(|&w| w == 0.0) {
        return Err(LyapunovError::Input(
            "all combination weights are zero".into(),
        ));
    }
    let Some(first) = modes.first() else {
        return Err(LyapunovError::Input("empty mode list".into()));
    };
    let n = first.order();
    let mut sum = DMatrix::<f64>::zeros(n, n);
    for ((mode, &al), &be) in modes.iter().zip(alphas).zip(betas) {
        if mode.order() != n {
            return Err(LyapunovError::Dimension(
                "modes differ in state dimension".into(),
            ));
        }
        sum += mode.a() * al;
        if be > 0.0 {
            let inv = mode
                .a()
                .clone()
                .try_inverse()
                .ok_or(LyapunovError::Singular { mode_id: mode.id() })?;
            sum += inv * be;
        }
    }
    Ok(sum)
}

/// Bounded search for semidefinite `X_i`, not all zero, with
/// `sum_i (A_i X_i + X_i A_i^T) = 0`.
///
/// Each `X_i` is a nonnegative combination of rank-one terms `v v^T` drawn
/// from coordinate directions, pairwise diagonals and `random_directions`
/// seeded unit vectors. Returns `None` when no exact combination exists in the
/// sampled cone.
pub fn search_sum_witness(
    modes: &[StateSpaceMode],
    random_directions: usize,
    seed: u64,
) -> Option<Vec<DMatrix<f64>>> {
    let n = modes.first()?.order();
    if modes.iter().any(|m| m.order() != n) {
        return None;
    }
    let mut dirs: Vec<DVector<f64>> = Vec::new();
    for k in 0..n {
        dirs.push(DVector::from_fn(n, |i, _| if i == k { 1.0 } else { 0.0 }));
    }
    let h = std::f64::consts::FRAC_1_SQRT_2;
    for k in 0..n {
        for l in k + 1..n {
            for sign in [1.0, -1.0] {
                dirs.push(DVector::from_fn(n, |i, _| {
                    if i == k {
                        h
                    } else if i == l {
                        sign * h
                    } else {
                        0.0
                    }
                }));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..random_directions {
        let v = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let norm = v.norm();
        if norm > 1e-3 {
            dirs.push(v / norm);
        }
    }

    let m = n * (n + 1) / 2;
    let cols = modes.len() * dirs.len();
    let mut scale: f64 = 0.0;
    for mode in modes {
        scale = scale.max(mode.a().amax());
    }
    let big = 1e3 * scale.max(1.0);
    let mut c = DMatrix::<f64>::zeros(m + 1, cols);
    for (mi, mode) in modes.iter().enumerate() {
        for (di, v) in dirs.iter().enumerate() {
            let av = mode.a() * v;
            let term = &av * v.transpose() + v * av.transpose();
            let col = mi * dirs.len() + di;
            for r in 0..n {
                for s in r..n {
                    c[(sym_index(n, r, s), col)] = term[(r, s)];
                }
            }
            c[(m, col)] = big;
        }
    }
    let mut e = DVector::<f64>::zeros(m + 1);
    e[m] = big;
    let w = nnls(&c, &e, 20 * cols);
    let residual = (&c * &w - &e).rows(0, m).norm();
    let total: f64 = w.sum();
    if !(residual <= WITNESS_TOL * scale.max(1.0)) || total <= 0.5 {
        return None;
    }
    let xs: Vec<DMatrix<f64>> = (0..modes.len())
        .map(|mi| {
            let mut x = DMatrix::<f64>::zeros(n, n);
            for (di, v) in dirs.iter().enumerate() {
                let wi = w[mi * dirs.len() + di];
                if wi > 0.0 {
                    x += v * v.transpose() * wi;
                }
            }
            x
        })
        .collect();
    Some(xs)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovCertificate {
    #[serde(serialize_with = "serialize_rows")]
    pub p: DMatrix<f64>,
    #[serde(skip)]
    pub per_mode_q: BTreeMap<usize, DMatrix<f64>>,
    pub min_eig_q: BTreeMap<usize, f64>,
    /// Where `P` came from (user supplied, a mode's Lyapunov solution, identity).
    pub source: String,
}

/// One failed necessary condition, with its evidence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NecessaryTestFailure {
    pub test: String,
    pub witness: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SumConditionSample {
    pub family: String,
    pub outcome: Definiteness,
    pub lambda_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum WitnessSearch {
    NotRun,
    Found,
    Undetermined,
}

/// A combination `sum_i (alpha_i A_i + beta_i A_i^{-1})` to test.
#[derive(Debug, Clone, PartialEq)]
pub struct Combination {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct BatteryOptions {
    pub user_p: Option<DMatrix<f64>>,
    pub x_families: Vec<Vec<DMatrix<f64>>>,
    pub combos: Vec<Combination>,
    pub eps_margin: f64,
    pub seed: u64,
    /// Random directions per mode for the zero-sum witness search.
    pub search_directions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommonLyapunovReport {
    pub exists_certificate: bool,
    pub certificate: Option<LyapunovCertificate>,
    pub perturbation_radius: Vec<PerturbationRadius>,
    pub necessary_test_failures: Vec<NecessaryTestFailure>,
    /// Outcomes for supplied families; sampled evidence only, never a proof.
    pub sum_condition_samples: Vec<SumConditionSample>,
    pub witness_search: WitnessSearch,
    pub notes: Vec<String>,
}

impl CommonLyapunovReport {
    /// A nonexistence witness was recorded.
    pub fn has_nonexistence_witness(&self) -> bool {
        !self.necessary_test_failures.is_empty()
    }
}

fn certify(
    p: &DMatrix<f64>,
    modes: &[StateSpaceMode],
    source: String,
) -> Option<LyapunovCertificate> {
    if require_spd(p, "P").is_err() {
        return None;
    }
    let checks = check_common_p(p, modes);
    if !checks.iter().all(|c| c.negative_definite) {
        return None;
    }
    let mut per_mode_q = BTreeMap::new();
    let mut min_eig_q = BTreeMap::new();
    for mode in modes {
        let q = -lyapunov_form(mode.a(), p);
        let (lo, _) = sym_eig_range(&q);
        min_eig_q.insert(mode.id(), lo);
        per_mode_q.insert(mode.id(), q);
    }
    Some(LyapunovCertificate {
        p: p.clone(),
        per_mode_q,
        min_eig_q,
        source,
    })
}

fn format_matrix(m: &DMatrix<f64>) -> String {
    let rows: Vec<String> = m
        .row_iter()
        .map(|r| {
            let v: Vec<String> = r.iter().map(|x| format!("{x:.6}")).collect();
            format!("[{}]", v.join(", "))
        })
        .collect();
    format!("[{}]", rows.join(", "))
}

/// Runs every common-Lyapunov test on a mode family.
pub fn lyapunov_battery(
    modes: &[StateSpaceMode],
    options: &BatteryOptions,
) -> Result<CommonLyapunovReport, LyapunovError> {
    let mut notes = Vec::new();
    let mut failures = Vec::new();
    let mut samples = Vec::new();
    let mut radii = Vec::new();
    let Some(first) = modes.first() else {
        return Err(LyapunovError::Input("empty mode list".into()));
    };
    let n = first.order();
    if modes.iter().any(|m| m.order() != n) {
        return Err(LyapunovError::Dimension(
            "modes differ in state dimension".into(),
        ));
    }
    let identity = DMatrix::<f64>::identity(n, n);

    // candidate storage matrices
    let mut candidates: Vec<(DMatrix<f64>, String)> = Vec::new();
    if let Some(p) = &options.user_p {
        if p.shape() != (n, n) {
            return Err(LyapunovError::Dimension(format!(
                "supplied P must be {n}x{n}"
            )));
        }
        candidates.push((p.clone(), "supplied".into()));
    }
    let mut anchor_solutions = Vec::new();
    for mode in modes {
        if is_hurwitz(mode.a())? {
            let p = solve_lyapunov(mode.a(), &identity)?;
            candidates.push((
                p.clone(),
                format!("Lyapunov solution of mode {}", mode.id()),
            ));
            anchor_solutions.push((mode, p));
        }
    }
    candidates.push((identity.clone(), "identity".into()));

    let certificate = candidates
        .iter()
        .find_map(|(p, src)| certify(p, modes, src.clone()));
    if options.user_p.is_some()
        && certificate.as_ref().map(|c| c.source.as_str()) != Some("supplied")
    {
        notes.push("supplied P does not certify every mode".into());
    }

    for (mode, p) in &anchor_solutions {
        let decay = -spectral_abscissa(mode.a());
        let eps = if options.eps_margin > 0.0 && options.eps_margin < decay {
            options.eps_margin
        } else {
            0.5 * decay
        };
        match perturbation_radius(mode, p, eps) {
            Ok(r) => radii.push(r),
            Err(e) => notes.push(format!("perturbation radius for mode {}: {e}", mode.id())),
        }
    }

    match inverse_set_screen(modes) {
        Ok(Some(w)) => failures.push(NecessaryTestFailure {
            test: "inverse_set_screen".into(),
            witness: format!(
                "{} of mode {} is not Hurwitz (spectral abscissa {:.6})",
                if w.inverted {
                    "inverse"
                } else {
                    "state matrix"
                },
                w.mode_id,
                w.spectral_abscissa
            ),
        }),
        Ok(None) => {}
        Err(e) => notes.push(format!("inverse screen skipped: {e}")),
    }

    let mut combos = options.combos.clone();
    if modes.len() > 1 {
        combos.push(Combination {
            alphas: vec![1.0; modes.len()],
            betas: vec![0.0; modes.len()],
        });
        for i in 0..modes.len() {
            for j in i + 1..modes.len() {
                let mut alphas = vec![0.0; modes.len()];
                alphas[i] = 1.0;
                alphas[j] = 1.0;
                combos.push(Combination {
                    alphas,
                    betas: vec![0.0; modes.len()],
                });
            }
        }
    }
    for combo in &combos {
        match combo_necessary_test(modes, &combo.alphas, &combo.betas) {
            Ok(true) => {}
            Ok(false) => {
                let m = combination(modes, &combo.alphas, &combo.betas)?;
                failures.push(NecessaryTestFailure {
                    test: "combo_necessary_test".into(),
                    witness: format!(
                        "alphas {:?}, betas {:?}: combination {} has spectral abscissa {:.6}",
                        combo.alphas,
                        combo.betas,
                        format_matrix(&m),
                        spectral_abscissa(&m)
                    ),
                });
            }
            Err(e) => notes.push(format!(
                "combination {:?}/{:?} skipped: {e}",
                combo.alphas, combo.betas
            )),
        }
    }

    for (k, family) in options.x_families.iter().enumerate() {
        let r = sum_condition(modes, family)?;
        if r.outcome == Definiteness::Zero {
            failures.push(NecessaryTestFailure {
                test: "sum_condition".into(),
                witness: format!("supplied family {k} gives a zero sum"),
            });
        }
        samples.push(SumConditionSample {
            family: format!("supplied {k}"),
            outcome: r.outcome,
            lambda_max: r.lambda_max,
        });
    }

    let mut witness_search = WitnessSearch::NotRun;
    if certificate.is_none() && failures.is_empty() {
        witness_search = match search_sum_witness(modes, options.search_directions, options.seed) {
            Some(xs) => {
                let r = sum_condition(modes, &xs)?;
                samples.push(SumConditionSample {
                    family: "search".into(),
                    outcome: r.outcome,
                    lambda_max: r.lambda_max,
                });
                if r.outcome == Definiteness::Zero {
                    let parts: Vec<String> = xs.iter().map(format_matrix).collect();
                    failures.push(NecessaryTestFailure {
                        test: "sum_condition".into(),
                        witness: format!("zero-sum family found by search: {}", parts.join("; ")),
                    });
                    WitnessSearch::Found
                } else {
                    WitnessSearch::Undetermined
                }
            }
            None => WitnessSearch::Undetermined,
        };
    }

    if certificate.is_some() && !failures.is_empty() {
        notes.push("a candidate P passed but a necessary test failed; certificate withheld".into());
    }
    Ok(CommonLyapunovReport {
        exists_certificate: certificate.is_some() && failures.is_empty(),
        certificate,
        perturbation_radius: radii,
        necessary_test_failures: failures,
        sum_condition_samples: samples,
        witness_search,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::matrix_exponential;

    fn mat(rows: &[&[f64]]) -> DMatrix<f64> {
        let n = rows.len();
        let m = rows[0].len();
        DMatrix::from_row_slice(n, m, &rows.concat())
    }

    fn mode(id: usize, a: DMatrix<f64>) -> StateSpaceMode {
        let n = a.nrows();
        StateSpaceMode::new(
            id,
            a,
            DVector::from_element(n, 1.0),
            DVector::from_element(n, 1.0),
            0.0,
        )
        .unwrap()
    }

    /// Composite Simpson on the integral form with exponential steps.
    fn quadrature(a: &DMatrix<f64>, q: &DMatrix<f64>, horizon: f64, steps: usize) -> DMatrix<f64> {
        let h = horizon / steps as f64;
        let step = matrix_exponential(a, h).unwrap();
        let mut e = DMatrix::<f64>::identity(a.nrows(), a.nrows());
        let mut acc = DMatrix::<f64>::zeros(a.nrows(), a.nrows());
        for k in 0..=steps {
            let w = if k == 0 || k == steps {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += e.transpose() * q * &e * w;
            e = &e * &step;
        }
        acc * (h / 3.0)
    }

    #[test]
    fn solve_examples() {
        let p =
            solve_lyapunov(&(-DMatrix::<f64>::identity(2, 2)), &DMatrix::identity(2, 2)).unwrap();
        assert!((p - DMatrix::<f64>::identity(2, 2) * 0.5).amax() < 1e-15);

        let a = mat(&[&[0.0, 1.0], &[-2.0, -3.0]]);
        let q = DMatrix::<f64>::identity(2, 2);
        let p = solve_lyapunov(&a, &q).unwrap();
        assert!((lyapunov_form(&a, &p) + &q).norm() < 1e-10);
        let oracle = quadrature(&a, &q, 50.0, 20_000);
        assert!((&p - oracle).amax() < 1e-7);

        let nil = mat(&[&[0.0, 1.0], &[0.0, 0.0]]);
        assert!(matches!(
            solve_lyapunov(&nil, &q),
            Err(LyapunovError::Stability { .. })
        ));
    }

    #[test]
    fn solve_rejects_indefinite_q() {
        let q = mat(&[&[1.0, 0.0], &[0.0, -1.0]]);
        assert!(matches!(
            solve_lyapunov(&(-DMatrix::<f64>::identity(2, 2)), &q),
            Err(LyapunovError::Definiteness(_))
        ));
    }

    #[test]
    fn check_common_p_examples() {
        let p = DMatrix::<f64>::identity(2, 2);
        let modes = vec![
            mode(1, mat(&[&[-1.0, 0.0], &[0.0, -2.0]])),
            mode(2, mat(&[&[-3.0, 0.0], &[0.0, -1.0]])),
        ];
        assert!(check_common_p(&p, &modes)
            .iter()
            .all(|c| c.negative_definite));
        let r = check_common_p(&p, &[mode(3, mat(&[&[0.0, 1.0], &[0.0, 0.0]]))]);
        assert!(!r[0].negative_definite);
        assert!((r[0].lambda_max - 1.0).abs() < 1e-12);
        assert!(check_common_p(&p, &[]).is_empty());
    }

    #[test]
    fn perturbation_radius_examples() {
        let anchor = mode(1, -DMatrix::<f64>::identity(2, 2));
        let p = DMatrix::<f64>::identity(2, 2) * 0.5;
        let r = perturbation_radius(&anchor, &p, 0.5).unwrap();
        assert!((r.radius - 0.5).abs() < 1e-12);
        assert!(matches!(
            perturbation_radius(&anchor, &p, 1.0),
            Err(LyapunovError::Parameter(_))
        ));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let d = DMatrix::<f64>::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0));
            let d = &d * (0.49 / crate::linalg::norm2(&d));
            let perturbed = mode(2, anchor.a() + d);
            assert!(check_common_p(&p, &[perturbed])[0].negative_definite);
        }
    }

    #[test]
    fn perturbation_radius_diag_anchor_monte_carlo() {
        let anchor = mode(1, mat(&[&[-1.0, 0.0], &[0.0, -3.0]]));
        let p = solve_lyapunov(anchor.a(), &DMatrix::identity(2, 2)).unwrap();
        let r = perturbation_radius(&anchor, &p, 0.1).unwrap();
        assert!(r.radius > 0.0);
        let (_, pmax) = sym_eig_range(&p);
        assert!(pmax <= r.p_norm_bound * (1.0 + 1e-12));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let d = DMatrix::<f64>::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0));
            let scale = rng.gen_range(0.0..0.999) * r.radius / crate::linalg::norm2(&d);
            let perturbed = mode(2, anchor.a() + d * scale);
            assert!(check_common_p(&p, &[perturbed])[0].negative_definite);
        }
    }

    #[test]
    fn sum_condition_examples() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        let r = sum_condition(&[mode(1, -i2.clone())], std::slice::from_ref(&i2)).unwrap();
        assert_eq!(r.outcome, Definiteness::Negative);
        assert!((r.lambda_max + 2.0).abs() < 1e-12);
        let r = sum_condition(
            &[mode(1, mat(&[&[0.0, 1.0], &[-1.0, 0.0]]))],
            std::slice::from_ref(&i2),
        )
        .unwrap();
        assert_eq!(r.outcome, Definiteness::Zero);
        let zero = DMatrix::<f64>::zeros(2, 2);
        assert!(matches!(
            sum_condition(&[mode(1, -i2)], &[zero]),
            Err(LyapunovError::Input(_))
        ));
    }

    #[test]
    fn inverse_screen_examples() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        let stable = vec![
            mode(1, -i2.clone()),
            mode(2, mat(&[&[-1.0, 0.0], &[0.0, -2.0]])),
        ];
        assert_eq!(inverse_set_screen(&stable).unwrap(), None);
        let singular = vec![
            mode(1, -i2.clone()),
            mode(2, mat(&[&[0.0, 1.0], &[0.0, 0.0]])),
        ];
        assert_eq!(
            inverse_set_screen(&singular),
            Err(LyapunovError::Singular { mode_id: 2 })
        );
        let indefinite = vec![mode(1, -i2), mode(2, mat(&[&[1.0, 0.0], &[0.0, -1.0]]))];
        let w = inverse_set_screen(&indefinite).unwrap().unwrap();
        assert_eq!(w.mode_id, 2);
        assert!(!w.inverted);
    }

    #[test]
    fn combo_examples() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        assert!(combo_necessary_test(&[mode(1, -i2)], &[1.0], &[1.0]).unwrap());
        let pair = vec![
            mode(1, mat(&[&[-1.0, 0.0], &[0.0, -2.0]])),
            mode(2, mat(&[&[-2.0, 0.0], &[0.0, -1.0]])),
        ];
        assert!(combo_necessary_test(&pair, &[1.0, 1.0], &[0.0, 0.0]).unwrap());
        // Found by scanning Hurwitz pairs [[-1, k], [0, -1]] and the transpose:
        // the sum [[-2, k], [k, -2]] loses stability once |k| >= 2.
        let pair = vec![
            mode(1, mat(&[&[-1.0, 3.0], &[0.0, -1.0]])),
            mode(2, mat(&[&[-1.0, 0.0], &[3.0, -1.0]])),
        ];
        assert!(!combo_necessary_test(&pair, &[1.0, 1.0], &[0.0, 0.0]).unwrap());
    }

    #[test]
    fn witness_search_finds_zero_sum_family() {
        let pair = vec![
            mode(1, mat(&[&[-1.0, 3.0], &[0.0, -1.0]])),
            mode(2, mat(&[&[-1.0, 0.0], &[3.0, -1.0]])),
        ];
        // Hand-built family: [[3.5,1.5],[1.5,1]] and its mirror sum to zero.
        let x1 = mat(&[&[3.5, 1.5], &[1.5, 1.0]]);
        let x2 = mat(&[&[1.0, 1.5], &[1.5, 3.5]]);
        assert_eq!(
            sum_condition(&pair, &[x1, x2]).unwrap().outcome,
            Definiteness::Zero
        );
        let xs = search_sum_witness(&pair, 64, 7).expect("witness");
        assert_eq!(
            sum_condition(&pair, &xs).unwrap().outcome,
            Definiteness::Zero
        );
    }

    #[test]
    fn witness_search_fails_when_common_p_exists() {
        let pair = vec![
            mode(1, mat(&[&[-1.0, 0.0], &[0.0, -2.0]])),
            mode(2, mat(&[&[-2.0, 0.0], &[0.0, -1.0]])),
        ];
        assert!(search_sum_witness(&pair, 32, 1).is_none());
    }

    #[test]
    fn battery_certifies_diagonal_family() {
        let modes = vec![
            mode(1, mat(&[&[-1.0, 0.0], &[0.0, -2.0]])),
            mode(2, mat(&[&[-3.0, 0.0], &[0.0, -1.0]])),
        ];
        let report = lyapunov_battery(
            &modes,
            &BatteryOptions {
                eps_margin: 0.1,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(report.exists_certificate);
        assert!(report.necessary_test_failures.is_empty());
        assert_eq!(report.perturbation_radius.len(), 2);
    }

    #[test]
    fn battery_reports_nonexistence() {
        let modes = vec![
            mode(1, mat(&[&[-1.0, 3.0], &[0.0, -1.0]])),
            mode(2, mat(&[&[-1.0, 0.0], &[3.0, -1.0]])),
        ];
        let report = lyapunov_battery(
            &modes,
            &BatteryOptions {
                eps_margin: 0.1,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(!report.exists_certificate);
        assert!(report.has_nonexistence_witness());
    }

    #[test]
    fn symmetric_index_is_a_bijection() {
        for n in 1..6 {
            let mut seen = vec![false; n * (n + 1) / 2];
            for i in 0..n {
                for j in i..n {
                    let k = sym_index(n, i, j);
                    assert!(!seen[k]);
                    seen[k] = true;
                    assert_eq!(k, sym_index(n, j, i));
                }
            }
            assert!(seen.iter().all(|&s| s));
        }
    }
}
