//! Single LTI parameterizations `(A, b, c, d)`: spectra, matrix exponentials,
//! transfer functions, frequency sweeps, positive-realness classes and
//! exponential decay envelopes.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{
    all_finite, norm2, poly_derivative, poly_eval, poly_from_roots, poly_roots, poly_trim,
    sorted_eigenvalues, spectral_abscissa,
};

/// Band separating `ZeroMin` from the signed classes.
pub const TOL_PR: f64 = 1e-9;
pub const TOL_HURWITZ: f64 = 1e-9;
pub const TOL_ENV: f64 = 1e-6;
/// Pole/zero pairs closer than this are cancelled before classification.
pub const CANCEL_TOL: f64 = 1e-7;
/// Poles with `|Re p| <= AXIS_TOL (1 + |p|)` are treated as lying on the imaginary axis.
pub const AXIS_TOL: f64 = 1e-7;
const RESOLVENT_TOL: f64 = 1e-8;
const GOLDEN_REL_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LtiError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("frequency response evaluated at or near a pole (omega = {omega})")]
    PoleProximity { omega: f64 },
    #[error("transfer function disagrees with the resolvent at s = {s}: residual {residual:e}")]
    Consistency { s: Complex64, residual: f64 },
    #[error("decay envelope could not be fitted: {0}")]
    EnvelopeFit(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

/// One parameterization of the feed-forward block.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceMode {
    id: usize,
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: DVector<f64>,
    d: f64,
}

impl StateSpaceMode {
    pub fn new(
        id: usize,
        a: DMatrix<f64>,
        b: DVector<f64>,
        c: DVector<f64>,
        d: f64,
    ) -> Result<Self, LtiError> {
        if !a.is_square() {
            return Err(LtiError::Dimension(format!(
                "mode {id}: A is {}x{}, expected square",
                a.nrows(),
                a.ncols()
            )));
        }
        let n = a.nrows();
        if n == 0 {
            return Err(LtiError::Dimension(format!("mode {id}: empty state")));
        }
        if b.len() != n || c.len() != n {
            return Err(LtiError::Dimension(format!(
                "mode {id}: b has length {}, c has length {}, expected {n}",
                b.len(),
                c.len()
            )));
        }
        if !all_finite(&a) {
            return Err(LtiError::NonFinite("A"));
        }
        if !b.iter().chain(c.iter()).all(|v| v.is_finite()) || !d.is_finite() {
            return Err(LtiError::NonFinite("b, c or d"));
        }
        Ok(Self { id, a, b, c, d })
    }

    /// Convenience constructor from row-major slices.
    pub fn from_rows(
        id: usize,
        a: &[&[f64]],
        b: &[f64],
        c: &[f64],
        d: f64,
    ) -> Result<Self, LtiError> {
        let n = a.len();
        if a.iter().any(|row| row.len() != n) {
            return Err(LtiError::Dimension(format!(
                "mode {id}: A rows must have length {n}"
            )));
        }
        let flat: Vec<f64> = a.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(
            id,
            DMatrix::from_row_slice(n, n, &flat),
            DVector::from_column_slice(b),
            DVector::from_column_slice(c),
            d,
        )
    }

    pub fn id(&self) -> usize {
        self.id
    }
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }
    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }
    pub fn d(&self) -> f64 {
        self.d
    }
    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    /// `c^T (sI - A)^{-1} b + d` through a complex linear solve.
    pub fn resolvent_gain(&self, s: Complex64) -> Option<Complex64> {
        let n = self.order();
        let m = DMatrix::<Complex64>::from_fn(n, n, |i, j| {
            let diag = if i == j { s } else { Complex64::new(0.0, 0.0) };
            diag - Complex64::new(self.a[(i, j)], 0.0)
        });
        let rhs = DVector::<Complex64>::from_fn(n, |i, _| Complex64::new(self.b[i], 0.0));
        let z = m.lu().solve(&rhs)?;
        let cz: Complex64 = (0..n).map(|i| z[i] * self.c[i]).sum();
        Some(cz + self.d)
    }
}

fn check_square(a: &DMatrix<f64>) -> Result<(), LtiError> {
    if a.is_square() {
        Ok(())
    } else {
        Err(LtiError::Dimension(format!(
            "expected a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )))
    }
}

/// Spectrum sorted by real part (descending), then imaginary part.
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex64>, LtiError> {
    check_square(a)?;
    Ok(sorted_eigenvalues(a))
}

pub fn is_hurwitz(a: &DMatrix<f64>) -> Result<bool, LtiError> {
    check_square(a)?;
    Ok(spectral_abscissa(a) < -TOL_HURWITZ)
}

// Padé(13) coefficients for scaling and squaring.
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

/// `exp(A t)` by scaling and squaring with a degree-13 Padé approximant.
pub fn matrix_exponential(a: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>, LtiError> {
    check_square(a)?;
    if !(t >= 0.0) || !t.is_finite() {
        return Err(LtiError::Parameter(format!(
            "time must be finite and nonnegative, got {t}"
        )));
    }
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    if t == 0.0 || n == 0 {
        return Ok(id);
    }
    let at = a * t;
    let norm1 = at.column_iter().map(|c| c.abs().sum()).fold(0.0, f64::max);
    if norm1 == 0.0 {
        return Ok(id);
    }
    let squarings = if norm1 > THETA13 {
        (norm1 / THETA13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let scaled = at / 2f64.powi(squarings);
    let b = &PADE13;
    let a2 = &scaled * &scaled;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &id * b[1];
    let u = &scaled * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &id * b[0];
    let mut r = (&v - &u)
        .lu()
        .solve(&(&v + &u))
        .ok_or_else(|| LtiError::Parameter("Padé denominator is singular".into()))?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    if !all_finite(&r) {
        return Err(LtiError::NonFinite("matrix exponential"));
    }
    Ok(r)
}

/// Rational function `num(s) / den(s)`, coefficients in descending degree,
/// `den` monic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferFunction {
    pub num: Vec<f64>,
    pub den: Vec<f64>,
}

impl TransferFunction {
    pub fn new(num: Vec<f64>, den: Vec<f64>) -> Result<Self, LtiError> {
        let den = poly_trim(&den, 0.0, 1.0);
        if den == [0.0] {
            return Err(LtiError::Parameter(
                "denominator is identically zero".into(),
            ));
        }
        let lead = den[0];
        let den: Vec<f64> = den.iter().map(|c| c / lead).collect();
        let num: Vec<f64> = poly_trim(&num, 0.0, 1.0).iter().map(|c| c / lead).collect();
        if num.len() > den.len() {
            return Err(LtiError::Parameter("improper transfer function".into()));
        }
        Ok(Self { num, den })
    }

    pub fn eval(&self, s: Complex64) -> Complex64 {
        poly_eval(&self.num, s) / poly_eval(&self.den, s)
    }

    pub fn is_zero(&self) -> bool {
        self.num.iter().all(|&c| c == 0.0)
    }

    /// `deg(den) - deg(num)`, or `None` for the zero function.
    pub fn relative_degree(&self) -> Option<usize> {
        if self.is_zero() {
            None
        } else {
            Some(self.den.len() - self.num.len())
        }
    }

    pub fn poles(&self) -> Vec<Complex64> {
        poly_roots(&self.den)
    }

    pub fn zeros(&self) -> Vec<Complex64> {
        if self.is_zero() {
            Vec::new()
        } else {
            poly_roots(&self.num)
        }
    }

    /// Limit of `Re G(j omega)` as `omega -> infinity`.
    pub fn high_frequency_limit(&self) -> f64 {
        if !self.is_zero() && self.num.len() == self.den.len() {
            self.num[0]
        } else {
            0.0
        }
    }

    /// Cancels pole/zero pairs closer than `tol` (scaled by magnitude).
    pub fn minimal(&self, tol: f64) -> TransferFunction {
        if self.is_zero() {
            return TransferFunction {
                num: vec![0.0],
                den: vec![1.0],
            };
        }
        let mut poles = self.poles();
        let mut zeros = self.zeros();
        let mut cancelled = false;
        let mut zi = 0;
        while zi < zeros.len() {
            let z = zeros[zi];
            let hit = poles
                .iter()
                .position(|p| (p - z).norm() <= tol * (1.0 + z.norm()));
            if let Some(pi) = hit {
                poles.remove(pi);
                zeros.remove(zi);
                cancelled = true;
            } else {
                zi += 1;
            }
        }
        if !cancelled {
            return self.clone();
        }
        let gain = self.num[0];
        let num: Vec<f64> = poly_from_roots(&zeros).iter().map(|c| c * gain).collect();
        TransferFunction {
            num,
            den: poly_from_roots(&poles),
        }
    }
}

impl std::fmt::Display for TransferFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        fn poly(c: &[f64]) -> String {
            let deg = c.len() - 1;
            let terms: Vec<String> = c
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(k, v)| match deg - k {
                    0 => format!("{v}"),
                    1 => format!("{v}*s"),
                    p => format!("{v}*s^{p}"),
                })
                .collect();
            if terms.is_empty() {
                "0".into()
            } else {
                terms.join(" + ")
            }
        }
        write!(f, "({}) / ({})", poly(&self.num), poly(&self.den))
    }
}

/// `G(s) = c^T adj(sI - A) b / det(sI - A) + d` via the Leverrier–Faddeev
/// recursion, checked pointwise against complex resolvent solves.
pub fn transfer_function(mode: &StateSpaceMode) -> Result<TransferFunction, LtiError> {
    let a = mode.a();
    let n = mode.order();
    let id = DMatrix::<f64>::identity(n, n);

    // adj(sI - A) = sum_k N_k s^{n-k}, det(sI - A) = s^n + a_{n-1} s^{n-1} + ...
    let mut den = vec![1.0; n + 1];
    let mut strict = Vec::with_capacity(n);
    let mut nk = id.clone();
    for (k, slot) in den.iter_mut().enumerate().skip(1) {
        strict.push((mode.c().transpose() * &nk * mode.b())[(0, 0)]);
        let m = a * &nk;
        let coeff = -m.trace() / k as f64;
        *slot = coeff;
        nk = m + &id * coeff;
    }

    let mut num = vec![0.0; n + 1];
    for (k, v) in strict.iter().enumerate() {
        num[k + 1] = *v;
    }
    for (k, v) in den.iter().enumerate() {
        num[k] += mode.d() * v;
    }
    let scale = num
        .iter()
        .chain(den.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let num = poly_trim(&num, 1e-13, scale);
    let tf = TransferFunction { num, den };

    verify_against_resolvent(mode, &tf)?;
    Ok(tf)
}

fn verify_against_resolvent(mode: &StateSpaceMode, tf: &TransferFunction) -> Result<(), LtiError> {
    const PROBES: [(f64, f64); 12] = [
        (0.37, 1.1),
        (-0.5, 2.3),
        (1.7, -0.4),
        (2.9, 3.1),
        (-1.3, -1.9),
        (0.11, 0.05),
        (5.0, 7.0),
        (-3.7, 0.9),
        (0.8, -6.2),
        (9.1, 0.3),
        (-7.3, -4.4),
        (0.02, 11.0),
    ];
    let eigs = sorted_eigenvalues(mode.a());
    let radius = eigs.iter().map(|l| l.norm()).fold(0.0, f64::max);
    let scale = 1.0 + radius;
    let mut checked = 0;
    for &(re, im) in PROBES.iter() {
        let s = Complex64::new(re, im) * scale;
        let min_dist = eigs
            .iter()
            .map(|l| (l - s).norm())
            .fold(f64::INFINITY, f64::min);
        if min_dist < 0.05 * scale {
            continue;
        }
        let Some(direct) = mode.resolvent_gain(s) else {
            continue;
        };
        let via_poly = tf.eval(s);
        let residual = (via_poly - direct).norm();
        if residual >= RESOLVENT_TOL * (1.0 + direct.norm()) {
            return Err(LtiError::Consistency { s, residual });
        }
        checked += 1;
        if checked >= 6 {
            break;
        }
    }
    if checked < 5 {
        return Err(LtiError::Consistency {
            s: Complex64::new(f64::NAN, f64::NAN),
            residual: f64::NAN,
        });
    }
    Ok(())
}

/// `G(j omega)`.
pub fn freq_response(g: &TransferFunction, omega: f64) -> Result<Complex64, LtiError> {
    let s = Complex64::new(0.0, omega);
    let den = poly_eval(&g.den, s);
    let deg = g.den.len() - 1;
    let scale: f64 = g
        .den
        .iter()
        .enumerate()
        .map(|(k, c)| c.abs() * omega.abs().powi((deg - k) as i32))
        .sum();
    if den.norm() <= 1e-10 * scale.max(f64::MIN_POSITIVE) {
        return Err(LtiError::PoleProximity { omega });
    }
    Ok(poly_eval(&g.num, s) / den)
}

/// Logarithmic frequency sweep used for the extremum searches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrequencyGrid {
    pub points: usize,
    pub w_min: f64,
    pub w_max: f64,
}

impl Default for FrequencyGrid {
    fn default() -> Self {
        Self {
            points: 2048,
            w_min: 1e-3,
            w_max: 1e4,
        }
    }
}

impl FrequencyGrid {
    pub fn validate(&self) -> Result<(), LtiError> {
        if self.points < 2
            || !(self.w_min > 0.0)
            || !(self.w_max > self.w_min)
            || !self.w_max.is_finite()
        {
            return Err(LtiError::Parameter(format!(
                "frequency grid needs points >= 2 and 0 < w_min < w_max, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn omegas(&self) -> Vec<f64> {
        let (lo, hi) = (self.w_min.log10(), self.w_max.log10());
        let step = (hi - lo) / (self.points - 1) as f64;
        (0..self.points)
            .map(|k| 10f64.powf(lo + step * k as f64))
            .collect()
    }
}

/// Where an extremum of `Re G(j omega)` was attained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Frequency {
    Finite(f64),
    Infinity,
}

impl Frequency {
    pub fn finite(self) -> Option<f64> {
        match self {
            Frequency::Finite(w) => Some(w),
            Frequency::Infinity => None,
        }
    }
}

impl Serialize for Frequency {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Frequency::Finite(w) => s.serialize_f64(*w),
            Frequency::Infinity => s.serialize_str("infinity"),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Extremum {
    Min,
    MaxAbs,
}

#[derive(Debug, Clone, Copy)]
struct SweepResult {
    value: f64,
    at: Frequency,
    /// Best value over finite frequencies only.
    finite_value: f64,
}

fn golden_section<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= GOLDEN_REL_TOL * (a.abs() + b.abs()).max(1e-300) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Sweeps `{0} ∪ grid`, refines around the best sample and compares against the
/// `omega -> infinity` limit. Frequencies in `exclude` (critical poles) are skipped.
fn sweep(
    g: &TransferFunction,
    grid: &FrequencyGrid,
    exclude: &[f64],
    kind: Extremum,
) -> Result<SweepResult, LtiError> {
    grid.validate()?;
    let near_excluded = |w: f64| exclude.iter().any(|&p| (w - p).abs() <= 1e-6 * (1.0 + p));
    // objective is minimized
    let objective = |w: f64| -> f64 {
        let re =
            poly_eval(&g.num, Complex64::new(0.0, w)) / poly_eval(&g.den, Complex64::new(0.0, w));
        match kind {
            Extremum::Min => re.re,
            Extremum::MaxAbs => -re.re.abs(),
        }
    };

    let mut cands: Vec<f64> = Vec::with_capacity(grid.points + 1);
    cands.push(0.0);
    cands.extend(grid.omegas());
    cands.retain(|&w| !near_excluded(w));
    let mut values = Vec::with_capacity(cands.len());
    for &w in &cands {
        freq_response(g, w)?;
        values.push(objective(w));
    }
    let (best_idx, mut best_val) = values
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .ok_or_else(|| LtiError::Parameter("empty frequency sweep".into()))?;
    let mut best_w = cands[best_idx];

    let lo = cands[best_idx.saturating_sub(1)];
    let hi = cands[(best_idx + 1).min(cands.len() - 1)];
    if hi > lo && !exclude.iter().any(|&p| p > lo && p < hi) {
        let (w, v) = golden_section(objective, lo, hi);
        if v < best_val {
            best_val = v;
            best_w = w;
        }
    }

    let limit = g.high_frequency_limit();
    let limit_obj = match kind {
        Extremum::Min => limit,
        Extremum::MaxAbs => -limit.abs(),
    };
    let (value_obj, at) = if limit_obj <= best_val {
        (limit_obj, Frequency::Infinity)
    } else {
        (best_val, Frequency::Finite(best_w))
    };
    let unobj = |v: f64| match kind {
        Extremum::Min => v,
        Extremum::MaxAbs => -v,
    };
    Ok(SweepResult {
        value: unobj(value_obj),
        at,
        finite_value: unobj(best_val),
    })
}

fn axis_poles(g: &TransferFunction) -> Vec<Complex64> {
    g.poles()
        .into_iter()
        .filter(|p| p.re.abs() <= AXIS_TOL * (1.0 + p.norm()))
        .collect()
}

/// Minimum of `Re G(j omega)` over `omega >= 0` (grid, refinement and the
/// infinite-frequency limit).
pub fn min_real_part(
    g: &TransferFunction,
    grid: &FrequencyGrid,
) -> Result<(f64, Frequency), LtiError> {
    if let Some(p) = axis_poles(g).into_iter().find(|p| p.im.abs() <= grid.w_max) {
        return Err(LtiError::PoleProximity { omega: p.im.abs() });
    }
    let r = sweep(g, grid, &[], Extremum::Min)?;
    Ok((r.value, r.at))
}

/// Maximum of `|Re G(j omega)|` over `omega >= 0`.
pub fn max_abs_real_part(
    g: &TransferFunction,
    grid: &FrequencyGrid,
) -> Result<(f64, Frequency), LtiError> {
    if let Some(p) = axis_poles(g).into_iter().find(|p| p.im.abs() <= grid.w_max) {
        return Err(LtiError::PoleProximity { omega: p.im.abs() });
    }
    let r = sweep(g, grid, &[], Extremum::MaxAbs)?;
    Ok((r.value, r.at))
}

/// Sign class of `min Re G(j omega)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PrClass {
    PositiveMin,
    ZeroMin,
    NegativeMin,
}

impl PrClass {
    pub fn from_min_re(min_re: f64) -> Self {
        if min_re > TOL_PR {
            PrClass::PositiveMin
        } else if min_re < -TOL_PR {
            PrClass::NegativeMin
        } else {
            PrClass::ZeroMin
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrClassification {
    pub mode_id: usize,
    pub class: PrClass,
    pub min_re: f64,
    pub argmin_omega: Frequency,
    /// Minimum over finite frequencies only; differs from `min_re` when the
    /// infimum is only approached as `omega -> infinity`.
    pub finite_min_re: f64,
    pub max_abs_re: f64,
    pub is_strictly_positive_real: bool,
    pub is_positive_real: bool,
    pub relative_degree: Option<usize>,
    pub hurwitz_poles: bool,
    pub has_integrator: bool,
    pub transfer_function: TransferFunction,
    pub notes: Vec<String>,
}

/// Positive-realness classification of one mode.
pub fn classify_pr(
    mode: &StateSpaceMode,
    grid: &FrequencyGrid,
) -> Result<PrClassification, LtiError> {
    let tf = transfer_function(mode)?.minimal(CANCEL_TOL);
    let mut notes = Vec::new();

    if tf.is_zero() {
        notes.push("transfer function is identically zero".to_string());
        return Ok(PrClassification {
            mode_id: mode.id(),
            class: PrClass::ZeroMin,
            min_re: 0.0,
            argmin_omega: Frequency::Finite(0.0),
            finite_min_re: 0.0,
            max_abs_re: 0.0,
            is_strictly_positive_real: false,
            is_positive_real: true,
            relative_degree: None,
            hurwitz_poles: true,
            has_integrator: false,
            transfer_function: tf,
            notes,
        });
    }

    let poles = tf.poles();
    let on_axis = |p: &Complex64| p.re.abs() <= AXIS_TOL * (1.0 + p.norm());
    let critical: Vec<Complex64> = poles.iter().copied().filter(|p| on_axis(p)).collect();
    let unstable = poles.iter().any(|p| !on_axis(p) && p.re > 0.0);
    let hurwitz_poles = critical.is_empty() && !unstable;
    let has_integrator = critical.iter().any(|p| p.norm() <= AXIS_TOL);

    let mut critical_ok = true;
    for (i, p) in critical.iter().enumerate() {
        if critical[..i]
            .iter()
            .any(|q| (p - q).norm() <= 1e-6 * (1.0 + p.norm()))
        {
            critical_ok = false;
            notes.push(format!("repeated critical pole at {p}"));
            continue;
        }
        let dden = poly_eval(&poly_derivative(&tf.den), *p);
        let residue = poly_eval(&tf.num, *p) / dden;
        if residue.re < -TOL_PR || residue.im.abs() > 1e-6 * (1.0 + residue.norm()) {
            critical_ok = false;
            notes.push(format!(
                "critical pole at {p} has residue {residue}, expected nonnegative real"
            ));
        }
    }
    if unstable {
        notes.push("pole in the open right half-plane".to_string());
    }

    let mut exclude: Vec<f64> = critical.iter().map(|p| p.im.abs()).collect();
    exclude.sort_by(|a, b| a.partial_cmp(b).unwrap());
    exclude.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * (1.0 + b.abs()));

    let min = sweep(&tf, grid, &exclude, Extremum::Min)?;
    let max_abs = sweep(&tf, grid, &exclude, Extremum::MaxAbs)?;
    let class = PrClass::from_min_re(min.value);

    let relative_degree = tf.relative_degree();
    let degree_ok = matches!(relative_degree, Some(0) | Some(1));
    if !degree_ok {
        notes.push("relative degree exceeds one".to_string());
    }

    let is_positive_real = degree_ok && !unstable && critical_ok && min.value >= -TOL_PR;
    let is_strictly_positive_real = is_positive_real
        && hurwitz_poles
        && match relative_degree {
            Some(0) => min.value > TOL_PR,
            _ => min.finite_value > 0.0,
        };
    if is_strictly_positive_real && class == PrClass::ZeroMin {
        notes.push(
            "strictly positive real with infimum reached only as omega -> infinity".to_string(),
        );
    }

    Ok(PrClassification {
        mode_id: mode.id(),
        class,
        min_re: min.value,
        argmin_omega: min.at,
        finite_min_re: min.finite_value,
        max_abs_re: max_abs.value,
        is_strictly_positive_real,
        is_positive_real,
        relative_degree,
        hurwitz_poles,
        has_integrator,
        transfer_function: tf,
        notes,
    })
}

/// Constants with `||exp(A t)||_2 <= k exp(-rho t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayEnvelope {
    pub k: f64,
    pub rho: f64,
}

impl DecayEnvelope {
    pub fn bound(&self, t: f64) -> f64 {
        self.k * (-self.rho * t).exp()
    }
}

/// Sample times used to fit and validate a decay envelope.
pub fn envelope_validation_grid(a: &DMatrix<f64>, eps_margin: f64) -> Vec<f64> {
    let (horizon, step) = envelope_grid_params(a, eps_margin);
    let n = (horizon / step).round() as usize;
    let mut grid: Vec<f64> = Vec::with_capacity(2 * n + 1);
    for k in 0..=2 * n {
        grid.push(k as f64 * step / 2.0);
    }
    grid
}

fn envelope_grid_params(a: &DMatrix<f64>, eps_margin: f64) -> (f64, f64) {
    let horizon = (10.0 / eps_margin).clamp(50.0, 2000.0);
    let norm = norm2(a);
    let step = (0.02f64).min(0.1 / (1.0 + norm)).max(horizon / 100_000.0);
    (horizon, step)
}

/// Whether some eigenvalue attaining the spectral abscissa is defective.
fn abscissa_is_defective(a: &DMatrix<f64>, eigs: &[Complex64]) -> bool {
    let Some(top) = eigs.first() else {
        return false;
    };
    let n = a.nrows();
    let cluster_tol = 1e-5 * (1.0 + top.norm());
    let leaders: Vec<Complex64> = eigs
        .iter()
        .copied()
        .filter(|l| (l.re - top.re).abs() <= cluster_tol)
        .collect();
    let scale = 1.0 + norm2(a);
    for lead in &leaders {
        let members: Vec<&Complex64> = eigs
            .iter()
            .filter(|l| (*l - lead).norm() <= cluster_tol)
            .collect();
        let multiplicity = members.len();
        if multiplicity < 2 {
            continue;
        }
        let center: Complex64 = members.iter().copied().sum::<Complex64>() / multiplicity as f64;
        let shifted = DMatrix::<Complex64>::from_fn(n, n, |i, j| {
            let v = Complex64::new(a[(i, j)], 0.0);
            if i == j {
                v - center
            } else {
                v
            }
        });
        let sv = shifted.singular_values();
        let geometric = sv.iter().filter(|&&s| s <= 1e-6 * scale).count();
        if geometric < multiplicity {
            return true;
        }
    }
    false
}

/// Decay envelope `(K, rho)` of `exp(A t)`.
///
/// `rho` equals minus the spectral abscissa, reduced by `eps_margin` when an
/// eigenvalue attaining the abscissa is defective (a Jordan block makes the
/// unshifted bound unattainable). `K` is the sampled supremum of
/// `||exp(A t)|| exp(rho t)` over the validation grid, clamped to at least one.
pub fn decay_envelope(a: &DMatrix<f64>, eps_margin: f64) -> Result<DecayEnvelope, LtiError> {
    check_square(a)?;
    if !(eps_margin > 0.0) || !eps_margin.is_finite() {
        return Err(LtiError::Parameter(format!(
            "eps_margin must be positive, got {eps_margin}"
        )));
    }
    let eigs = sorted_eigenvalues(a);
    let abscissa = eigs.first().map(|l| l.re).unwrap_or(0.0);
    let rho = if abscissa_is_defective(a, &eigs) {
        -abscissa - eps_margin
    } else {
        -abscissa
    };

    let n = a.nrows();
    let (horizon, step) = envelope_grid_params(a, eps_margin);
    let count = (horizon / step).round() as usize;
    let shifted = a + DMatrix::<f64>::identity(n, n) * rho;
    let half = matrix_exponential(&shifted, step / 2.0)?;
    let full = &half * &half;

    let mut k: f64 = 1.0;
    let mut m = DMatrix::<f64>::identity(n, n);
    for _ in 0..count {
        let mid = &m * &half;
        m = &m * &full;
        let peak = norm2(&mid).max(norm2(&m));
        if !peak.is_finite() {
            return Err(LtiError::EnvelopeFit(
                "non-finite exponential norm on the validation grid".into(),
            ));
        }
        k = k.max(peak);
    }
    Ok(DecayEnvelope { k, rho })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m2(a: [[f64; 2]; 2]) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[a[0][0], a[0][1], a[1][0], a[1][1]])
    }

    fn scalar_mode(a: f64, b: f64, c: f64, d: f64) -> StateSpaceMode {
        StateSpaceMode::from_rows(1, &[&[a]], &[b], &[c], d).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn eigenvalues_of_diagonal_companion_and_nilpotent() {
        let e = eigenvalues(&m2([[-1.0, 0.0], [0.0, -3.0]])).unwrap();
        assert!(close(e[0].re, -1.0, 1e-12) && close(e[1].re, -3.0, 1e-12));
        let e = eigenvalues(&m2([[0.0, 1.0], [-2.0, -3.0]])).unwrap();
        assert!(close(e[0].re, -1.0, 1e-10) && close(e[1].re, -2.0, 1e-10));
        assert!(e.iter().all(|l| l.im.abs() < 1e-10));
        let e = eigenvalues(&m2([[0.0, 1.0], [0.0, 0.0]])).unwrap();
        assert!(e.iter().all(|l| l.norm() < 1e-10));
    }

    #[test]
    fn eigenvalues_reject_non_square() {
        let a = DMatrix::<f64>::zeros(2, 3);
        assert!(matches!(eigenvalues(&a), Err(LtiError::Dimension(_))));
        assert!(is_hurwitz(&a).is_err());
    }

    #[test]
    fn hurwitz_examples() {
        assert!(is_hurwitz(&m2([[-1.0, 0.0], [0.0, -3.0]])).unwrap());
        assert!(!is_hurwitz(&m2([[0.0, 1.0], [0.0, 0.0]])).unwrap());
        assert!(is_hurwitz(&m2([[0.0, 1.0], [-2.0, -3.0]])).unwrap());
    }

    #[test]
    fn exponential_examples() {
        let z = DMatrix::<f64>::zeros(3, 3);
        assert_eq!(
            matrix_exponential(&z, 4.0).unwrap(),
            DMatrix::identity(3, 3)
        );
        let e = matrix_exponential(&m2([[-1.0, 0.0], [0.0, -2.0]]), 1.0).unwrap();
        assert!(close(e[(0, 0)], (-1f64).exp(), 1e-14));
        assert!(close(e[(1, 1)], (-2f64).exp(), 1e-14));
        assert!(e[(0, 1)].abs() < 1e-15);
        let e = matrix_exponential(&m2([[0.0, 1.0], [0.0, 0.0]]), 2.0).unwrap();
        assert!((e - m2([[1.0, 2.0], [0.0, 1.0]])).amax() < 1e-14);
        let a = m2([[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(
            matrix_exponential(&a, 0.0).unwrap(),
            DMatrix::identity(2, 2)
        );
        assert!(matrix_exponential(&a, -1.0).is_err());
    }

    #[test]
    fn exponential_matches_reference_on_large_norm() {
        let a = m2([[-30.0, 12.0], [4.0, -45.0]]);
        let ours = matrix_exponential(&a, 0.7).unwrap();
        let reference = (&a * 0.7).exp();
        let rel = (&ours - &reference).norm() / reference.norm().max(1e-300);
        assert!(rel < 1e-9, "relative error {rel}");
    }

    #[test]
    fn transfer_function_examples() {
        let g = transfer_function(&scalar_mode(-1.0, 1.0, 1.0, 0.0)).unwrap();
        assert_eq!(g.num, vec![1.0]);
        assert_eq!(g.den, vec![1.0, 1.0]);
        let g = transfer_function(&scalar_mode(-1.0, 1.0, 1.0, 1.0)).unwrap();
        assert_eq!(g.num, vec![1.0, 2.0]);
        assert_eq!(g.den, vec![1.0, 1.0]);
        let g = transfer_function(&scalar_mode(0.0, 1.0, 1.0, 0.0)).unwrap();
        assert_eq!(g.num, vec![1.0]);
        assert_eq!(g.den, vec![1.0, 0.0]);
    }

    #[test]
    fn transfer_function_of_companion_form() {
        // x1' = x2, x2' = -2 x1 - 3 x2 + u, y = x1  =>  1 / (s^2 + 3 s + 2)
        let mode = StateSpaceMode::from_rows(
            7,
            &[&[0.0, 1.0], &[-2.0, -3.0]],
            &[0.0, 1.0],
            &[1.0, 0.0],
            0.0,
        )
        .unwrap();
        let g = transfer_function(&mode).unwrap();
        assert_eq!(g.den.len(), 3);
        assert!(close(g.den[1], 3.0, 1e-12) && close(g.den[2], 2.0, 1e-12));
        assert_eq!(g.relative_degree(), Some(2));
    }

    #[test]
    fn freq_response_examples() {
        let g = TransferFunction::new(vec![1.0], vec![1.0, 1.0]).unwrap();
        let v = freq_response(&g, 0.0).unwrap();
        assert!(close(v.re, 1.0, 1e-15) && v.im.abs() < 1e-15);
        let v = freq_response(&g, 1.0).unwrap();
        assert!(close(v.re, 0.5, 1e-15) && close(v.im, -0.5, 1e-15));
        let integrator = TransferFunction::new(vec![1.0], vec![1.0, 0.0]).unwrap();
        let v = freq_response(&integrator, 1.0).unwrap();
        assert!(v.re.abs() < 1e-15 && close(v.im, -1.0, 1e-15));
        assert_eq!(
            freq_response(&integrator, 0.0),
            Err(LtiError::PoleProximity { omega: 0.0 })
        );
    }

    #[test]
    fn min_real_part_examples() {
        let grid = FrequencyGrid::default();
        let g = TransferFunction::new(vec![1.0, 2.0], vec![1.0, 1.0]).unwrap();
        let (v, at) = min_real_part(&g, &grid).unwrap();
        assert!(close(v, 1.0, 1e-12));
        assert_eq!(at, Frequency::Infinity);
        let g = TransferFunction::new(vec![1.0], vec![1.0, 1.0]).unwrap();
        let (v, at) = min_real_part(&g, &grid).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(at, Frequency::Infinity);
        let g = TransferFunction::new(vec![1.0], vec![1.0, -1.0]).unwrap();
        let (v, at) = min_real_part(&g, &grid).unwrap();
        assert!(close(v, -1.0, 1e-12));
        assert_eq!(at, Frequency::Finite(0.0));
    }

    #[test]
    fn min_real_part_rejects_axis_pole() {
        let g = TransferFunction::new(vec![1.0], vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            min_real_part(&g, &FrequencyGrid::default()),
            Err(LtiError::PoleProximity { .. })
        ));
    }

    #[test]
    fn min_real_part_refines_interior_minimum() {
        // Re of (s - 1)/(s^2 + s + 4) has an interior minimum; compare with a dense scan.
        let g = TransferFunction::new(vec![1.0, -1.0], vec![1.0, 1.0, 4.0]).unwrap();
        let (v, at) = min_real_part(&g, &FrequencyGrid::default()).unwrap();
        let dense = (0..=400_000)
            .map(|k| k as f64 * 1e-4)
            .map(|w| g.eval(Complex64::new(0.0, w)).re)
            .fold(f64::INFINITY, f64::min);
        assert!(v <= dense + 1e-12, "{v} vs {dense}");
        assert!((v - dense).abs() < 1e-8);
        assert!(at.finite().is_some());
    }

    #[test]
    fn classify_examples() {
        let grid = FrequencyGrid::default();
        let c = classify_pr(&scalar_mode(-1.0, 1.0, 1.0, 1.0), &grid).unwrap();
        assert!(c.is_strictly_positive_real);
        assert_eq!(c.class, PrClass::PositiveMin);
        assert_eq!(c.relative_degree, Some(0));

        let c = classify_pr(&scalar_mode(0.0, 1.0, 1.0, 0.0), &grid).unwrap();
        assert!(c.is_positive_real && !c.is_strictly_positive_real);
        assert_eq!(c.class, PrClass::ZeroMin);
        assert!(c.has_integrator);

        let c = classify_pr(&scalar_mode(1.0, 1.0, 1.0, 0.0), &grid).unwrap();
        assert!(!c.is_positive_real);
        assert_eq!(c.class, PrClass::NegativeMin);
        assert!(close(c.min_re, -1.0, 1e-9));
    }

    #[test]
    fn classify_relative_degree_one_spr_uses_finite_positivity() {
        let c = classify_pr(&scalar_mode(-1.0, 1.0, 1.0, 0.0), &FrequencyGrid::default()).unwrap();
        assert!(c.is_strictly_positive_real);
        assert_eq!(c.class, PrClass::ZeroMin);
        assert_eq!(c.min_re, 0.0);
        assert!(c.finite_min_re > 0.0);
    }

    #[test]
    fn classify_rejects_relative_degree_two() {
        let mode = StateSpaceMode::from_rows(
            2,
            &[&[0.0, 1.0], &[-2.0, -3.0]],
            &[0.0, 1.0],
            &[1.0, 0.0],
            0.0,
        )
        .unwrap();
        let c = classify_pr(&mode, &FrequencyGrid::default()).unwrap();
        assert!(!c.is_positive_real);
        assert!(c
            .notes
            .iter()
            .any(|n| n.contains("relative degree exceeds one")));
    }

    #[test]
    fn classify_cancels_uncontrollable_unstable_state() {
        // The unstable state is neither driven nor observed: G = 1/(s+1) + 1.
        let mode = StateSpaceMode::from_rows(
            3,
            &[&[-1.0, 0.0], &[0.0, 2.0]],
            &[1.0, 0.0],
            &[1.0, 0.0],
            1.0,
        )
        .unwrap();
        let c = classify_pr(&mode, &FrequencyGrid::default()).unwrap();
        assert!(c.is_strictly_positive_real);
        assert_eq!(c.transfer_function.den.len(), 2);
    }

    #[test]
    fn classify_oscillator_with_positive_residues_is_pr() {
        // s / (s^2 + 1): critical pair at +-j with residues 1/2.
        let mode = StateSpaceMode::from_rows(
            4,
            &[&[0.0, 1.0], &[-1.0, 0.0]],
            &[0.0, 1.0],
            &[0.0, 1.0],
            0.0,
        )
        .unwrap();
        let c = classify_pr(&mode, &FrequencyGrid::default()).unwrap();
        assert!(c.is_positive_real, "{:?}", c.notes);
        assert!(!c.is_strictly_positive_real);
        assert_eq!(c.class, PrClass::ZeroMin);
    }

    #[test]
    fn envelope_examples() {
        let a = DMatrix::<f64>::identity(2, 2) * -2.0;
        let e = decay_envelope(&a, 0.1).unwrap();
        assert!(close(e.k, 1.0, 1e-12) && close(e.rho, 2.0, 1e-12));
        let e = decay_envelope(&m2([[-1.0, 0.0], [0.0, -3.0]]), 0.1).unwrap();
        assert!(close(e.k, 1.0, 1e-12) && close(e.rho, 1.0, 1e-12));
    }

    #[test]
    fn envelope_of_jordan_block_matches_brute_force() {
        let a = m2([[-1.0, 10.0], [0.0, -1.0]]);
        let e = decay_envelope(&a, 0.1).unwrap();
        assert!(close(e.rho, 0.9, 1e-12));
        // Independent oracle: reference exponential on t in [0, 50], step 0.01.
        let mut sup: f64 = 1.0;
        for k in 0..=5000 {
            let t = k as f64 * 0.01;
            let n = norm2(&(&a * t).exp()) * (0.9 * t).exp();
            sup = sup.max(n);
        }
        assert!(
            (e.k - sup).abs() <= 1e-4 * sup,
            "K = {} vs brute force {}",
            e.k,
            sup
        );
    }

    #[test]
    fn envelope_of_unstable_matrix_has_negative_rate() {
        let a = DMatrix::from_row_slice(1, 1, &[0.5]);
        let e = decay_envelope(&a, 0.1).unwrap();
        assert!(close(e.rho, -0.5, 1e-12));
        assert!(close(e.k, 1.0, 1e-9));
    }

    #[test]
    fn invalid_modes_rejected() {
        assert!(StateSpaceMode::from_rows(
            1,
            &[&[1.0, 2.0], &[3.0]],
            &[1.0, 1.0],
            &[1.0, 1.0],
            0.0
        )
        .is_err());
        assert!(StateSpaceMode::from_rows(1, &[&[1.0]], &[1.0, 2.0], &[1.0], 0.0).is_err());
        assert!(StateSpaceMode::from_rows(1, &[&[f64::NAN]], &[1.0], &[1.0], 0.0).is_err());
    }
}
