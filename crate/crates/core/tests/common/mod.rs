#![allow(dead_code)]

use hyperswitch::feedback::{DeviceKind, FeedbackDevice};
use hyperswitch::lti::StateSpaceMode;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |_, _| scale * (rng.gen::<f64>() * 2.0 - 1.0))
}

pub fn unit_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(n, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
        if v.norm() > 0.1 {
            return v.normalize();
        }
    }
}

/// `A = K - (0.5 I + L L^T)` with skew `K`: `A + A^T <= -I`.
pub fn dissipative_matrix(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let g = gaussian_matrix(rng, n, 1.0);
    let skew = (&g - g.transpose()) * 0.5;
    let l = gaussian_matrix(rng, n, 0.5);
    skew - (DMatrix::identity(n, n) * 0.5 + &l * l.transpose())
}

/// Strictly positive real mode sharing the storage `|x|^2 / 2`: `c = b`, `d > 0`.
pub fn spr_mode(rng: &mut ChaCha8Rng, id: usize, n: usize) -> StateSpaceMode {
    let a = dissipative_matrix(rng, n);
    let b = unit_vector(rng, n) * rng.gen_range(0.5..1.5);
    let d = rng.gen_range(0.2..1.0);
    StateSpaceMode::new(id, a, b.clone(), b, d).unwrap()
}

/// Mode with negative real-part minimum: `A = -lambda I`, `c = -b`, `d = 0`.
pub fn negative_mode(rng: &mut ChaCha8Rng, id: usize, n: usize) -> StateSpaceMode {
    let lambda = rng.gen_range(0.5..1.5);
    let b = unit_vector(rng, n) * rng.gen_range(0.5..1.5);
    StateSpaceMode::new(id, DMatrix::identity(n, n) * -lambda, b.clone(), -b, 0.0).unwrap()
}

pub fn sector_device(rng: &mut ChaCha8Rng, id: usize) -> FeedbackDevice {
    let k1 = rng.gen_range(0.2..1.0);
    let k2 = k1 + rng.gen_range(0.0..1.5);
    FeedbackDevice::new(id, DeviceKind::Sector { k1, k2 }, 1.0).unwrap()
}

/// Random Hurwitz matrix with spectral abscissa in `[-1.5, -0.1]`.
pub fn random_hurwitz(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let g = gaussian_matrix(rng, n, 1.0);
    let alpha = g
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    let shift = alpha + rng.gen_range(0.1..1.5);
    g - DMatrix::identity(n, n) * shift
}
