#![allow(dead_code)]

use comonotone_core::operators::{LinearOperator, Point};
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0))
}

pub fn random_point(rng: &mut ChaCha8Rng, dim: usize, radius: f64) -> Point {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-3 {
            return Point::new(v.into_iter().map(|a| a * radius / n).collect()).unwrap();
        }
    }
}

/// A linear operator with unit Lipschitz constant whose tightest
/// comonotonicity modulus is at most `rho_max`; returns it with that modulus.
///
/// Built as a scaled skew part plus a symmetric part with eigenvalues in
/// `[-rho_max, 1]`, normalized, and kept only when certified.
pub fn random_comonotone(rng: &mut ChaCha8Rng, rho_max: f64) -> (LinearOperator, f64) {
    loop {
        let dim = rng.random_range(2..=4);
        let g = gaussian_matrix(rng, dim);
        let skew = (&g - g.transpose()) * 0.5;
        let q = gaussian_matrix(rng, dim).qr().q();
        let eig: Vec<f64> = (0..dim).map(|_| rng.random_range(-rho_max..0.6)).collect();
        let sym = &q * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(eig)) * q.transpose();
        let m = skew * rng.random_range(0.2..3.0) + sym;
        let norm = m.clone().svd(false, false).singular_values.max();
        if norm < 1e-6 {
            continue;
        }
        let op = LinearOperator::new(m / norm, 1.0).unwrap();
        let (_, cert) = op.certify_comonotone(rho_max, 0.0).unwrap();
        if cert.tightest_rho <= rho_max {
            return (op, cert.tightest_rho);
        }
    }
}

/// Rotation by `acos(-rho L)` with gain `L`: comonotone with modulus exactly `rho`.
pub fn tight_rotation(rho: f64, l: f64) -> LinearOperator {
    LinearOperator::scaled_rotation((-rho * l).acos(), l).unwrap()
}
