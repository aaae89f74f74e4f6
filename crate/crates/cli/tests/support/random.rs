//! Seeded random states and channels for property checks.

#![allow(dead_code)]

use latqpt::channels::KrausSet;
use latqpt::states::{DensityMatrix, HermitianMatrix};
use latqpt::Complex64;
use nalgebra::{Matrix2, SymmetricEigen, Vector2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub type C2 = Matrix2<Complex64>;

fn gaussian(rng: &mut impl Rng) -> Complex64 {
    Complex64::new(StandardNormal.sample(rng), StandardNormal.sample(rng))
}

/// Uniform in the Bloch ball.
pub fn bloch_vector(rng: &mut impl Rng) -> [f64; 3] {
    loop {
        let r = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        if r.iter().map(|x| x * x).sum::<f64>() <= 1.0 {
            return r;
        }
    }
}

pub fn density_matrix(rng: &mut impl Rng) -> DensityMatrix {
    DensityMatrix::from_bloch(bloch_vector(rng)).unwrap()
}

/// Hermitian, not necessarily positive.
pub fn hermitian(rng: &mut impl Rng) -> HermitianMatrix {
    HermitianMatrix::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), gaussian(rng))
}

pub fn matrix(rng: &mut impl Rng) -> C2 {
    C2::from_fn(|_, _| gaussian(rng))
}

fn inverse_sqrt(m: &C2) -> C2 {
    let eig = SymmetricEigen::new(*m);
    let d = Matrix2::from_diagonal(&Vector2::from_fn(|i, _| Complex64::new(eig.eigenvalues[i].powf(-0.5), 0.0)));
    eig.eigenvectors * d * eig.eigenvectors.adjoint()
}

/// Trace-preserving channel with `rank` Gaussian Kraus operators, `A_i S^{-1/2}` with `S = Σ A_i†A_i`.
pub fn cptp_kraus(rng: &mut impl Rng, rank: usize) -> KrausSet {
    let raw: Vec<C2> = (0..rank).map(|_| matrix(rng)).collect();
    let s: C2 = raw.iter().map(|a| a.adjoint() * a).sum();
    let w = inverse_sqrt(&s);
    KrausSet::new(raw.into_iter().map(|a| a * w).collect())
}

pub fn unit_vector(rng: &mut impl Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [StandardNormal.sample(rng), StandardNormal.sample(rng), StandardNormal.sample(rng)];
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.map(|x| x / n);
        }
    }
}

/// `exp(−iφ n·σ/2)`.
pub fn rotation_about(n: [f64; 3], angle_degrees: f64) -> C2 {
    let half = angle_degrees.to_radians() / 2.0;
    let c = |re: f64, im: f64| Complex64::new(re, im);
    let (s, co) = half.sin_cos();
    C2::new(
        c(co, -s * n[2]),
        c(-s * n[1], -s * n[0]),
        c(s * n[1], -s * n[0]),
        c(co, s * n[2]),
    )
}
