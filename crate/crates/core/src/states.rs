//! Two-level density matrices, the non-orthogonal analysis set
//! `{|0⟩, |1⟩, |θx⟩, |θy⟩}` and linear-inversion state tomography.

use std::f64::consts::FRAC_PI_2;
use std::ops::Deref;

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::linalg::{c, eigh2, join_re_im, split_re_im, C2};
use crate::{Error, Result};

/// Tolerance on eigenvalues and trace for physical states.
pub const STATE_TOLERANCE: f64 = 1e-9;

/// A Hermitian 2×2 matrix stored as its upper triangle.
///
/// This is the output type of linear inversion, which need not be positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HermitianMatrix {
    pub p00: f64,
    pub p11: f64,
    /// `⟨0|ρ|1⟩`; `⟨1|ρ|0⟩` is its conjugate.
    pub c01: Complex64,
}

impl HermitianMatrix {
    pub fn new(p00: f64, p11: f64, c01: Complex64) -> Self {
        Self { p00, p11, c01 }
    }

    /// Reads the upper triangle; the lower one is discarded.
    pub fn from_upper(m: &Matrix2<Complex64>) -> Self {
        Self { p00: m[(0, 0)].re, p11: m[(1, 1)].re, c01: m[(0, 1)] }
    }

    pub fn matrix(&self) -> Matrix2<Complex64> {
        Matrix2::new(c(self.p00, 0.0), self.c01, self.c01.conj(), c(self.p11, 0.0))
    }

    pub fn trace(&self) -> f64 {
        self.p00 + self.p11
    }

    /// Eigenvalues, largest first.
    pub fn eigenvalues(&self) -> [f64; 2] {
        let mean = 0.5 * (self.p00 + self.p11);
        let half = 0.5 * (self.p00 - self.p11);
        let r = (half * half + self.c01.norm_sqr()).sqrt();
        [mean + r, mean - r]
    }

    pub fn purity(&self) -> f64 {
        self.p00 * self.p00 + self.p11 * self.p11 + 2.0 * self.c01.norm_sqr()
    }

    pub fn is_physical(&self) -> bool {
        let t = self.trace();
        t > 0.0 && t <= 1.0 + STATE_TOLERANCE && self.eigenvalues()[1] >= -STATE_TOLERANCE
    }

    /// `(⟨σx⟩, ⟨σy⟩, ⟨σz⟩)` of the matrix as given (not trace-normalized).
    pub fn bloch_vector(&self) -> [f64; 3] {
        [2.0 * self.c01.re, -2.0 * self.c01.im, self.p00 - self.p11]
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { p00: self.p00 * s, p11: self.p11 * s, c01: self.c01 * s }
    }

    pub fn frobenius_distance(&self, other: &Self) -> f64 {
        let d00 = self.p00 - other.p00;
        let d11 = self.p11 - other.p11;
        (d00 * d00 + d11 * d11 + 2.0 * (self.c01 - other.c01).norm_sqr()).sqrt()
    }

    /// `⟨φ|ρ|φ⟩` for a ket `φ`.
    pub fn expectation(&self, ket: &Vector2<Complex64>) -> f64 {
        (ket.adjoint() * self.matrix() * ket)[(0, 0)].re
    }
}

#[derive(Serialize, Deserialize)]
struct ReIm {
    re: Vec<Vec<f64>>,
    im: Vec<Vec<f64>>,
}

impl Serialize for HermitianMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let (re, im) = split_re_im(&self.matrix());
        ReIm { re, im }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for HermitianMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = ReIm::deserialize(d)?;
        let m: C2 = join_re_im(&raw.re, &raw.im)
            .ok_or_else(|| serde::de::Error::custom("expected 2x2 re/im arrays"))?;
        if (m[(0, 1)] - m[(1, 0)].conj()).norm() > 1e-9 || m[(0, 0)].im.abs() > 1e-9 || m[(1, 1)].im.abs() > 1e-9 {
            return Err(serde::de::Error::custom("matrix is not Hermitian"));
        }
        Ok(HermitianMatrix::from_upper(&m))
    }
}

/// A physical, possibly sub-normalized, qubit state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(transparent)]
pub struct DensityMatrix(HermitianMatrix);

impl Deref for DensityMatrix {
    type Target = HermitianMatrix;
    fn deref(&self) -> &HermitianMatrix {
        &self.0
    }
}

impl<'de> Deserialize<'de> for DensityMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        DensityMatrix::new(HermitianMatrix::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

impl DensityMatrix {
    pub fn new(h: HermitianMatrix) -> Result<Self> {
        let t = h.trace();
        if !(t > 0.0 && t <= 1.0 + STATE_TOLERANCE) {
            return Err(Error::NotPhysical(format!("trace {t} outside (0, 1]")));
        }
        let low = h.eigenvalues()[1];
        if low < -STATE_TOLERANCE {
            return Err(Error::NotPhysical(format!("negative eigenvalue {low:.3e}")));
        }
        Ok(Self(h))
    }

    pub fn ground() -> Self {
        Self(HermitianMatrix::new(1.0, 0.0, c(0.0, 0.0)))
    }

    pub fn excited() -> Self {
        Self(HermitianMatrix::new(0.0, 1.0, c(0.0, 0.0)))
    }

    pub fn maximally_mixed() -> Self {
        Self(HermitianMatrix::new(0.5, 0.5, c(0.0, 0.0)))
    }

    pub fn diagonal(p0: f64, p1: f64) -> Result<Self> {
        Self::new(HermitianMatrix::new(p0, p1, c(0.0, 0.0)))
    }

    /// `|ψ⟩⟨ψ|`; the ket need not be normalized (norm² ≤ 1).
    pub fn pure(ket: &Vector2<Complex64>) -> Result<Self> {
        Self::new(HermitianMatrix::from_upper(&(ket * ket.adjoint())))
    }

    /// State with Bloch vector `r`, `|r| ≤ 1`.
    pub fn from_bloch(r: [f64; 3]) -> Result<Self> {
        Self::new(HermitianMatrix::new(
            0.5 * (1.0 + r[2]),
            0.5 * (1.0 - r[2]),
            c(0.5 * r[0], -0.5 * r[1]),
        ))
    }

    pub fn inner(&self) -> HermitianMatrix {
        self.0
    }

    /// Trace-normalized copy.
    pub fn normalized(&self) -> Self {
        Self(self.0.scaled(1.0 / self.trace()))
    }
}

/// The analysis set `|0⟩, |1⟩, |θx⟩ = cosθ|0⟩ + sinθ|1⟩, |θy⟩ = cosθ|0⟩ − i sinθ|1⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisBasis {
    theta: f64,
}

impl AnalysisBasis {
    pub fn new(theta: f64) -> Result<Self> {
        if !(theta > 0.0 && theta < FRAC_PI_2) {
            return Err(Error::SingularBasis { theta });
        }
        Ok(Self { theta })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Kets in projector order `|0⟩, |1⟩, |θx⟩, |θy⟩`.
    pub fn kets(&self) -> [Vector2<Complex64>; 4] {
        let (s, co) = self.theta.sin_cos();
        [
            Vector2::new(c(1.0, 0.0), c(0.0, 0.0)),
            Vector2::new(c(0.0, 0.0), c(1.0, 0.0)),
            Vector2::new(c(co, 0.0), c(s, 0.0)),
            Vector2::new(c(co, 0.0), c(0.0, -s)),
        ]
    }

    /// Projectors `|Φ_i⟩⟨Φ_i|` in the same order as [`AnalysisBasis::kets`].
    pub fn projectors(&self) -> [C2; 4] {
        self.kets().map(|k| k * k.adjoint())
    }
}

/// Measured or predicted projections `m_i = ⟨Φ_i|ρ|Φ_i⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionRecord {
    pub m: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<[u64; 4]>,
    /// Shots per projector.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shots: Option<u64>,
}

impl ProjectionRecord {
    pub fn exact(m: [f64; 4]) -> Self {
        Self { m, counts: None, shots: None }
    }

    pub fn from_counts(counts: [u64; 4], shots: u64) -> Self {
        let n = shots as f64;
        Self { m: counts.map(|k| k as f64 / n), counts: Some(counts), shots: Some(shots) }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(bad) = self.m.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidDataset(format!("projection {bad} outside [0, 1]")));
        }
        let [m1, m2, ..] = self.m;
        // Five standard deviations, so honest count data is essentially never rejected.
        let slack = match self.shots {
            Some(n) if n > 0 => {
                let n = n as f64;
                5.0 * ((m1 * (1.0 - m1) + m2 * (1.0 - m2)) / n).sqrt() + 1.0 / n
            }
            _ => STATE_TOLERANCE,
        };
        if m1 + m2 > 1.0 + slack {
            return Err(Error::InvalidDataset(format!(
                "population sum {} exceeds 1 beyond statistical slack {slack:.2e}",
                m1 + m2
            )));
        }
        Ok(())
    }
}

pub fn project(rho: &HermitianMatrix, basis: &AnalysisBasis) -> ProjectionRecord {
    ProjectionRecord::exact(basis.kets().map(|k| rho.expectation(&k)))
}

/// Linear inversion of the four projections.
///
/// `ρ00 = m1`, `ρ11 = m2`, and the population offset `m1 cos²θ + m2 sin²θ`
/// is removed from each of `m3` and `m4` before dividing by `2 sinθ cosθ`.
pub fn reconstruct_linear(m: &ProjectionRecord, basis: &AnalysisBasis) -> Result<HermitianMatrix> {
    let (s, co) = basis.theta.sin_cos();
    let denom = 2.0 * s * co;
    if denom.abs() < 1e-12 {
        return Err(Error::SingularBasis { theta: basis.theta });
    }
    let [m1, m2, m3, m4] = m.m;
    let offset = m1 * co * co + m2 * s * s;
    Ok(HermitianMatrix::new(m1, m2, c((m3 - offset) / denom, (m4 - offset) / denom)))
}

/// Frobenius-nearest positive matrix with the given trace.
///
/// Eigenvalues are projected onto the simplex `{μ ≥ 0, Σμ = t}` and the
/// eigenvectors kept.
pub fn physical_projection(raw: &HermitianMatrix, target_trace: f64) -> Result<DensityMatrix> {
    if !(target_trace > 0.0) {
        return Err(Error::NonPositiveTrace(target_trace));
    }
    let (vals, vecs) = eigh2(&raw.matrix());
    let shift = (vals[0] + vals[1] - target_trace) / 2.0;
    let mu = if vals[1] - shift >= 0.0 {
        [vals[0] - shift, vals[1] - shift]
    } else {
        [target_trace, 0.0]
    };
    let d = Matrix2::from_diagonal(&Vector2::new(c(mu[0], 0.0), c(mu[1], 0.0)));
    let m = vecs * d * vecs.adjoint();
    DensityMatrix::new(HermitianMatrix::from_upper(&m))
}

/// Free evolution for `dt` in the lattice: `ρ01 → λ·e^{iω dt}·ρ01`, populations fixed.
///
/// The phase follows from `H = diag(0, ħω)`; a quarter period turns
/// `|θx⟩` into `|θy⟩`.
pub fn free_evolution(rho: &DensityMatrix, dt: f64, omega: f64, coherence_factor: f64) -> Result<DensityMatrix> {
    if !(0.0..=1.0).contains(&coherence_factor) {
        return Err(Error::InvalidConfig(format!(
            "coherence factor {coherence_factor} outside [0, 1]"
        )));
    }
    let c01 = rho.c01 * coherence_factor * Complex64::from_polar(1.0, omega * dt);
    Ok(DensityMatrix(HermitianMatrix { c01, ..rho.0 }))
}

/// The same map on an arbitrary 2×2 operator.
pub(crate) fn free_evolution_operator(m: &C2, dt: f64, omega: f64, coherence_factor: f64) -> C2 {
    let phase = Complex64::from_polar(coherence_factor, omega * dt);
    C2::new(m[(0, 0)], m[(0, 1)] * phase, m[(1, 0)] * phase.conj(), m[(1, 1)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::I;

    const THETA: f64 = 0.5;

    fn basis() -> AnalysisBasis {
        AnalysisBasis::new(THETA).unwrap()
    }

    fn close(a: &[f64; 4], b: &[f64; 4], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn ground_state_projections() {
        let c2 = THETA.cos().powi(2);
        let m = project(&DensityMatrix::ground(), &basis());
        assert!(close(&m.m, &[1.0, 0.0, c2, c2], 1e-15));
    }

    #[test]
    fn theta_x_projections() {
        let k = basis().kets()[2];
        let rho = DensityMatrix::pure(&k).unwrap();
        let m = project(&rho, &basis());
        let (s, co) = THETA.sin_cos();
        assert!((m.m[2] - 1.0).abs() < 1e-15);
        assert!((m.m[3] - (co.powi(4) + s.powi(4))).abs() < 1e-15);
    }

    #[test]
    fn theta_y_is_unit_projection() {
        let k = basis().kets()[3];
        let m = project(&DensityMatrix::pure(&k).unwrap(), &basis());
        assert!((m.m[3] - 1.0).abs() < 1e-15);
        assert!(DensityMatrix::pure(&k).unwrap().c01.im > 0.0);
    }

    #[test]
    fn mixed_state_is_flat() {
        for theta in [0.1, 0.5, 1.2] {
            let m = project(&DensityMatrix::maximally_mixed(), &AnalysisBasis::new(theta).unwrap());
            assert!(close(&m.m, &[0.5; 4], 1e-15));
        }
    }

    #[test]
    fn reconstruct_examples() {
        let c2 = THETA.cos().powi(2);
        let rho = reconstruct_linear(&ProjectionRecord::exact([1.0, 0.0, c2, c2]), &basis()).unwrap();
        assert!(rho.frobenius_distance(&DensityMatrix::ground()) < 1e-15);

        let (s, co) = THETA.sin_cos();
        let m = [co * co, s * s, 1.0, co.powi(4) + s.powi(4)];
        let rho = reconstruct_linear(&ProjectionRecord::exact(m), &basis()).unwrap();
        let target = DensityMatrix::pure(&basis().kets()[2]).unwrap();
        assert!(rho.frobenius_distance(&target) < 1e-14);
    }

    #[test]
    fn singular_angles_rejected() {
        assert!(matches!(AnalysisBasis::new(0.0), Err(Error::SingularBasis { .. })));
        assert!(AnalysisBasis::new(FRAC_PI_2).is_err());
    }

    #[test]
    fn projection_of_overshoot() {
        let raw = HermitianMatrix::new(1.2, -0.2, c(0.0, 0.0));
        let p = physical_projection(&raw, 1.0).unwrap();
        assert!((p.p00 - 1.0).abs() < 1e-15 && p.p11.abs() < 1e-15);
        assert!(matches!(physical_projection(&raw, 0.0), Err(Error::NonPositiveTrace(_))));
    }

    #[test]
    fn projection_is_idempotent_on_physical_states() {
        let rho = DensityMatrix::from_bloch([0.3, -0.2, 0.5]).unwrap();
        let p = physical_projection(&rho, 1.0).unwrap();
        assert!(p.frobenius_distance(&rho) < 1e-14);
    }

    #[test]
    fn diagonal_projection_matches_grid_search() {
        let raw = HermitianMatrix::new(1.2, -0.2, c(0.0, 0.0));
        let p = physical_projection(&raw, 1.0).unwrap();
        let best = (0..=100_000)
            .map(|i| i as f64 / 100_000.0)
            .map(|a| HermitianMatrix::new(a, 1.0 - a, c(0.0, 0.0)))
            .map(|h| h.frobenius_distance(&raw))
            .fold(f64::INFINITY, f64::min);
        assert!(p.frobenius_distance(&raw) <= best + 1e-12);
    }

    #[test]
    fn quarter_period_turns_theta_x_into_theta_y() {
        let omega = 2.0 * std::f64::consts::PI * 5.0e3;
        let quarter = 0.25 / 5.0e3;
        let x = DensityMatrix::pure(&basis().kets()[2]).unwrap();
        let y = DensityMatrix::pure(&basis().kets()[3]).unwrap();
        let out = free_evolution(&x, quarter, omega, 1.0).unwrap();
        assert!(out.frobenius_distance(&y) < 1e-12);
        assert!((out.c01 - x.c01 * I).norm() < 1e-12);
    }

    #[test]
    fn full_period_with_dephasing() {
        let omega = 2.0 * std::f64::consts::PI * 5.0e3;
        let rho = DensityMatrix::pure(&basis().kets()[2]).unwrap();
        let out = free_evolution(&rho, 1.0 / 5.0e3, omega, 0.64).unwrap();
        assert!((out.c01 - rho.c01 * 0.64).norm() < 1e-12);
        assert_eq!((out.p00, out.p11), (rho.p00, rho.p11));
        let same = free_evolution(&rho, 0.0, omega, 1.0).unwrap();
        assert_eq!(same, rho);
        assert!(free_evolution(&rho, 0.0, omega, 1.5).is_err());
    }

    #[test]
    fn record_validation() {
        assert!(ProjectionRecord::exact([0.6, 0.5, 0.5, 0.5]).validate().is_err());
        assert!(ProjectionRecord::exact([1.2, 0.0, 0.5, 0.5]).validate().is_err());
        assert!(ProjectionRecord::from_counts([5050, 5000, 5000, 5000], 10_000).validate().is_ok());
    }

    #[test]
    fn json_shape() {
        let rho = DensityMatrix::pure(&basis().kets()[3]).unwrap();
        let v = serde_json::to_value(rho).unwrap();
        assert_eq!(v["re"].as_array().unwrap().len(), 2);
        let back: DensityMatrix = serde_json::from_value(v).unwrap();
        assert!(back.frobenius_distance(&rho) < 1e-15);
        let bad = serde_json::json!({"re": [[1.0, 0.0], [0.0, 1.0]], "im": [[0.0, 0.0], [0.0, 0.0]]});
        assert!(serde_json::from_value::<DensityMatrix>(bad).is_err());
    }
}
