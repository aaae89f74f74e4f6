//! Band structure and bound states of a vertical sinusoidal lattice.
//!
//! Energies are in units of the lattice recoil `E_r = h²/(8 L² m)` and the
//! dimensionless coordinate is `z = π x / L`, so the Bloch Hamiltonian reads
//! `H = −∂²_z + s·sin²(z)` with `s` the depth. Bloch states are expanded in
//! plane waves `e^{i(q + 2n) z}`, `|n| ≤ cutoff`, with `q` in units of `π/L`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::constants::{HBAR, PLANCK, RB85_MASS, STANDARD_GRAVITY};
use crate::{Error, Result};

/// Number of bands reported by [`compute_bands`] (capped by the basis size).
pub const REPORTED_BANDS: usize = 6;

/// Largest allowed squared amplitude on the outermost plane waves of a reported band.
const CONVERGENCE_WEIGHT: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatticeConfig {
    /// Lattice depth in units of `E_r`.
    pub depth: f64,
    /// Lattice constant `L`, meters.
    pub lattice_constant: f64,
    /// Recoil energy `E_r / h`, Hz.
    pub recoil_energy: f64,
    /// Atomic mass, kg.
    pub atom_mass: f64,
    /// Gravitational acceleration along the lattice axis, m/s².
    pub gravity: f64,
    /// Plane waves `|n| ≤ plane_wave_cutoff` are kept.
    pub plane_wave_cutoff: usize,
    /// Number of quasimomentum samples across `[−π/L, π/L]`.
    pub q_grid_size: usize,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        Self::rb85_reference()
    }
}

impl LatticeConfig {
    /// 18 E_r lattice of ⁸⁵Rb with `L = 0.93 µm` and a measured `E_r = h·690 Hz`.
    pub fn rb85_reference() -> Self {
        Self {
            depth: 18.0,
            lattice_constant: 0.93e-6,
            recoil_energy: 690.0,
            atom_mass: RB85_MASS,
            gravity: STANDARD_GRAVITY,
            plane_wave_cutoff: 32,
            q_grid_size: 65,
        }
    }

    /// Configuration whose recoil energy is derived as `h/(8 L² m)`.
    pub fn from_lattice_constant(depth: f64, lattice_constant: f64, atom_mass: f64) -> Self {
        Self {
            depth,
            lattice_constant,
            recoil_energy: recoil_from(lattice_constant, atom_mass),
            atom_mass,
            ..Self::rb85_reference()
        }
    }

    pub fn with_depth(mut self, depth: f64) -> Self {
        self.depth = depth;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.depth > 0.0) {
            return bad("depth must be positive");
        }
        if !(self.lattice_constant > 0.0) {
            return bad("lattice_constant must be positive");
        }
        if !(self.recoil_energy > 0.0) {
            return bad("recoil_energy must be positive");
        }
        if !(self.atom_mass > 0.0) {
            return bad("atom_mass must be positive");
        }
        if !(self.gravity >= 0.0) {
            return bad("gravity must be non-negative");
        }
        if self.plane_wave_cutoff < 8 {
            return bad("plane_wave_cutoff must be at least 8");
        }
        if self.q_grid_size < 3 {
            return bad("q_grid_size must be at least 3");
        }
        Ok(())
    }

    /// `E_r / ħ` in rad/s.
    pub fn recoil_angular(&self) -> f64 {
        2.0 * PI * self.recoil_energy
    }

    /// Bloch oscillation frequency `m g L / h`, Hz.
    pub fn bloch_frequency(&self) -> f64 {
        self.atom_mass * self.gravity * self.lattice_constant / PLANCK
    }

    /// Gravitational tilt per unit of `z`, in `E_r`.
    pub fn tilt(&self) -> f64 {
        self.atom_mass * self.gravity * self.lattice_constant / (PI * PLANCK * self.recoil_energy)
    }

    /// Height of the downhill barrier of the tilted well, in `E_r` above its minimum.
    ///
    /// `V(z) = s·sin²z + β z` has its local minimum at `2z = −a` and the
    /// downhill maximum at `2z = a − π`, with `sin a = β/s`. Without gravity
    /// this is the full depth; it is negative when the tilt removes the well.
    pub fn barrier_height(&self) -> f64 {
        let beta = self.tilt();
        let s = self.depth;
        if beta >= s {
            return -beta;
        }
        let a = (beta / s).asin();
        s * a.cos() - beta * (PI / 2.0 - a)
    }

    /// Meters per unit of the dimensionless coordinate `z`.
    pub fn meters_per_z(&self) -> f64 {
        self.lattice_constant / PI
    }
}

/// `h/(8 L² m)` in Hz.
pub fn recoil_from(lattice_constant: f64, atom_mass: f64) -> f64 {
    PLANCK / (8.0 * lattice_constant * lattice_constant * atom_mass)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BandStructure {
    pub depth: f64,
    /// `energies[band][k]` in `E_r`, measured from the untilted well bottom.
    pub energies: Vec<Vec<f64>>,
    /// Quasimomenta in units of `π/L`, uniformly covering `[−1, 1]`.
    pub quasimomenta: Vec<f64>,
    pub bound_band_count: usize,
    /// Per-band `(min, max)` over the zone, including the zone center and edge.
    pub band_edges: Vec<(f64, f64)>,
    /// Barrier height used for the bound criterion, `E_r`.
    pub barrier: f64,
    /// Band energies at `q = 0`.
    pub zone_center: Vec<f64>,
    /// Band energies at `q = π/L`.
    pub zone_edge: Vec<f64>,
}

impl BandStructure {
    pub fn band_count(&self) -> usize {
        self.energies.len()
    }

    /// `E₁ − E₀` at the zone center, `E_r`.
    pub fn center_gap(&self) -> f64 {
        self.zone_center[1] - self.zone_center[0]
    }

    /// Band energies averaged over the zone (the on-site Wannier energies), `E_r`.
    pub fn mean_energies(&self) -> Vec<f64> {
        let w = trapezoid_weights(self.quasimomenta.len());
        self.energies
            .iter()
            .map(|band| band.iter().zip(&w).map(|(e, w)| e * w).sum())
            .collect()
    }

    /// `(band, q, energy)` rows for CSV export.
    pub fn rows(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        self.energies.iter().enumerate().flat_map(move |(b, band)| {
            band.iter()
                .zip(&self.quasimomenta)
                .map(move |(&e, &q)| (b, q, e))
        })
    }
}

/// Normalized periodic-trapezoid weights on an inclusive `[−1, 1]` grid.
pub(crate) fn trapezoid_weights(n: usize) -> Vec<f64> {
    let mut w = vec![1.0; n];
    w[0] = 0.5;
    w[n - 1] = 0.5;
    let total = (n - 1) as f64;
    w.iter_mut().for_each(|x| *x /= total);
    w
}

pub(crate) fn quasimomentum_grid(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| -1.0 + 2.0 * k as f64 / (n - 1) as f64)
        .collect()
}

/// Eigenpairs of the plane-wave Bloch Hamiltonian at quasimomentum `q`.
pub(crate) struct BlochSolution {
    pub energies: Vec<f64>,
    /// `vectors[band][n + cutoff]`, real.
    pub vectors: Vec<Vec<f64>>,
}

pub(crate) fn solve_bloch(depth: f64, q: f64, cutoff: usize, bands: usize) -> Result<BlochSolution> {
    let dim = 2 * cutoff + 1;
    let mut h = DMatrix::<f64>::zeros(dim, dim);
    for i in 0..dim {
        let k = q + 2.0 * (i as f64 - cutoff as f64);
        h[(i, i)] = k * k + depth / 2.0;
        if i + 1 < dim {
            h[(i, i + 1)] = -depth / 4.0;
            h[(i + 1, i)] = -depth / 4.0;
        }
    }
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let bands = bands.min(dim);
    let mut energies = Vec::with_capacity(bands);
    let mut vectors = Vec::with_capacity(bands);
    for (band, &idx) in order.iter().take(bands).enumerate() {
        let v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        let weight = v[0] * v[0] + v[dim - 1] * v[dim - 1];
        if weight > CONVERGENCE_WEIGHT {
            return Err(Error::BandsNotConverged { band, cutoff, weight });
        }
        energies.push(eig.eigenvalues[idx]);
        vectors.push(v);
    }
    Ok(BlochSolution { energies, vectors })
}

pub fn compute_bands(config: &LatticeConfig) -> Result<BandStructure> {
    config.validate()?;
    let cutoff = config.plane_wave_cutoff;
    let nb = REPORTED_BANDS.min(2 * cutoff + 1);
    let quasimomenta = quasimomentum_grid(config.q_grid_size);
    let mut energies = vec![Vec::with_capacity(quasimomenta.len()); nb];
    for &q in &quasimomenta {
        let sol = solve_bloch(config.depth, q, cutoff, nb)?;
        for (band, e) in sol.energies.into_iter().enumerate() {
            energies[band].push(e);
        }
    }
    let zone_center = solve_bloch(config.depth, 0.0, cutoff, nb)?.energies;
    let zone_edge = solve_bloch(config.depth, 1.0, cutoff, nb)?.energies;
    let band_edges: Vec<(f64, f64)> = energies
        .iter()
        .enumerate()
        .map(|(b, band)| {
            let extra = [zone_center[b], zone_edge[b]];
            let all = band.iter().chain(extra.iter());
            let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
            let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        })
        .collect();
    let barrier = config.barrier_height();
    let bound_band_count = band_edges.iter().take_while(|(_, hi)| *hi < barrier).count();
    Ok(BandStructure {
        depth: config.depth,
        energies,
        quasimomenta,
        bound_band_count,
        band_edges,
        barrier,
        zone_center,
        zone_edge,
    })
}

/// Depth above which the lattice binds two bands, found by bisection.
pub fn two_band_threshold(config: &LatticeConfig) -> Result<f64> {
    let excess = |depth: f64| -> Result<f64> {
        let cfg = config.clone().with_depth(depth);
        let c = solve_bloch(depth, 0.0, cfg.plane_wave_cutoff, 2)?.energies[1];
        let e = solve_bloch(depth, 1.0, cfg.plane_wave_cutoff, 2)?.energies[1];
        Ok(c.max(e) - cfg.barrier_height())
    };
    let (mut lo, mut hi) = (0.5_f64, 400.0_f64);
    if excess(hi)? > 0.0 {
        return Ok(f64::INFINITY);
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if excess(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// A state on the periodic supercell, `ψ(z) = Σ a_k e^{i k z}`, unit norm in `z`.
#[derive(Debug, Clone)]
pub struct PlaneWaveState {
    components: Vec<(f64, Complex64)>,
}

impl PlaneWaveState {
    pub fn eval(&self, z: f64) -> Complex64 {
        self.components
            .iter()
            .map(|&(k, a)| a * Complex64::from_polar(1.0, k * z))
            .sum()
    }

    fn normalized(mut self, supercell: f64) -> Self {
        let norm2: f64 = self.components.iter().map(|(_, a)| a.norm_sqr()).sum::<f64>() * supercell;
        let s = norm2.sqrt();
        self.components.iter_mut().for_each(|(_, a)| *a /= s);
        self
    }
}

/// Quadrature grid for localized states: `samples` points over `periods` lattice periods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WannierGrid {
    pub periods: usize,
    pub samples: usize,
}

impl Default for WannierGrid {
    fn default() -> Self {
        Self { periods: 8, samples: 2048 }
    }
}

impl WannierGrid {
    fn z_points(&self) -> Vec<f64> {
        let length = self.periods as f64 * PI;
        let dz = length / self.samples as f64;
        (0..self.samples).map(|i| -length / 2.0 + i as f64 * dz).collect()
    }

    fn dz(&self) -> f64 {
        self.periods as f64 * PI / self.samples as f64
    }
}

/// Position matrix elements between the two localized states, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionElements {
    pub x00: f64,
    pub x01: f64,
    pub x11: f64,
}

/// Which pair of bound states the displacement overlaps are taken between.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingBasis {
    /// Zone-center (`q = 0`) Bloch states of bands 0 and 1.
    #[default]
    ZoneCenter,
    /// Maximally localized Wannier states of bands 0 and 1.
    Wannier,
}

#[derive(Debug, Clone)]
pub struct BoundStatePair {
    /// Sample positions, meters, centered on one well.
    pub grid: Vec<f64>,
    /// Wannier functions in `m^{-1/2}`, real.
    pub psi0: Vec<f64>,
    pub psi1: Vec<f64>,
    pub x_elements: PositionElements,
    /// On-site energies `⟨w_b|H|w_b⟩`, `E_r`.
    pub onsite_energies: [f64; 2],
    wannier: [PlaneWaveState; 2],
    zone_center: [PlaneWaveState; 2],
    mesh: WannierGrid,
    meters_per_z: f64,
    lattice_constant: f64,
}

pub fn bound_states(config: &LatticeConfig, bands: &BandStructure) -> Result<BoundStatePair> {
    bound_states_on(config, bands, WannierGrid::default())
}

/// Gauge-fixed Bloch coefficients: `ψ(0)` real positive for band 0,
/// `ψ'(0)` real positive for band 1.
fn gauge_fixed(q: f64, cutoff: usize, band: usize, v: &[f64]) -> Vec<(f64, Complex64)> {
    let waves: Vec<(f64, f64)> = v
        .iter()
        .enumerate()
        .map(|(i, &a)| (q + 2.0 * (i as f64 - cutoff as f64), a))
        .collect();
    let anchor = if band == 0 {
        Complex64::new(waves.iter().map(|(_, a)| a).sum(), 0.0)
    } else {
        Complex64::new(0.0, waves.iter().map(|(k, a)| k * a).sum())
    };
    let phase = anchor.conj() / anchor.norm();
    waves.into_iter().map(|(k, a)| (k, phase * a)).collect()
}

pub fn bound_states_on(
    config: &LatticeConfig,
    bands: &BandStructure,
    mesh: WannierGrid,
) -> Result<BoundStatePair> {
    if bands.bound_band_count < 2 {
        return Err(Error::TooFewBoundBands {
            depth: config.depth,
            bound: bands.bound_band_count,
            threshold: two_band_threshold(config)?,
        });
    }
    if mesh.periods < 2 || mesh.samples < 16 * mesh.periods {
        return Err(Error::InvalidConfig(format!(
            "quadrature grid too coarse: {} samples over {} periods",
            mesh.samples, mesh.periods
        )));
    }
    let cutoff = config.plane_wave_cutoff;
    let supercell = mesh.periods as f64 * PI;
    let qs: Vec<f64> = (0..mesh.periods)
        .map(|k| -1.0 + 2.0 * k as f64 / mesh.periods as f64)
        .collect();

    let mut wannier_components = [Vec::new(), Vec::new()];
    let mut onsite = [0.0; 2];
    for &q in &qs {
        let sol = solve_bloch(config.depth, q, cutoff, 2)?;
        for band in 0..2 {
            onsite[band] += sol.energies[band] / qs.len() as f64;
            wannier_components[band].extend(gauge_fixed(q, cutoff, band, &sol.vectors[band]));
        }
    }
    let [w0, w1] = wannier_components;
    let wannier = [
        PlaneWaveState { components: w0 }.normalized(supercell),
        PlaneWaveState { components: w1 }.normalized(supercell),
    ];

    let center = solve_bloch(config.depth, 0.0, cutoff, 2)?;
    let zone_center = [
        PlaneWaveState { components: gauge_fixed(0.0, cutoff, 0, &center.vectors[0]) }
            .normalized(supercell),
        PlaneWaveState { components: gauge_fixed(0.0, cutoff, 1, &center.vectors[1]) }
            .normalized(supercell),
    ];

    let meters_per_z = config.meters_per_z();
    let amplitude = meters_per_z.powf(-0.5);
    let zs = mesh.z_points();
    let grid: Vec<f64> = zs.iter().map(|z| z * meters_per_z).collect();
    let psi0: Vec<f64> = zs.iter().map(|&z| wannier[0].eval(z).re * amplitude).collect();
    let psi1: Vec<f64> = zs.iter().map(|&z| wannier[1].eval(z).re * amplitude).collect();
    let dx = mesh.dz() * meters_per_z;
    let moment = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).zip(&grid).map(|((u, v), x)| u * v * x).sum::<f64>() * dx
    };
    let x_elements = PositionElements {
        x00: moment(&psi0, &psi0),
        x01: moment(&psi0, &psi1),
        x11: moment(&psi1, &psi1),
    };

    Ok(BoundStatePair {
        grid,
        psi0,
        psi1,
        x_elements,
        onsite_energies: onsite,
        wannier,
        zone_center,
        mesh,
        meters_per_z,
        lattice_constant: config.lattice_constant,
    })
}

impl BoundStatePair {
    pub fn grid_spacing(&self) -> f64 {
        self.mesh.dz() * self.meters_per_z
    }

    pub fn mesh(&self) -> WannierGrid {
        self.mesh
    }

    /// `E₁ − E₀` of the localized pair, `E_r`.
    pub fn onsite_gap(&self) -> f64 {
        self.onsite_energies[1] - self.onsite_energies[0]
    }

    fn pair(&self, basis: CouplingBasis) -> &[PlaneWaveState; 2] {
        match basis {
            CouplingBasis::ZoneCenter => &self.zone_center,
            CouplingBasis::Wannier => &self.wannier,
        }
    }

    /// `⟨ψ_i | ψ_j(· − dx)⟩` by quadrature on the supercell grid.
    pub fn shifted_overlap(&self, basis: CouplingBasis, i: usize, j: usize, dx: f64) -> f64 {
        let pair = self.pair(basis);
        let shift = dx / self.meters_per_z;
        let dz = self.mesh.dz();
        let sum: Complex64 = self
            .mesh
            .z_points()
            .into_iter()
            .map(|z| pair[i].eval(z).conj() * pair[j].eval(z - shift))
            .sum();
        (sum * dz).re
    }
}

/// Amplitudes of the displaced bound states (`|0⟩ → c00|0⟩ + c10|1⟩ + loss`,
/// `|1⟩ → −c10|0⟩ + c11|1⟩ + loss`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisplacementCoefficients {
    pub dx: f64,
    pub c00: f64,
    pub c10: f64,
    pub c11: f64,
    pub loss0: f64,
    pub loss1: f64,
}

impl DisplacementCoefficients {
    pub fn identity() -> Self {
        Self { dx: 0.0, c00: 1.0, c10: 0.0, c11: 1.0, loss0: 0.0, loss1: 0.0 }
    }

    /// Sub-unitary action on the bound pair, columns are the images of `|0⟩`, `|1⟩`.
    pub fn matrix(&self) -> nalgebra::Matrix2<Complex64> {
        let r = |x: f64| Complex64::new(x, 0.0);
        nalgebra::Matrix2::new(r(self.c00), r(-self.c10), r(self.c10), r(self.c11))
    }

    /// Coefficients for the opposite displacement.
    pub fn reversed(&self) -> Self {
        Self { dx: -self.dx, c10: -self.c10, ..*self }
    }
}

pub fn displacement_coefficients(states: &BoundStatePair, dx: f64) -> Result<DisplacementCoefficients> {
    displacement_coefficients_in(states, dx, CouplingBasis::default())
}

pub fn displacement_coefficients_in(
    states: &BoundStatePair,
    dx: f64,
    basis: CouplingBasis,
) -> Result<DisplacementCoefficients> {
    if !(dx.abs() < states.lattice_constant) {
        return Err(Error::InvalidConfig(format!(
            "displacement {dx:e} m must be smaller than the lattice constant"
        )));
    }
    let c00 = states.shifted_overlap(basis, 0, 0, dx);
    let c10 = states.shifted_overlap(basis, 1, 0, dx);
    let c11 = states.shifted_overlap(basis, 1, 1, dx);
    Ok(DisplacementCoefficients {
        dx,
        c00,
        c10,
        c11,
        loss0: (1.0 - c00 * c00 - c10 * c10).max(0.0),
        loss1: (1.0 - c10 * c10 - c11 * c11).max(0.0),
    })
}

/// Analysis angle `θ = atan(c10/c00)` realized by a displacement.
pub fn calibrate_theta(coeffs: &DisplacementCoefficients) -> Result<f64> {
    if !(coeffs.c00 > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "c00 = {} must be positive to define an analysis angle",
            coeffs.c00
        )));
    }
    Ok((coeffs.c10 / coeffs.c00).atan())
}

/// Per-band Landau–Zener escape rates under gravity, 1/s, lowest band first.
///
/// Band `n` leaks through the avoided crossing with band `n + 1`, which sits at
/// the zone edge for even `n` and at the zone center for odd `n`. Each crossing
/// is treated as a two-level problem whose diabatic states are free-particle
/// parabolas crossing at `k = (n + 1) π/L` with slopes `±ħ² k / m`:
/// `P = exp(−π m ΔE² / (4 ħ² k F))`, one attempt per Bloch period.
pub fn landau_zener_rates(config: &LatticeConfig, bands: &BandStructure) -> Result<Vec<f64>> {
    if !(config.gravity > 0.0) {
        return Err(Error::InvalidConfig("gravity must be positive for tunneling rates".into()));
    }
    let nu_bloch = config.bloch_frequency();
    let force = config.atom_mass * config.gravity;
    let k_lattice = PI / config.lattice_constant;
    let rates = (0..bands.band_count() - 1)
        .map(|n| {
            let at = if n % 2 == 0 { &bands.zone_edge } else { &bands.zone_center };
            let gap = (at[n + 1] - at[n]) * PLANCK * config.recoil_energy;
            let k_cross = (n + 1) as f64 * k_lattice;
            let exponent = PI * config.atom_mass * gap * gap / (4.0 * HBAR * HBAR * k_cross * force);
            nu_bloch * (-exponent).exp()
        })
        .collect();
    Ok(rates)
}
