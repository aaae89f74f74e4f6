//! Simulation of the preparation, evolution and band-mapped measurement
//! protocol, and synthesis of tomography datasets with a known channel.
//!
//! States are evolved as 2×2 operators on the bound pair. Analysis
//! projections onto `|θx⟩` and `|θy⟩` are realized the way the experiment
//! does it: a displacement (after a quarter-period wait for `|θy⟩`) followed
//! by a ground-band population measurement, divided by the analytic
//! displacement efficiency `c00² + c10²`.

use std::f64::consts::PI;

use nalgebra::Matrix2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::{bloch_affine, ellipsoid_metrics, ChoiMatrix, EllipsoidMetrics};
use crate::lattice::{
    bound_states, compute_bands, displacement_coefficients, landau_zener_rates, solve_bloch,
    trapezoid_weights, BandStructure, BoundStatePair, DisplacementCoefficients, LatticeConfig,
};
use crate::linalg::{c, C2, I};
use crate::mle::{TomographyDataset, TomographyRecord, DATASET_SCHEMA};
use crate::states::{free_evolution_operator, project, AnalysisBasis, DensityMatrix, HermitianMatrix, ProjectionRecord};
use crate::{Error, Result};

/// Displacement used to realize the analysis projections, meters.
pub const DEFAULT_ANALYSIS_DX: f64 = 116e-9;

pub const MIN_STEPS_PER_PERIOD: usize = 512;
const MAX_STEPS_PER_PERIOD: usize = 1 << 16;
pub const DRIVE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriveKind {
    /// `Δx(t) = x_m sin(ω₀t)`.
    Sine,
    /// `Δx(t) = x_m (cos(ω₀t) − 1)`.
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectorLabel {
    #[serde(rename = "0")]
    Ground,
    #[serde(rename = "1")]
    Excited,
    ThetaX,
    ThetaY,
}

impl ProjectorLabel {
    pub const ALL: [ProjectorLabel; 4] =
        [ProjectorLabel::Ground, ProjectorLabel::Excited, ProjectorLabel::ThetaX, ProjectorLabel::ThetaY];

    fn index(&self) -> usize {
        *self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum Step {
    /// Replace the state by `diag(p, 1 − p)` with `p` the filter purity.
    Filter,
    Displace { dx: f64 },
    Wait { dt: f64 },
    Drive { kind: DriveKind, amplitude: f64, periods: f64 },
    /// Remove all coherence; stands in for a wait much longer than the coherence time.
    Decohere,
    Measure { projector: ProjectorLabel },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct PulseSequence {
    pub steps: Vec<Step>,
}

impl PulseSequence {
    pub fn new(steps: Vec<Step>) -> Self {
        Self { steps }
    }

    pub fn validate(&self, lattice_constant: f64) -> Result<()> {
        let half = lattice_constant / 2.0;
        for (i, step) in self.steps.iter().enumerate() {
            match *step {
                Step::Measure { .. } if i + 1 != self.steps.len() => {
                    return Err(Error::InvalidSequence("measure must be the final step".into()))
                }
                Step::Displace { dx } if !(dx.abs() < half) => {
                    return Err(Error::InvalidSequence(format!("displacement {dx:e} m exceeds L/2")))
                }
                Step::Wait { dt } if !(dt >= 0.0) => {
                    return Err(Error::InvalidSequence(format!("negative wait {dt}")))
                }
                Step::Drive { amplitude, periods, .. } => {
                    if !(amplitude.abs() < half) {
                        return Err(Error::InvalidSequence(format!("drive amplitude {amplitude:e} m exceeds L/2")));
                    }
                    if !(periods >= 0.0) {
                        return Err(Error::InvalidSequence(format!("negative drive duration {periods}")));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Dephasing {
    #[default]
    None,
    /// Coherences shrink by `lambda` per trap period.
    FixedLambda { lambda: f64 },
    /// Coherences average over `n_q` quasimomenta with their own band gaps.
    QEnsemble { n_q: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ShotNoise {
    #[default]
    Off,
    Binomial { shots: u64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    pub dephasing: Dephasing,
    /// Ground-band fraction after filtering.
    pub filter_purity: f64,
    /// Single-measurement shot noise for [`simulate_sequence`].
    pub shot_noise: ShotNoise,
    /// Keep population lost to unbound states out of the trace. When off,
    /// lossy preparation steps are renormalized to the surviving atoms.
    pub loss: bool,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self { dephasing: Dephasing::None, filter_purity: 0.95, shot_noise: ShotNoise::Off, loss: false }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        match self.dephasing {
            Dephasing::FixedLambda { lambda } if !(0.0..=1.0).contains(&lambda) => {
                return Err(Error::InvalidConfig(format!("lambda {lambda} outside [0, 1]")))
            }
            Dephasing::QEnsemble { n_q } if n_q < 8 => {
                return Err(Error::InvalidConfig(format!("q ensemble needs at least 8 points, got {n_q}")))
            }
            _ => {}
        }
        if !(0.5..=1.0).contains(&self.filter_purity) {
            return Err(Error::InvalidConfig(format!(
                "filter purity {} outside [0.5, 1]",
                self.filter_purity
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveSpec {
    pub kind: DriveKind,
    /// `x_m`, meters.
    pub amplitude: f64,
    /// Duration in trap periods `2π/ω`.
    pub periods: f64,
    /// Drive angular frequency, rad/s; the trap frequency when `None`.
    pub frequency: Option<f64>,
    /// Report the propagator with the free evolution removed.
    pub interaction_frame: bool,
    /// Band decay rates `(Γ₀, Γ₁)` in 1/s, added as an anti-Hermitian term.
    pub decay: Option<[f64; 2]>,
}

impl DriveSpec {
    pub fn resonant(kind: DriveKind, amplitude: f64, periods: f64) -> Self {
        Self { kind, amplitude, periods, frequency: None, interaction_frame: false, decay: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveOutcome {
    pub propagator: Matrix2<crate::Complex64>,
    pub steps_per_period: usize,
    /// Largest element change between the last two step counts.
    pub change: f64,
}

impl DriveOutcome {
    pub fn channel(&self) -> ChoiMatrix {
        let u = self.propagator;
        ChoiMatrix::from_map(|x| u * x * u.adjoint())
    }

    pub fn rotation(&self) -> EllipsoidMetrics {
        ellipsoid_metrics(&bloch_affine(&self.channel()))
    }
}

/// Trap angular frequency `2π E_r (E₁ − E₀)` from the on-site energies, rad/s.
pub fn trap_angular_frequency(lattice: &LatticeConfig, states: &BoundStatePair) -> f64 {
    lattice.recoil_angular() * states.onsite_gap()
}

/// Two-level propagator under `H = diag(0, ħω) − F(t)·X` with `F = −m ẍ(t)`.
///
/// Fixed-step RK4 starting at 512 steps per trap period; the step count is
/// doubled until successive propagators agree to [`DRIVE_TOLERANCE`].
pub fn simulate_drive(lattice: &LatticeConfig, states: &BoundStatePair, spec: &DriveSpec) -> Result<DriveOutcome> {
    if !(spec.amplitude.abs() < lattice.lattice_constant / 2.0) {
        return Err(Error::InvalidConfig(format!("drive amplitude {:e} m exceeds L/2", spec.amplitude)));
    }
    let omega = trap_angular_frequency(lattice, states);
    let drive = spec.frequency.unwrap_or(omega);
    let x = states.x_elements;
    let hbar = crate::constants::HBAR;
    let coupling = lattice.atom_mass * spec.amplitude * drive * drive / hbar;
    let xmat = C2::new(c(x.x00, 0.0), c(x.x01, 0.0), c(x.x01, 0.0), c(x.x11, 0.0));
    let gamma = spec.decay.unwrap_or([0.0, 0.0]);
    let static_part = C2::new(c(0.0, -gamma[0] / 2.0), c(0.0, 0.0), c(0.0, 0.0), c(omega, -gamma[1] / 2.0));
    let hamiltonian = |t: f64| -> C2 {
        let shape = match spec.kind {
            DriveKind::Sine => (drive * t).sin(),
            DriveKind::Cosine => (drive * t).cos(),
        };
        static_part - xmat * c(coupling * shape, 0.0)
    };
    let period = 2.0 * PI / omega;
    let duration = spec.periods * period;
    let integrate = |steps_per_period: usize| -> C2 {
        let steps = ((spec.periods * steps_per_period as f64).ceil() as usize).max(1);
        let h = duration / steps as f64;
        let mut u = C2::identity();
        let deriv = |t: f64, u: &C2| -> C2 { hamiltonian(t) * u * (-I) };
        for k in 0..steps {
            let t = k as f64 * h;
            let k1 = deriv(t, &u);
            let k2 = deriv(t + h / 2.0, &(u + k1 * c(h / 2.0, 0.0)));
            let k3 = deriv(t + h / 2.0, &(u + k2 * c(h / 2.0, 0.0)));
            let k4 = deriv(t + h, &(u + k3 * c(h, 0.0)));
            u += (k1 + k2 * c(2.0, 0.0) + k3 * c(2.0, 0.0) + k4) * c(h / 6.0, 0.0);
        }
        u
    };
    let mut steps = MIN_STEPS_PER_PERIOD;
    let mut coarse = integrate(steps);
    loop {
        let fine = integrate(2 * steps);
        let change = (fine - coarse).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if change < DRIVE_TOLERANCE {
            let propagator = if spec.interaction_frame {
                let back = C2::new(c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), crate::Complex64::from_polar(1.0, omega * duration));
                back * fine
            } else {
                fine
            };
            return Ok(DriveOutcome { propagator, steps_per_period: 2 * steps, change });
        }
        steps *= 2;
        if 2 * steps > MAX_STEPS_PER_PERIOD {
            return Err(Error::DriveNotConverged { steps, change });
        }
        coarse = fine;
    }
}

/// `|Σ_q w_q exp(−i ΔE(q) dt/ħ)|` over the band structure's quasimomentum grid.
pub fn q_ensemble_dephasing(lattice: &LatticeConfig, bands: &BandStructure, dt: f64) -> Result<f64> {
    if bands.band_count() < 2 || bands.bound_band_count < 2 {
        return Err(Error::TooFewBoundBands {
            depth: bands.depth,
            bound: bands.bound_band_count,
            threshold: crate::lattice::two_band_threshold(lattice)?,
        });
    }
    let weights = trapezoid_weights(bands.quasimomenta.len());
    let gaps: Vec<f64> = bands.energies[1].iter().zip(&bands.energies[0]).map(|(a, b)| a - b).collect();
    Ok(ensemble_factor(&gaps, &weights, lattice.recoil_angular(), dt))
}

fn ensemble_factor(gaps: &[f64], weights: &[f64], recoil_angular: f64, dt: f64) -> f64 {
    let sum: crate::Complex64 = gaps
        .iter()
        .zip(weights)
        .map(|(g, w)| crate::Complex64::from_polar(*w, -g * recoil_angular * dt))
        .sum();
    sum.norm()
}

/// First time at which `lambda(t)` falls to `1/e`, found by scanning in
/// steps of `step` up to `horizon` and refining by bisection.
pub fn coherence_time(lambda: impl Fn(f64) -> f64, step: f64, horizon: f64) -> Option<f64> {
    let target = (-1.0f64).exp();
    let mut prev = 0.0;
    let mut t = step;
    while t <= horizon {
        if lambda(t) <= target {
            let (mut lo, mut hi) = (prev, t);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if lambda(mid) <= target {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Some(0.5 * (lo + hi));
        }
        prev = t;
        t += step;
    }
    None
}

/// Two readings of a per-period coherence factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DephasingTimes {
    pub lambda: f64,
    pub period: f64,
    /// `T / (−ln λ)`: 1/e time of `λ^{t/T}`.
    pub exponential: f64,
    /// `T / (1 − λ)`: the loss of the first period extrapolated linearly to full decay.
    pub linear: f64,
}

impl DephasingTimes {
    pub fn new(lambda: f64, period: f64) -> Self {
        Self { lambda, period, exponential: period / -lambda.ln(), linear: period / (1.0 - lambda) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SequenceOutcome {
    State { rho: DensityMatrix },
    Projection { projector: ProjectorLabel, probability: f64, counts: Option<u64>, shots: Option<u64> },
}

/// Precomputed lattice quantities for repeated simulation.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub lattice: LatticeConfig,
    pub noise: NoiseModel,
    pub bands: BandStructure,
    pub states: BoundStatePair,
    /// Trap angular frequency, rad/s.
    pub omega: f64,
    pub analysis: DisplacementCoefficients,
    pub theta: f64,
    decay: Option<[f64; 2]>,
    q_gaps: Option<Vec<f64>>,
}

fn bound_pair_rates(lattice: &LatticeConfig, bands: &BandStructure) -> Result<[f64; 2]> {
    let r = landau_zener_rates(lattice, bands)?;
    Ok([r[0], r[1]])
}

impl Simulator {
    pub fn new(lattice: &LatticeConfig, noise: &NoiseModel, analysis_dx: f64) -> Result<Self> {
        lattice.validate()?;
        noise.validate()?;
        let bands = compute_bands(lattice)?;
        let states = bound_states(lattice, &bands)?;
        let analysis = displacement_coefficients(&states, analysis_dx)?;
        let theta = crate::lattice::calibrate_theta(&analysis)?;
        AnalysisBasis::new(theta)?;
        let decay = if noise.loss && lattice.gravity > 0.0 { Some(bound_pair_rates(lattice, &bands)?) } else { None };
        let q_gaps = match noise.dephasing {
            Dephasing::QEnsemble { n_q } => Some(
                (0..n_q)
                    .map(|k| {
                        let q = -1.0 + 2.0 * k as f64 / n_q as f64;
                        solve_bloch(lattice.depth, q, lattice.plane_wave_cutoff, 2).map(|s| s.energies[1] - s.energies[0])
                    })
                    .collect::<Result<Vec<f64>>>()?,
            ),
            _ => None,
        };
        let omega = trap_angular_frequency(lattice, &states);
        Ok(Self { lattice: lattice.clone(), noise: *noise, bands, states, omega, analysis, theta, decay, q_gaps })
    }

    pub fn period(&self) -> f64 {
        2.0 * PI / self.omega
    }

    pub fn basis(&self) -> AnalysisBasis {
        AnalysisBasis::new(self.theta).expect("validated at construction")
    }

    /// Coherence factor accumulated over a wait of `dt`.
    pub fn coherence_factor(&self, dt: f64) -> f64 {
        match self.noise.dephasing {
            Dephasing::None => 1.0,
            Dephasing::FixedLambda { lambda } => lambda.powf(dt / self.period()),
            Dephasing::QEnsemble { n_q } => {
                let gaps = self.q_gaps.as_ref().expect("computed for q ensemble");
                let w = vec![1.0 / n_q as f64; n_q];
                ensemble_factor(gaps, &w, self.lattice.recoil_angular(), dt)
            }
        }
    }

    /// The linear map of a wait, including band decay when loss is on.
    pub(crate) fn wait_map(&self, x: &C2, dt: f64) -> C2 {
        let mut out = free_evolution_operator(x, dt, self.omega, self.coherence_factor(dt));
        if let Some([g0, g1]) = self.decay {
            let a0 = (-g0 * dt).exp();
            let a1 = (-g1 * dt).exp();
            out[(0, 0)] *= a0;
            out[(1, 1)] *= a1;
            let a01 = (a0 * a1).sqrt();
            out[(0, 1)] *= a01;
            out[(1, 0)] *= a01;
        }
        out
    }

    pub fn drive(&self, kind: DriveKind, amplitude: f64, periods: f64) -> Result<DriveOutcome> {
        let spec = DriveSpec { decay: self.decay, ..DriveSpec::resonant(kind, amplitude, periods) };
        simulate_drive(&self.lattice, &self.states, &spec)
    }

    fn displace(&self, x: &C2, dx: f64) -> Result<C2> {
        let d = if dx == self.analysis.dx {
            self.analysis.matrix()
        } else if dx == -self.analysis.dx {
            self.analysis.reversed().matrix()
        } else {
            displacement_coefficients(&self.states, dx)?.matrix()
        };
        let out = d * x * d.adjoint();
        if self.noise.loss {
            return Ok(out);
        }
        let (before, after) = (x.trace().re, out.trace().re);
        Ok(if after > 0.0 { out * c(before / after, 0.0) } else { out })
    }

    fn step(&self, x: &C2, step: &Step) -> Result<C2> {
        Ok(match *step {
            Step::Filter => {
                let p = self.noise.filter_purity;
                C2::new(c(p, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(1.0 - p, 0.0))
            }
            Step::Displace { dx } => self.displace(x, dx)?,
            Step::Wait { dt } => self.wait_map(x, dt),
            Step::Drive { kind, amplitude, periods } => {
                let u = self.drive(kind, amplitude, periods)?.propagator;
                u * x * u.adjoint()
            }
            Step::Decohere => C2::new(x[(0, 0)], c(0.0, 0.0), c(0.0, 0.0), x[(1, 1)]),
            Step::Measure { .. } => *x,
        })
    }

    /// Evolve `I/2` through every non-measurement step.
    pub fn prepare(&self, seq: &PulseSequence) -> Result<C2> {
        seq.validate(self.lattice.lattice_constant)?;
        let mut x = C2::identity() * c(0.5, 0.0);
        for s in &seq.steps {
            x = self.step(&x, s)?;
        }
        Ok(x)
    }

    /// Band-measurement realization of the four analysis projections.
    pub fn measure(&self, x: &C2) -> [f64; 4] {
        let reference = if self.noise.loss { x.trace().re } else { 1.0 };
        let efficiency = self.analysis.c00.powi(2) + self.analysis.c10.powi(2);
        let ground_after = |d: C2, y: &C2| (d * y * d.adjoint())[(0, 0)].re;
        let theta_x = ground_after(self.analysis.reversed().matrix(), x);
        let quarter = free_evolution_operator(x, self.period() / 4.0, self.omega, 1.0);
        let theta_y = ground_after(self.analysis.matrix(), &quarter);
        [x[(0, 0)].re, x[(1, 1)].re, theta_x / efficiency, theta_y / efficiency].map(|p| p / reference)
    }

    pub fn run(&self, seq: &PulseSequence) -> Result<SequenceOutcome> {
        let x = self.prepare(seq)?;
        match seq.steps.last() {
            Some(Step::Measure { projector }) => {
                let p = self.measure(&x)[projector.index()];
                let (counts, shots) = match self.noise.shot_noise {
                    ShotNoise::Off => (None, None),
                    ShotNoise::Binomial { shots, seed } => {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        (Some(sample_binomial(shots, p, &mut rng)?), Some(shots))
                    }
                };
                let probability = match (counts, shots) {
                    (Some(k), Some(n)) if n > 0 => k as f64 / n as f64,
                    _ => p,
                };
                Ok(SequenceOutcome::Projection { projector: *projector, probability, counts, shots })
            }
            _ => Ok(SequenceOutcome::State { rho: DensityMatrix::new(HermitianMatrix::from_upper(&x))? }),
        }
    }

    /// Preparation sequences of the four tomography inputs.
    pub fn input_sequences(&self) -> [(&'static str, PulseSequence); 4] {
        let dx = self.analysis.dx;
        [
            ("ground", PulseSequence::new(vec![Step::Filter])),
            ("mixed", PulseSequence::new(vec![Step::Filter, Step::Displace { dx }, Step::Decohere])),
            ("real", PulseSequence::new(vec![Step::Filter, Step::Displace { dx }])),
            (
                "imaginary",
                PulseSequence::new(vec![Step::Filter, Step::Displace { dx }, Step::Wait { dt: self.period() / 4.0 }]),
            ),
        ]
    }

    /// The channel an operation applies to the bound pair.
    pub fn operation_channel(&self, op: &Operation) -> Result<ChoiMatrix> {
        Ok(match op {
            Operation::FreePeriod { periods } => {
                let dt = periods * self.period();
                ChoiMatrix::from_map(|x| self.wait_map(x, dt))
            }
            Operation::SineDrive { amplitude, periods } => self.drive_channel(DriveKind::Sine, *amplitude, *periods)?,
            Operation::CosineDrive { amplitude, periods } => {
                self.drive_channel(DriveKind::Cosine, *amplitude, *periods)?
            }
            Operation::Planted { choi } => *choi,
        })
    }

    fn drive_channel(&self, kind: DriveKind, amplitude: f64, periods: f64) -> Result<ChoiMatrix> {
        PulseSequence::new(vec![Step::Drive { kind, amplitude, periods }]).validate(self.lattice.lattice_constant)?;
        Ok(self.drive(kind, amplitude, periods)?.channel())
    }

    /// Tomography dataset for `op`, with binomial counts unless `shots == 0`.
    pub fn synthesize(&self, op: &Operation, shots: u64, seed: u64) -> Result<SynthesizedDataset> {
        let channel = self.operation_channel(op)?;
        let inputs = self.input_sequences();
        let records = inputs
            .par_iter()
            .enumerate()
            .map(|(k, (label, seq))| -> Result<TomographyRecord> {
                let rho = self.prepare(seq)?;
                let out = channel.apply_operator(&rho);
                let sample = |m: [f64; 4], side: u64| -> Result<ProjectionRecord> {
                    if shots == 0 {
                        return Ok(ProjectionRecord::exact(m));
                    }
                    let mut counts = [0u64; 4];
                    for (i, p) in m.iter().enumerate() {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        rng.set_stream(8 * k as u64 + 4 * side + i as u64);
                        counts[i] = sample_binomial(shots, *p, &mut rng)?;
                    }
                    Ok(ProjectionRecord::from_counts(counts, shots))
                };
                Ok(TomographyRecord {
                    label: label.to_string(),
                    input: sample(self.measure(&rho), 0)?,
                    output: sample(self.measure(&out), 1)?,
                    shots_per_projector: None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SynthesizedDataset {
            dataset: TomographyDataset {
                schema: DATASET_SCHEMA.to_string(),
                theta: self.theta,
                shots,
                renormalized: self.noise.loss,
                records,
            },
            ground_truth_choi: channel,
        })
    }

    /// Ideal projections `⟨Φ_i|ρ|Φ_i⟩` of a prepared operator.
    pub fn ideal_projections(&self, x: &C2) -> [f64; 4] {
        let h = HermitianMatrix::from_upper(x);
        let reference = if self.noise.loss { h.trace() } else { 1.0 };
        project(&h, &self.basis()).m.map(|p| p / reference)
    }
}

fn sample_binomial(n: u64, p: f64, rng: &mut ChaCha8Rng) -> Result<u64> {
    let dist = Binomial::new(n, p.clamp(0.0, 1.0))
        .map_err(|e| Error::InvalidConfig(format!("binomial({n}, {p}): {e}")))?;
    Ok(dist.sample(rng))
}

/// Run one sequence on a freshly built simulator.
pub fn simulate_sequence(seq: &PulseSequence, lattice: &LatticeConfig, noise: &NoiseModel) -> Result<SequenceOutcome> {
    Simulator::new(lattice, noise, DEFAULT_ANALYSIS_DX)?.run(seq)
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Operation {
    FreePeriod {
        #[serde(default = "one")]
        periods: f64,
    },
    SineDrive {
        amplitude: f64,
        #[serde(default = "one")]
        periods: f64,
    },
    CosineDrive {
        amplitude: f64,
        #[serde(default = "one")]
        periods: f64,
    },
    Planted {
        choi: ChoiMatrix,
    },
}

fn default_analysis_dx() -> f64 {
    DEFAULT_ANALYSIS_DX
}

fn default_shots() -> u64 {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "LatticeConfig::rb85_reference")]
    pub lattice: LatticeConfig,
    #[serde(default)]
    pub noise: NoiseModel,
    pub operation: Operation,
    /// Shots per projector; zero gives exact probabilities.
    #[serde(default = "default_shots")]
    pub shots: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_analysis_dx")]
    pub analysis_dx: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesizedDataset {
    #[serde(flatten)]
    pub dataset: TomographyDataset,
    pub ground_truth_choi: ChoiMatrix,
}

pub fn synthesize_qpt_dataset(config: &ExperimentConfig) -> Result<SynthesizedDataset> {
    Simulator::new(&config.lattice, &config.noise, config.analysis_dx)?.synthesize(
        &config.operation,
        config.shots,
        config.seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::dephasing_channel;
    use crate::mle::linear_inversion_superop;
    use std::sync::OnceLock;

    fn sim18() -> &'static Simulator {
        static SIM: OnceLock<Simulator> = OnceLock::new();
        SIM.get_or_init(|| Simulator::new(&LatticeConfig::rb85_reference(), &NoiseModel::default(), DEFAULT_ANALYSIS_DX).unwrap())
    }

    fn state(outcome: SequenceOutcome) -> DensityMatrix {
        match outcome {
            SequenceOutcome::State { rho } => rho,
            other => panic!("expected a state, got {other:?}"),
        }
    }

    #[test]
    fn filtered_ground_population() {
        let seq = PulseSequence::new(vec![Step::Filter, Step::Measure { projector: ProjectorLabel::Ground }]);
        match sim18().run(&seq).unwrap() {
            SequenceOutcome::Projection { probability, .. } => assert!((probability - 0.95).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn displaced_ground_ratio() {
        let sim = Simulator::new(
            &LatticeConfig::rb85_reference(),
            &NoiseModel { filter_purity: 1.0, ..NoiseModel::default() },
            DEFAULT_ANALYSIS_DX,
        )
        .unwrap();
        let rho = state(sim.run(&PulseSequence::new(vec![Step::Filter, Step::Displace { dx: 116e-9 }])).unwrap());
        let a = sim.analysis;
        assert!((rho.p00 / rho.p11 - (a.c00 / a.c10).powi(2)).abs() < 1e-9);
        assert!((rho.trace() - 1.0).abs() < 1e-12);

        let seq = PulseSequence::new(vec![
            Step::Filter,
            Step::Displace { dx: 116e-9 },
            Step::Wait { dt: sim.period() / 4.0 },
        ]);
        let rho = state(sim.run(&seq).unwrap());
        assert!(rho.c01.re.abs() < 1e-12);
        assert!((rho.c01.im - (rho.p00 * rho.p11).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn measurement_realization_matches_ideal() {
        let sim = sim18();
        for seq in sim.input_sequences().iter().map(|(_, s)| s) {
            let x = sim.prepare(seq).unwrap();
            let real = sim.measure(&x);
            let ideal = sim.ideal_projections(&x);
            for i in 0..4 {
                assert!((real[i] - ideal[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invalid_sequences() {
        let sim = sim18();
        let bad = [
            vec![Step::Measure { projector: ProjectorLabel::Ground }, Step::Filter],
            vec![Step::Wait { dt: -1.0 }],
            vec![Step::Displace { dx: 0.6e-6 }],
        ];
        for steps in bad {
            assert!(matches!(sim.run(&PulseSequence::new(steps)), Err(Error::InvalidSequence(_))));
        }
    }

    #[test]
    fn unbound_lattice_is_rejected() {
        let shallow = LatticeConfig::rb85_reference().with_depth(9.0);
        let seq = PulseSequence::new(vec![Step::Filter]);
        assert!(matches!(
            simulate_sequence(&seq, &shallow, &NoiseModel::default()),
            Err(Error::TooFewBoundBands { .. })
        ));
    }

    #[test]
    fn trace_conserved_without_loss_and_shrinks_with_it() {
        let lossy = Simulator::new(
            &LatticeConfig::rb85_reference(),
            &NoiseModel { loss: true, ..NoiseModel::default() },
            DEFAULT_ANALYSIS_DX,
        )
        .unwrap();
        let steps = vec![
            Step::Filter,
            Step::Displace { dx: 116e-9 },
            Step::Wait { dt: 1e-3 },
            Step::Drive { kind: DriveKind::Sine, amplitude: 26e-9, periods: 1.0 },
        ];
        let seq = PulseSequence::new(steps);
        let kept = sim18().prepare(&seq).unwrap();
        assert!((kept.trace().re - 1.0).abs() < 1e-9);
        let lost = lossy.prepare(&seq).unwrap();
        assert!(lost.trace().re < 1.0);
    }

    #[test]
    fn zero_amplitude_drive_is_free_phase() {
        let sim = sim18();
        let out = simulate_drive(&sim.lattice, &sim.states, &DriveSpec::resonant(DriveKind::Sine, 0.0, 0.3)).unwrap();
        let phase = crate::Complex64::from_polar(1.0, -sim.omega * 0.3 * sim.period());
        assert!((out.propagator[(0, 0)] - c(1.0, 0.0)).norm() < 1e-9);
        assert!((out.propagator[(1, 1)] - phase).norm() < 1e-9);
        assert!(out.propagator[(0, 1)].norm() < 1e-12);
    }

    #[test]
    fn free_period_ground_truth_is_dephasing() {
        let noise = NoiseModel { dephasing: Dephasing::FixedLambda { lambda: 0.64 }, ..NoiseModel::default() };
        let sim = Simulator::new(&LatticeConfig::rb85_reference(), &noise, DEFAULT_ANALYSIS_DX).unwrap();
        let data = sim.synthesize(&Operation::FreePeriod { periods: 1.0 }, 0, 0).unwrap();
        assert!(data.ground_truth_choi.frobenius_distance(&dephasing_channel(0.64).unwrap()) < 1e-12);
        let li = linear_inversion_superop(&data.dataset).unwrap();
        assert!(li.frobenius_distance(&data.ground_truth_choi) < 1e-9);
    }

    #[test]
    fn datasets_are_deterministic() {
        let op = Operation::Planted { choi: dephasing_channel(0.64).unwrap() };
        let a = serde_json::to_string(&sim18().synthesize(&op, 10_000, 7).unwrap()).unwrap();
        let b = serde_json::to_string(&sim18().synthesize(&op, 10_000, 7).unwrap()).unwrap();
        let other = serde_json::to_string(&sim18().synthesize(&op, 10_000, 8).unwrap()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, other);
    }

    #[test]
    fn noise_model_bounds() {
        let bad = [
            NoiseModel { filter_purity: 0.4, ..NoiseModel::default() },
            NoiseModel { dephasing: Dephasing::FixedLambda { lambda: 1.2 }, ..NoiseModel::default() },
            NoiseModel { dephasing: Dephasing::QEnsemble { n_q: 4 }, ..NoiseModel::default() },
        ];
        assert!(bad.iter().all(|n| n.validate().is_err()));
    }

    #[test]
    fn fixed_lambda_times() {
        let t = DephasingTimes::new(0.64, 200e-6);
        assert!((t.exponential / t.period - 2.2408).abs() < 1e-3);
        assert!((t.linear / t.period - 2.7778).abs() < 1e-3);
    }

    #[test]
    fn ensemble_factor_at_zero() {
        let sim = sim18();
        assert_eq!(q_ensemble_dephasing(&sim.lattice, &sim.bands, 0.0).unwrap(), 1.0);
        let deep = LatticeConfig::rb85_reference().with_depth(60.0);
        let bands = compute_bands(&deep).unwrap();
        let period = 2.0 * PI / (deep.recoil_angular() * bands.center_gap());
        assert!(q_ensemble_dephasing(&deep, &bands, 20.0 * period).unwrap() > 0.99);
    }

    #[test]
    fn config_json_defaults() {
        let cfg: ExperimentConfig =
            serde_json::from_str(r#"{"operation":{"kind":"sine_drive","amplitude":2.6e-8}}"#).unwrap();
        assert_eq!(cfg.shots, 10_000);
        assert_eq!(cfg.lattice, LatticeConfig::rb85_reference());
        assert!(matches!(cfg.operation, Operation::SineDrive { periods, .. } if periods == 1.0));
    }
}
