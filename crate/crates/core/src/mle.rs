//! Maximum-likelihood process estimation.
//!
//! The Choi matrix is parameterized as `C = T†T` with `T` lower-triangular
//! (real diagonal, 16 real parameters), so every candidate is completely
//! positive. Trace constraints are imposed by renormalizing `T` inside the
//! objective. Input states are held at their linear reconstructions unless
//! [`FitOptions::refit_inputs`] is set.
//!
//! Likelihoods are reported relative to the saturated model: the binomial
//! objective is `Σ n·KL(p̂‖p)` over all projectors, which is zero for a model
//! that reproduces every measured frequency.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, Vector4};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::ChoiMatrix;
use crate::linalg::{c, cholesky_psd4, eigh2, eigh4, inv_sqrt_psd2, C2, C4};
use crate::states::{
    physical_projection, reconstruct_linear, AnalysisBasis, DensityMatrix, HermitianMatrix,
    ProjectionRecord,
};
use crate::{Error, Result};

pub const DATASET_SCHEMA: &str = "latqpt.dataset/v1";

/// Inputs whose Gram matrix is worse conditioned than this are rejected.
pub const MAX_CONDITION: f64 = 1e6;

const P_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TomographyRecord {
    pub label: String,
    #[serde(rename = "in")]
    pub input: ProjectionRecord,
    #[serde(rename = "out")]
    pub output: ProjectionRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shots_per_projector: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TomographyDataset {
    #[serde(default = "dataset_schema")]
    pub schema: String,
    pub theta: f64,
    /// Default shots per projector; zero means exact probabilities.
    #[serde(default)]
    pub shots: u64,
    /// Output projections were renormalized by the surviving population.
    #[serde(default)]
    pub renormalized: bool,
    pub records: Vec<TomographyRecord>,
}

fn dataset_schema() -> String {
    DATASET_SCHEMA.to_string()
}

impl TomographyDataset {
    /// Exact projections of `inputs` and their images under `channel`.
    pub fn noiseless(theta: f64, inputs: &[(&str, HermitianMatrix)], channel: &ChoiMatrix) -> Result<Self> {
        let basis = AnalysisBasis::new(theta)?;
        let records = inputs
            .iter()
            .map(|(label, rho)| {
                let out = HermitianMatrix::from_upper(&channel.apply_operator(&rho.matrix()));
                TomographyRecord {
                    label: label.to_string(),
                    input: crate::states::project(rho, &basis),
                    output: crate::states::project(&out, &basis),
                    shots_per_projector: None,
                }
            })
            .collect();
        Ok(Self { schema: dataset_schema(), theta, shots: 0, renormalized: false, records })
    }

    pub fn basis(&self) -> Result<AnalysisBasis> {
        AnalysisBasis::new(self.theta)
    }

    pub fn shots_for(&self, record: &TomographyRecord) -> u64 {
        record.shots_per_projector.unwrap_or(self.shots)
    }

    pub fn input_states(&self) -> Result<Vec<HermitianMatrix>> {
        let basis = self.basis()?;
        self.records.iter().map(|r| reconstruct_linear(&r.input, &basis)).collect()
    }

    pub fn output_states(&self) -> Result<Vec<HermitianMatrix>> {
        let basis = self.basis()?;
        self.records.iter().map(|r| reconstruct_linear(&r.output, &basis)).collect()
    }

    /// Condition number of the 4×4 Gram matrix of the vectorized inputs.
    pub fn condition_number(&self) -> Result<f64> {
        let a = vectorized(&self.input_states()?);
        let gram = &a * a.adjoint();
        let (vals, _) = eigh4(&C4::from_iterator(gram.iter().copied()));
        Ok(if vals[3] <= 0.0 { f64::INFINITY } else { vals[0] / vals[3] })
    }

    pub fn validate(&self) -> Result<()> {
        self.basis()?;
        if self.records.len() < 4 {
            return Err(Error::InvalidDataset(format!(
                "{} records; at least 4 linearly independent inputs are needed",
                self.records.len()
            )));
        }
        for r in &self.records {
            let n = self.shots_for(r);
            for (side, p) in [("in", r.input), ("out", r.output)] {
                let p = ProjectionRecord { shots: p.shots.or((n > 0).then_some(n)), ..p };
                p.validate()
                    .map_err(|e| Error::InvalidDataset(format!("record {:?} ({side}): {e}", r.label)))?;
            }
        }
        let condition = self.condition_number()?;
        if !(condition < MAX_CONDITION) {
            return Err(Error::IllConditioned { condition });
        }
        Ok(())
    }
}

/// Columns `vec(ρ_k)` with `vec(X)[2i + j] = X_ij`.
fn vectorized(states: &[HermitianMatrix]) -> DMatrix<Complex64> {
    DMatrix::from_fn(4, states.len(), |row, k| states[k].matrix()[(row / 2, row % 2)])
}

/// Least-squares superoperator mapping reconstructed inputs to reconstructed outputs.
///
/// The result may fail complete positivity when the data are noisy.
pub fn linear_inversion_superop(dataset: &TomographyDataset) -> Result<ChoiMatrix> {
    dataset.validate()?;
    let a = vectorized(&dataset.input_states()?);
    let b = vectorized(&dataset.output_states()?);
    let gram = &a * a.adjoint();
    let inv = gram.try_inverse().ok_or(Error::IllConditioned { condition: f64::INFINITY })?;
    let s = b * a.adjoint() * inv;
    Ok(ChoiMatrix::from_map(|x| {
        let v = &s * DMatrix::from_fn(4, 1, |row, _| x[(row / 2, row % 2)]);
        C2::new(v[0], v[1], v[2], v[3])
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Constraint {
    Cp,
    CpTp,
    #[default]
    CpTraceNonincreasing,
}

impl Constraint {
    /// CP-TP for survival-renormalized data, otherwise CP with loss allowed.
    pub fn default_for(dataset: &TomographyDataset) -> Self {
        if dataset.renormalized {
            Constraint::CpTp
        } else {
            Constraint::CpTraceNonincreasing
        }
    }

    fn impose(&self, choi: &C4) -> Option<C4> {
        let chi = ChoiMatrix::from_matrix(*choi);
        match self {
            Constraint::Cp => Some(*choi),
            Constraint::CpTp => {
                let w_inv = inv_sqrt_psd2(&chi.output_partial_trace())?;
                let mut s = C4::zeros();
                for i in 0..2 {
                    for k in 0..2 {
                        for a in 0..2 {
                            s[(2 * i + a, 2 * k + a)] = w_inv[(i, k)];
                        }
                    }
                }
                Some(s * choi * s)
            }
            Constraint::CpTraceNonincreasing => {
                let top = eigh2(&chi.output_partial_trace()).0[0];
                Some(if top > 1.0 { choi * c(1.0 / top, 0.0) } else { *choi })
            }
        }
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Constraint::Cp => "cp",
            Constraint::CpTp => "cp-tp",
            Constraint::CpTraceNonincreasing => "cp-trace-nonincreasing",
        })
    }
}

impl FromStr for Constraint {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cp" => Ok(Constraint::Cp),
            "cp-tp" | "cptp" => Ok(Constraint::CpTp),
            "cp-trace-nonincreasing" | "cp-tn" => Ok(Constraint::CpTraceNonincreasing),
            other => Err(Error::InvalidConfig(format!("unknown constraint {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    #[default]
    Binomial,
    /// Weighted least squares with variance `(p̂(1−p̂) + 1/n)/n`.
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    #[default]
    NelderMead,
    /// Central-difference gradient with backtracking line search.
    GradientDescent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub constraint: Constraint,
    pub objective: Objective,
    pub optimizer: Optimizer,
    pub restarts: usize,
    pub max_iterations: usize,
    /// Stop when the objective changes by less than this.
    pub tolerance: f64,
    pub seed: u64,
    /// Fit the input states jointly with the channel.
    pub refit_inputs: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            constraint: Constraint::default(),
            objective: Objective::default(),
            optimizer: Optimizer::default(),
            restarts: 8,
            max_iterations: 50_000,
            tolerance: 1e-9,
            seed: 0,
            refit_inputs: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub label: String,
    pub predicted: [f64; 4],
    pub measured: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub choi: ChoiMatrix,
    pub neg_log_likelihood: f64,
    /// Objective of the constrained linear-inversion starting point.
    pub initial_neg_log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    pub constraint: Constraint,
    pub residuals: Vec<Residual>,
    /// Final objective of every restart, in restart order.
    pub restart_values: Vec<f64>,
    /// Largest Frobenius distance between a restart's Choi matrix and the best.
    pub restart_choi_spread: f64,
    pub best_restart: usize,
    /// Best objective after each iteration of the winning restart.
    #[serde(skip)]
    pub history: Vec<f64>,
}

struct Target {
    weight: f64,
    measured: [f64; 4],
}

struct Problem<'a> {
    projectors: [C2; 4],
    inputs: Vec<C2>,
    input_targets: Vec<Target>,
    output_targets: Vec<Target>,
    options: &'a FitOptions,
}

const CHOI_PARAMS: usize = 16;
const OFF_DIAGONAL: [(usize, usize); 6] = [(1, 0), (2, 0), (2, 1), (3, 0), (3, 1), (3, 2)];

fn t_from_params(p: &[f64]) -> C4 {
    let mut t = C4::zeros();
    for j in 0..4 {
        t[(j, j)] = c(p[j], 0.0);
    }
    for (k, &(i, j)) in OFF_DIAGONAL.iter().enumerate() {
        t[(i, j)] = c(p[4 + 2 * k], p[5 + 2 * k]);
    }
    t
}

fn params_from_t(t: &C4) -> Vec<f64> {
    let mut p = vec![0.0; CHOI_PARAMS];
    for j in 0..4 {
        p[j] = t[(j, j)].re;
    }
    for (k, &(i, j)) in OFF_DIAGONAL.iter().enumerate() {
        p[4 + 2 * k] = t[(i, j)].re;
        p[5 + 2 * k] = t[(i, j)].im;
    }
    p
}

/// Lower-triangular `T` with `T†T = m` for positive-semidefinite `m`.
fn lower_factor(m: &C4) -> C4 {
    // Pivoted from the last index: J m J = L L† gives m = (J L J)(J L J)†
    // with J L J upper-triangular, and T = (J L J)†.
    let flip = |x: &C4| C4::from_fn(|i, j| x[(3 - i, 3 - j)]);
    let scale = m.trace().re.abs().max(1e-300);
    let l = cholesky_psd4(&flip(m), 1e-14 * scale);
    flip(&l).adjoint()
}

fn psd_part(m: &C4) -> C4 {
    let (vals, vecs) = eigh4(m);
    let d = C4::from_diagonal(&Vector4::from_fn(|i, _| c(vals[i].max(0.0), 0.0)));
    vecs * d * vecs.adjoint()
}

fn kl_term(n: f64, observed: f64, predicted: f64) -> f64 {
    let p = predicted.clamp(P_FLOOR, 1.0 - P_FLOOR);
    let q = observed.clamp(0.0, 1.0);
    let mut s = 0.0;
    if q > 0.0 {
        s += q * (q / p).ln();
    }
    if q < 1.0 {
        s += (1.0 - q) * ((1.0 - q) / (1.0 - p)).ln();
    }
    n * s
}

fn target(measured: &ProjectionRecord, shots: u64) -> Target {
    let m = match (measured.counts, measured.shots) {
        (Some(k), Some(n)) if n > 0 => k.map(|k| k as f64 / n as f64),
        _ => measured.m,
    };
    Target { weight: shots.max(1) as f64, measured: m }
}

impl<'a> Problem<'a> {
    fn new(dataset: &TomographyDataset, options: &'a FitOptions) -> Result<Self> {
        let basis = dataset.basis()?;
        let inputs = dataset.input_states()?.iter().map(|h| h.matrix()).collect();
        let shots: Vec<u64> = dataset.records.iter().map(|r| dataset.shots_for(r)).collect();
        Ok(Self {
            projectors: basis.projectors(),
            inputs,
            input_targets: dataset.records.iter().zip(&shots).map(|(r, &n)| target(&r.input, n)).collect(),
            output_targets: dataset.records.iter().zip(&shots).map(|(r, &n)| target(&r.output, n)).collect(),
            options,
        })
    }

    fn dimension(&self) -> usize {
        CHOI_PARAMS + if self.options.refit_inputs { 4 * self.inputs.len() } else { 0 }
    }

    fn choi(&self, p: &[f64]) -> Option<C4> {
        let t = t_from_params(&p[..CHOI_PARAMS]);
        self.options.constraint.impose(&(t.adjoint() * t))
    }

    fn input(&self, p: &[f64], k: usize) -> C2 {
        if self.options.refit_inputs {
            let q = &p[CHOI_PARAMS + 4 * k..CHOI_PARAMS + 4 * k + 4];
            HermitianMatrix::new(q[0], q[1], c(q[2], q[3])).matrix()
        } else {
            self.inputs[k]
        }
    }

    fn probabilities(&self, m: &C2) -> [f64; 4] {
        self.projectors.map(|pr| (pr * m).trace().re)
    }

    fn cost(&self, target: &Target, predicted: &[f64; 4]) -> f64 {
        let n = target.weight;
        match self.options.objective {
            Objective::Binomial => (0..4).map(|i| kl_term(n, target.measured[i], predicted[i])).sum(),
            Objective::Gaussian => (0..4)
                .map(|i| {
                    let q = target.measured[i];
                    let var = (q * (1.0 - q) + 1.0 / n) / n;
                    0.5 * (predicted[i] - q).powi(2) / var
                })
                .sum(),
        }
    }

    fn objective(&self, p: &[f64]) -> f64 {
        let Some(choi) = self.choi(p) else {
            return f64::INFINITY;
        };
        let chi = ChoiMatrix::from_matrix(choi);
        let mut total = 0.0;
        for k in 0..self.inputs.len() {
            let rho = self.input(p, k);
            if self.options.refit_inputs {
                total += self.cost(&self.input_targets[k], &self.probabilities(&rho));
            }
            total += self.cost(&self.output_targets[k], &self.probabilities(&chi.apply_operator(&rho)));
        }
        if total.is_finite() {
            total
        } else {
            f64::INFINITY
        }
    }

    fn initial_point(&self, linear: &ChoiMatrix) -> Vec<f64> {
        let start = psd_part(linear.matrix());
        let start = self.options.constraint.impose(&start).unwrap_or(start);
        let mut p = params_from_t(&lower_factor(&start));
        if self.options.refit_inputs {
            for rho in &self.inputs {
                p.extend([rho[(0, 0)].re, rho[(1, 1)].re, rho[(0, 1)].re, rho[(0, 1)].im]);
            }
        }
        p
    }
}

struct Outcome {
    x: Vec<f64>,
    value: f64,
    iterations: usize,
    converged: bool,
    history: Vec<f64>,
}

/// Nelder–Mead with dimension-adapted coefficients. The simplex is rebuilt
/// around the best vertex after each convergence until a rebuild no longer
/// improves the objective by more than `tol`.
fn nelder_mead(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], step: f64, tol: f64, max_iter: usize) -> Outcome {
    let n = x0.len();
    let nf = n as f64;
    let (alpha, gamma, rho, sigma) = (1.0, 1.0 + 2.0 / nf, 0.75 - 0.5 / nf, 1.0 - 1.0 / nf);
    let mut best_x = x0.to_vec();
    let mut best_f = f(x0);
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut scale = step;

    while iterations < max_iter {
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        simplex.push((best_x.clone(), best_f));
        for i in 0..n {
            let mut x = best_x.clone();
            x[i] += if x[i].abs() > 1e-3 { scale * x[i].abs().max(0.05) } else { scale * 0.05 };
            let fx = f(&x);
            simplex.push((x, fx));
        }
        let round_start = best_f;
        let mut round_converged = false;
        while iterations < max_iter {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let spread = simplex[n].1 - simplex[0].1;
            if spread.is_finite() && spread <= tol {
                round_converged = true;
                break;
            }
            iterations += 1;
            let mut centroid = vec![0.0; n];
            for (x, _) in &simplex[..n] {
                for (c, xi) in centroid.iter_mut().zip(x) {
                    *c += xi / nf;
                }
            }
            let along = |t: f64| -> Vec<f64> {
                centroid.iter().zip(&simplex[n].0).map(|(c, w)| c + t * (c - w)).collect()
            };
            let xr = along(alpha);
            let fr = f(&xr);
            if fr < simplex[0].1 {
                let xe = along(gamma);
                let fe = f(&xe);
                simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else if fr < simplex[n - 1].1 {
                simplex[n] = (xr, fr);
            } else {
                let (xc, fc) = if fr < simplex[n].1 {
                    let xc = along(rho);
                    let fc = f(&xc);
                    (xc, fc)
                } else {
                    let xc = along(-rho);
                    let fc = f(&xc);
                    (xc, fc)
                };
                if fc < fr.min(simplex[n].1) {
                    simplex[n] = (xc, fc);
                } else {
                    let x_best = simplex[0].0.clone();
                    for (x, fx) in simplex.iter_mut().skip(1) {
                        for (xi, bi) in x.iter_mut().zip(&x_best) {
                            *xi = bi + sigma * (*xi - bi);
                        }
                        *fx = f(x);
                    }
                }
            }
            let current = simplex.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
            history.push(current.min(best_f));
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if simplex[0].1 < best_f {
            best_x = simplex[0].0.clone();
            best_f = simplex[0].1;
        }
        if round_converged && round_start - best_f <= tol {
            converged = true;
            break;
        }
        scale = step;
    }
    Outcome { x: best_x, value: best_f, iterations, converged, history }
}

fn gradient_descent(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], tol: f64, max_iter: usize) -> Outcome {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    let mut history = Vec::new();
    let mut step = 1e-2;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let h = 1e-7;
        let grad: Vec<f64> = (0..n)
            .map(|i| {
                let mut a = x.clone();
                let mut b = x.clone();
                a[i] += h;
                b[i] -= h;
                (f(&a) - f(&b)) / (2.0 * h)
            })
            .collect();
        let g2: f64 = grad.iter().map(|g| g * g).sum();
        if !g2.is_finite() || g2 == 0.0 {
            converged = true;
            break;
        }
        let mut accepted = false;
        while step > 1e-16 {
            let trial: Vec<f64> = x.iter().zip(&grad).map(|(xi, g)| xi - step * g).collect();
            let ft = f(&trial);
            if ft <= fx - 1e-4 * step * g2 {
                let gain = fx - ft;
                x = trial;
                fx = ft;
                step *= 2.0;
                accepted = true;
                if gain <= tol {
                    converged = true;
                }
                break;
            }
            step *= 0.5;
        }
        history.push(fx);
        if !accepted || converged {
            converged = true;
            break;
        }
    }
    Outcome { x, value: fx, iterations, converged, history }
}

fn restart_rng(seed: u64, restart: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    rng
}

/// [`fit_choi_with`] under the default options and the given constraint and seed.
pub fn fit_choi(dataset: &TomographyDataset, constraint: Constraint, seed: u64) -> Result<FitResult> {
    fit_choi_with(dataset, &FitOptions { constraint, seed, ..FitOptions::default() })
}

/// Maximum-likelihood Choi matrix.
///
/// Restart 0 starts from the constrained linear-inversion estimate; later
/// restarts perturb it with seeded Gaussian noise. The best restart wins,
/// with ties going to the lower index.
pub fn fit_choi_with(dataset: &TomographyDataset, options: &FitOptions) -> Result<FitResult> {
    if options.restarts == 0 {
        return Err(Error::InvalidConfig("at least one restart is required".into()));
    }
    let linear = linear_inversion_superop(dataset)?;
    let problem = Problem::new(dataset, options)?;
    let x0 = problem.initial_point(&linear);
    let initial = problem.objective(&x0);
    let objective = |p: &[f64]| problem.objective(p);
    let dim = problem.dimension();

    let outcomes: Vec<Outcome> = (0..options.restarts)
        .into_par_iter()
        .map(|r| {
            let mut start = x0.clone();
            if r > 0 {
                let mut rng = restart_rng(options.seed, r);
                let noise = Normal::new(0.0, 0.15).expect("valid normal");
                for x in start.iter_mut().take(CHOI_PARAMS.min(dim)) {
                    *x += noise.sample(&mut rng);
                }
            }
            match options.optimizer {
                Optimizer::NelderMead => {
                    nelder_mead(&objective, &start, 0.2, options.tolerance, options.max_iterations)
                }
                Optimizer::GradientDescent => {
                    gradient_descent(&objective, &start, options.tolerance, options.max_iterations)
                }
            }
        })
        .collect();

    let mut best = 0;
    for (i, o) in outcomes.iter().enumerate() {
        if o.value < outcomes[best].value {
            best = i;
        }
    }
    let choi_of = |x: &[f64]| ChoiMatrix::from_matrix(problem.choi(x).unwrap_or_else(C4::zeros));
    let winner = &outcomes[best];
    if !winner.value.is_finite() {
        return Err(Error::InvalidDataset("objective is not finite at any restart".into()));
    }
    let choi = choi_of(&winner.x);
    let restart_choi_spread =
        outcomes.iter().map(|o| choi_of(&o.x).frobenius_distance(&choi)).fold(0.0, f64::max);

    let residuals = dataset
        .records
        .iter()
        .enumerate()
        .map(|(k, r)| Residual {
            label: r.label.clone(),
            predicted: problem.probabilities(&choi.apply_operator(&problem.input(&winner.x, k))),
            measured: problem.output_targets[k].measured,
        })
        .collect();

    Ok(FitResult {
        choi,
        neg_log_likelihood: winner.value,
        initial_neg_log_likelihood: initial,
        iterations: winner.iterations,
        converged: winner.converged,
        constraint: options.constraint,
        residuals,
        restart_values: outcomes.iter().map(|o| o.value).collect(),
        restart_choi_spread,
        best_restart: best,
        history: outcomes[best].history.clone(),
    })
}

/// Maximum-likelihood physical state for one projection record.
///
/// `ρ = T†T / max(1, Tr T†T)` with `T` lower-triangular, started from the
/// physical projection of the linear reconstruction.
pub fn fit_state_ml(record: &ProjectionRecord, theta: f64, shots: u64) -> Result<DensityMatrix> {
    let basis = AnalysisBasis::new(theta)?;
    let projectors = basis.projectors();
    let n = shots.max(1) as f64;
    let state = |p: &[f64]| -> C2 {
        let t = C2::new(c(p[0], 0.0), c(0.0, 0.0), c(p[2], p[3]), c(p[1], 0.0));
        let m = t.adjoint() * t;
        let tr = m.trace().re;
        if tr > 1.0 {
            m * c(1.0 / tr, 0.0)
        } else {
            m
        }
    };
    let objective = |p: &[f64]| -> f64 {
        let rho = state(p);
        (0..4).map(|i| kl_term(n, record.m[i], (projectors[i] * rho).trace().re)).sum()
    };

    let raw = reconstruct_linear(record, &basis)?;
    let start = physical_projection(&raw, raw.trace().clamp(1e-6, 1.0))?;
    let m = start.matrix();
    // T†T = m with T lower-triangular: t11 from m11, then t10 and t00.
    let t11 = m[(1, 1)].re.max(0.0).sqrt();
    let (t10, t00) = if t11 > 1e-12 {
        let t10 = m[(1, 0)] / t11;
        (t10, (m[(0, 0)].re - t10.norm_sqr()).max(0.0).sqrt())
    } else {
        (c(0.0, 0.0), m[(0, 0)].re.max(0.0).sqrt())
    };
    let x0 = [t00, t11, t10.re, t10.im];
    let out = nelder_mead(&objective, &x0, 0.1, 1e-12 * n.max(1.0), 20_000);
    let best = if out.value <= objective(&x0) { out.x } else { x0.to_vec() };
    DensityMatrix::new(HermitianMatrix::from_upper(&state(&best)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{dephasing_channel, rotation_channel, Axis};

    const THETA: f64 = 0.48;

    fn inputs() -> Vec<(&'static str, HermitianMatrix)> {
        let (s, co) = THETA.sin_cos();
        vec![
            ("ground", HermitianMatrix::new(1.0, 0.0, c(0.0, 0.0))),
            ("mixed", HermitianMatrix::new(co * co, s * s, c(0.0, 0.0))),
            ("real", HermitianMatrix::new(co * co, s * s, c(s * co, 0.0))),
            ("imaginary", HermitianMatrix::new(co * co, s * s, c(0.0, s * co))),
        ]
    }

    fn dataset(channel: &ChoiMatrix) -> TomographyDataset {
        TomographyDataset::noiseless(THETA, &inputs(), channel).unwrap()
    }

    #[test]
    fn linear_inversion_is_exact_without_noise() {
        for channel in [
            ChoiMatrix::identity(),
            dephasing_channel(0.64).unwrap(),
            rotation_channel(Axis::Y, 35.0),
        ] {
            let li = linear_inversion_superop(&dataset(&channel)).unwrap();
            assert!(li.frobenius_distance(&channel) < 1e-10);
        }
    }

    #[test]
    fn dependent_inputs_are_rejected() {
        let mut data = dataset(&ChoiMatrix::identity());
        data.records[3] = data.records[2].clone();
        assert!(matches!(data.validate(), Err(Error::IllConditioned { .. })));
        data.records.truncate(3);
        assert!(matches!(data.validate(), Err(Error::InvalidDataset(_))));
    }

    #[test]
    fn dataset_json_shape() {
        let data = dataset(&ChoiMatrix::identity());
        let v = serde_json::to_value(&data).unwrap();
        assert!(v["records"][0]["in"]["m"].is_array());
        assert!(v["records"][0]["out"]["m"].is_array());
        let minimal = r#"{"theta":0.5,"shots":10000,"records":[{"label":"ground","in":{"m":[1,0,0.77,0.77]},"out":{"m":[1,0,0.77,0.77]}}]}"#;
        let parsed: TomographyDataset = serde_json::from_str(minimal).unwrap();
        assert_eq!(parsed.shots, 10000);
        assert_eq!(parsed.records[0].label, "ground");
    }

    #[test]
    fn factor_round_trip() {
        let choi = *dephasing_channel(0.3).unwrap().matrix();
        let t = lower_factor(&choi);
        assert!(crate::linalg::frobenius4(&(t.adjoint() * t - choi)) < 1e-14);
        for i in 0..4 {
            for j in (i + 1)..4 {
                assert_eq!(t[(i, j)], c(0.0, 0.0));
            }
        }
        let back = t_from_params(&params_from_t(&t));
        assert!(crate::linalg::frobenius4(&(back - t)) < 1e-15);
    }

    #[test]
    fn noiseless_fit_matches_linear_inversion() {
        let channel = rotation_channel(Axis::Y, 35.0).compose(&dephasing_channel(0.8).unwrap());
        let data = dataset(&channel);
        for constraint in [Constraint::Cp, Constraint::CpTp, Constraint::CpTraceNonincreasing] {
            let fit = fit_choi(&data, constraint, 3).unwrap();
            assert!(fit.choi.frobenius_distance(&channel) < 1e-8, "{constraint}");
            assert!(fit.neg_log_likelihood < 1e-12);
            assert!(fit.choi.min_eigenvalue() >= -1e-7);
        }
    }

    #[test]
    fn trace_constraints_hold() {
        // A deliberately trace-increasing data set.
        let mut data = dataset(&ChoiMatrix::identity());
        for r in &mut data.records {
            r.output.m = r.output.m.map(|x| (x * 1.03).min(1.0));
        }
        data.shots = 1000;
        let tp = fit_choi(&data, Constraint::CpTp, 0).unwrap();
        assert!(tp.choi.tp_deviation() < 1e-6);
        let tn = fit_choi(&data, Constraint::CpTraceNonincreasing, 0).unwrap();
        assert!(tn.choi.is_trace_nonincreasing(1e-9));
    }

    #[test]
    fn gradient_descent_is_monotone() {
        let mut data = dataset(&dephasing_channel(0.6).unwrap());
        data.shots = 100;
        data.records[2].output.m[2] -= 0.03;
        let options = FitOptions {
            optimizer: Optimizer::GradientDescent,
            restarts: 2,
            max_iterations: 300,
            ..FitOptions::default()
        };
        let fit = fit_choi_with(&data, &options).unwrap();
        assert!(fit.history.windows(2).all(|w| w[1] <= w[0]));
        assert!(fit.neg_log_likelihood <= fit.initial_neg_log_likelihood);
    }

    #[test]
    fn state_ml_examples() {
        let basis = AnalysisBasis::new(0.5).unwrap();
        let ground = crate::states::project(&DensityMatrix::ground(), &basis);
        let rho = fit_state_ml(&ground, 0.5, 10_000).unwrap();
        assert!(rho.frobenius_distance(&DensityMatrix::ground()) < 1e-6);
        let rho = fit_state_ml(&ProjectionRecord::exact([0.5; 4]), 0.5, 10_000).unwrap();
        assert!(rho.frobenius_distance(&DensityMatrix::maximally_mixed()) < 1e-6);
    }

    #[test]
    fn state_ml_is_physical_on_unphysical_data() {
        // m3 too large for any state with these populations.
        let rec = ProjectionRecord::exact([0.6, 0.4, 0.99, 0.5]);
        let rho = fit_state_ml(&rec, 0.5, 1000).unwrap();
        assert!(rho.is_physical());
        assert!(!reconstruct_linear(&rec, &AnalysisBasis::new(0.5).unwrap()).unwrap().is_physical());
    }
}
