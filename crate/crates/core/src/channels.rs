//! Qubit channels in Choi, Kraus and Bloch-affine form.
//!
//! The Choi matrix is stored block-indexed: block `(i, j)` (rows `2i..2i+2`,
//! columns `2j..2j+2`) is `E(|i⟩⟨j|)`, so `E(ρ) = Σ_ij ρ_ij·C_ij`. A Kraus
//! operator `A` corresponds to the Choi vector `v[2i + a] = A[a][i]`, i.e.
//! column `i` of `A` is block `i` of `v`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3, Vector4};
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::linalg::{c, eigh2, eigh4, join_re_im, paulis, split_re_im, C2, C4, I};
use crate::states::{DensityMatrix, HermitianMatrix};
use crate::{Error, Result};

pub const CHOI_CONVENTION: &str = "block_ij_E_of_ketbra";
pub const CHOI_SCHEMA: &str = "latqpt.choi/v1";
pub const KRAUS_SCHEMA: &str = "latqpt.kraus/v1";

/// Eigenvalue floor for complete positivity.
pub const CP_TOLERANCE: f64 = 1e-7;

/// Kraus weights at or below this are dropped.
const NULL_WEIGHT: f64 = 1e-12;

fn ketbra(i: usize, j: usize) -> C2 {
    let mut m = C2::zeros();
    m[(i, j)] = c(1.0, 0.0);
    m
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChoiMatrix {
    m: C4,
}

impl ChoiMatrix {
    pub fn from_matrix(m: C4) -> Self {
        Self { m }
    }

    /// Choi matrix of a linear map on 2×2 operators.
    pub fn from_map(f: impl Fn(&C2) -> C2) -> Self {
        let mut m = C4::zeros();
        for i in 0..2 {
            for j in 0..2 {
                let block = f(&ketbra(i, j));
                m.fixed_view_mut::<2, 2>(2 * i, 2 * j).copy_from(&block);
            }
        }
        Self { m }
    }

    pub fn identity() -> Self {
        Self::from_map(|x| *x)
    }

    pub fn matrix(&self) -> &C4 {
        &self.m
    }

    /// `C_ij = E(|i⟩⟨j|)`.
    pub fn block(&self, i: usize, j: usize) -> C2 {
        self.m.fixed_view::<2, 2>(2 * i, 2 * j).into_owned()
    }

    /// `E(X) = Σ_ij X_ij C_ij` for any 2×2 operator.
    pub fn apply_operator(&self, x: &C2) -> C2 {
        let mut out = C2::zeros();
        for i in 0..2 {
            for j in 0..2 {
                out += self.block(i, j) * x[(i, j)];
            }
        }
        out
    }

    /// `self ∘ first`.
    pub fn compose(&self, first: &ChoiMatrix) -> ChoiMatrix {
        Self::from_map(|x| self.apply_operator(&first.apply_operator(x)))
    }

    pub fn eigenvalues(&self) -> [f64; 4] {
        let (v, _) = eigh4(&self.m);
        [v[0], v[1], v[2], v[3]]
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[3]
    }

    pub fn hermiticity_error(&self) -> f64 {
        crate::linalg::frobenius4(&(self.m - self.m.adjoint()))
    }

    pub fn is_cp(&self) -> bool {
        self.hermiticity_error() < 1e-9 && self.min_eigenvalue() >= -CP_TOLERANCE
    }

    /// `W_ij = Tr E(|i⟩⟨j|)`; the map is trace preserving iff `W = I`.
    pub fn output_partial_trace(&self) -> C2 {
        let mut w = C2::zeros();
        for i in 0..2 {
            for j in 0..2 {
                w[(i, j)] = self.block(i, j).trace();
            }
        }
        w
    }

    /// `‖W − I‖_F`.
    pub fn tp_deviation(&self) -> f64 {
        crate::linalg::frobenius2(&(self.output_partial_trace() - C2::identity()))
    }

    /// Largest eigenvalue of `W` no greater than one (within `tol`).
    pub fn is_trace_nonincreasing(&self, tol: f64) -> bool {
        eigh2(&self.output_partial_trace()).0[0] <= 1.0 + tol
    }

    pub fn frobenius_distance(&self, other: &ChoiMatrix) -> f64 {
        crate::linalg::frobenius4(&(self.m - other.m))
    }

    pub fn scaled(&self, s: f64) -> ChoiMatrix {
        Self { m: self.m * c(s, 0.0) }
    }
}

#[derive(Serialize, Deserialize)]
struct ChoiJson {
    #[serde(default)]
    schema: Option<String>,
    choi_convention: String,
    re: Vec<Vec<f64>>,
    im: Vec<Vec<f64>>,
}

impl Serialize for ChoiMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let (re, im) = split_re_im(&self.m);
        ChoiJson {
            schema: Some(CHOI_SCHEMA.to_string()),
            choi_convention: CHOI_CONVENTION.to_string(),
            re,
            im,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ChoiMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = ChoiJson::deserialize(d)?;
        if raw.choi_convention != CHOI_CONVENTION {
            return Err(serde::de::Error::custom(format!(
                "unsupported choi_convention {:?}",
                raw.choi_convention
            )));
        }
        let m = join_re_im(&raw.re, &raw.im)
            .ok_or_else(|| serde::de::Error::custom("expected 4x4 re/im arrays"))?;
        Ok(ChoiMatrix { m })
    }
}

/// `E(ρ)` for a physical input; fails if the map produces an unphysical output.
pub fn apply(choi: &ChoiMatrix, rho: &DensityMatrix) -> Result<DensityMatrix> {
    DensityMatrix::new(HermitianMatrix::from_upper(&choi.apply_operator(&rho.matrix())))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KrausSet {
    pub operators: Vec<C2>,
    /// Choi eigenvalues `κ_i`; `Tr(A_i†A_i) = κ_i`.
    pub weights: Vec<f64>,
}

/// Decomposition of a Kraus operator into its dominant `I` or `σz` term and a remainder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KrausTerm {
    /// `"I"` or `"Z"`.
    pub dominant: &'static str,
    pub coefficient: Complex64,
    /// `Tr[R†R]` of the remainder `R = A − coefficient·dominant`.
    pub remainder: f64,
}

impl KrausSet {
    pub fn new(operators: Vec<C2>) -> Self {
        let weights = operators.iter().map(|a| (a.adjoint() * a).trace().re).collect();
        let mut set = Self { operators, weights };
        set.sort();
        set
    }

    fn sort(&mut self) {
        let mut pairs: Vec<(C2, f64)> = self.operators.drain(..).zip(self.weights.drain(..)).collect();
        pairs.sort_by(|a, b| b.1.total_cmp(&a.1));
        for (a, w) in pairs {
            self.operators.push(a);
            self.weights.push(w);
        }
    }

    /// `Σ A_i†A_i`.
    pub fn completeness(&self) -> C2 {
        self.operators.iter().map(|a| a.adjoint() * a).sum()
    }

    pub fn is_trace_preserving(&self, tol: f64) -> bool {
        crate::linalg::frobenius2(&(self.completeness() - C2::identity())) <= tol
    }

    /// `Σ A ρ A†` for any 2×2 operator.
    pub fn apply_operator(&self, x: &C2) -> C2 {
        self.operators.iter().map(|a| a * x * a.adjoint()).sum()
    }

    /// Pauli components `½Tr(σ A)` for `σ ∈ {I, X, Y, Z}`.
    pub fn pauli_components(&self) -> Vec<[Complex64; 4]> {
        let [sx, sy, sz] = paulis();
        self.operators
            .iter()
            .map(|a| {
                let half = c(0.5, 0.0);
                [a.trace() * half, (sx * a).trace() * half, (sy * a).trace() * half, (sz * a).trace() * half]
            })
            .collect()
    }

    /// Each operator split as `coefficient·P + R` with `P` the larger of its
    /// `I` and `σz` projections.
    pub fn dominant_terms(&self) -> Vec<KrausTerm> {
        let sz = paulis()[2];
        self.operators
            .iter()
            .zip(self.pauli_components())
            .map(|(a, comp)| {
                let (dominant, coefficient, basis) = if comp[0].norm() >= comp[3].norm() {
                    ("I", comp[0], C2::identity())
                } else {
                    ("Z", comp[3], sz)
                };
                let r = a - basis * coefficient;
                KrausTerm { dominant, coefficient, remainder: (r.adjoint() * r).trace().re }
            })
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct ReIm {
    re: Vec<Vec<f64>>,
    im: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct KrausJson {
    #[serde(default)]
    schema: Option<String>,
    operators: Vec<ReIm>,
    weights: Vec<f64>,
}

impl Serialize for KrausSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let operators = self
            .operators
            .iter()
            .map(|a| {
                let (re, im) = split_re_im(a);
                ReIm { re, im }
            })
            .collect();
        KrausJson { schema: Some(KRAUS_SCHEMA.into()), operators, weights: self.weights.clone() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for KrausSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = KrausJson::deserialize(d)?;
        let operators = raw
            .operators
            .iter()
            .map(|o| join_re_im::<2, 2>(&o.re, &o.im))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| serde::de::Error::custom("expected 2x2 re/im arrays"))?;
        if operators.len() != raw.weights.len() {
            return Err(serde::de::Error::custom("operators and weights differ in length"));
        }
        Ok(KrausSet { operators, weights: raw.weights })
    }
}

/// Rotate `a` by a global phase so that its largest-magnitude entry is real positive.
fn fix_phase(a: &mut C2) {
    let mut best = 0usize;
    let mags: Vec<f64> = a.iter().map(|z| z.norm()).collect();
    let top = mags.iter().copied().fold(0.0, f64::max);
    // Column-major storage; visit entries in row-major order for the tie-break.
    for idx in [0usize, 2, 1, 3] {
        if mags[idx] >= top * (1.0 - 1e-9) {
            best = idx;
            break;
        }
    }
    let z = a[best];
    if z.norm() > 0.0 {
        *a *= z.conj() / z.norm();
    }
}

/// Canonical Kraus operators `A_i = √κ_i·k_i` from the Choi eigendecomposition.
///
/// Degenerate eigenspaces are re-spanned by projecting the standard basis in
/// order and orthonormalizing, so the output does not depend on the
/// eigensolver's choice of basis.
pub fn kraus_from_choi(choi: &ChoiMatrix) -> Result<KrausSet> {
    let (vals, vecs) = eigh4(choi.matrix());
    if vals[3] < -CP_TOLERANCE {
        return Err(Error::NotCompletelyPositive { min_eigenvalue: vals[3] });
    }
    let mut operators = Vec::new();
    let mut weights = Vec::new();
    let mut start = 0;
    while start < 4 {
        let mut end = start + 1;
        while end < 4 && (vals[start] - vals[end]).abs() <= 1e-9 * vals[start].abs().max(1.0) {
            end += 1;
        }
        let kappa = (vals.rows(start, end - start).sum() / (end - start) as f64).max(0.0);
        if kappa > NULL_WEIGHT {
            for v in cluster_basis(&vecs, start, end) {
                let mut a = C2::zeros();
                for i in 0..2 {
                    for r in 0..2 {
                        a[(r, i)] = v[2 * i + r] * kappa.sqrt();
                    }
                }
                fix_phase(&mut a);
                operators.push(a);
                weights.push(kappa);
            }
        }
        start = end;
    }
    Ok(KrausSet { operators, weights })
}

fn cluster_basis(vecs: &C4, start: usize, end: usize) -> Vec<Vector4<Complex64>> {
    let cols: Vec<Vector4<Complex64>> = (start..end).map(|k| vecs.column(k).into_owned()).collect();
    if cols.len() == 1 {
        return cols;
    }
    let projector: C4 = cols.iter().map(|v| v * v.adjoint()).sum();
    let mut basis: Vec<Vector4<Complex64>> = Vec::new();
    for k in 0..4 {
        let mut w = projector.column(k).into_owned();
        for b in &basis {
            let overlap = b.dotc(&w);
            w -= b * overlap;
        }
        let n = w.norm();
        if n > 1e-6 {
            basis.push(w / c(n, 0.0));
        }
        if basis.len() == cols.len() {
            break;
        }
    }
    basis
}

pub fn choi_from_kraus(kraus: &KrausSet) -> ChoiMatrix {
    let mut m = C4::zeros();
    for a in &kraus.operators {
        let mut v = Vector4::zeros();
        for i in 0..2 {
            for r in 0..2 {
                v[2 * i + r] = a[(r, i)];
            }
        }
        m += v * v.adjoint();
    }
    ChoiMatrix::from_matrix(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn unit(&self) -> [f64; 3] {
        match self {
            Axis::X => [1.0, 0.0, 0.0],
            Axis::Y => [0.0, 1.0, 0.0],
            Axis::Z => [0.0, 0.0, 1.0],
        }
    }

    fn pauli(&self) -> C2 {
        paulis()[*self as usize]
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        })
    }
}

impl FromStr for Axis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" | "X" => Ok(Axis::X),
            "y" | "Y" => Ok(Axis::Y),
            "z" | "Z" => Ok(Axis::Z),
            other => Err(Error::InvalidConfig(format!("unknown axis {other:?}"))),
        }
    }
}

/// Populations fixed, coherences scaled by `λ`.
pub fn dephasing_channel(lambda: f64) -> Result<ChoiMatrix> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidConfig(format!("coherence factor {lambda} outside [0, 1]")));
    }
    Ok(ChoiMatrix::from_map(|x| C2::new(x[(0, 0)], x[(0, 1)] * lambda, x[(1, 0)] * lambda, x[(1, 1)])))
}

pub fn unitary_channel(u: &C2) -> ChoiMatrix {
    ChoiMatrix::from_map(|x| u * x * u.adjoint())
}

/// `exp(−iφσ_a/2)`: a right-handed Bloch rotation by `angle` degrees about `axis`.
pub fn rotation_unitary(axis: Axis, angle_degrees: f64) -> C2 {
    let half = angle_degrees.to_radians() / 2.0;
    C2::identity() * c(half.cos(), 0.0) - axis.pauli() * (I * half.sin())
}

pub fn rotation_channel(axis: Axis, angle_degrees: f64) -> ChoiMatrix {
    unitary_channel(&rotation_unitary(axis, angle_degrees))
}

/// `r ↦ M r + t` acting on Bloch vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlochAffineMap {
    pub linear: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct AffineJson {
    linear: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl Serialize for BlochAffineMap {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut linear = [[0.0; 3]; 3];
        for (a, row) in linear.iter_mut().enumerate() {
            for (b, x) in row.iter_mut().enumerate() {
                *x = self.linear[(a, b)];
            }
        }
        let t = self.translation;
        AffineJson { linear, translation: [t[0], t[1], t[2]] }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for BlochAffineMap {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = AffineJson::deserialize(d)?;
        Ok(Self {
            linear: Matrix3::from_fn(|a, b| raw.linear[a][b]),
            translation: Vector3::from(raw.translation),
        })
    }
}

impl BlochAffineMap {
    pub fn apply(&self, r: [f64; 3]) -> [f64; 3] {
        let out = self.linear * Vector3::from(r) + self.translation;
        [out[0], out[1], out[2]]
    }

    /// Largest image norm over a sphere sample of `n` points.
    pub fn max_image_norm(&self, n: usize) -> f64 {
        sphere_samples(n)
            .into_iter()
            .map(|r| Vector3::from(self.apply(r)).norm())
            .fold(0.0, f64::max)
    }
}

/// `M_ab = ½Tr[σ_a E(σ_b)]`, `t_a = ½Tr[σ_a E(I)]`.
pub fn bloch_affine(choi: &ChoiMatrix) -> BlochAffineMap {
    let sigma = paulis();
    let image_of_identity = choi.apply_operator(&C2::identity());
    let images: Vec<C2> = sigma.iter().map(|s| choi.apply_operator(s)).collect();
    let linear = Matrix3::from_fn(|a, b| 0.5 * (sigma[a] * images[b]).trace().re);
    let translation = Vector3::from_fn(|a, _| 0.5 * (sigma[a] * image_of_identity).trace().re);
    BlochAffineMap { linear, translation }
}

/// Spiral (Fibonacci) sample of `n` unit vectors.
pub fn sphere_samples(n: usize) -> Vec<[f64; 3]> {
    let golden = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            [r * phi.cos(), r * phi.sin(), z]
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipsoidMetrics {
    /// Singular values of `M`, largest first.
    pub semi_axes: [f64; 3],
    pub rotation_axis: [f64; 3],
    /// Degrees in `[0, 180]`.
    pub rotation_angle: f64,
    pub translation_norm: f64,
    /// The orthogonal polar factor had determinant −1; the nearest rotation is reported.
    pub reflection: bool,
    /// `M` is singular; the rotation is not unique along the null direction.
    pub degenerate: bool,
}

/// Semi-axes and rotation of the image ellipsoid from the polar decomposition `M = R·P`.
///
/// For a zero rotation angle the axis is reported as `+z`.
pub fn ellipsoid_metrics(map: &BlochAffineMap) -> EllipsoidMetrics {
    let svd = map.linear.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut sv = [svd.singular_values[0], svd.singular_values[1], svd.singular_values[2]];
    sv.sort_by(|a, b| b.total_cmp(a));
    let degenerate = sv[2] < 1e-12;
    let mut r = u * v_t;
    let reflection = r.determinant() < 0.0;
    if reflection {
        // Flip the direction of the smallest singular value.
        let smallest = (0..3)
            .min_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]))
            .unwrap();
        let mut d = Matrix3::identity();
        d[(smallest, smallest)] = -1.0;
        r = u * d * v_t;
    }
    let (rotation_axis, rotation_angle) = axis_angle(&r);
    EllipsoidMetrics {
        semi_axes: sv,
        rotation_axis,
        rotation_angle,
        translation_norm: map.translation.norm(),
        reflection,
        degenerate,
    }
}

fn axis_angle(r: &Matrix3<f64>) -> ([f64; 3], f64) {
    let cos = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let angle = cos.acos();
    let anti = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    if anti.norm() > 1e-6 {
        // atan2 keeps full precision near 0 and 180 degrees.
        let angle = anti.norm().atan2(r.trace() - 1.0);
        let axis = anti / anti.norm();
        return ([axis[0], axis[1], axis[2]], angle.to_degrees());
    }
    if angle < 0.5 {
        return ([0.0, 0.0, 1.0], angle.to_degrees());
    }
    // Near 180°: R + I = 2 n nᵀ.
    let sym = (r + Matrix3::identity()) * 0.5;
    let k = (0..3).max_by(|&a, &b| sym[(a, a)].total_cmp(&sym[(b, b)])).unwrap();
    let mut axis = sym.column(k).into_owned();
    axis /= axis.norm();
    if axis[k] < 0.0 {
        axis = -axis;
    }
    ([axis[0], axis[1], axis[2]], angle.to_degrees())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub cp_min_eigenvalue: f64,
    /// `‖Tr_out C − I‖_F`.
    pub tp_deviation: f64,
    /// Mean lost population over inputs, `1 − Tr(Tr_out C)/2`.
    pub trace_loss: f64,
    /// `|⟨0|E(|0⟩⟨1|)|1⟩|`.
    pub coherence_retention: f64,
    /// Mean flip probability `(⟨1|E(|0⟩⟨0|)|1⟩ + ⟨0|E(|1⟩⟨1|)|0⟩)/2`.
    pub population_transfer: f64,
}

pub fn diagnostics(choi: &ChoiMatrix) -> Diagnostics {
    let w = choi.output_partial_trace();
    let m = choi.matrix();
    Diagnostics {
        cp_min_eigenvalue: choi.min_eigenvalue(),
        tp_deviation: choi.tp_deviation(),
        trace_loss: 1.0 - w.trace().re / 2.0,
        coherence_retention: m[(0, 3)].norm(),
        population_transfer: 0.5 * (m[(1, 1)].re + m[(2, 2)].re),
    }
}

/// CSV rows `x,y,z,x',y',z'` for `n` sphere samples and their images.
pub fn ellipsoid_csv(map: &BlochAffineMap, n: usize) -> String {
    let mut out = String::from("x,y,z,x',y',z'\n");
    for r in sphere_samples(n) {
        let s = map.apply(r);
        out.push_str(&format!(
            "{:.12},{:.12},{:.12},{:.12},{:.12},{:.12}\n",
            r[0], r[1], r[2], s[0], s[1], s[2]
        ));
    }
    out
}

/// Three orthographic projections (xz, yz, xy) of the sphere sample and its image.
pub fn ellipsoid_svg(map: &BlochAffineMap, n: usize) -> String {
    let panels = [("x-z", 0usize, 2usize), ("y-z", 1, 2), ("x-y", 0, 1)];
    let size = 220.0;
    let radius = 90.0;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n",
        3.0 * size,
        size + 20.0,
        3.0 * size,
        size + 20.0
    );
    let samples = sphere_samples(n);
    for (p, (title, a, b)) in panels.iter().enumerate() {
        let cx = size * (p as f64 + 0.5);
        let cy = size / 2.0 + 10.0;
        svg.push_str(&format!(
            "  <circle cx=\"{cx:.1}\" cy=\"{cy:.1}\" r=\"{radius:.1}\" fill=\"none\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>\n"
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{title}</text>\n",
            cx,
            size + 14.0
        ));
        for r in &samples {
            let s = map.apply(*r);
            svg.push_str(&format!(
                "  <circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"1.2\" fill=\"#c33\"/>\n",
                cx + radius * s[*a],
                cy - radius * s[*b]
            ));
        }
    }
    svg.push_str("</svg>\n");
    svg
}
