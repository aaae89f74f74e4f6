//! Small dense helpers shared by the state, channel and estimation modules.

use nalgebra::{Matrix2, Matrix4, SymmetricEigen, Vector4};
use num_complex::Complex64;

pub(crate) type C2 = Matrix2<Complex64>;
pub(crate) type C4 = Matrix4<Complex64>;

pub(crate) const I: Complex64 = Complex64::new(0.0, 1.0);

pub(crate) fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub(crate) fn pauli_x() -> C2 {
    C2::new(c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0))
}

pub(crate) fn pauli_y() -> C2 {
    C2::new(c(0.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(0.0, 0.0))
}

pub(crate) fn pauli_z() -> C2 {
    C2::new(c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0))
}

pub(crate) fn paulis() -> [C2; 3] {
    [pauli_x(), pauli_y(), pauli_z()]
}

/// Eigen-decomposition of a Hermitian 4×4 matrix, eigenvalues sorted descending.
pub(crate) fn eigh4(m: &C4) -> (Vector4<f64>, C4) {
    let herm = (m + m.adjoint()) * c(0.5, 0.0);
    let eig = SymmetricEigen::new(herm);
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut values = Vector4::zeros();
    let mut vectors = C4::zeros();
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = eig.eigenvalues[src];
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Eigen-decomposition of a Hermitian 2×2 matrix, eigenvalues sorted descending.
pub(crate) fn eigh2(m: &C2) -> ([f64; 2], C2) {
    let herm = (m + m.adjoint()) * c(0.5, 0.0);
    let eig = SymmetricEigen::new(herm);
    let (hi, lo) = if eig.eigenvalues[0] >= eig.eigenvalues[1] {
        (0, 1)
    } else {
        (1, 0)
    };
    let mut vectors = C2::zeros();
    vectors.set_column(0, &eig.eigenvectors.column(hi));
    vectors.set_column(1, &eig.eigenvectors.column(lo));
    ([eig.eigenvalues[hi], eig.eigenvalues[lo]], vectors)
}

/// Inverse square root of a positive-definite Hermitian 2×2 matrix.
pub(crate) fn inv_sqrt_psd2(m: &C2) -> Option<C2> {
    let (vals, vecs) = eigh2(m);
    if vals[1] <= 0.0 {
        return None;
    }
    let d = C2::from_diagonal(&nalgebra::Vector2::new(
        c(vals[0].powf(-0.5), 0.0),
        c(vals[1].powf(-0.5), 0.0),
    ));
    Some(vecs * d * vecs.adjoint())
}

/// Lower-triangular `L` with `L L† = m` for a positive-semidefinite Hermitian `m`.
///
/// Pivots below `tol` are treated as exact zeros, so rank-deficient inputs
/// factor without regularization.
pub(crate) fn cholesky_psd4(m: &C4, tol: f64) -> C4 {
    let mut l = C4::zeros();
    for j in 0..4 {
        let mut d = m[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if d <= tol {
            continue;
        }
        let ljj = d.sqrt();
        l[(j, j)] = c(ljj, 0.0);
        for i in (j + 1)..4 {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / ljj;
        }
    }
    l
}

pub(crate) fn frobenius2(m: &C2) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub(crate) fn frobenius4(m: &C4) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Row-major `re` / `im` arrays for JSON exchange.
pub(crate) fn split_re_im<const R: usize, const C: usize>(
    m: &nalgebra::SMatrix<Complex64, R, C>,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let re = (0..R).map(|i| (0..C).map(|j| m[(i, j)].re).collect()).collect();
    let im = (0..R).map(|i| (0..C).map(|j| m[(i, j)].im).collect()).collect();
    (re, im)
}

pub(crate) fn join_re_im<const R: usize, const C: usize>(
    re: &[Vec<f64>],
    im: &[Vec<f64>],
) -> Option<nalgebra::SMatrix<Complex64, R, C>> {
    if re.len() != R || im.len() != R {
        return None;
    }
    let mut m = nalgebra::SMatrix::<Complex64, R, C>::zeros();
    for i in 0..R {
        if re[i].len() != C || im[i].len() != C {
            return None;
        }
        for j in 0..C {
            m[(i, j)] = c(re[i][j], im[i][j]);
        }
    }
    Some(m)
}
