//! Characteristic values of `−ψ'' + s sin²z ψ = E ψ` at the zone center and
//! edge, from the cosine/sine parity sectors.
//!
//! Each sector is a symmetric tridiagonal matrix whose eigenvalues are found
//! by Sturm-sequence bisection, independent of the dense plane-wave solver.

const SIZE: usize = 48;

/// Number of eigenvalues of the tridiagonal `(diag, off)` below `x`.
fn count_below(diag: &[f64], off: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut d = 1.0;
    for i in 0..diag.len() {
        let o2 = if i == 0 { 0.0 } else { off[i - 1] * off[i - 1] };
        d = diag[i] - x - if i == 0 { 0.0 } else { o2 / d };
        if d == 0.0 {
            d = -1e-300;
        }
        if d < 0.0 {
            count += 1;
        }
    }
    count
}

fn kth_eigenvalue(diag: &[f64], off: &[f64], k: usize) -> f64 {
    let radius = off.iter().map(|o| 2.0 * o.abs()).fold(0.0, f64::max);
    let mut lo = diag.iter().copied().fold(f64::INFINITY, f64::min) - radius - 1.0;
    let mut hi = diag.iter().copied().fold(f64::NEG_INFINITY, f64::max) + radius + 1.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if count_below(diag, off, mid) > k {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

fn lowest(diag: Vec<f64>, off: Vec<f64>, n: usize) -> Vec<f64> {
    (0..n).map(|k| kth_eigenvalue(&diag, &off, k)).collect()
}

/// `s sin²z = s/2 − (s/2) cos 2z`; `cos 2z` couples `cos 2rz` to `cos 2(r±1)z`.
pub fn zone_center(depth: f64, n: usize) -> Vec<f64> {
    let s = depth;
    // Even sector {1, cos 2z, cos 4z, …}, symmetrized by normalizing the constant.
    let diag: Vec<f64> = (0..SIZE).map(|r| 4.0 * (r * r) as f64 + s / 2.0).collect();
    let mut off = vec![-s / 4.0; SIZE - 1];
    off[0] = -s / (2.0 * 2f64.sqrt());
    let mut all = lowest(diag, off, n);
    // Odd sector {sin 2z, sin 4z, …}.
    let diag: Vec<f64> = (1..=SIZE).map(|r| 4.0 * (r * r) as f64 + s / 2.0).collect();
    all.extend(lowest(diag, vec![-s / 4.0; SIZE - 1], n));
    all.sort_by(f64::total_cmp);
    all.truncate(n);
    all
}

/// Antiperiodic solutions, `cos (2r+1)z` and `sin (2r+1)z`.
pub fn zone_edge(depth: f64, n: usize) -> Vec<f64> {
    let s = depth;
    let base: Vec<f64> = (0..SIZE).map(|r| ((2 * r + 1) * (2 * r + 1)) as f64 + s / 2.0).collect();
    let mut even = base.clone();
    even[0] -= s / 4.0;
    let mut odd = base;
    odd[0] += s / 4.0;
    let mut all = lowest(even, vec![-s / 4.0; SIZE - 1], n);
    all.extend(lowest(odd, vec![-s / 4.0; SIZE - 1], n));
    all.sort_by(f64::total_cmp);
    all.truncate(n);
    all
}
