//! Fixed-size helpers for the one- and two-dimensional settings.
//!
//! Points, vectors and matrices are always stored with two slots; in one
//! dimension only the leading entry (or leading 1x1 block) is meaningful and
//! every routine here takes the active dimension explicitly.

use num_complex::Complex64;

pub type C64 = Complex64;
pub type Vec2 = [f64; 2];
pub type Mat2 = [[f64; 2]; 2];
pub type CVec2 = [C64; 2];

pub const ZERO2: Vec2 = [0.0; 2];
pub const ZERO_MAT: Mat2 = [[0.0; 2]; 2];
pub const IDENTITY: Mat2 = [[1.0, 0.0], [0.0, 1.0]];

#[inline]
pub fn dot(dim: usize, v: &Vec2, w: &Vec2) -> f64 {
    (0..dim).map(|k| v[k] * w[k]).sum()
}

#[inline]
pub fn norm_sq(dim: usize, v: &Vec2) -> f64 {
    dot(dim, v, v)
}

/// `m v` restricted to the active block.
#[inline]
pub fn mat_vec(dim: usize, m: &Mat2, v: &Vec2) -> Vec2 {
    let mut out = ZERO2;
    for (k, o) in out.iter_mut().enumerate().take(dim) {
        *o = (0..dim).map(|j| m[k][j] * v[j]).sum();
    }
    out
}

/// Bilinear form `v^T m w`.
#[inline]
pub fn bilinear(dim: usize, m: &Mat2, v: &Vec2, w: &Vec2) -> f64 {
    let mut s = 0.0;
    for k in 0..dim {
        for j in 0..dim {
            s += m[k][j] * v[k] * w[j];
        }
    }
    s
}

/// Complex bilinear form `v^T m w` (no conjugation).
#[inline]
pub fn bilinear_c(dim: usize, m: &Mat2, v: &CVec2, w: &CVec2) -> C64 {
    let mut s = C64::new(0.0, 0.0);
    for k in 0..dim {
        for j in 0..dim {
            s += v[k] * w[j] * m[k][j];
        }
    }
    s
}

/// Hermitian form `sum m_kj v_k conj(w_j)`.
#[inline]
pub fn hermitian(dim: usize, m: &Mat2, v: &CVec2, w: &CVec2) -> C64 {
    let mut s = C64::new(0.0, 0.0);
    for k in 0..dim {
        for j in 0..dim {
            s += v[k] * w[j].conj() * m[k][j];
        }
    }
    s
}

/// Frobenius product `m : n`.
#[inline]
pub fn frobenius(dim: usize, m: &Mat2, n: &Mat2) -> f64 {
    let mut s = 0.0;
    for k in 0..dim {
        for j in 0..dim {
            s += m[k][j] * n[k][j];
        }
    }
    s
}

/// Smallest eigenvalue and a unit eigenvector of the symmetric part of `m`.
pub fn min_eigen(dim: usize, m: &Mat2) -> (f64, Vec2) {
    if dim == 1 {
        return (m[0][0], [1.0, 0.0]);
    }
    let a = m[0][0];
    let d = m[1][1];
    let b = 0.5 * (m[0][1] + m[1][0]);
    let mean = 0.5 * (a + d);
    let radius = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let lam = mean - radius;
    // (m - lam I) v = 0
    let v = if b.abs() > 1e-300 {
        [b, lam - a]
    } else if a <= d {
        [1.0, 0.0]
    } else {
        [0.0, 1.0]
    };
    let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
    (lam, [v[0] / n, v[1] / n])
}

/// Largest entrywise asymmetry `|m_kj - m_jk|`.
pub fn asymmetry(dim: usize, m: &Mat2) -> f64 {
    if dim == 1 {
        0.0
    } else {
        (m[0][1] - m[1][0]).abs()
    }
}

/// Least-squares slope of `log(err)` against `log(h)`.
pub fn fitted_order(hs: &[f64], errs: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = hs.iter().zip(errs).map(|(h, e)| (h.ln(), e.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn min_eigen_of_symmetric_pair() {
        let (lam, v) = min_eigen(2, &[[2.0, 1.0], [1.0, 2.0]]);
        assert!((lam - 1.0).abs() < 1e-14);
        let mv = mat_vec(2, &[[2.0, 1.0], [1.0, 2.0]], &v);
        assert!((mv[0] - v[0]).abs() < 1e-14 && (mv[1] - v[1]).abs() < 1e-14);
    }

    #[test]
    fn min_eigen_of_indefinite_diagonal() {
        let (lam, v) = min_eigen(2, &[[1.0, 0.0], [0.0, -1.0]]);
        assert_eq!(lam, -1.0);
        assert_eq!(v, [0.0, 1.0]);
    }
}
