//! Truncated sine expansions: smooth real fields vanishing on the boundary.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::geometry::SpaceTimeGrid;
use crate::linalg::{Mat2, Vec2};

/// `f(x) = sum_m c_m prod_axis sin(k_axis pi (x_axis - lo_axis) / L_axis)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SineSeries {
    pub dim: usize,
    pub bounds: [[f64; 2]; 2],
    /// `(k_x, k_y, coefficient)`; `k_y` is ignored in one dimension.
    pub modes: Vec<(u32, u32, f64)>,
}

impl SineSeries {
    pub fn for_grid(grid: &SpaceTimeGrid, modes: Vec<(u32, u32, f64)>) -> Self {
        let mut bounds = [[0.0, 1.0]; 2];
        for (axis, b) in bounds.iter_mut().enumerate().take(grid.dim()) {
            *b = grid.domain.bounds(axis);
        }
        Self {
            dim: grid.dim(),
            bounds,
            modes,
        }
    }

    /// Single fundamental mode with the given amplitude.
    pub fn fundamental(grid: &SpaceTimeGrid, amplitude: f64) -> Self {
        Self::for_grid(grid, vec![(1, 1, amplitude)])
    }

    /// Random band-limited series with unit L2 norm on the domain.
    pub fn random<R: Rng + ?Sized>(grid: &SpaceTimeGrid, band_limit: u32, rng: &mut R) -> Self {
        let band = band_limit.max(1);
        let mut modes = Vec::new();
        let ky_max = if grid.dim() == 1 { 1 } else { band };
        for ky in 1..=ky_max {
            for kx in 1..=band {
                let c: f64 = rng.sample(StandardNormal);
                modes.push((kx, ky, c));
            }
        }
        let mut s = Self::for_grid(grid, modes);
        let n = s.l2_norm();
        if n > 0.0 {
            for m in &mut s.modes {
                m.2 /= n;
            }
        }
        s
    }

    /// Exact L2 norm (the product sines are orthogonal).
    pub fn l2_norm(&self) -> f64 {
        let vol: f64 = (0..self.dim)
            .map(|a| self.bounds[a][1] - self.bounds[a][0])
            .product();
        let half = 0.5f64.powi(self.dim as i32);
        let mut acc = std::collections::BTreeMap::new();
        for &(kx, ky, c) in &self.modes {
            let key = (kx, if self.dim == 1 { 1 } else { ky });
            *acc.entry(key).or_insert(0.0) += c;
        }
        (acc.values().map(|c| c * c).sum::<f64>() * vol * half).sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut s = self.clone();
        for m in &mut s.modes {
            m.2 *= factor;
        }
        s
    }

    fn phase(&self, axis: usize, k: u32, x: f64) -> (f64, f64) {
        let [lo, hi] = self.bounds[axis];
        let w = k as f64 * std::f64::consts::PI / (hi - lo);
        (w, w * (x - lo))
    }

    /// Value, gradient and Hessian.
    pub fn jet(&self, x: Vec2) -> (f64, Vec2, Mat2) {
        let mut v = 0.0;
        let mut g = [0.0; 2];
        let mut hm = [[0.0; 2]; 2];
        for &(kx, ky, c) in &self.modes {
            let (wx, px) = self.phase(0, kx, x[0]);
            let (sx, cx) = px.sin_cos();
            if self.dim == 1 {
                v += c * sx;
                g[0] += c * wx * cx;
                hm[0][0] -= c * wx * wx * sx;
            } else {
                let (wy, py) = self.phase(1, ky, x[1]);
                let (sy, cy) = py.sin_cos();
                v += c * sx * sy;
                g[0] += c * wx * cx * sy;
                g[1] += c * wy * sx * cy;
                hm[0][0] -= c * wx * wx * sx * sy;
                hm[1][1] -= c * wy * wy * sx * sy;
                hm[0][1] += c * wx * wy * cx * cy;
            }
        }
        hm[1][0] = hm[0][1];
        (v, g, hm)
    }

    pub fn value(&self, x: Vec2) -> f64 {
        self.jet(x).0
    }

    pub fn sample(&self, grid: &SpaceTimeGrid) -> Vec<f64> {
        (0..grid.n_nodes()).map(|p| self.value(grid.coord(p))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_grid, Face, SpatialDomain};
    use rand::SeedableRng;

    #[test]
    fn random_series_has_unit_norm_and_is_reproducible() {
        let d = SpatialDomain::interval(0.0, 2.0, &[Face::Right]).unwrap();
        let g = build_grid(d, 16, 16, 1.0).unwrap();
        let mut r1 = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut r2 = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let a = SineSeries::random(&g, 5, &mut r1);
        let b = SineSeries::random(&g, 5, &mut r2);
        assert_eq!(a, b);
        assert!((a.l2_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let d = SpatialDomain::rectangle([0.0, 1.0], [0.0, 2.0], &[Face::XHi]).unwrap();
        let g = build_grid(d, 8, 8, 1.0).unwrap();
        let s = SineSeries::for_grid(&g, vec![(1, 2, 0.7), (3, 1, -0.2)]);
        let x = [0.31, 0.77];
        let (_, grad, hess) = s.jet(x);
        let e = 1e-5;
        for a in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[a] += e;
            xm[a] -= e;
            let fd = (s.value(xp) - s.value(xm)) / (2.0 * e);
            assert!((fd - grad[a]).abs() < 1e-8);
            let (_, gp, _) = s.jet(xp);
            let (_, gm, _) = s.jet(xm);
            for b in 0..2 {
                assert!(((gp[b] - gm[b]) / (2.0 * e) - hess[a][b]).abs() < 1e-7);
            }
        }
    }
}
