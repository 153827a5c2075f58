//! Second-order finite-difference stencils on uniform lines, their transposes,
//! and mixed spatial derivatives built from them.

use std::ops::{Add, Mul};

use num_traits::Zero;

use crate::error::{LabError, Result};
use crate::geometry::SpaceTimeGrid;

/// Fornberg's recursion: `c[k][j]` is the weight of node `x[j]` in the
/// approximation of the `k`-th derivative at `z`.
pub fn fornberg(z: f64, x: &[f64], m: usize) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut c = vec![vec![0.0; n]; m + 1];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = x[0] - z;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = x[i] - z;
        for j in 0..i {
            let c3 = x[i] - x[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Derivative of a fixed order along one uniform line of points.
///
/// Interior rows are centered; rows too close to an end use the nearest
/// window of `order + 2` points. All rows are second-order accurate.
#[derive(Clone, Debug)]
pub struct AxisStencil {
    pub order: usize,
    rows: Vec<(usize, Vec<f64>)>,
}

impl AxisStencil {
    pub fn new(n_points: usize, h: f64, order: usize) -> Result<Self> {
        if order == 0 {
            return Ok(Self {
                order,
                rows: (0..n_points).map(|i| (i, vec![1.0])).collect(),
            });
        }
        let width = order + 2;
        if n_points < width {
            return Err(LabError::InvalidGrid(format!(
                "{n_points} points cannot carry a derivative of order {order}"
            )));
        }
        let half_c = if order <= 2 { 1 } else { 2 };
        let scale = h.powi(order as i32);
        let rows = (0..n_points)
            .map(|i| {
                let (start, len) = if i >= half_c && i + half_c < n_points {
                    (i - half_c, 2 * half_c + 1)
                } else {
                    let start = i.saturating_sub(width / 2).min(n_points - width);
                    (start, width)
                };
                let offsets: Vec<f64> = (0..len).map(|k| (start + k) as f64 - i as f64).collect();
                let w = fornberg(0.0, &offsets, order);
                (start, w[order].iter().map(|v| v / scale).collect())
            })
            .collect();
        Ok(Self { order, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `(start, weights)` for output point `i`.
    pub fn row(&self, i: usize) -> (usize, &[f64]) {
        let (s, w) = &self.rows[i];
        (*s, w)
    }

    /// Applies the stencil along lines `start + k * stride`, `k < len`.
    pub fn apply_strided<T>(&self, src: &[T], dst: &mut [T], starts: &[usize], stride: usize)
    where
        T: Copy + Zero + Add<Output = T> + Mul<f64, Output = T>,
    {
        for &s0 in starts {
            for (i, (start, w)) in self.rows.iter().enumerate() {
                let mut acc = T::zero();
                for (k, wk) in w.iter().enumerate() {
                    acc = acc + src[s0 + (start + k) * stride] * *wk;
                }
                dst[s0 + i * stride] = acc;
            }
        }
    }

    /// Transpose of [`apply_strided`](Self::apply_strided).
    pub fn transpose_strided<T>(&self, src: &[T], dst: &mut [T], starts: &[usize], stride: usize)
    where
        T: Copy + Zero + Add<Output = T> + Mul<f64, Output = T>,
    {
        for &s0 in starts {
            for i in 0..self.rows.len() {
                dst[s0 + i * stride] = T::zero();
            }
            for (i, (start, w)) in self.rows.iter().enumerate() {
                let v = src[s0 + i * stride];
                for (k, wk) in w.iter().enumerate() {
                    let p = s0 + (start + k) * stride;
                    dst[p] = dst[p] + v * *wk;
                }
            }
        }
    }
}

fn line_starts(grid: &SpaceTimeGrid, axis: usize) -> (Vec<usize>, usize) {
    let n = grid.nodes_per_axis();
    if grid.dim() == 1 {
        return (vec![0], 1);
    }
    if axis == 0 {
        ((0..n).map(|k| k * n).collect(), 1)
    } else {
        ((0..n).collect(), n)
    }
}

/// Multi-indices `alpha` with `|alpha| <= max_order` for the grid dimension.
pub fn multi_indices(dim: usize, max_order: usize) -> Vec<[usize; 2]> {
    let mut out = Vec::new();
    for total in 0..=max_order {
        if dim == 1 {
            out.push([total, 0]);
        } else {
            for ax in (0..=total).rev() {
                out.push([ax, total - ax]);
            }
        }
    }
    out
}

/// Spatial derivative operators for a grid, one stencil per axis and order.
#[derive(Clone, Debug)]
pub struct SpatialDerivatives {
    dim: usize,
    n_nodes: usize,
    stencils: Vec<Vec<AxisStencil>>,
    lines: Vec<(Vec<usize>, usize)>,
}

impl SpatialDerivatives {
    pub fn new(grid: &SpaceTimeGrid, max_order: usize) -> Result<Self> {
        let dim = grid.dim();
        let mut stencils = Vec::new();
        let mut lines = Vec::new();
        for axis in 0..dim {
            stencils.push(
                (0..=max_order)
                    .map(|m| AxisStencil::new(grid.nodes_per_axis(), grid.h(axis), m))
                    .collect::<Result<Vec<_>>>()?,
            );
            lines.push(line_starts(grid, axis));
        }
        Ok(Self {
            dim,
            n_nodes: grid.n_nodes(),
            stencils,
            lines,
        })
    }

    pub fn axis<T>(&self, v: &[T], axis: usize, order: usize) -> Vec<T>
    where
        T: Copy + Zero + Add<Output = T> + Mul<f64, Output = T>,
    {
        if order == 0 {
            return v.to_vec();
        }
        let mut out = vec![T::zero(); self.n_nodes];
        let (starts, stride) = &self.lines[axis];
        self.stencils[axis][order].apply_strided(v, &mut out, starts, *stride);
        out
    }

    pub fn axis_transpose<T>(&self, v: &[T], axis: usize, order: usize) -> Vec<T>
    where
        T: Copy + Zero + Add<Output = T> + Mul<f64, Output = T>,
    {
        if order == 0 {
            return v.to_vec();
        }
        let mut out = vec![T::zero(); self.n_nodes];
        let (starts, stride) = &self.lines[axis];
        self.stencils[axis][order].transpose_strided(v, &mut out, starts, *stride);
        out
    }

    /// `D^alpha v`, applied axis by axis.
    pub fn apply<T>(&self, v: &[T], alpha: [usize; 2]) -> Vec<T>
    where
        T: Copy + Zero + Add<Output = T> + Mul<f64, Output = T>,
    {
        let mut out = self.axis(v, 0, alpha[0]);
        if self.dim == 2 {
            out = self.axis(&out, 1, alpha[1]);
        }
        out
    }

    pub fn apply_transpose<T>(&self, v: &[T], alpha: [usize; 2]) -> Vec<T>
    where
        T: Copy + Zero + Add<Output = T> + Mul<f64, Output = T>,
    {
        let mut out = v.to_vec();
        if self.dim == 2 {
            out = self.axis_transpose(&out, 1, alpha[1]);
        }
        self.axis_transpose(&out, 0, alpha[0])
    }

    /// Gradient, one vector per axis.
    pub fn gradient<T>(&self, v: &[T]) -> Vec<Vec<T>>
    where
        T: Copy + Zero + Add<Output = T> + Mul<f64, Output = T>,
    {
        (0..self.dim).map(|a| self.axis(v, a, 1)).collect()
    }

    /// Second derivatives `d_l d_j v`, indexed `[l][j]`.
    pub fn hessian<T>(&self, v: &[T]) -> Vec<Vec<Vec<T>>>
    where
        T: Copy + Zero + Add<Output = T> + Mul<f64, Output = T>,
    {
        if self.dim == 1 {
            return vec![vec![self.axis(v, 0, 2)]];
        }
        let xx = self.apply(v, [2, 0]);
        let yy = self.apply(v, [0, 2]);
        let xy = self.apply(v, [1, 1]);
        vec![vec![xx, xy.clone()], vec![xy, yy]]
    }
}

/// First derivative in time of level-major data with `width` values per level.
pub fn time_derivative<T>(data: &[T], n_levels: usize, width: usize, dt: f64) -> Result<Vec<T>>
where
    T: Copy + Zero + Add<Output = T> + Mul<f64, Output = T>,
{
    let st = AxisStencil::new(n_levels, dt, 1)?;
    let starts: Vec<usize> = (0..width).collect();
    let mut out = vec![T::zero(); data.len()];
    st.apply_strided(data, &mut out, &starts, width);
    Ok(out)
}

pub fn time_derivative_transpose<T>(data: &[T], n_levels: usize, width: usize, dt: f64) -> Result<Vec<T>>
where
    T: Copy + Zero + Add<Output = T> + Mul<f64, Output = T>,
{
    let st = AxisStencil::new(n_levels, dt, 1)?;
    let starts: Vec<usize> = (0..width).collect();
    let mut out = vec![T::zero(); data.len()];
    st.transpose_strided(data, &mut out, &starts, width);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_grid, Face, SpatialDomain};

    #[test]
    fn fornberg_reproduces_classic_weights() {
        let c = fornberg(0.0, &[-1.0, 0.0, 1.0], 2);
        assert_eq!(c[1], vec![-0.5, 0.0, 0.5]);
        assert_eq!(c[2], vec![1.0, -2.0, 1.0]);
        let one_sided = fornberg(0.0, &[0.0, 1.0, 2.0], 1);
        assert_eq!(one_sided[1], vec![-1.5, 2.0, -0.5]);
    }

    #[test]
    fn stencils_are_exact_on_low_degree_polynomials() {
        let n = 12;
        let h = 0.1;
        let check = |f: &dyn Fn(f64) -> f64, d: &dyn Fn(f64) -> f64, order: usize| {
            let v: Vec<f64> = (0..n).map(|i| f(i as f64 * h)).collect();
            let st = AxisStencil::new(n, h, order).unwrap();
            let mut out = vec![0.0; n];
            st.apply_strided(&v, &mut out, &[0], 1);
            for (i, o) in out.iter().enumerate() {
                assert!((o - d(i as f64 * h)).abs() < 1e-8, "order {order} row {i}");
            }
        };
        check(&|x| 1.0 + x - 2.0 * x * x, &|x| 1.0 - 4.0 * x, 1);
        check(&|x| 1.0 + x - 2.0 * x * x, &|_| -4.0, 2);
        check(&|x| x * x * x - x * x, &|_| 6.0, 3);
        check(&|x| x * x * x * x, &|x| 24.0 * x, 3);
    }

    #[test]
    fn transpose_matches_inner_product() {
        let st = AxisStencil::new(10, 0.3, 3).unwrap();
        let u: Vec<f64> = (0..10).map(|i| (i as f64 * 0.7).sin()).collect();
        let r: Vec<f64> = (0..10).map(|i| (i as f64 * 1.3).cos()).collect();
        let mut du = vec![0.0; 10];
        let mut dtr = vec![0.0; 10];
        st.apply_strided(&u, &mut du, &[0], 1);
        st.transpose_strided(&r, &mut dtr, &[0], 1);
        let a: f64 = du.iter().zip(&r).map(|(x, y)| x * y).sum();
        let b: f64 = u.iter().zip(&dtr).map(|(x, y)| x * y).sum();
        assert!((a - b).abs() < 1e-10 * a.abs().max(1.0));
    }

    #[test]
    fn mixed_derivative_of_product() {
        let d = SpatialDomain::rectangle([0.0, 1.0], [0.0, 2.0], &[Face::XHi]).unwrap();
        let grid = build_grid(d, 16, 8, 1.0).unwrap();
        let ops = SpatialDerivatives::new(&grid, 3).unwrap();
        let v: Vec<f64> = (0..grid.n_nodes())
            .map(|p| {
                let x = grid.coord(p);
                x[0] * x[0] * x[1]
            })
            .collect();
        let dxy = ops.apply(&v, [1, 1]);
        let dxxy = ops.apply(&v, [2, 1]);
        for p in 0..grid.n_nodes() {
            let x = grid.coord(p);
            assert!((dxy[p] - 2.0 * x[0]).abs() < 1e-9);
            assert!((dxxy[p] - 2.0).abs() < 1e-7);
        }
        assert_eq!(multi_indices(2, 3).len(), 10);
        assert_eq!(multi_indices(1, 3).len(), 4);
    }
}
