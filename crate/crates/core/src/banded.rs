//! Complex banded matrices with an LU factorization without pivoting.
//!
//! The Crank-Nicolson step matrices `I - i dt/2 L` have Hermitian part close
//! to the identity, so elimination without row exchanges is stable for them.

use crate::error::{LabError, Result};
use crate::linalg::C64;

const CZERO: C64 = C64::new(0.0, 0.0);

#[derive(Clone, Debug)]
pub struct BandMatrix {
    n: usize,
    bw: usize,
    /// Row-major, `2 bw + 1` entries per row; entry `(i, j)` at `i * w + (j + bw - i)`.
    data: Vec<C64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![CZERO; n * (2 * bw + 1)],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        if i >= self.n || j >= self.n || j + self.bw < i || j > i + self.bw {
            None
        } else {
            Some(i * (2 * self.bw + 1) + j + self.bw - i)
        }
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.slot(i, j).map_or(CZERO, |s| self.data[s])
    }

    pub fn add(&mut self, i: usize, j: usize, v: C64) -> Result<()> {
        match self.slot(i, j) {
            Some(s) => {
                self.data[s] += v;
                Ok(())
            }
            None => Err(LabError::InvalidArgument(format!(
                "entry ({i}, {j}) outside band of width {}",
                self.bw
            ))),
        }
    }

    fn cols(&self, i: usize) -> std::ops::Range<usize> {
        i.saturating_sub(self.bw)..(i + self.bw + 1).min(self.n)
    }

    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        (0..self.n)
            .map(|i| self.cols(i).map(|j| self.get(i, j) * x[j]).sum())
            .collect()
    }

    /// `A^H x`.
    pub fn matvec_adjoint(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![CZERO; self.n];
        for i in 0..self.n {
            for j in self.cols(i) {
                y[j] += self.get(i, j).conj() * x[i];
            }
        }
        y
    }

    pub fn factor(&self) -> Result<BandLu> {
        let mut lu = self.clone();
        let n = self.n;
        for k in 0..n {
            let pivot = lu.get(k, k);
            if pivot.norm() < 1e-14 || !pivot.is_finite() {
                return Err(LabError::SingularStep { level: 0 });
            }
            let last = (k + self.bw).min(n - 1);
            for i in k + 1..=last {
                let s = lu.slot(i, k).expect("in band");
                let l = lu.data[s] / pivot;
                lu.data[s] = l;
                if l == CZERO {
                    continue;
                }
                for j in k + 1..=last {
                    let ukj = lu.get(k, j);
                    if let Some(t) = lu.slot(i, j) {
                        lu.data[t] -= l * ukj;
                    }
                }
            }
        }
        Ok(BandLu { lu })
    }
}

/// `A = L U` with unit lower `L`, stored in one band.
#[derive(Clone, Debug)]
pub struct BandLu {
    lu: BandMatrix,
}

impl BandLu {
    pub fn solve(&self, b: &[C64]) -> Vec<C64> {
        let m = &self.lu;
        let mut x = b.to_vec();
        for i in 0..m.n {
            let mut s = x[i];
            for j in i.saturating_sub(m.bw)..i {
                s -= m.get(i, j) * x[j];
            }
            x[i] = s;
        }
        for i in (0..m.n).rev() {
            let mut s = x[i];
            for j in i + 1..(i + m.bw + 1).min(m.n) {
                s -= m.get(i, j) * x[j];
            }
            x[i] = s / m.get(i, i);
        }
        x
    }

    /// Solves `A^H x = b` with the same factors (`U^H` then `L^H`).
    pub fn solve_adjoint(&self, b: &[C64]) -> Vec<C64> {
        let m = &self.lu;
        let mut x = b.to_vec();
        for i in 0..m.n {
            let mut s = x[i];
            for j in i.saturating_sub(m.bw)..i {
                s -= m.get(j, i).conj() * x[j];
            }
            x[i] = s / m.get(i, i).conj();
        }
        for i in (0..m.n).rev() {
            let mut s = x[i];
            for j in i + 1..(i + m.bw + 1).min(m.n) {
                s -= m.get(j, i).conj() * x[j];
            }
            x[i] = s;
        }
        x
    }
}
