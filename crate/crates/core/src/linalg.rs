//! Small dense square matrices (`D×D`, D is the channel count) and a
//! Cholesky factorization for the symmetric positive-definite ones.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::math;

/// Row-major `dim×dim` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, data: vec![0.0; dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    pub fn scaled_identity(dim: usize, scale: f64) -> Self {
        let mut m = Self::zeros(dim);
        for d in 0..dim {
            m.data[d * dim + d] = scale;
        }
        m
    }

    pub fn from_rows(dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(invalid!("matrix data has {} entries, expected {}", data.len(), dim * dim));
        }
        Ok(Self { dim, data })
    }

    /// `1×1` matrix.
    pub fn scalar(value: f64) -> Self {
        Self { dim: 1, data: vec![value] }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.dim + c]
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { dim: self.dim, data: self.data.iter().map(|v| v * factor).collect() }
    }

    /// `self += scale · v vᵀ`
    pub fn add_outer(&mut self, v: &[f64], scale: f64) {
        for r in 0..self.dim {
            for c in 0..self.dim {
                self.data[r * self.dim + c] += scale * v[r] * v[c];
            }
        }
    }

    pub fn add_assign(&mut self, other: &SquareMatrix) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// `vᵀ M v`
    pub fn quadratic_form(&self, v: &[f64]) -> f64 {
        let mut acc = 0.0;
        for r in 0..self.dim {
            let mut row = 0.0;
            for c in 0..self.dim {
                row += self.data[r * self.dim + c] * v[c];
            }
            acc += v[r] * row;
        }
        acc
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Lower-triangular factor `L` with `M = L Lᵀ`. Only the lower triangle
    /// of `self` is read.
    pub fn cholesky(&self) -> Result<Cholesky> {
        let n = self.dim;
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut diag = self.data[j * n + j];
            for k in 0..j {
                diag -= l[j * n + k] * l[j * n + k];
            }
            if !(diag > 0.0) || !diag.is_finite() {
                return Err(Error::NotPositiveDefinite(alloc::format!(
                    "pivot {j} is {diag}"
                )));
            }
            let d = math::sqrt(diag);
            l[j * n + j] = d;
            for i in j + 1..n {
                let mut s = self.data[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / d;
            }
        }
        Ok(Cholesky { dim: n, lower: l })
    }
}

/// Cholesky factor of an SPD matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    dim: usize,
    lower: Vec<f64>,
}

impl Cholesky {
    /// `log |M| = 2 Σ log L_dd`
    pub fn log_det(&self) -> f64 {
        (0..self.dim).map(|d| math::ln(self.lower[d * self.dim + d])).sum::<f64>() * 2.0
    }

    /// Solves `M x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let l = &self.lower;
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                y[i] -= l[i * n + k] * y[k];
            }
            y[i] /= l[i * n + i];
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                y[i] -= l[k * n + i] * y[k];
            }
            y[i] /= l[i * n + i];
        }
        y
    }

    /// `M⁻¹`, symmetrized.
    pub fn inverse(&self) -> SquareMatrix {
        let n = self.dim;
        let mut inv = SquareMatrix::zeros(n);
        let mut e = vec![0.0; n];
        for c in 0..n {
            e.fill(0.0);
            e[c] = 1.0;
            let col = self.solve(&e);
            for r in 0..n {
                inv.data[r * n + c] = col[r];
            }
        }
        for r in 0..n {
            for c in r + 1..n {
                let avg = 0.5 * (inv.data[r * n + c] + inv.data[c * n + r]);
                inv.data[r * n + c] = avg;
                inv.data[c * n + r] = avg;
            }
        }
        inv
    }
}
