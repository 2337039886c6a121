use num_complex::Complex64;

use super::grid::PeriodicGrid;
use crate::error::{KrfError, Result};

/// A 1x1 or 2x2 Hermitian matrix at a single grid point.
///
/// `off` is the `(0, 1)` entry; `(1, 0)` is its conjugate. Unused slots of
/// the 1x1 case stay zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Herm {
    pub dim: usize,
    pub diag: [f64; 2],
    pub off: Complex64,
}

impl Herm {
    pub fn identity(dim: usize) -> Self {
        let mut diag = [0.0; 2];
        diag[..dim].fill(1.0);
        Self {
            dim,
            diag,
            off: Complex64::new(0.0, 0.0),
        }
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            diag: [0.0; 2],
            off: Complex64::new(0.0, 0.0),
        }
    }

    pub fn entry(&self, i: usize, j: usize) -> Complex64 {
        match (i, j) {
            (0, 0) => Complex64::new(self.diag[0], 0.0),
            (1, 1) => Complex64::new(self.diag[1], 0.0),
            (0, 1) => self.off,
            (1, 0) => self.off.conj(),
            _ => panic!("index ({i}, {j}) out of range"),
        }
    }

    pub fn det(&self) -> f64 {
        match self.dim {
            1 => self.diag[0],
            _ => self.diag[0] * self.diag[1] - self.off.norm_sqr(),
        }
    }

    pub fn trace(&self) -> f64 {
        self.diag[..self.dim].iter().sum()
    }

    pub fn add(&self, other: &Herm) -> Herm {
        Herm {
            dim: self.dim,
            diag: [self.diag[0] + other.diag[0], self.diag[1] + other.diag[1]],
            off: self.off + other.off,
        }
    }

    pub fn scale(&self, s: f64) -> Herm {
        Herm {
            dim: self.dim,
            diag: [self.diag[0] * s, self.diag[1] * s],
            off: self.off * s,
        }
    }

    /// Eigenvalues in ascending order (both slots equal for `dim == 1`).
    pub fn eigenvalues(&self) -> [f64; 2] {
        match self.dim {
            1 => [self.diag[0], self.diag[0]],
            _ => {
                let mean = 0.5 * (self.diag[0] + self.diag[1]);
                let half_gap = 0.5 * (self.diag[0] - self.diag[1]);
                let radius = half_gap.hypot(self.off.norm());
                [mean - radius, mean + radius]
            }
        }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    /// Plain matrix inverse; caller guarantees non-singularity.
    pub fn inverse(&self) -> Herm {
        match self.dim {
            1 => Herm {
                dim: 1,
                diag: [1.0 / self.diag[0], 0.0],
                off: Complex64::new(0.0, 0.0),
            },
            _ => {
                let det = self.det();
                Herm {
                    dim: 2,
                    diag: [self.diag[1] / det, self.diag[0] / det],
                    off: -self.off / det,
                }
            }
        }
    }

    /// `tr(self * other)`, real for Hermitian factors.
    pub fn trace_product(&self, other: &Herm) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                acc += (self.entry(i, j) * other.entry(j, i)).re;
            }
        }
        acc
    }

    /// `v^H A v`.
    pub fn quadratic_form(&self, v: &[Complex64]) -> f64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..self.dim {
            for j in 0..self.dim {
                acc += v[i].conj() * self.entry(i, j) * v[j];
            }
        }
        acc.re
    }

    pub fn matmul_entry(&self, other: &Herm, i: usize, j: usize) -> Complex64 {
        (0..self.dim)
            .map(|k| self.entry(i, k) * other.entry(k, j))
            .sum()
    }
}

/// One Hermitian matrix per grid point, stored as `n` real diagonal arrays
/// plus the `(0, 1)` off-diagonal array when `n == 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianMatrixField {
    grid: PeriodicGrid,
    diag: Vec<Vec<f64>>,
    off: Vec<Complex64>,
}

impl HermitianMatrixField {
    pub fn identity(grid: &PeriodicGrid) -> Self {
        Self::constant(grid, Herm::identity(grid.complex_dim()))
    }

    pub fn constant(grid: &PeriodicGrid, value: Herm) -> Self {
        let n = grid.complex_dim();
        let m = grid.point_count();
        Self {
            grid: grid.clone(),
            diag: (0..n).map(|i| vec![value.diag[i]; m]).collect(),
            off: if n == 2 { vec![value.off; m] } else { Vec::new() },
        }
    }

    pub(crate) fn from_parts(
        grid: &PeriodicGrid,
        diag: Vec<Vec<f64>>,
        off: Vec<Complex64>,
    ) -> Self {
        debug_assert_eq!(diag.len(), grid.complex_dim());
        Self {
            grid: grid.clone(),
            diag,
            off,
        }
    }

    pub fn from_fn(grid: &PeriodicGrid, mut f: impl FnMut(usize) -> Herm) -> Self {
        let mut out = Self::constant(grid, Herm::zero(grid.complex_dim()));
        for p in 0..grid.point_count() {
            out.set(p, f(p));
        }
        out
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn at(&self, p: usize) -> Herm {
        let dim = self.dim();
        let mut diag = [0.0; 2];
        for (i, d) in self.diag.iter().enumerate() {
            diag[i] = d[p];
        }
        Herm {
            dim,
            diag,
            off: if dim == 2 {
                self.off[p]
            } else {
                Complex64::new(0.0, 0.0)
            },
        }
    }

    pub fn set(&mut self, p: usize, value: Herm) {
        for (i, d) in self.diag.iter_mut().enumerate() {
            d[p] = value.diag[i];
        }
        if self.dim() == 2 {
            self.off[p] = value.off;
        }
    }

    pub fn add(&self, other: &HermitianMatrixField) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        Ok(self.zip_map(other, |a, b| a.add(&b)))
    }

    pub fn map(&self, mut f: impl FnMut(Herm) -> Herm) -> Self {
        Self::from_fn(&self.grid, |p| f(self.at(p)))
    }

    pub(crate) fn zip_map(
        &self,
        other: &HermitianMatrixField,
        mut f: impl FnMut(Herm, Herm) -> Herm,
    ) -> Self {
        Self::from_fn(&self.grid, |p| f(self.at(p), other.at(p)))
    }

    /// Largest `|A - A^H|` entry; identically zero by construction of the storage.
    pub fn hermitian_defect(&self) -> f64 {
        (0..self.grid.point_count())
            .map(|p| {
                let a = self.at(p);
                let mut worst: f64 = 0.0;
                for i in 0..a.dim {
                    for j in 0..a.dim {
                        worst = worst.max((a.entry(i, j) - a.entry(j, i).conj()).norm());
                    }
                }
                worst
            })
            .fold(0.0, f64::max)
    }

    /// Smallest eigenvalue over all points, with its location.
    pub fn min_eigenvalue(&self) -> (usize, f64) {
        (0..self.grid.point_count())
            .map(|p| (p, self.at(p).min_eigenvalue()))
            .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc })
    }

    pub fn determinants(&self) -> Vec<f64> {
        (0..self.grid.point_count()).map(|p| self.at(p).det()).collect()
    }

    pub(crate) fn check_positive(&self, t: f64) -> Result<()> {
        let (point, eigenvalue) = self.min_eigenvalue();
        if eigenvalue > 0.0 {
            Ok(())
        } else {
            Err(KrfError::GeometryDegenerate {
                t,
                point,
                eigenvalue,
            })
        }
    }
}
