use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{KrfError, Result};

/// Highest derivative order along a single axis that [`DiffOp`] supports.
const MAX_AXIS_ORDER: usize = 4;

/// Uniform periodic grid on the unit torus `C^n / (Z^n + iZ^n)`.
///
/// Real axes are ordered `(x1, y1, x2, y2)` and stored row-major, so the
/// last axis varies fastest. Cloning is cheap: FFT plans and wavenumber
/// tables are shared.
#[derive(Clone)]
pub struct PeriodicGrid {
    inner: Arc<GridInner>,
}

struct GridInner {
    complex_dim: usize,
    resolution: usize,
    point_count: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// Angular wavenumber `2*pi*k` per FFT index, `k` signed.
    wavenumbers: Vec<f64>,
    /// `powers[m][k] = (i xi_k)^m`, zeroed at the Nyquist index for odd `m`.
    powers: Vec<Vec<Complex64>>,
}

impl PeriodicGrid {
    pub fn new(complex_dim: usize, resolution: usize) -> Result<Self> {
        if !(1..=2).contains(&complex_dim) {
            return Err(KrfError::InvalidGrid(format!(
                "complex dimension must be 1 or 2, got {complex_dim}"
            )));
        }
        if resolution < 8 || !resolution.is_power_of_two() {
            return Err(KrfError::InvalidGrid(format!(
                "resolution must be a power of two >= 8, got {resolution}"
            )));
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(resolution);
        let inverse = planner.plan_fft_inverse(resolution);
        let nyquist = resolution / 2;
        let wavenumbers: Vec<f64> = (0..resolution)
            .map(|k| {
                let signed = if k <= nyquist {
                    k as f64
                } else {
                    k as f64 - resolution as f64
                };
                2.0 * PI * signed
            })
            .collect();
        let powers = (0..=MAX_AXIS_ORDER)
            .map(|m| {
                wavenumbers
                    .iter()
                    .enumerate()
                    .map(|(k, &xi)| {
                        if m % 2 == 1 && k == nyquist {
                            Complex64::new(0.0, 0.0)
                        } else {
                            Complex64::new(0.0, xi).powu(m as u32)
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            inner: Arc::new(GridInner {
                complex_dim,
                resolution,
                point_count: resolution.pow(2 * complex_dim as u32),
                forward,
                inverse,
                wavenumbers,
                powers,
            }),
        })
    }

    pub fn complex_dim(&self) -> usize {
        self.inner.complex_dim
    }

    pub fn real_dim(&self) -> usize {
        2 * self.inner.complex_dim
    }

    pub fn resolution(&self) -> usize {
        self.inner.resolution
    }

    pub fn point_count(&self) -> usize {
        self.inner.point_count
    }

    pub fn cell_volume(&self) -> f64 {
        1.0 / self.inner.point_count as f64
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.inner.resolution as f64
    }

    fn stride(&self, axis: usize) -> usize {
        self.inner
            .resolution
            .pow((self.real_dim() - 1 - axis) as u32)
    }

    /// Integer index of point `p` along `axis`.
    pub fn axis_index(&self, p: usize, axis: usize) -> usize {
        (p / self.stride(axis)) % self.inner.resolution
    }

    /// Coordinate in `[0, 1)` of point `p` along `axis`.
    pub fn coordinate(&self, p: usize, axis: usize) -> f64 {
        self.axis_index(p, axis) as f64 / self.inner.resolution as f64
    }

    /// Signed angular wavenumber `2*pi*k` of FFT index `k`.
    pub fn wavenumber(&self, k: usize) -> f64 {
        self.inner.wavenumbers[k]
    }

    pub fn same_as(&self, other: &PeriodicGrid) -> bool {
        self == other
    }

    pub(crate) fn check_same(&self, other: &PeriodicGrid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(KrfError::GridMismatch(format!("{self:?} vs {other:?}")))
        }
    }

    /// Unnormalized forward transform of real samples.
    pub(crate) fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut data, &self.inner.forward);
        data
    }

    /// Inverse transform, normalized so that `inverse(forward(u)) == u`.
    pub(crate) fn inverse(&self, mut hat: Vec<Complex64>) -> Vec<Complex64> {
        self.transform(&mut hat, &self.inner.inverse);
        let scale = self.cell_volume();
        for v in hat.iter_mut() {
            *v *= scale;
        }
        hat
    }

    fn transform(&self, data: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        let n = self.inner.resolution;
        let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        let mut lines = Vec::new();
        for axis in 0..self.real_dim() {
            let stride = self.stride(axis);
            if stride == 1 {
                fft.process_with_scratch(data, &mut scratch);
                continue;
            }
            let block = n * stride;
            lines.resize(block, Complex64::new(0.0, 0.0));
            for chunk in data.chunks_exact_mut(block) {
                for j in 0..n {
                    let row = &chunk[j * stride..(j + 1) * stride];
                    for (r, v) in row.iter().enumerate() {
                        lines[r * n + j] = *v;
                    }
                }
                fft.process_with_scratch(&mut lines, &mut scratch);
                for j in 0..n {
                    let row = &mut chunk[j * stride..(j + 1) * stride];
                    for (r, v) in row.iter_mut().enumerate() {
                        *v = lines[r * n + j];
                    }
                }
            }
        }
    }

    /// Visits every Fourier mode with its per-axis FFT indices.
    pub(crate) fn for_each_mode(&self, mut visit: impl FnMut(usize, &[usize; 4])) {
        let n = self.inner.resolution;
        let d = self.real_dim();
        let mut idx = [0usize; 4];
        for p in 0..self.inner.point_count {
            visit(p, &idx);
            for axis in (0..d).rev() {
                idx[axis] += 1;
                if idx[axis] < n {
                    break;
                }
                idx[axis] = 0;
            }
        }
    }

    /// `sum_a xi_a^2` at a mode; even order, so Nyquist is kept.
    pub(crate) fn wavenumber_sq(&self, idx: &[usize; 4]) -> f64 {
        idx[..self.real_dim()]
            .iter()
            .map(|&k| self.inner.wavenumbers[k].powi(2))
            .sum()
    }

    pub(crate) fn symbol(&self, op: &DiffOp, idx: &[usize; 4]) -> Complex64 {
        let d = self.real_dim();
        op.terms
            .iter()
            .map(|(coef, orders)| {
                let mut value = *coef;
                for axis in 0..d {
                    let m = orders[axis] as usize;
                    if m > 0 {
                        value *= self.inner.powers[m][idx[axis]];
                    }
                }
                value
            })
            .sum()
    }
}

impl PartialEq for PeriodicGrid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
            || (self.inner.complex_dim == other.inner.complex_dim
                && self.inner.resolution == other.inner.resolution)
    }
}

impl fmt::Debug for PeriodicGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PeriodicGrid")
            .field("complex_dim", &self.inner.complex_dim)
            .field("resolution", &self.inner.resolution)
            .finish()
    }
}

/// Constant-coefficient differential operator, stored as a sum of
/// monomials `coef * prod_a d_a^{m_a}` over the real axes.
///
/// Odd-order factors vanish at the Nyquist mode of their axis.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffOp {
    terms: Vec<(Complex64, [u8; 4])>,
}

impl DiffOp {
    pub fn identity() -> Self {
        Self {
            terms: vec![(Complex64::new(1.0, 0.0), [0; 4])],
        }
    }

    /// `d / d(axis)` with axes ordered `(x1, y1, x2, y2)`.
    pub fn partial(axis: usize) -> Self {
        let mut orders = [0u8; 4];
        orders[axis] = 1;
        Self {
            terms: vec![(Complex64::new(1.0, 0.0), orders)],
        }
    }

    /// `d/dz_j = (d/dx_j - i d/dy_j) / 2`, zero-based `j`.
    pub fn dz(j: usize) -> Self {
        Self::partial(2 * j)
            .scale(Complex64::new(0.5, 0.0))
            .add(&Self::partial(2 * j + 1).scale(Complex64::new(0.0, -0.5)))
    }

    /// `d/dzbar_j = (d/dx_j + i d/dy_j) / 2`.
    pub fn dzbar(j: usize) -> Self {
        Self::partial(2 * j)
            .scale(Complex64::new(0.5, 0.0))
            .add(&Self::partial(2 * j + 1).scale(Complex64::new(0.0, 0.5)))
    }

    /// `d^2 / dz_j dzbar_k`.
    pub fn complex_hessian_entry(j: usize, k: usize) -> Self {
        Self::dz(j).compose(&Self::dzbar(k))
    }

    /// Flat real Laplacian over `real_dim` axes.
    pub fn laplacian(real_dim: usize) -> Self {
        let terms = (0..real_dim)
            .map(|axis| {
                let mut orders = [0u8; 4];
                orders[axis] = 2;
                (Complex64::new(1.0, 0.0), orders)
            })
            .collect();
        Self { terms }
    }

    pub fn scale(mut self, c: Complex64) -> Self {
        for (coef, _) in self.terms.iter_mut() {
            *coef *= c;
        }
        self
    }

    pub fn add(mut self, other: &DiffOp) -> Self {
        for (coef, orders) in &other.terms {
            match self.terms.iter_mut().find(|(_, o)| o == orders) {
                Some((c, _)) => *c += coef,
                None => self.terms.push((*coef, *orders)),
            }
        }
        self
    }

    /// Operator product (composition of commuting constant-coefficient operators).
    pub fn compose(&self, other: &DiffOp) -> Self {
        let mut out = DiffOp { terms: Vec::new() };
        for (ca, oa) in &self.terms {
            for (cb, ob) in &other.terms {
                let mut orders = [0u8; 4];
                for axis in 0..4 {
                    orders[axis] = oa[axis] + ob[axis];
                    assert!(
                        orders[axis] as usize <= MAX_AXIS_ORDER,
                        "derivative order along one axis exceeds {MAX_AXIS_ORDER}"
                    );
                }
                out = out.add(&DiffOp {
                    terms: vec![(ca * cb, orders)],
                });
            }
        }
        out.terms.retain(|(c, _)| c.norm() != 0.0);
        out
    }
}
