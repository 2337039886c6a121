//! Periodic pseudo-spectral toolbox.
//!
//! Every derivative is a Fourier multiplier on the grid's FFT; pointwise
//! products (determinants, contractions) are formed in physical space
//! without padding. Odd-order derivative factors vanish at the Nyquist mode
//! of their axis so real fields stay real and Hermitian fields stay
//! Hermitian.
//!
//! Volume forms are normalized so that the flat form `omega^n` is the
//! Lebesgue measure of the unit torus, i.e. `Vol(omega) = 1`.

mod grid;
mod matrix;
pub mod snapshot;

use num_complex::Complex64;

pub use grid::{DiffOp, PeriodicGrid};
pub use matrix::{Herm, HermitianMatrixField};

use crate::error::{KrfError, Result};

/// Condition number above which [`inverse_metric`] refuses to invert.
pub const MAX_CONDITION: f64 = 1e12;

/// Real-valued samples on a [`PeriodicGrid`]. Values are always finite.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: PeriodicGrid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: &PeriodicGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.point_count() {
            return Err(KrfError::InvalidArgument(format!(
                "expected {} samples, got {}",
                grid.point_count(),
                values.len()
            )));
        }
        if let Some(p) = values.iter().position(|v| !v.is_finite()) {
            return Err(KrfError::InvalidArgument(format!(
                "non-finite sample {} at point {p}",
                values[p]
            )));
        }
        Ok(Self {
            grid: grid.clone(),
            values,
        })
    }

    /// Internal constructor for values produced by this crate's operations.
    pub(crate) fn from_values(grid: &PeriodicGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.point_count());
        assert!(
            values.iter().all(|v| v.is_finite()),
            "operation produced a non-finite field"
        );
        Self {
            grid: grid.clone(),
            values,
        }
    }

    pub fn zeros(grid: &PeriodicGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &PeriodicGrid, c: f64) -> Self {
        Self::from_values(grid, vec![c; grid.point_count()])
    }

    /// Samples `f(coords)` where `coords[a]` is the coordinate along real axis `a`.
    pub fn from_fn(grid: &PeriodicGrid, f: impl Fn(&[f64]) -> f64) -> Self {
        let d = grid.real_dim();
        let mut coords = [0.0; 4];
        let values = (0..grid.point_count())
            .map(|p| {
                for (axis, c) in coords.iter_mut().enumerate().take(d) {
                    *c = grid.coordinate(p, axis);
                }
                f(&coords[..d])
            })
            .collect();
        Self::from_values(grid, values)
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_values(&self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        Ok(Self::from_values(
            &self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn inf(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Sup-norm distance to another field on the same grid.
    pub fn sup_distance(&self, other: &ScalarField) -> Result<f64> {
        self.grid.check_same(&other.grid)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    /// Grid average, which equals the integral against the flat volume.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn add_constant(&self, c: f64) -> Self {
        self.map(|v| v + c)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    /// Forward transform. The mean is removed before transforming and put
    /// back into the zero mode, so derivatives of `phi` and `phi + c` agree
    /// bitwise whenever the shift itself is exact in floating point.
    pub fn spectrum(&self) -> Spectrum {
        let mean = self.mean();
        let centred: Vec<f64> = self.values.iter().map(|v| v - mean).collect();
        let mut hat = self.grid.forward(&centred);
        hat[0] = Complex64::new(mean * self.values.len() as f64, 0.0);
        Spectrum {
            grid: self.grid.clone(),
            hat,
        }
    }
}

/// Forward transform of a real field, reusable across several derivatives.
#[derive(Clone, Debug)]
pub struct Spectrum {
    grid: PeriodicGrid,
    hat: Vec<Complex64>,
}

impl Spectrum {
    pub(crate) fn from_hat(grid: &PeriodicGrid, hat: Vec<Complex64>) -> Self {
        Self {
            grid: grid.clone(),
            hat,
        }
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub(crate) fn hat(&self) -> &[Complex64] {
        &self.hat
    }

    /// Physical-space samples of `op` applied to the field.
    pub fn apply(&self, op: &DiffOp) -> Vec<Complex64> {
        let grid = &self.grid;
        let mut out = self.hat.clone();
        grid.for_each_mode(|p, idx| out[p] *= grid.symbol(op, idx));
        grid.inverse(out)
    }

    /// Real part of [`Spectrum::apply`], for operators with real output.
    pub fn apply_real(&self, op: &DiffOp) -> ScalarField {
        let values = self.apply(op).into_iter().map(|c| c.re).collect();
        ScalarField::from_values(&self.grid, values)
    }

    /// Applies a radial multiplier `m(|xi|^2)` and returns the spectrum.
    pub fn radial_multiplier(&self, m: impl Fn(f64) -> f64) -> Spectrum {
        let grid = &self.grid;
        let mut out = self.hat.clone();
        grid.for_each_mode(|p, idx| out[p] *= m(grid.wavenumber_sq(idx)));
        Spectrum::from_hat(grid, out)
    }

    pub fn to_field(&self) -> ScalarField {
        let values = self
            .grid
            .inverse(self.hat.clone())
            .into_iter()
            .map(|c| c.re)
            .collect();
        ScalarField::from_values(&self.grid, values)
    }
}

/// `phi_{j kbar} = d_{z_j} d_{zbar_k} phi` at every point.
pub fn complex_hessian(phi: &ScalarField) -> HermitianMatrixField {
    hessian_from_spectrum(&phi.spectrum())
}

pub(crate) fn hessian_from_spectrum(spec: &Spectrum) -> HermitianMatrixField {
    let grid = spec.grid();
    let n = grid.complex_dim();
    let diag = (0..n)
        .map(|j| {
            spec.apply(&DiffOp::complex_hessian_entry(j, j))
                .into_iter()
                .map(|c| c.re)
                .collect()
        })
        .collect();
    let off = if n == 2 {
        spec.apply(&DiffOp::complex_hessian_entry(0, 1))
    } else {
        Vec::new()
    };
    HermitianMatrixField::from_parts(grid, diag, off)
}

/// Metric of `omega_t + i ddbar phi` as a matrix field (no positivity check).
pub fn kahler_metric(
    phi: &ScalarField,
    g_t: &HermitianMatrixField,
) -> Result<HermitianMatrixField> {
    phi.grid().check_same(g_t.grid())?;
    complex_hessian(phi).add(g_t)
}

/// Raw ratio `det(g_t + Hess phi) / det(g_t)`; may be non-positive.
pub fn volume_ratio(phi: &ScalarField, g_t: &HermitianMatrixField) -> Result<ScalarField> {
    let g_phi = kahler_metric(phi, g_t)?;
    Ok(ScalarField::from_values(
        phi.grid(),
        (0..phi.grid().point_count())
            .map(|p| g_phi.at(p).det() / g_t.at(p).det())
            .collect(),
    ))
}

/// Monge-Ampere ratio `omega_phi^n / omega_t^n`.
///
/// Fails with [`KrfError::PositivityLost`] at the first point where
/// `g_t + Hess phi` is not positive definite.
pub fn ma_ratio(phi: &ScalarField, g_t: &HermitianMatrixField) -> Result<ScalarField> {
    let g_phi = kahler_metric(phi, g_t)?;
    ratio_of_metrics(&g_phi, g_t)
}

pub(crate) fn ratio_of_metrics(
    g_phi: &HermitianMatrixField,
    g_t: &HermitianMatrixField,
) -> Result<ScalarField> {
    let grid = g_phi.grid();
    let mut values = Vec::with_capacity(grid.point_count());
    for p in 0..grid.point_count() {
        let a = g_phi.at(p);
        let ratio = a.det() / g_t.at(p).det();
        if a.min_eigenvalue() <= 0.0 || ratio <= 0.0 {
            return Err(KrfError::PositivityLost {
                point: p,
                value: ratio,
            });
        }
        values.push(ratio);
    }
    Ok(ScalarField::from_values(grid, values))
}

/// `tr_{omega_t} omega_phi = n + Delta_t phi`.
pub fn metric_trace(g_t: &HermitianMatrixField, phi: &ScalarField) -> Result<ScalarField> {
    let (point, eigenvalue) = g_t.min_eigenvalue();
    if eigenvalue <= 0.0 {
        return Err(KrfError::DegenerateMetric { point, eigenvalue });
    }
    let g_phi = kahler_metric(phi, g_t)?;
    Ok(trace_against(g_t, &g_phi))
}

/// `tr(a^{-1} b)` pointwise; `a` must be non-singular.
pub(crate) fn trace_against(a: &HermitianMatrixField, b: &HermitianMatrixField) -> ScalarField {
    let grid = a.grid();
    ScalarField::from_values(
        grid,
        (0..grid.point_count())
            .map(|p| a.at(p).inverse().trace_product(&b.at(p)))
            .collect(),
    )
}

/// Pointwise inverse of a positive definite field.
pub fn inverse_metric(g: &HermitianMatrixField) -> Result<HermitianMatrixField> {
    for p in 0..g.grid().point_count() {
        let [lo, hi] = g.at(p).eigenvalues();
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if !(condition <= MAX_CONDITION) {
            return Err(KrfError::IllConditionedMetric { point: p, condition });
        }
    }
    Ok(g.map(|a| a.inverse()))
}

/// `(d_{z_1} f, ..., d_{z_n} f)` at every point.
pub fn complex_gradient(f: &ScalarField) -> Vec<Vec<Complex64>> {
    let spec = f.spectrum();
    (0..f.grid().complex_dim())
        .map(|j| spec.apply(&DiffOp::dz(j)))
        .collect()
}

/// `|grad f|^2_g = 2 Re(g^{j kbar} d_j f d_kbar f)` where `g_inv` holds the
/// matrix inverse of `g`.
///
/// For `n = 1`, `g = I` this is half the Euclidean `|grad f|^2`.
pub fn gradient_norm_sq(f: &ScalarField, g_inv: &HermitianMatrixField) -> Result<ScalarField> {
    f.grid().check_same(g_inv.grid())?;
    let grad = complex_gradient(f);
    Ok(gradient_norm_sq_from(&grad, g_inv))
}

pub(crate) fn gradient_norm_sq_from(
    grad: &[Vec<Complex64>],
    g_inv: &HermitianMatrixField,
) -> ScalarField {
    let grid = g_inv.grid();
    let n = grid.complex_dim();
    let mut v = [Complex64::new(0.0, 0.0); 2];
    let values = (0..grid.point_count())
        .map(|p| {
            for j in 0..n {
                v[j] = grad[j][p];
            }
            (2.0 * g_inv.at(p).quadratic_form(&v[..n])).max(0.0)
        })
        .collect();
    ScalarField::from_values(grid, values)
}

/// `sum_p f(p) weight(p) cell_volume`; spectrally accurate for smooth
/// periodic integrands.
pub fn integrate(f: &ScalarField, weight: &ScalarField) -> f64 {
    assert!(f.grid() == weight.grid(), "integrate: grid mismatch");
    f.values
        .iter()
        .zip(&weight.values)
        .map(|(a, w)| a * w)
        .sum::<f64>()
        * f.grid().cell_volume()
}

/// `(integral |f|^p weight)^(1/p)`.
pub fn lp_norm(f: &ScalarField, p: f64, weight: &ScalarField) -> f64 {
    assert!(p >= 1.0, "lp_norm requires p >= 1");
    integrate(&f.map(|v| v.abs().powf(p)), weight).powf(1.0 / p)
}

/// Heat semigroup `exp(-tau |xi|^2)` applied to `phi`.
pub fn heat_smooth(phi: &ScalarField, tau: f64) -> ScalarField {
    assert!(tau >= 0.0, "heat_smooth requires tau >= 0");
    if tau == 0.0 {
        return phi.clone();
    }
    phi.spectrum()
        .radial_multiplier(|k2| (-tau * k2).exp())
        .to_field()
}

/// Zero-mean solution `u` of `d_a^2 u = f - mean(f)` along real axis `a`.
///
/// Intended for `f` that depends on `x_a` only; Fourier content constant in
/// `x_a` is dropped.
pub fn axis_antiderivative2(f: &ScalarField, axis: usize) -> ScalarField {
    let grid = f.grid();
    assert!(axis < grid.real_dim(), "axis {axis} out of range");
    let spec = f.spectrum();
    let mut hat = spec.hat().to_vec();
    grid.for_each_mode(|p, idx| {
        let xi = grid.wavenumber(idx[axis]);
        hat[p] = if xi == 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            hat[p] / (-xi * xi)
        };
    });
    Spectrum::from_hat(grid, hat).to_field()
}

/// Flat real Laplacian `sum_a d_a^2 phi`.
pub fn flat_laplacian(phi: &ScalarField) -> ScalarField {
    phi.spectrum()
        .apply_real(&DiffOp::laplacian(phi.grid().real_dim()))
}

/// Third-order quantity
/// `S = g^{i jbar} g^{k lbar} g^{m pbar} phi_{i lbar m} conj(phi_{j kbar p})`
/// with `g = g_t + Hess phi`, contracting plain spectral third derivatives.
pub fn third_order_s(phi: &ScalarField, g_t: &HermitianMatrixField) -> Result<ScalarField> {
    let grid = phi.grid().clone();
    let n = grid.complex_dim();
    let spec = phi.spectrum();
    let g_phi = hessian_from_spectrum(&spec).add(g_t)?;
    // Positivity check; the ratio itself is unused.
    ratio_of_metrics(&g_phi, g_t)?;

    // third[i][l][m] = d_{z_m} phi_{i lbar}
    let mut third = vec![vec![vec![Vec::new(); n]; n]; n];
    for (i, plane) in third.iter_mut().enumerate() {
        for (l, row) in plane.iter_mut().enumerate() {
            for (m, slot) in row.iter_mut().enumerate() {
                let op = DiffOp::dz(m).compose(&DiffOp::complex_hessian_entry(i, l));
                *slot = spec.apply(&op);
            }
        }
    }

    let values = (0..grid.point_count())
        .map(|p| {
            let inv = g_phi.at(p).inverse();
            // g^{a bbar} = (A^{-1})_{b a}
            let up = |a: usize, b: usize| inv.entry(b, a);
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        for l in 0..n {
                            for m in 0..n {
                                for q in 0..n {
                                    acc += up(i, j)
                                        * up(k, l)
                                        * up(m, q)
                                        * third[i][l][m][p]
                                        * third[j][k][q][p].conj();
                                }
                            }
                        }
                    }
                }
            }
            acc.re.max(0.0)
        })
        .collect();
    Ok(ScalarField::from_values(&grid, values))
}
