//! Flat-torus model geometry and the synthetic background family
//! `omega_t = omega + t i ddbar rho`.
//!
//! On the flat torus `Ric(omega_t) = -i ddbar log det g_t` and
//! `d omega_t / dt = i ddbar rho`, so the Ricci potential is
//! `h_t = rho - log det g_t + c_t` with `c_t` fixed by
//! `integral (e^h - 1) omega_t^n = 0`.

use std::f64::consts::PI;

use crate::error::{KrfError, Result};
use crate::fields::{
    complex_hessian, integrate, HermitianMatrixField, PeriodicGrid, ScalarField,
};

pub const DEFAULT_MARGIN: f64 = 0.1;
pub const DEFAULT_T_MAX: f64 = 1.0;

/// `C^n / (Z^n + i Z^n)` with the flat metric `omega = i sum dz^j ^ dzbar^j`.
///
/// Volume forms are normalized so `omega^n` is Lebesgue measure, giving
/// `Vol(omega) = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TorusGeometry {
    complex_dim: usize,
}

impl TorusGeometry {
    pub fn new(complex_dim: usize) -> Result<Self> {
        if !(1..=2).contains(&complex_dim) {
            return Err(KrfError::InvalidGrid(format!(
                "complex dimension must be 1 or 2, got {complex_dim}"
            )));
        }
        Ok(Self { complex_dim })
    }

    pub fn complex_dim(&self) -> usize {
        self.complex_dim
    }

    pub fn real_dim(&self) -> usize {
        2 * self.complex_dim
    }

    pub fn period(&self) -> f64 {
        1.0
    }

    pub fn volume(&self) -> f64 {
        1.0
    }

    pub fn grid(&self, resolution: usize) -> Result<PeriodicGrid> {
        PeriodicGrid::new(self.complex_dim, resolution)
    }
}

/// Shapes available for the twist potential `rho`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TwistKind {
    None,
    /// `A cos(2 pi x1)`.
    Cosine,
    /// `A cos(2 pi x1) cos(2 pi y_n)`; couples the two complex directions when `n = 2`.
    Product,
}

impl TwistKind {
    pub fn name(self) -> &'static str {
        match self {
            TwistKind::None => "none",
            TwistKind::Cosine => "cosine",
            TwistKind::Product => "product",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(TwistKind::None),
            "cosine" => Some(TwistKind::Cosine),
            "product" => Some(TwistKind::Product),
            _ => None,
        }
    }
}

pub fn twist_field(kind: TwistKind, amplitude: f64, grid: &PeriodicGrid) -> ScalarField {
    let last = grid.real_dim() - 1;
    match kind {
        TwistKind::None => ScalarField::zeros(grid),
        TwistKind::Cosine => ScalarField::from_fn(grid, |x| amplitude * (2.0 * PI * x[0]).cos()),
        TwistKind::Product => ScalarField::from_fn(grid, |x| {
            amplitude * (2.0 * PI * x[0]).cos() * (2.0 * PI * x[last]).cos()
        }),
    }
}

/// The family `g_t = I + t Hess rho` on `[0, horizon]`.
#[derive(Clone, Debug)]
pub struct BackgroundFamily {
    geometry: TorusGeometry,
    twist: ScalarField,
    twist_hessian: HermitianMatrixField,
    horizon: f64,
    is_static: bool,
}

impl BackgroundFamily {
    /// Mean-normalizes `twist` and sets the horizon to the largest time
    /// keeping every eigenvalue of `g_t` above `margin`, capped at `t_max`.
    pub fn new(twist: &ScalarField, margin: f64, t_max: f64) -> Result<Self> {
        let horizon = validity_horizon(twist, margin, t_max)?;
        Ok(Self::with_horizon(twist, horizon))
    }

    /// Uses a caller-chosen horizon without checking it; degenerate times
    /// surface as errors from [`background_form`].
    pub fn with_horizon(twist: &ScalarField, horizon: f64) -> Self {
        let twist = twist.add_constant(-twist.mean());
        let is_static = twist.sup_abs() == 0.0;
        Self {
            geometry: TorusGeometry::new(twist.grid().complex_dim()).unwrap(),
            twist_hessian: complex_hessian(&twist),
            twist,
            horizon,
            is_static,
        }
    }

    /// `rho = 0`: static flat background.
    pub fn flat(grid: &PeriodicGrid, t_max: f64) -> Self {
        Self::with_horizon(&ScalarField::zeros(grid), t_max)
    }

    pub fn geometry(&self) -> TorusGeometry {
        self.geometry
    }

    pub fn grid(&self) -> &PeriodicGrid {
        self.twist.grid()
    }

    pub fn twist(&self) -> &ScalarField {
        &self.twist
    }

    pub fn twist_hessian(&self) -> &HermitianMatrixField {
        &self.twist_hessian
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn is_static(&self) -> bool {
        self.is_static
    }

    /// Largest eigenvalue magnitude of `Hess rho` over the grid.
    pub fn twist_hessian_sup(&self) -> f64 {
        (0..self.grid().point_count())
            .map(|p| {
                let [lo, hi] = self.twist_hessian.at(p).eigenvalues();
                lo.abs().max(hi.abs())
            })
            .fold(0.0, f64::max)
    }
}

/// `g_t = I + t Hess rho`, checked positive definite.
pub fn background_form(family: &BackgroundFamily, t: f64) -> Result<HermitianMatrixField> {
    if !(0.0..=family.horizon).contains(&t) {
        return Err(KrfError::HorizonExceeded {
            t,
            horizon: family.horizon,
        });
    }
    let grid = family.grid();
    if family.is_static {
        return Ok(HermitianMatrixField::identity(grid));
    }
    let id = crate::fields::Herm::identity(grid.complex_dim());
    let g = family.twist_hessian.map(|h| id.add(&h.scale(t)));
    g.check_positive(t)?;
    Ok(g)
}

/// Ricci potential `h_t` and its normalizing constant `c_t`.
pub fn ricci_potential(family: &BackgroundFamily, t: f64) -> Result<(ScalarField, f64)> {
    let g = background_form(family, t)?;
    let grid = family.grid();
    if family.is_static {
        return Ok((ScalarField::zeros(grid), 0.0));
    }
    let det = ScalarField::new(grid, g.determinants())?;
    let raw = family.twist.zip_map(&det, |r, d| r - d.ln())?;
    let volume = integrate(&ScalarField::constant(grid, 1.0), &det);
    let c = (volume / integrate(&raw.map(f64::exp), &det)).ln();
    Ok((raw.add_constant(c), c))
}

/// Largest `T <= t_max` with `min eig(I + t Hess rho) >= margin` on `[0, T]`.
///
/// The minimum eigenvalue is concave in `t`, so the admissible set is an
/// interval; it is bracketed by a coarse scan and refined by bisection.
pub fn validity_horizon(twist: &ScalarField, margin: f64, t_max: f64) -> Result<f64> {
    if !(margin > 0.0 && margin < 1.0) {
        return Err(KrfError::InvalidArgument(format!(
            "margin must lie in (0, 1), got {margin}"
        )));
    }
    if !(t_max > 0.0) {
        return Err(KrfError::InvalidArgument(format!(
            "t_max must be positive, got {t_max}"
        )));
    }
    let hess = complex_hessian(twist);
    let id = crate::fields::Herm::identity(twist.grid().complex_dim());
    let ok = |t: f64| {
        (0..twist.grid().point_count()).all(|p| id.add(&hess.at(p).scale(t)).min_eigenvalue() >= margin)
    };
    const SCAN: usize = 64;
    let mut lo = 0.0;
    let mut hi = None;
    for i in 1..=SCAN {
        let t = t_max * i as f64 / SCAN as f64;
        if ok(t) {
            lo = t;
        } else {
            hi = Some(t);
            break;
        }
    }
    let Some(mut hi) = hi else {
        return Ok(t_max);
    };
    while hi - lo > 1e-14 * hi {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}
