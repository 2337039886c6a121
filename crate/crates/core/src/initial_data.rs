//! Rough initial potentials and their smooth approximation family.
//!
//! Both rough classes are built from a one-dimensional density profile
//! `d` along a chosen real axis: `phi0` is the zero-mean double spectral
//! antiderivative of `4 d`, so the discrete complex Hessian has the single
//! nonzero entry `d` and `ma_ratio(phi0, I) = 1 + d` holds exactly at grid
//! points. Profiles are sampled at cell centres, which keeps jumps and
//! cusps strictly between grid points.

use crate::error::{KrfError, Result};
use crate::fields::{axis_antiderivative2, heat_smooth, volume_ratio, HermitianMatrixField, PeriodicGrid, ScalarField};

pub const DEFAULT_TAU0: f64 = 1e-2;
/// Tolerance on `omega + i ddbar phi >= 0` for closed-cone membership.
pub const CONE_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RoughKind {
    Zero,
    RidgeC11,
    CuspLp,
    SmoothMode,
}

impl RoughKind {
    pub fn name(self) -> &'static str {
        match self {
            RoughKind::Zero => "zero",
            RoughKind::RidgeC11 => "ridge_c11",
            RoughKind::CuspLp => "cusp_lp",
            RoughKind::SmoothMode => "smooth_mode",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "zero" => Some(RoughKind::Zero),
            "ridge_c11" => Some(RoughKind::RidgeC11),
            "cusp_lp" => Some(RoughKind::CuspLp),
            "smooth_mode" => Some(RoughKind::SmoothMode),
            _ => None,
        }
    }

    /// Amplitude used when the configuration leaves it unset.
    pub fn default_amplitude(self) -> f64 {
        match self {
            RoughKind::Zero => 0.0,
            RoughKind::RidgeC11 => 2.0,
            RoughKind::CuspLp => 0.5,
            RoughKind::SmoothMode => 1e-3,
        }
    }
}

/// Parameters of a rough initial potential. `axis` is 1-based over
/// `(x1, y1, x2, y2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RoughPotentialSpec {
    pub kind: RoughKind,
    pub amplitude: f64,
    pub frequency: usize,
    pub gamma: f64,
    pub p: f64,
    pub axis: usize,
}

impl RoughPotentialSpec {
    pub fn new(kind: RoughKind) -> Self {
        Self {
            kind,
            amplitude: kind.default_amplitude(),
            frequency: 1,
            gamma: 0.3,
            p: 3.0,
            axis: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude >= 0.0) {
            return Err(KrfError::InvalidArgument(format!(
                "amplitude must be >= 0, got {}",
                self.amplitude
            )));
        }
        if self.frequency == 0 {
            return Err(KrfError::InvalidArgument("frequency must be >= 1".into()));
        }
        match self.kind {
            RoughKind::RidgeC11 if self.amplitude > 4.0 => Err(KrfError::ConeViolation(format!(
                "ridge_c11 needs a <= 4 (f = 1 +- a/4 >= 0), got a = {}",
                self.amplitude
            ))),
            RoughKind::CuspLp => check_cusp(self.amplitude, self.gamma, self.p),
            _ => Ok(()),
        }
    }

    pub fn generate(&self, grid: &PeriodicGrid) -> Result<ScalarField> {
        self.validate()?;
        axis_index(self.axis, grid)?;
        match self.kind {
            RoughKind::Zero => Ok(ScalarField::zeros(grid)),
            RoughKind::RidgeC11 => gen_ridge_c11(self.amplitude, self.frequency, self.axis, grid),
            RoughKind::CuspLp => gen_cusp_lp(self.amplitude, self.gamma, self.p, self.axis, grid),
            RoughKind::SmoothMode => smooth_mode(self.amplitude, self.frequency, self.axis, grid),
        }
    }
}

fn axis_index(axis: usize, grid: &PeriodicGrid) -> Result<usize> {
    if axis == 0 || axis > grid.real_dim() {
        return Err(KrfError::InvalidArgument(format!(
            "axis must lie in [1, {}], got {axis}",
            grid.real_dim()
        )));
    }
    Ok(axis - 1)
}

fn check_cusp(a: f64, gamma: f64, p: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma <= 1.0 / 3.0) {
        return Err(KrfError::HypothesisViolation(format!(
            "cusp exponent must lie in (0, 1/3], got {gamma}"
        )));
    }
    if gamma * p >= 1.0 {
        return Err(KrfError::HypothesisViolation(format!(
            "need gamma * p < 1 for an L^p density, got {gamma} * {p}"
        )));
    }
    if !(a > 0.0) {
        return Err(KrfError::InvalidArgument(format!(
            "cusp amplitude must be > 0, got {a}"
        )));
    }
    if a > 1.0 {
        return Err(KrfError::ConeViolation(format!(
            "cusp_lp needs a <= 1 (f >= 1 - a), got a = {a}"
        )));
    }
    Ok(())
}

/// Potential whose discrete complex Hessian is `density` in the single
/// diagonal entry belonging to `axis` (0-based).
fn potential_from_density(density: &ScalarField, axis: usize) -> ScalarField {
    axis_antiderivative2(&density.scale(4.0), axis)
}

/// Cell-centre coordinate along `axis` (0-based).
fn centre(grid: &PeriodicGrid, x: &[f64], axis: usize) -> f64 {
    x[axis] + 0.5 * grid.spacing()
}

/// Periodic C^{1,1} ridge `a q(k x) / k^2` with `q''` the square wave
/// `+1` on `(0, 1/4) u (3/4, 1)`, `-1` on `(1/4, 3/4)`.
///
/// The two levels `1 +- a/4` are exact when `4k` divides the resolution;
/// otherwise the sampled square wave is unbalanced and its mean is removed.
pub fn gen_ridge_c11(a: f64, k: usize, axis: usize, grid: &PeriodicGrid) -> Result<ScalarField> {
    RoughPotentialSpec {
        amplitude: a,
        frequency: k,
        axis,
        ..RoughPotentialSpec::new(RoughKind::RidgeC11)
    }
    .validate()?;
    let ax = axis_index(axis, grid)?;
    if a == 0.0 {
        return Ok(ScalarField::zeros(grid));
    }
    let density = ScalarField::from_fn(grid, |x| {
        let u = (k as f64 * centre(grid, x, ax)).rem_euclid(1.0);
        let sq = if u < 0.25 || u > 0.75 { 1.0 } else { -1.0 };
        0.25 * a * sq
    });
    Ok(potential_from_density(&density, ax))
}

/// Bounded potential whose volume ratio `1 + a r` has an integrable cusp
/// `r ~ dist(u, Z)^(-gamma)` at `u = 0`; `r` is mean-zero with `min r = -1`.
pub fn gen_cusp_lp(a: f64, gamma: f64, p: f64, axis: usize, grid: &PeriodicGrid) -> Result<ScalarField> {
    check_cusp(a, gamma, p)?;
    let ax = axis_index(axis, grid)?;
    Ok(potential_from_density(&cusp_profile(gamma, ax, grid).scale(a), ax))
}

/// The normalized cusp profile `r` on the grid (`axis` 0-based).
pub(crate) fn cusp_profile(gamma: f64, axis: usize, grid: &PeriodicGrid) -> ScalarField {
    let raw = ScalarField::from_fn(grid, |x| {
        let u = centre(grid, x, axis).rem_euclid(1.0);
        u.min(1.0 - u).powf(-gamma)
    });
    let mean = raw.mean();
    let c = 1.0 / (mean - raw.inf());
    raw.map(|v| c * (v - mean))
}

/// `a cos(2 pi k x_axis)` with the discrete mean removed.
pub fn smooth_mode(a: f64, k: usize, axis: usize, grid: &PeriodicGrid) -> Result<ScalarField> {
    let ax = axis_index(axis, grid)?;
    let f = ScalarField::from_fn(grid, |x| a * (2.0 * std::f64::consts::PI * k as f64 * x[ax]).cos());
    Ok(f.add_constant(-f.mean()))
}

/// `phi0(s) = (1 - s) heat_smooth(phi0, s tau0)`.
///
/// Since the heat semigroup commutes with `i ddbar` and has a positive
/// kernel, `omega + i ddbar phi0(s) >= s omega` whenever `phi0` is in the
/// closed cone.
pub fn approx_family(phi0: &ScalarField, s: f64, tau0: f64) -> Result<ScalarField> {
    if !(0.0..=1.0).contains(&s) {
        return Err(KrfError::InvalidArgument(format!("s must lie in [0, 1], got {s}")));
    }
    if !(tau0 >= 0.0) {
        return Err(KrfError::InvalidArgument(format!("tau0 must be >= 0, got {tau0}")));
    }
    let f0 = volume_ratio(phi0, &HermitianMatrixField::identity(phi0.grid()))?;
    if f0.inf() < -CONE_TOLERANCE {
        return Err(KrfError::ConeViolation(format!(
            "initial potential leaves the closed Kahler cone: min volume ratio {}",
            f0.inf()
        )));
    }
    if s == 0.0 {
        return Ok(phi0.clone());
    }
    Ok(heat_smooth(phi0, s * tau0).scale(1.0 - s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{complex_hessian, lp_norm};

    fn flat_ratio(phi: &ScalarField) -> ScalarField {
        volume_ratio(phi, &HermitianMatrixField::identity(phi.grid())).unwrap()
    }

    /// The continuum ridge profile.
    fn q(u: f64) -> f64 {
        let u = u.rem_euclid(1.0);
        if u <= 0.25 {
            u * u / 2.0 - 1.0 / 32.0
        } else if u <= 0.75 {
            let v = u - 0.5;
            1.0 / 32.0 - v * v / 2.0
        } else {
            let v = u - 1.0;
            v * v / 2.0 - 1.0 / 32.0
        }
    }

    #[test]
    fn ridge_ratio_is_two_level() {
        let grid = PeriodicGrid::new(1, 256).unwrap();
        let phi = gen_ridge_c11(2.0, 1, 1, &grid).unwrap();
        assert!(phi.mean().abs() < 1e-15);
        let f = flat_ratio(&phi);
        let hits = f
            .values()
            .iter()
            .filter(|v| (**v - 1.5).abs() < 1e-10 || (**v - 0.5).abs() < 1e-10)
            .count();
        assert_eq!(hits, grid.point_count());
        assert!(gen_ridge_c11(0.0, 1, 1, &grid).unwrap().sup_abs() == 0.0);
    }

    #[test]
    fn ridge_approximates_sampled_profile() {
        for (res, k) in [(64, 1), (256, 1), (256, 2)] {
            let grid = PeriodicGrid::new(1, res).unwrap();
            let phi = gen_ridge_c11(2.0, k, 1, &grid).unwrap();
            let h = grid.spacing();
            let kf = k as f64;
            let err = (0..grid.point_count())
                .map(|p| (phi.values()[p] - 2.0 * q(kf * (grid.coordinate(p, 0) + 0.5 * h)) / (kf * kf)).abs())
                .fold(0.0, f64::max);
            assert!(err < h * h, "N = {res}, k = {k}: err {err}");
        }
    }

    #[test]
    fn degenerate_ridge_touches_zero() {
        let grid = PeriodicGrid::new(1, 64).unwrap();
        let f = flat_ratio(&gen_ridge_c11(4.0, 1, 1, &grid).unwrap());
        assert!(f.inf().abs() < 1e-12);
        assert!(matches!(gen_ridge_c11(4.5, 1, 1, &grid), Err(KrfError::ConeViolation(_))));
    }

    #[test]
    fn ridge_on_second_complex_direction() {
        let grid = PeriodicGrid::new(2, 16).unwrap();
        let phi = gen_ridge_c11(2.0, 1, 4, &grid).unwrap();
        let h = complex_hessian(&phi);
        for p in 0..grid.point_count() {
            let a = h.at(p);
            assert!(a.diag[0].abs() < 1e-12 && a.off.norm() < 1e-12);
            assert!((a.diag[1].abs() - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn cusp_validation() {
        let grid = PeriodicGrid::new(1, 64).unwrap();
        assert!(matches!(gen_cusp_lp(0.5, 0.4, 3.0, 1, &grid), Err(KrfError::HypothesisViolation(_))));
        assert!(matches!(gen_cusp_lp(0.5, 0.3, 3.5, 1, &grid), Err(KrfError::HypothesisViolation(_))));
        assert!(matches!(gen_cusp_lp(1.5, 0.3, 3.0, 1, &grid), Err(KrfError::ConeViolation(_))));
        assert!(gen_cusp_lp(0.5, 0.3, 3.0, 3, &grid).is_err());
    }

    #[test]
    fn cusp_ratio_is_one_plus_a_r() {
        let grid = PeriodicGrid::new(1, 128).unwrap();
        let r = cusp_profile(0.3, 0, &grid);
        assert!(r.mean().abs() < 1e-12);
        assert!(gen_cusp_lp(0.5, 0.3, 3.0, 1, &grid).unwrap().mean().abs() < 1e-14);
        assert!((r.inf() + 1.0).abs() < 1e-14);
        let phi = gen_cusp_lp(0.5, 0.3, 3.0, 1, &grid).unwrap();
        let f = flat_ratio(&phi);
        let expected = r.map(|v| 1.0 + 0.5 * v);
        assert!(f.sup_distance(&expected).unwrap() < 1e-10);
    }

    /// `integral (1 + a r)^3` for the continuum profile, expanded in powers
    /// of `d^-gamma` with `integral_T d^(-s) = 2^s / (1 - s)`.
    fn continuum_cubic_moment(a: f64, gamma: f64) -> f64 {
        let moment = |k: i32| {
            let s = k as f64 * gamma;
            2f64.powf(s) / (1.0 - s)
        };
        let c = 1.0 / (moment(1) - 2f64.powf(gamma));
        let (base, amp) = (1.0 - a * c * moment(1), a * c);
        base.powi(3) + 3.0 * base * base * amp * moment(1) + 3.0 * base * amp * amp * moment(2) + amp.powi(3) * moment(3)
    }

    #[test]
    fn cusp_lp_mass_is_finite_and_peak_grows() {
        // gamma p = 0.9: Riemann sums approach the finite continuum value
        // from below, slowly (error ~ h^(1 - gamma p)).
        let limit = continuum_cubic_moment(0.5, 0.3);
        assert!((limit - 11.0).abs() < 1e-9, "limit {limit}");
        let mut moments = Vec::new();
        let mut peaks = Vec::new();
        for res in [128, 256, 512] {
            let grid = PeriodicGrid::new(1, res).unwrap();
            let f = cusp_profile(0.3, 0, &grid).map(|v| 1.0 + 0.5 * v);
            moments.push(lp_norm(&f, 3.0, &ScalarField::constant(&grid, 1.0)).powi(3));
            peaks.push(f.sup());
        }
        assert!(moments[0] < moments[1] && moments[1] < moments[2] && moments[2] < limit);
        for w in peaks.windows(2) {
            let ratio = w[1] / w[0];
            assert!((ratio / 2f64.powf(0.3) - 1.0).abs() < 0.2, "ratio {ratio}");
        }
    }

    #[test]
    fn approx_family_endpoints_and_cone() {
        let grid = PeriodicGrid::new(1, 64).unwrap();
        let phi = gen_ridge_c11(2.0, 1, 1, &grid).unwrap();
        assert_eq!(approx_family(&phi, 0.0, DEFAULT_TAU0).unwrap(), phi);
        assert_eq!(approx_family(&phi, 1.0, DEFAULT_TAU0).unwrap().sup_abs(), 0.0);
        for j in 1..=8 {
            let s = 2f64.powi(-j);
            let f = flat_ratio(&approx_family(&phi, s, DEFAULT_TAU0).unwrap());
            assert!(f.inf() >= s - 1e-10);
        }
    }

    #[test]
    fn approx_family_converges_along_dyadic_s() {
        let grid = PeriodicGrid::new(1, 64).unwrap();
        let one = ScalarField::constant(&grid, 1.0);
        let phi = gen_ridge_c11(2.0, 1, 1, &grid).unwrap();
        let target = crate::fields::lp_norm(&flat_ratio(&phi), 3.0, &one);
        let mut prev = f64::INFINITY;
        for j in 1..=12 {
            let approx = approx_family(&phi, 2f64.powi(-j), DEFAULT_TAU0).unwrap();
            let d = approx.sup_distance(&phi).unwrap();
            assert!(d <= prev * (1.0 + 1e-12), "j={j}: {d} > {prev}");
            prev = d;
            let lp = crate::fields::lp_norm(&flat_ratio(&approx), 3.0, &one);
            if j >= 10 {
                assert!((lp / target - 1.0).abs() < 0.02, "j={j}: {lp} vs {target}");
            }
        }
        // d(s) ~ 0.58 s sup|phi|: below 1e-3 sup|phi| from j = 11 on, not j = 10.
        assert!(prev < 1e-3 * phi.sup_abs());
    }

    #[test]
    fn approx_family_rejects_bad_input() {
        let grid = PeriodicGrid::new(1, 64).unwrap();
        let phi = gen_ridge_c11(2.0, 1, 1, &grid).unwrap();
        let bad = phi.scale(3.0);
        assert!(matches!(approx_family(&bad, 0.5, DEFAULT_TAU0), Err(KrfError::ConeViolation(_))));
        assert!(approx_family(&phi, 1.5, DEFAULT_TAU0).is_err());
    }
}
