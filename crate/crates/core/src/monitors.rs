//! Numerical monitors for the a-priori estimates of the flow.
//!
//! A [`Recorder`] turns each sampled [`FlowState`] into a [`SampleRow`] of
//! scalar diagnostics; the monitors are pure functions of those rows. Claims
//! of the form "bounded by a uniform constant" become a fitted constant that
//! callers compare across refinements with [`relative_spread`].

use std::f64::consts::PI;
use std::fmt;

use crate::error::{KrfError, Result};
use crate::fields::{
    complex_gradient, gradient_norm_sq_from, hessian_from_spectrum, integrate, third_order_s,
    trace_against, DiffOp, PeriodicGrid, ScalarField,
};
use crate::flow::FlowState;
use crate::geometry::{background_form, ricci_potential, BackgroundFamily};

/// Positivity threshold time for the volume-ratio lower bound.
pub const BARRIER_T1: f64 = 1e-3;
pub const LP_RESIDUAL_TOL: f64 = 0.05;
pub const CLAIM_RESIDUAL_TOL: f64 = 0.10;
pub const L2_FLOOR_FRACTION: f64 = 0.05;
pub const MASS_TOL: f64 = 1e-8;
pub const ENERGY_FLOOR: f64 = -1e-10;
pub const ENERGY_INCREMENT_TOL: f64 = 1e-8;
/// Allowed excess of the fitted blow-up exponent over `n - 1`.
pub const EXPONENT_SLACK: f64 = 0.3;

/// Columns written to `trace.csv`, in order.
pub const TRACE_COLUMNS: [&str; 13] = [
    "t",
    "sup_phi",
    "inf_phi",
    "sup_phidot",
    "min_f",
    "max_f",
    "l2_f_minus_f0",
    "lp_trace",
    "trace_sup",
    "S_sup",
    "k_energy",
    "F_plus_sup",
    "F_minus_inf",
];

/// Scalar diagnostics of one sampled state.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SampleRow {
    pub t: f64,
    pub sup_phi: f64,
    pub inf_phi: f64,
    pub sup_phidot: f64,
    pub min_f: f64,
    pub max_f: f64,
    /// `||f(t) - f_0||_{L^2(omega^n)}`
    pub l2_f_minus_f0: f64,
    /// `I_p = int f^p e^{-lambda (p-1) phi} omega_t^n`
    pub lp_trace: f64,
    pub trace_sup: f64,
    pub s_sup: f64,
    /// `int f log f omega^n`
    pub k_energy: f64,
    pub f_plus_sup: f64,
    pub f_minus_inf: f64,
    pub min_h: f64,
    pub max_h: f64,
    /// `int omega_phi^n` and `int omega_t^n`
    pub mass: f64,
    pub volume: f64,
    /// `||f||_{L^p(omega^n)}`
    pub lp_norm_f: f64,
    /// `int f |grad f|^2_phi omega_t^n`
    pub grad_f_energy: f64,
    /// `int f_phi^2 |grad phi|^2_phi omega_phi^n`
    pub grad_phi_weighted: f64,
    /// `int |grad chi|^2_phi omega_phi^n`
    pub cutoff_energy: f64,
    /// `int |grad phi|^2_phi omega_phi^n`
    pub grad_phi_energy: f64,
    /// `int chi f^2 tr_phi omega_t omega_t^n`
    pub cutoff_trace: f64,
    /// `int chi f^2 omega^n`
    pub m_chi: f64,
    /// `(1/2) int |grad phi'|^2_phi omega_phi^n`, equal to `-dE/dt` on a
    /// static background.
    pub dissipation: f64,
}

impl SampleRow {
    pub fn trace_values(&self) -> [f64; 13] {
        [
            self.t,
            self.sup_phi,
            self.inf_phi,
            self.sup_phidot,
            self.min_f,
            self.max_f,
            self.l2_f_minus_f0,
            self.lp_trace,
            self.trace_sup,
            self.s_sup,
            self.k_energy,
            self.f_plus_sup,
            self.f_minus_inf,
        ]
    }

    fn all_finite(&self) -> bool {
        self.trace_values().iter().all(|v| v.is_finite())
            && [
                self.min_h,
                self.max_h,
                self.mass,
                self.volume,
                self.lp_norm_f,
                self.grad_f_energy,
                self.grad_phi_weighted,
                self.cutoff_energy,
                self.grad_phi_energy,
                self.cutoff_trace,
                self.m_chi,
                self.dissipation,
            ]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Smooth nonnegative cut-off with cached `sup chi` and `sup |grad chi|`.
#[derive(Clone, Debug, PartialEq)]
pub struct CutoffField {
    chi: ScalarField,
    sup: f64,
    sup_grad: f64,
}

impl CutoffField {
    /// Requires `chi >= 0` and no Fourier content above a quarter of Nyquist.
    pub fn new(chi: ScalarField) -> Result<Self> {
        if chi.inf() < 0.0 {
            return Err(KrfError::InvalidArgument(format!(
                "cut-off must be nonnegative, found {}",
                chi.inf()
            )));
        }
        let grid = chi.grid().clone();
        let spec = chi.spectrum();
        let hat = spec.hat();
        let peak = hat.iter().map(|c| c.norm()).fold(0.0, f64::max);
        let limit = grid.wavenumber(grid.resolution() / 8);
        let mut leak: f64 = 0.0;
        grid.for_each_mode(|p, idx| {
            if idx[..grid.real_dim()]
                .iter()
                .any(|&k| grid.wavenumber(k).abs() > limit)
            {
                leak = leak.max(hat[p].norm());
            }
        });
        if leak > 1e-12 * peak {
            return Err(KrfError::InvalidArgument(
                "cut-off is not band-limited below a quarter of Nyquist".into(),
            ));
        }
        let grads: Vec<ScalarField> = (0..grid.real_dim())
            .map(|a| spec.apply_real(&DiffOp::partial(a)))
            .collect();
        let sup_grad = (0..grid.point_count())
            .map(|p| grads.iter().map(|g| g.values()[p].powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        Ok(Self {
            sup: chi.sup(),
            chi,
            sup_grad,
        })
    }

    /// `chi = 1 + cos(2 pi x_1)`.
    pub fn standard(grid: &PeriodicGrid) -> Self {
        Self::new(ScalarField::from_fn(grid, |x| 1.0 + (2.0 * PI * x[0]).cos()))
            .expect("standard cut-off is admissible")
    }

    pub fn field(&self) -> &ScalarField {
        &self.chi
    }

    pub fn sup(&self) -> f64 {
        self.sup
    }

    /// Euclidean `sup |grad chi|`.
    pub fn sup_grad(&self) -> f64 {
        self.sup_grad
    }
}

/// Computes [`SampleRow`]s for states of one trajectory.
#[derive(Clone, Debug)]
pub struct Recorder {
    pub background: BackgroundFamily,
    pub f0: ScalarField,
    pub p: f64,
    pub lambda: f64,
    pub cutoff: CutoffField,
}

impl Recorder {
    /// `f0` is the volume ratio of the (rough) reference data.
    pub fn new(
        background: BackgroundFamily,
        f0: ScalarField,
        p: f64,
        lambda: f64,
        cutoff: CutoffField,
    ) -> Result<Self> {
        if !(p >= 1.0) {
            return Err(KrfError::InvalidArgument(format!("p must be >= 1, got {p}")));
        }
        if !(lambda > 0.0) {
            return Err(KrfError::InvalidArgument(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        background.grid().check_same(f0.grid())?;
        background.grid().check_same(cutoff.field().grid())?;
        Ok(Self {
            background,
            f0,
            p,
            lambda,
            cutoff,
        })
    }

    pub fn record(&self, state: &FlowState) -> Result<SampleRow> {
        let t = state.t;
        let (phi, f, phidot) = (&state.phi, &state.ratio, &state.phidot);
        let grid = phi.grid();
        let one = ScalarField::constant(grid, 1.0);
        let g_t = background_form(&self.background, t)?;
        let det_t = ScalarField::new(grid, g_t.determinants())?;
        let (h, _) = ricci_potential(&self.background, t)?;
        let g_phi = hessian_from_spectrum(&phi.spectrum()).add(&g_t)?;
        let g_phi_inv = g_phi.map(|a| a.inverse());
        let vol_phi = f.zip_map(&det_t, |a, b| a * b)?;
        let norm = |u: &ScalarField| gradient_norm_sq_from(&complex_gradient(u), &g_phi_inv);
        let (p, lambda) = (self.p, self.lambda);

        let grad_f = norm(f);
        let grad_phi = norm(phi);
        let grad_chi = norm(self.cutoff.field());
        let grad_phidot = norm(phidot);
        let trace = trace_against(&g_t, &g_phi);
        let trace_back = trace_against(&g_phi, &g_t);
        let s = third_order_s(phi, &g_t)?;
        let chi = self.cutoff.field().values();
        let fv = f.values();
        let phiv = phi.values();
        let pointwise = |values: Vec<f64>| ScalarField::new(grid, values);

        let f_plus = phi.zip_map(phidot, |a, b| -a + t * b)?;
        let f_minus = phi.zip_map(phidot, |a, b| a + t * b)?;
        let weighted = pointwise(
            fv.iter()
                .zip(phiv)
                .map(|(f, ph)| f.powf(p) * (-lambda * (p - 1.0) * ph).exp())
                .collect(),
        )?;
        let grad_phi_weighted = pointwise(
            (0..fv.len())
                .map(|i| (fv[i] * (-lambda * phiv[i]).exp()).powi(2) * grad_phi.values()[i])
                .collect(),
        )?;
        let cutoff_trace = pointwise(
            (0..fv.len())
                .map(|i| chi[i] * fv[i] * fv[i] * trace_back.values()[i])
                .collect(),
        )?;
        let row = SampleRow {
            t,
            sup_phi: phi.sup(),
            inf_phi: phi.inf(),
            sup_phidot: phidot.sup(),
            min_f: f.inf(),
            max_f: f.sup(),
            l2_f_minus_f0: integrate(&f.zip_map(&self.f0, |a, b| (a - b).powi(2))?, &one).sqrt(),
            lp_trace: integrate(&weighted, &det_t),
            trace_sup: trace.sup(),
            s_sup: s.sup(),
            k_energy: integrate(&f.map(|v| v * v.ln()), &one),
            f_plus_sup: f_plus.sup(),
            f_minus_inf: f_minus.inf(),
            min_h: h.inf(),
            max_h: h.sup(),
            mass: integrate(&one, &vol_phi),
            volume: integrate(&one, &det_t),
            lp_norm_f: integrate(&f.map(|v| v.powf(p)), &one).powf(1.0 / p),
            grad_f_energy: integrate(&f.zip_map(&grad_f, |a, b| a * b)?, &det_t),
            grad_phi_weighted: integrate(&grad_phi_weighted, &vol_phi),
            cutoff_energy: integrate(&grad_chi, &vol_phi),
            grad_phi_energy: integrate(&grad_phi, &vol_phi),
            cutoff_trace: integrate(&cutoff_trace, &det_t),
            m_chi: integrate(&pointwise(chi.iter().zip(fv).map(|(c, f)| c * f * f).collect())?, &one),
            dissipation: 0.5 * integrate(&grad_phidot, &vol_phi),
        };
        Ok(row)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TraceMeta {
    pub config_hash: String,
    pub complex_dim: usize,
    pub resolution: usize,
    pub initial: String,
}

/// Time-ordered sample rows plus the verdicts computed from them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EstimateTrace {
    pub meta: TraceMeta,
    rows: Vec<SampleRow>,
    pub verdicts: Vec<Verdict>,
}

impl EstimateTrace {
    pub fn new(meta: TraceMeta) -> Self {
        Self {
            meta,
            rows: Vec::new(),
            verdicts: Vec::new(),
        }
    }

    /// Appends a row; times must increase strictly and values be finite.
    pub fn push(&mut self, row: SampleRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if !(row.t > last.t) {
                return Err(KrfError::InvalidArgument(format!(
                    "trace rows must increase in t ({} after {})",
                    row.t, last.t
                )));
            }
        }
        if !row.all_finite() {
            return Err(KrfError::InvalidArgument(format!(
                "non-finite diagnostic at t = {}",
                row.t
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[SampleRow] {
        &self.rows
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    /// Not enough data to decide.
    Inconclusive,
    /// Not applicable to this configuration.
    Skipped,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Inconclusive => "inconclusive",
            Status::Skipped => "skipped",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Verdict {
    pub monitor: &'static str,
    pub status: Status,
    pub constants: Vec<(&'static str, f64)>,
    /// Largest violation of the checked inequality; `<= 0` means it holds.
    pub worst_margin: f64,
    /// The inequality being checked.
    pub anchor: &'static str,
}

impl Verdict {
    fn new(monitor: &'static str, anchor: &'static str) -> Self {
        Self {
            monitor,
            status: Status::Pass,
            constants: Vec::new(),
            worst_margin: f64::NEG_INFINITY,
            anchor,
        }
    }

    fn with(mut self, name: &'static str, value: f64) -> Self {
        self.constants.push((name, value));
        self
    }

    fn margin(mut self, m: f64) -> Self {
        self.worst_margin = self.worst_margin.max(m);
        self
    }

    fn decide(mut self, ok: bool) -> Self {
        self.status = if ok { Status::Pass } else { Status::Fail };
        self
    }

    pub fn constant(&self, name: &str) -> Option<f64> {
        self.constants.iter().find(|(n, _)| *n == name).map(|c| c.1)
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<24} {:<12}", self.monitor, self.status.name())?;
        let constants: Vec<String> = self
            .constants
            .iter()
            .map(|(n, v)| format!("{n}={v:.6e}"))
            .collect();
        write!(
            f,
            " [{}] worst_margin={:.6e} | {}",
            constants.join(" "),
            self.worst_margin,
            self.anchor
        )
    }
}

fn positive(rows: &[SampleRow]) -> impl Iterator<Item = &SampleRow> {
    rows.iter().filter(|r| r.t > 0.0)
}

/// Row with the smallest positive time.
fn first_positive(rows: &[SampleRow]) -> Option<&SampleRow> {
    positive(rows).next()
}

/// Sup-norm band `min phi_0 - c t <= phi(t) <= max phi_0 + c t`, with
/// `c = max_t sup |h_t|`.
pub fn c0_bound(rows: &[SampleRow], phi0_min: f64, phi0_max: f64, tol: f64) -> Verdict {
    let c = rows
        .iter()
        .map(|r| r.min_h.abs().max(r.max_h.abs()))
        .fold(0.0, f64::max);
    let mut v = Verdict::new("c0_bound", "min phi0 - c t <= phi(t) <= max phi0 + c t").with("c", c);
    for r in rows {
        let below = (phi0_min - c * r.t) - r.inf_phi;
        let above = r.sup_phi - (phi0_max + c * r.t);
        v = v.margin(below.max(above));
    }
    let ok = v.worst_margin <= tol;
    v.decide(ok)
}

/// Barrier constants `B+ = max_t sup F+`, `B- = -min_t inf F-` and the
/// volume-ratio envelope they imply for `t > 0`:
/// `exp((inf F- - sup phi)/t + min h) <= f <= exp((sup F+ + sup phi)/t + max h)`.
pub fn volume_barriers(rows: &[SampleRow]) -> Verdict {
    let b_plus = rows.iter().map(|r| r.f_plus_sup).fold(f64::NEG_INFINITY, f64::max);
    let b_minus = -rows.iter().map(|r| r.f_minus_inf).fold(f64::INFINITY, f64::min);
    let (fp0, fm0) = first_positive(rows)
        .map(|r| (r.f_plus_sup, r.f_minus_inf))
        .unwrap_or((b_plus, -b_minus));
    let mut v = Verdict::new(
        "volume_barriers",
        "exp((F- - phi)/t) <= omega_phi^n/omega_t^n <= exp((F+ + phi)/t), min f > 0 for t >= t1",
    )
    .with("B_plus", b_plus)
    .with("B_minus", b_minus)
    .with("C1", b_plus - fp0)
    .with("C2", fm0 + b_minus);
    let mut ok = true;
    let mut min_f_late = f64::INFINITY;
    for r in positive(rows) {
        let lower = ((r.f_minus_inf - r.sup_phi) / r.t + r.min_h).exp();
        let upper = ((r.f_plus_sup + r.sup_phi) / r.t + r.max_h).exp();
        ok &= r.min_f >= lower * (1.0 - 1e-9) && r.max_f <= upper * (1.0 + 1e-9);
        ok &= r.min_f > 0.0;
        if r.t >= BARRIER_T1 {
            min_f_late = min_f_late.min(r.min_f);
        }
        v = v.margin(-r.min_f);
    }
    v = v.with("min_f_after_t1", min_f_late);
    ok &= b_plus.is_finite() && b_minus.is_finite();
    v.decide(ok)
}

/// Grönwall model `I(t) = I(0) e^{K t} + K' t` fitted jointly to several
/// trajectories (one `I(0)` each, shared `K, K' >= 0`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GronwallFit {
    pub k: f64,
    pub k_prime: f64,
    /// Largest relative excess of the data over the model.
    pub residual: f64,
}

pub fn fit_gronwall(series: &[Vec<(f64, f64)>]) -> GronwallFit {
    let ks = std::iter::once(0.0).chain((0..=240).map(|i| 10f64.powf(-3.0 + i as f64 / 40.0)));
    let mut best: Option<(f64, GronwallFit)> = None;
    for k in ks {
        // Least squares for K' on residuals scaled by I(0).
        let (mut num, mut den) = (0.0, 0.0);
        for s in series {
            let i0 = s[0].1;
            for &(t, y) in s {
                num += t * (y - i0 * (k * t).exp()) / (i0 * i0);
                den += t * t / (i0 * i0);
            }
        }
        let k_prime = if den > 0.0 { (num / den).max(0.0) } else { 0.0 };
        let mut score = 0.0;
        let mut residual: f64 = 0.0;
        for s in series {
            let i0 = s[0].1;
            for &(t, y) in s {
                let model = i0 * (k * t).exp() + k_prime * t;
                score += ((y - model) / i0).powi(2);
                residual = residual.max((y - model) / model);
            }
        }
        let fit = GronwallFit {
            k,
            k_prime,
            residual: residual.max(0.0),
        };
        if best.map_or(true, |(b, _)| score < b) {
            best = Some((score, fit));
        }
    }
    best.map(|b| b.1).unwrap_or(GronwallFit {
        k: 0.0,
        k_prime: 0.0,
        residual: 0.0,
    })
}

/// `I_p(t) <= I_p(0) e^{K t} + K' t` with a shared fit over all trajectories.
pub fn lp_trace(trajectories: &[&[SampleRow]]) -> Verdict {
    let series: Vec<Vec<(f64, f64)>> = trajectories
        .iter()
        .filter(|r| !r.is_empty())
        .map(|rows| rows.iter().map(|r| (r.t, r.lp_trace)).collect())
        .collect();
    let fit = fit_gronwall(&series);
    let lp_max = trajectories
        .iter()
        .flat_map(|rows| rows.iter().map(|r| r.lp_norm_f))
        .fold(0.0, f64::max);
    let i_max = series
        .iter()
        .flat_map(|s| s.iter().map(|p| p.1))
        .fold(0.0, f64::max);
    Verdict::new("lp_trace", "I_p(t) <= I_p(0) e^{K t} + K' t")
        .with("K", fit.k)
        .with("K_prime", fit.k_prime)
        .with("residual", fit.residual)
        .with("I_p_max", i_max)
        .with("lp_norm_f_max", lp_max)
        .margin(fit.residual - LP_RESIDUAL_TOL)
        .decide(fit.residual <= LP_RESIDUAL_TOL && i_max.is_finite())
}

/// Cumulative trapezoid `int_0^t y` over the sample times.
pub fn cumulative_trapezoid(ts: &[f64], ys: &[f64]) -> Vec<f64> {
    let mut acc = vec![0.0; ts.len()];
    for i in 1..ts.len() {
        acc[i] = acc[i - 1] + 0.5 * (ts[i] - ts[i - 1]) * (ys[i] + ys[i - 1]);
    }
    acc
}

/// Least squares `y ~ sum_k c_k basis_k(t)` over all subsets of the basis,
/// keeping the best fit whose coefficients are all nonnegative.
pub fn fit_nonnegative(ts: &[f64], ys: &[f64], basis: &[fn(f64) -> f64]) -> Vec<f64> {
    let m = basis.len();
    let mut best = (f64::INFINITY, vec![0.0; m]);
    for mask in 0u32..(1 << m) {
        let active: Vec<usize> = (0..m).filter(|k| mask & (1 << k) != 0).collect();
        let Some(c) = least_squares(ts, ys, basis, &active) else {
            continue;
        };
        if c.iter().any(|&v| v < 0.0) {
            continue;
        }
        let mut coef = vec![0.0; m];
        for (&k, v) in active.iter().zip(c) {
            coef[k] = v;
        }
        let sse: f64 = ts
            .iter()
            .zip(ys)
            .map(|(&t, &y)| (y - eval_basis(basis, &coef, t)).powi(2))
            .sum();
        if sse < best.0 {
            best = (sse, coef);
        }
    }
    best.1
}

fn eval_basis(basis: &[fn(f64) -> f64], coef: &[f64], t: f64) -> f64 {
    basis.iter().zip(coef).map(|(b, c)| c * b(t)).sum()
}

/// Normal equations for at most two active basis functions.
fn least_squares(ts: &[f64], ys: &[f64], basis: &[fn(f64) -> f64], active: &[usize]) -> Option<Vec<f64>> {
    match active {
        [] => Some(Vec::new()),
        [a] => {
            let (mut num, mut den) = (0.0, 0.0);
            for (&t, &y) in ts.iter().zip(ys) {
                let b = basis[*a](t);
                num += b * y;
                den += b * b;
            }
            (den > 0.0).then(|| vec![num / den])
        }
        [a, b] => {
            let (mut saa, mut sab, mut sbb, mut sya, mut syb) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (&t, &y) in ts.iter().zip(ys) {
                let (u, v) = (basis[*a](t), basis[*b](t));
                saa += u * u;
                sab += u * v;
                sbb += v * v;
                sya += y * u;
                syb += y * v;
            }
            let det = saa * sbb - sab * sab;
            (det.abs() > 1e-300 * saa * sbb).then(|| {
                vec![(sya * sbb - syb * sab) / det, (syb * saa - sya * sab) / det]
            })
        }
        _ => unimplemented!("fits use at most two basis functions"),
    }
}

/// Integrals of the cut-off argument: cumulative gradient energies, the
/// cut-off and potential Dirichlet energies, and `A4(t) <= C1 t + C2 sqrt(t)`.
pub fn claim_integrals(rows: &[SampleRow]) -> Verdict {
    let ts: Vec<f64> = rows.iter().map(|r| r.t).collect();
    let col = |f: fn(&SampleRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    let a1 = cumulative_trapezoid(&ts, &col(|r| r.grad_f_energy));
    let a1b = cumulative_trapezoid(&ts, &col(|r| r.grad_phi_weighted));
    let a2 = col(|r| r.cutoff_energy).into_iter().fold(0.0, f64::max);
    let a3 = col(|r| r.grad_phi_energy).into_iter().fold(0.0, f64::max);
    let a4 = cumulative_trapezoid(&ts, &col(|r| r.cutoff_trace));
    let c = fit_nonnegative(&ts, &a4, &[|t| t, f64::sqrt]);
    let scale = a4.iter().copied().fold(0.0, f64::max);
    let excess = ts
        .iter()
        .zip(&a4)
        .map(|(&t, &y)| y - c[0] * t - c[1] * t.sqrt())
        .fold(0.0, f64::max);
    let residual = if scale > 0.0 { excess / scale } else { 0.0 };
    let last = |v: &[f64]| v.last().copied().unwrap_or(0.0);
    let bounded = [last(&a1), last(&a1b), a2, a3].iter().all(|v| v.is_finite());
    Verdict::new(
        "claim_integrals",
        "int_0^t int chi f^2 tr_phi omega_t omega_t^n <= C1 t + C2 sqrt(t)",
    )
    .with("A1", last(&a1))
    .with("A1_weighted", last(&a1b))
    .with("A2", a2)
    .with("A3", a3)
    .with("C1", c[0])
    .with("C2", c[1])
    .with("residual", residual)
    .margin(residual - CLAIM_RESIDUAL_TOL)
    .decide(bounded && residual <= CLAIM_RESIDUAL_TOL)
}

/// Fit `e = e_inf + C t^alpha` (grid search in `alpha`, `e_inf, C >= 0`);
/// returns `(e_inf, C, alpha)`.
pub fn fit_floor_power(ts: &[f64], es: &[f64]) -> (f64, f64, f64) {
    let mut best = (f64::INFINITY, (0.0, 0.0, 1.0));
    for i in 1..=400 {
        let alpha = i as f64 * 0.005;
        let c = fit_power_basis(ts, es, alpha);
        let sse: f64 = ts
            .iter()
            .zip(es)
            .map(|(&t, &e)| (e - c.0 - c.1 * t.powf(alpha)).powi(2))
            .sum();
        if sse < best.0 {
            best = (sse, (c.0, c.1, alpha));
        }
    }
    best.1
}

fn fit_power_basis(ts: &[f64], es: &[f64], alpha: f64) -> (f64, f64) {
    // Nonnegative two-parameter fit on the basis {1, t^alpha}.
    let xs: Vec<f64> = ts.iter().map(|t| t.powf(alpha)).collect();
    let c = fit_nonnegative(&xs, es, &[|_| 1.0, |x| x]);
    (c[0], c[1])
}

/// `||f(t_j) - f_0||_{L^2}` decreasing to a small extrapolated floor along
/// `t_j -> 0`, and `M_chi(t_j) <= M_chi(0) + C (t_j + sqrt(t_j))`.
///
/// `f0_deviation` is `||f_0 - 1||_{L^2}`; `times` selects the rows used.
pub fn l2_initial_convergence(rows: &[SampleRow], f0_deviation: f64, times: &[f64]) -> Verdict {
    let v = Verdict::new(
        "l2_initial_convergence",
        "||f(t_j) - f0||_L2 -> 0; M_chi(t_j) <= M_chi(0) + C (t_j + sqrt(t_j))",
    );
    let mut picked: Vec<&SampleRow> = rows.iter().filter(|r| times.contains(&r.t)).collect();
    picked.sort_by(|a, b| b.t.total_cmp(&a.t));
    let Some(r0) = rows.iter().find(|r| r.t == 0.0) else {
        return Verdict {
            status: Status::Inconclusive,
            ..v
        };
    };
    if picked.len() < 3 {
        return Verdict {
            status: Status::Inconclusive,
            ..v
        };
    }
    let ts: Vec<f64> = picked.iter().map(|r| r.t).collect();
    let es: Vec<f64> = picked.iter().map(|r| r.l2_f_minus_f0).collect();
    let worst_increase = es
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    let (floor, c_e, alpha) = fit_floor_power(&ts, &es);
    let floor_ok = floor <= L2_FLOOR_FRACTION * f0_deviation + 1e-14;

    let ms: Vec<f64> = picked.iter().map(|r| r.m_chi - r0.m_chi).collect();
    let c_m = fit_nonnegative(&ts, &ms, &[|t| t + t.sqrt()])[0];
    let excess = ts
        .iter()
        .zip(&ms)
        .map(|(&t, &m)| m - c_m * (t + t.sqrt()))
        .fold(0.0, f64::max);
    let m_residual = if r0.m_chi != 0.0 { excess / r0.m_chi.abs() } else { excess };

    v.with("e_floor", floor)
        .with("e_C", c_e)
        .with("e_alpha", alpha)
        .with("floor_limit", L2_FLOOR_FRACTION * f0_deviation)
        .with("M_chi_C", c_m)
        .with("M_chi_residual", m_residual)
        .margin(worst_increase)
        .margin(m_residual - CLAIM_RESIDUAL_TOL)
        .decide(worst_increase <= 0.0 && floor_ok && m_residual <= CLAIM_RESIDUAL_TOL)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataClass {
    /// `C^{1,1}` data: the trace stays bounded.
    C11,
    /// Bounded data: the trace may blow up like `t^{-(n-1)}`.
    Linf,
}

impl DataClass {
    pub fn name(self) -> &'static str {
        match self {
            DataClass::C11 => "c11",
            DataClass::Linf => "linf",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "c11" => Some(DataClass::C11),
            "linf" => Some(DataClass::Linf),
            _ => None,
        }
    }
}

/// Log-log least squares `y ~ C t^{-alpha}`; returns `(C, alpha)`.
pub fn fit_blowup(ts: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = ts.len() as f64;
    let xs: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
    let ls: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ls.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ls).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    ((my - slope * mx).exp(), -slope)
}

/// `sup tr_{omega_t} omega_phi`: bounded for `C^{1,1}` data, blow-up
/// exponent at most `n - 1` for bounded data.
pub fn laplacian_bound(rows: &[SampleRow], class: DataClass, complex_dim: usize) -> Verdict {
    match class {
        DataClass::C11 => {
            let c = rows.iter().map(|r| r.trace_sup).fold(0.0, f64::max);
            Verdict::new("laplacian_bound", "sup tr_{omega_t} omega_phi(t) <= C")
                .with("C", c)
                .margin(0.0)
                .decide(c.is_finite())
        }
        DataClass::Linf => {
            let v = Verdict::new(
                "laplacian_bound",
                "sup tr_{omega_t} omega_phi(t) <= C t^{-alpha}, alpha <= n - 1",
            );
            let mut pts: Vec<(f64, f64)> = positive(rows).map(|r| (r.t, r.trace_sup)).collect();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            let pts = pts.get(2..).unwrap_or(&[]);
            if pts.len() < 3 {
                return Verdict {
                    status: Status::Inconclusive,
                    ..v
                };
            }
            let (ts, ys): (Vec<f64>, Vec<f64>) = pts.iter().copied().unzip();
            let (c, alpha) = fit_blowup(&ts, &ys);
            let limit = (complex_dim as f64 - 1.0) + EXPONENT_SLACK;
            v.with("C", c)
                .with("alpha", alpha)
                .margin(alpha - limit)
                .decide(alpha <= limit)
        }
    }
}

/// `t sup S(t) <= C` over the positive samples.
pub fn third_order_bound(rows: &[SampleRow]) -> Verdict {
    let c = positive(rows).map(|r| r.t * r.s_sup).fold(0.0, f64::max);
    Verdict::new("third_order_bound", "t S(t) <= C")
        .with("C", c)
        .margin(0.0)
        .decide(c.is_finite())
}

/// Entropy `E = int f log f omega^n` nonnegative and nonincreasing, with
/// nonnegative dissipation. Only meaningful on a static background.
pub fn k_energy(rows: &[SampleRow], background_static: bool) -> Result<Verdict> {
    if !background_static {
        return Err(KrfError::UnsupportedConfiguration(
            "entropy monotonicity is only checked on a static background".into(),
        ));
    }
    let e0 = first_positive(rows).map_or(0.0, |r| r.k_energy);
    let e_min = rows.iter().map(|r| r.k_energy).fold(f64::INFINITY, f64::min);
    let increase = rows
        .windows(2)
        .map(|w| w[1].k_energy - w[0].k_energy)
        .fold(f64::NEG_INFINITY, f64::max);
    let d_min = rows.iter().map(|r| r.dissipation).fold(f64::INFINITY, f64::min);
    Ok(
        Verdict::new("k_energy", "E(t) = int f log f >= 0, dE/dt = -D <= 0")
            .with("E_0plus", e0)
            .with("E_end", rows.last().map_or(0.0, |r| r.k_energy))
            .with("max_increment", increase)
            .margin(increase - ENERGY_INCREMENT_TOL)
            .margin(ENERGY_FLOOR - e_min)
            .margin(-d_min)
            .decide(increase <= ENERGY_INCREMENT_TOL && e_min >= ENERGY_FLOOR && d_min >= 0.0),
    )
}

/// `int omega_phi^n = int omega_t^n` at every sample.
pub fn mass_identity(rows: &[SampleRow]) -> Verdict {
    let worst = rows
        .iter()
        .map(|r| ((r.mass - r.volume) / r.volume).abs())
        .fold(0.0, f64::max);
    Verdict::new("mass_identity", "int omega_phi^n = int omega_t^n")
        .with("max_relative_error", worst)
        .margin(worst - MASS_TOL)
        .decide(worst <= MASS_TOL)
}

/// `min f(t) > 0` at every positive sample.
pub fn positivity(rows: &[SampleRow]) -> Verdict {
    let m = positive(rows).map(|r| r.min_f).fold(f64::INFINITY, f64::min);
    Verdict::new("positivity", "omega_phi^n / omega_t^n > 0 for t > 0")
        .with("min_f", m)
        .margin(-m)
        .decide(m > 0.0)
}

/// Largest `|c_i - reference| / |reference|`.
pub fn relative_spread(values: &[f64], reference: f64) -> f64 {
    values
        .iter()
        .map(|v| (v - reference).abs() / reference.abs())
        .fold(0.0, f64::max)
}

/// `x^{-1/n} + 4 log x`.
pub fn scalar_inequality_lhs(x: f64, n: usize) -> f64 {
    x.powf(-1.0 / n as f64) + 4.0 * x.ln()
}

/// `4n (1 - log 4n)`.
pub fn scalar_inequality_bound(n: usize) -> f64 {
    let m = 4.0 * n as f64;
    m * (1.0 - m.ln())
}

/// `min_{0 < x <= 1e6} lhs(x) - bound`, by a dense log-spaced scan
/// refined with golden-section search.
pub fn scalar_inequality_margin(n: usize) -> f64 {
    let lhs = |u: f64| scalar_inequality_lhs(u.exp(), n);
    let (lo, hi) = (-40.0f64, 1e6f64.ln());
    let samples = 200_000;
    let du = (hi - lo) / samples as f64;
    let best = (0..=samples)
        .map(|i| lo + i as f64 * du)
        .min_by(|a, b| lhs(*a).total_cmp(&lhs(*b)))
        .unwrap();
    let (mut a, mut b) = ((best - du).max(lo), (best + du).min(hi));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    while b - a > 1e-12 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if lhs(c) < lhs(d) {
            b = d;
        } else {
            a = c;
        }
    }
    lhs(0.5 * (a + b)).min(lhs(best)) - scalar_inequality_bound(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{run, FlowConfig};
    use crate::initial_data::{gen_ridge_c11, smooth_mode};

    fn record_run(cfg: &FlowConfig, phi0: &ScalarField) -> Vec<SampleRow> {
        let grid = phi0.grid();
        let f0 = FlowState::new(phi0.clone(), 0.0, &cfg.background).unwrap().ratio;
        let rec = Recorder::new(cfg.background.clone(), f0, 3.0, 4.0, CutoffField::standard(grid))
            .unwrap();
        run(cfg, phi0)
            .unwrap()
            .samples
            .iter()
            .map(|s| rec.record(s).unwrap())
            .collect()
    }

    fn flat_cfg(n: usize, res: usize, t_end: f64, samples: Vec<f64>) -> FlowConfig {
        let grid = PeriodicGrid::new(n, res).unwrap();
        let mut cfg = FlowConfig::new(BackgroundFamily::flat(&grid, 1.0), t_end);
        cfg.sample_times = samples;
        cfg
    }

    #[test]
    fn scalar_inequality_minimum_is_attained() {
        for n in [1, 2] {
            let m = scalar_inequality_margin(n);
            assert!(m >= -1e-9 && m < 1e-9, "n = {n}: {m}");
            let x_star = (4.0 * n as f64).powi(-(n as i32));
            let at = scalar_inequality_lhs(x_star, n) - scalar_inequality_bound(n);
            assert!(at.abs() < 1e-12);
        }
    }

    #[test]
    fn standard_cutoff() {
        let grid = PeriodicGrid::new(1, 32).unwrap();
        let chi = CutoffField::standard(&grid);
        assert!((chi.sup() - 2.0).abs() < 1e-14);
        assert!((chi.sup_grad() - 2.0 * PI).abs() < 1e-2);
        assert!(CutoffField::new(ScalarField::from_fn(&grid, |x| (2.0 * PI * x[0]).cos())).is_err());
        let rough = ScalarField::from_fn(&grid, |x| 1.0 + (2.0 * PI * 12.0 * x[0]).cos());
        assert!(CutoffField::new(rough).is_err());
    }

    #[test]
    fn zero_data_gives_trivial_rows() {
        let cfg = flat_cfg(1, 16, 0.1, vec![0.0, 0.05, 0.1]);
        let grid = cfg.background.grid().clone();
        let rows = record_run(&cfg, &ScalarField::zeros(&grid));
        let chi = CutoffField::standard(&grid);
        let a2 = integrate(
            &gradient_norm_sq_from(&complex_gradient(chi.field()), &crate::fields::HermitianMatrixField::identity(&grid)),
            &ScalarField::constant(&grid, 1.0),
        );
        for r in &rows {
            assert_eq!((r.sup_phi, r.inf_phi, r.f_plus_sup, r.f_minus_inf), (0.0, 0.0, 0.0, 0.0));
            assert!((r.lp_trace - 1.0).abs() < 1e-14);
            assert!((r.trace_sup - 1.0).abs() < 1e-14);
            assert_eq!(r.s_sup, 0.0);
            assert_eq!(r.k_energy, 0.0);
            assert_eq!(r.l2_f_minus_f0, 0.0);
            assert_eq!(r.grad_phi_energy, 0.0);
            // |grad chi|^2 at g = I is half the Euclidean value 4 pi^2 sin^2.
            assert!((r.cutoff_energy - a2).abs() < 1e-12 && (a2 - PI * PI).abs() < 1e-9);
        }
        for v in [
            c0_bound(&rows, 0.0, 0.0, 0.0),
            volume_barriers(&rows),
            lp_trace(&[&rows]),
            claim_integrals(&rows),
            laplacian_bound(&rows, DataClass::C11, 1),
            third_order_bound(&rows),
            k_energy(&rows, true).unwrap(),
            mass_identity(&rows),
            positivity(&rows),
        ] {
            assert!(v.passed(), "{v}");
        }
        assert!(k_energy(&rows, false).is_err());
    }

    #[test]
    fn ridge_run_passes_core_monitors() {
        let samples: Vec<f64> = (0..=8).rev().map(|j| 0.02 * 2f64.powi(-j)).chain([0.0]).collect();
        let mut samples = samples;
        samples.sort_by(f64::total_cmp);
        let cfg = flat_cfg(1, 64, 0.02, samples);
        let grid = cfg.background.grid().clone();
        let phi0 = gen_ridge_c11(2.0, 1, 1, &grid).unwrap();
        let rows = record_run(&cfg, &phi0);
        assert!((rows[0].k_energy - 0.5 * (1.5 * 1.5f64.ln() + 0.5 * 0.5f64.ln())).abs() < 1e-12);
        assert!(c0_bound(&rows, phi0.inf(), phi0.sup(), 1e-6).passed());
        assert!(volume_barriers(&rows).passed());
        assert!(k_energy(&rows, true).unwrap().passed());
        assert!(mass_identity(&rows).passed());
        let lap = laplacian_bound(&rows, DataClass::C11, 1);
        // Spectral overshoot of the smoothed ridge stays within a few percent.
        assert!(lap.constant("C").unwrap() <= 1.5 * 1.02, "{lap}");
        assert!(rows.iter().all(|r| r.dissipation >= 0.0));
    }

    #[test]
    fn small_mode_entropy_decays_at_twice_the_rate() {
        let cfg = flat_cfg(1, 32, 0.05, vec![0.0, 0.05]);
        let grid = cfg.background.grid().clone();
        let rows = record_run(&cfg, &smooth_mode(1e-4, 1, 1, &grid).unwrap());
        let ratio = rows[1].k_energy / rows[0].k_energy;
        let expect = (-2.0 * PI * PI * 0.05f64).exp();
        assert!((ratio / expect - 1.0).abs() < 2e-2, "{ratio} vs {expect}");
    }

    #[test]
    fn gronwall_fit_recovers_model() {
        let s: Vec<(f64, f64)> = (0..20).map(|i| i as f64 * 0.01).map(|t| (t, 2.0 * (3.0 * t).exp() + 0.5 * t)).collect();
        let fit = fit_gronwall(&[s]);
        assert!(fit.residual < 1e-2, "{fit:?}");
        let flat: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 1.0 - 0.01 * i as f64)).collect();
        let fit = fit_gronwall(&[flat]);
        assert_eq!((fit.k, fit.k_prime, fit.residual), (0.0, 0.0, 0.0));
    }

    #[test]
    fn fits_recover_parameters() {
        let ts: Vec<f64> = (1..10).map(|j| 2f64.powi(-j)).collect();
        let ys: Vec<f64> = ts.iter().map(|t| 3.0 * t.powf(-0.7)).collect();
        let (c, alpha) = fit_blowup(&ts, &ys);
        assert!((c - 3.0).abs() < 1e-10 && (alpha - 0.7).abs() < 1e-12);

        let es: Vec<f64> = ts.iter().map(|t| 0.01 + 2.0 * t.powf(0.5)).collect();
        let (floor, c, alpha) = fit_floor_power(&ts, &es);
        assert!((floor - 0.01).abs() < 1e-9 && (c - 2.0).abs() < 1e-9 && (alpha - 0.5).abs() < 1e-9);

        let ys: Vec<f64> = ts.iter().map(|t| 2.0 * t + 0.5 * t.sqrt()).collect();
        let c = fit_nonnegative(&ts, &ys, &[|t| t, f64::sqrt]);
        assert!((c[0] - 2.0).abs() < 1e-9 && (c[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn linf_fit_needs_enough_samples() {
        let rows: Vec<SampleRow> = [0.0, 0.1, 0.2, 0.3]
            .iter()
            .map(|&t| SampleRow { t, trace_sup: 2.0, ..Default::default() })
            .collect();
        assert_eq!(laplacian_bound(&rows, DataClass::Linf, 2).status, Status::Inconclusive);
    }

    #[test]
    fn trace_rows_must_increase() {
        let mut trace = EstimateTrace::default();
        trace.push(SampleRow { t: 0.1, ..Default::default() }).unwrap();
        assert!(trace.push(SampleRow { t: 0.1, ..Default::default() }).is_err());
        assert!(trace.push(SampleRow { t: 0.2, min_f: f64::NAN, ..Default::default() }).is_err());
    }
}
