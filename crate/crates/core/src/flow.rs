//! Time integration of `d phi/dt = log(omega_phi^n / omega_t^n) - h_t`.
//!
//! The step is stabilized semi-implicit: with `L = 1 - dt kappa Delta / 4`
//! inverted exactly in Fourier space,
//! `phi+ = L^{-1}[phi + dt (rhs(phi) - kappa Delta phi / 4)] = phi + dt L^{-1} rhs(phi)`.
//! No mean renormalization is applied.

use rayon::prelude::*;

use crate::error::{KrfError, Result};
use crate::fields::{ma_ratio, ScalarField};
use crate::geometry::{background_form, ricci_potential, BackgroundFamily};
use crate::initial_data::approx_family;

pub const DEFAULT_KAPPA: f64 = 1.0;
pub const DEFAULT_RATIO: f64 = 1.3;
pub const DEFAULT_FLOOR_FRACTION: f64 = 1e-6;
pub const DEFAULT_RETRY_SHRINK: f64 = 0.5;
pub const DEFAULT_DT_MIN: f64 = 1e-12;

/// Relative slack allowed on the sup-distance of two flows.
pub const CONTRACTION_SLACK: f64 = 1e-2;
/// Absolute slack for the same check (roundoff on identical data).
pub const CONTRACTION_ABS_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TimeGrid {
    /// Nodes `k dt_init`.
    Uniform,
    /// Nodes `0, t_floor, t_floor r, t_floor r^2, ...` with steps capped at
    /// `dt_max`, then uniform `dt_max`. `t_floor = None` means
    /// `1e-6 T_end`.
    Geometric { ratio: f64, t_floor: Option<f64> },
}

impl Default for TimeGrid {
    fn default() -> Self {
        TimeGrid::Geometric {
            ratio: DEFAULT_RATIO,
            t_floor: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FlowConfig {
    pub t_end: f64,
    pub dt_max: f64,
    pub dt_init: f64,
    pub kappa: f64,
    pub time_grid: TimeGrid,
    pub sample_times: Vec<f64>,
    pub background: BackgroundFamily,
    pub retry_shrink: f64,
    pub dt_min: f64,
    /// Number of times every interval of the node grid is bisected.
    pub refinement: u32,
}

impl FlowConfig {
    /// Defaults on `background`, sampling only `0` and `t_end`.
    pub fn new(background: BackgroundFamily, t_end: f64) -> Self {
        Self {
            t_end,
            dt_max: 1e-3,
            dt_init: 1e-3,
            kappa: DEFAULT_KAPPA,
            time_grid: TimeGrid::default(),
            sample_times: vec![0.0, t_end],
            background,
            retry_shrink: DEFAULT_RETRY_SHRINK,
            dt_min: DEFAULT_DT_MIN,
            refinement: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(KrfError::InvalidArgument(msg));
        if !(self.t_end > 0.0) {
            return bad(format!("t_end must be positive, got {}", self.t_end));
        }
        if self.t_end > self.background.horizon() {
            return Err(KrfError::HorizonExceeded {
                t: self.t_end,
                horizon: self.background.horizon(),
            });
        }
        if !(self.dt_max > 0.0 && self.dt_init > 0.0 && self.dt_min > 0.0) {
            return bad("dt_max, dt_init and dt_min must be positive".into());
        }
        if !(self.kappa >= 0.0) {
            return bad(format!("kappa must be >= 0, got {}", self.kappa));
        }
        if !(self.retry_shrink > 0.0 && self.retry_shrink < 1.0) {
            return bad(format!(
                "retry_shrink must lie in (0, 1), got {}",
                self.retry_shrink
            ));
        }
        if let TimeGrid::Geometric { ratio, t_floor } = self.time_grid {
            if !(ratio > 1.0) {
                return bad(format!("geometric ratio must exceed 1, got {ratio}"));
            }
            if let Some(f) = t_floor {
                if !(f > 0.0 && f < self.t_end) {
                    return bad(format!("t_floor must lie in (0, t_end), got {f}"));
                }
            }
        }
        if self.sample_times.windows(2).any(|w| !(w[0] < w[1])) {
            return bad("sample_times must be strictly increasing".into());
        }
        if self
            .sample_times
            .iter()
            .any(|&t| !(0.0..=self.t_end).contains(&t))
        {
            return bad("sample_times must lie in [0, t_end]".into());
        }
        Ok(())
    }

    /// Sorted sample times, always containing `0` and `t_end`.
    pub fn samples(&self) -> Vec<f64> {
        let mut s = self.sample_times.clone();
        s.push(0.0);
        s.push(self.t_end);
        s.sort_by(f64::total_cmp);
        s.dedup();
        s
    }
}

/// Node grid the driver steps between: the configured grid merged with the
/// sample times, then bisected `refinement` times.
pub fn time_nodes(cfg: &FlowConfig) -> Vec<f64> {
    let t_end = cfg.t_end;
    let mut nodes = vec![0.0];
    match cfg.time_grid {
        TimeGrid::Uniform => {
            let mut k = 1u64;
            while (k as f64) * cfg.dt_init < t_end {
                nodes.push(k as f64 * cfg.dt_init);
                k += 1;
            }
        }
        TimeGrid::Geometric { ratio, t_floor } => {
            let mut t = t_floor.unwrap_or(DEFAULT_FLOOR_FRACTION * t_end);
            while t < t_end {
                nodes.push(t);
                t = (t * ratio).min(t + cfg.dt_max);
            }
        }
    }
    nodes.push(t_end);

    // Merge samples, letting a sample replace any node closer than this.
    let snap = 1e-9 * t_end;
    let samples = cfg.samples();
    nodes.retain(|t| samples.iter().all(|s| (s - t).abs() > snap));
    nodes.extend(samples);
    nodes.sort_by(f64::total_cmp);
    nodes.dedup();

    for _ in 0..cfg.refinement {
        let mut finer = Vec::with_capacity(2 * nodes.len());
        for w in nodes.windows(2) {
            finer.push(w[0]);
            finer.push(0.5 * (w[0] + w[1]));
        }
        finer.push(*nodes.last().unwrap());
        nodes = finer;
    }
    nodes
}

/// Flow state with cached `f = omega_phi^n / omega_t^n` and `phi' = log f - h_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowState {
    pub t: f64,
    pub phi: ScalarField,
    pub ratio: ScalarField,
    pub phidot: ScalarField,
}

impl FlowState {
    pub fn new(phi: ScalarField, t: f64, background: &BackgroundFamily) -> Result<Self> {
        let g_t = background_form(background, t)?;
        let ratio = ma_ratio(&phi, &g_t)?;
        let (h, _) = ricci_potential(background, t)?;
        let phidot = ratio.zip_map(&h, |f, h| f.ln() - h)?;
        Ok(Self {
            t,
            phi,
            ratio,
            phidot,
        })
    }
}

/// `log(omega_phi^n / omega_t^n) - h_t`.
pub fn rhs(phi: &ScalarField, t: f64, background: &BackgroundFamily) -> Result<ScalarField> {
    Ok(FlowState::new(phi.clone(), t, background)?.phidot)
}

/// One stabilized semi-implicit step of size `dt`.
pub fn step(state: &FlowState, dt: f64, cfg: &FlowConfig) -> Result<FlowState> {
    if !(dt > 0.0) {
        return Err(KrfError::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    advance(state, state.t + dt, cfg)
}

fn advance(state: &FlowState, t_new: f64, cfg: &FlowConfig) -> Result<FlowState> {
    let dt = t_new - state.t;
    let c = 0.25 * cfg.kappa * dt;
    let increment = state
        .phidot
        .spectrum()
        .radial_multiplier(|k2| dt / (1.0 + c * k2))
        .to_field();
    let phi = state.phi.zip_map(&increment, |a, b| a + b)?;
    FlowState::new(phi, t_new, &cfg.background)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    /// Time reached by the step.
    pub t: f64,
    pub dt: f64,
    /// Attempts rejected for positivity before this step was accepted.
    pub rejected: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AbortRecord {
    /// Last accepted time.
    pub t: f64,
    /// Step size of the final failed attempt.
    pub dt: f64,
    pub error: KrfError,
}

/// Step log of a run; `abort` is set when the driver gave up.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunLog {
    pub steps: Vec<StepRecord>,
    pub abort: Option<AbortRecord>,
}

impl RunLog {
    pub fn rejected_total(&self) -> u32 {
        self.steps.iter().map(|s| s.rejected).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// States at the sample times reached, starting with `t = 0`.
    pub samples: Vec<FlowState>,
    pub log: RunLog,
}

impl Trajectory {
    pub fn last(&self) -> &FlowState {
        self.samples.last().expect("trajectory has the t = 0 sample")
    }
}

/// Integrates from `phi0` to `t_end`, handing every sampled state to
/// `observe`. Positivity failures inside the run are retried with smaller
/// steps and end in an abort record; errors from `observe` and from the
/// initial state are returned directly.
pub fn run_observed(
    cfg: &FlowConfig,
    phi0: &ScalarField,
    mut observe: impl FnMut(&FlowState) -> Result<()>,
) -> Result<RunLog> {
    cfg.validate()?;
    cfg.background.grid().check_same(phi0.grid())?;
    let nodes = time_nodes(cfg);
    let samples = cfg.samples();
    let mut next_sample = 0;
    let mut log = RunLog::default();

    let mut state = FlowState::new(phi0.clone(), 0.0, &cfg.background)?;
    observe(&state)?;
    next_sample += 1;

    for w in nodes.windows(2) {
        let target = w[1];
        let mut dt = target - state.t;
        let mut rejected = 0;
        while state.t < target {
            let t_new = if dt >= target - state.t {
                target
            } else {
                state.t + dt
            };
            match advance(&state, t_new, cfg) {
                Ok(next) => {
                    log.steps.push(StepRecord {
                        t: t_new,
                        dt: t_new - state.t,
                        rejected,
                    });
                    rejected = 0;
                    state = next;
                    dt /= cfg.retry_shrink;
                }
                Err(err @ KrfError::PositivityLost { .. }) => {
                    rejected += 1;
                    dt *= cfg.retry_shrink;
                    if dt < cfg.dt_min {
                        log.abort = Some(AbortRecord {
                            t: state.t,
                            dt,
                            error: err,
                        });
                        return Ok(log);
                    }
                }
                Err(err) => {
                    log.abort = Some(AbortRecord {
                        t: state.t,
                        dt: t_new - state.t,
                        error: err,
                    });
                    return Ok(log);
                }
            }
        }
        if next_sample < samples.len() && samples[next_sample] == target {
            observe(&state)?;
            next_sample += 1;
        }
    }
    Ok(log)
}

pub fn run(cfg: &FlowConfig, phi0: &ScalarField) -> Result<Trajectory> {
    let mut samples = Vec::new();
    let log = run_observed(cfg, phi0, |s| {
        samples.push(s.clone());
        Ok(())
    })?;
    Ok(Trajectory { samples, log })
}

fn sampled_potentials(cfg: &FlowConfig, phi0: &ScalarField) -> Result<(Vec<(f64, ScalarField)>, RunLog)> {
    let mut out = Vec::new();
    let log = run_observed(cfg, phi0, |s| {
        out.push((s.t, s.phi.clone()));
        Ok(())
    })?;
    Ok((out, log))
}

/// `d(t) = sup |phi_A(t) - phi_B(t)|` along two flows on the same grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub times: Vec<f64>,
    pub distances: Vec<f64>,
    /// Worst `d(t) - bound` over the samples (non-positive on success).
    pub worst_margin: f64,
    pub passed: bool,
    pub aborts: Vec<AbortRecord>,
}

impl Comparison {
    pub fn initial_distance(&self) -> f64 {
        self.distances[0]
    }

    pub fn bound(&self) -> f64 {
        self.initial_distance() * (1.0 + CONTRACTION_SLACK) + CONTRACTION_ABS_TOL
    }
}

fn compare(a: &[(f64, ScalarField)], b: &[(f64, ScalarField)]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut times = Vec::new();
    let mut distances = Vec::new();
    for ((ta, pa), (tb, pb)) in a.iter().zip(b) {
        debug_assert_eq!(ta, tb);
        times.push(*ta);
        distances.push(pa.sup_distance(pb)?);
    }
    Ok((times, distances))
}

/// Runs both flows (concurrently) and checks `d(t) <= d(0)(1 + 1e-2)` at
/// every common sample.
pub fn comparison_run(
    cfg: &FlowConfig,
    phi0_a: &ScalarField,
    phi0_b: &ScalarField,
) -> Result<Comparison> {
    let (ra, rb) = rayon::join(
        || sampled_potentials(cfg, phi0_a),
        || sampled_potentials(cfg, phi0_b),
    );
    let ((sa, la), (sb, lb)) = (ra?, rb?);
    let (times, distances) = compare(&sa, &sb)?;
    let bound = distances[0] * (1.0 + CONTRACTION_SLACK) + CONTRACTION_ABS_TOL;
    let worst_margin = distances
        .iter()
        .map(|d| d - bound)
        .fold(f64::NEG_INFINITY, f64::max);
    let aborts: Vec<_> = la.abort.into_iter().chain(lb.abort).collect();
    Ok(Comparison {
        times,
        distances,
        worst_margin,
        passed: worst_margin <= 0.0 && aborts.is_empty(),
        aborts,
    })
}

/// Uniform-in-time gap between the flows from two consecutive `s`.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepGap {
    pub s_a: f64,
    pub s_b: f64,
    pub initial: f64,
    pub sup_over_t: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub s_list: Vec<f64>,
    pub gaps: Vec<SweepGap>,
    /// Whether `sup_over_t` decreases along the list.
    pub monotone: bool,
    pub passed: bool,
    pub logs: Vec<RunLog>,
}

/// Runs the flow from every `approx_family(phi0, s, tau0)` in parallel and
/// checks the uniform Cauchy property between consecutive `s`. `make`
/// builds one sample observer per `s`; the observers are returned in
/// `s_list` order.
pub fn s_sweep_observed<O, M>(
    cfg: &FlowConfig,
    phi0: &ScalarField,
    s_list: &[f64],
    tau0: f64,
    make: M,
) -> Result<(SweepReport, Vec<O>)>
where
    O: FnMut(&FlowState) -> Result<()> + Send,
    M: Fn(f64, &ScalarField) -> O + Sync,
{
    if s_list.iter().any(|&s| !(s > 0.0 && s <= 1.0)) {
        return Err(KrfError::InvalidArgument("s values must lie in (0, 1]".into()));
    }
    if s_list.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(KrfError::InvalidArgument(
            "s values must be strictly descending".into(),
        ));
    }
    let results: Vec<_> = s_list
        .par_iter()
        .map(|&s| -> Result<_> {
            let start = approx_family(phi0, s, tau0)?;
            let mut observer = make(s, &start);
            let mut sampled = Vec::new();
            let log = run_observed(cfg, &start, |state| {
                sampled.push((state.t, state.phi.clone()));
                observer(state)
            })?;
            Ok((sampled, log, observer))
        })
        .collect::<Result<_>>()?;

    let mut gaps = Vec::new();
    for (i, pair) in results.windows(2).enumerate() {
        let (_, distances) = compare(&pair[0].0, &pair[1].0)?;
        let initial = distances[0];
        let sup_over_t = distances.iter().copied().fold(0.0, f64::max);
        gaps.push(SweepGap {
            s_a: s_list[i],
            s_b: s_list[i + 1],
            initial,
            sup_over_t,
            passed: sup_over_t <= initial * (1.0 + CONTRACTION_SLACK) + CONTRACTION_ABS_TOL,
        });
    }
    let monotone = gaps.windows(2).all(|w| w[1].sup_over_t <= w[0].sup_over_t);
    let mut logs = Vec::new();
    let mut observers = Vec::new();
    for (_, log, obs) in results {
        logs.push(log);
        observers.push(obs);
    }
    let aborted = logs.iter().any(|l| l.abort.is_some());
    let report = SweepReport {
        s_list: s_list.to_vec(),
        passed: !aborted && gaps.iter().all(|g| g.passed),
        gaps,
        monotone,
        logs,
    };
    Ok((report, observers))
}

pub fn s_sweep(
    cfg: &FlowConfig,
    phi0: &ScalarField,
    s_list: &[f64],
    tau0: f64,
) -> Result<SweepReport> {
    Ok(s_sweep_observed(cfg, phi0, s_list, tau0, |_, _| |_: &FlowState| Ok(()))?.0)
}
