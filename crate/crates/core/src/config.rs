//! Run configuration: `key = value` lines, `[section]` headers, `#`
//! comments. Keys may also be written fully qualified (`initial.kind`).
//! Every key has a default and unknown keys are rejected.

use std::collections::HashMap;
use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::error::{KrfError, Result};
use crate::fields::{volume_ratio, HermitianMatrixField, PeriodicGrid, ScalarField};
use crate::flow::{FlowConfig, TimeGrid, DEFAULT_DT_MIN, DEFAULT_RATIO, DEFAULT_RETRY_SHRINK};
use crate::geometry::{twist_field, BackgroundFamily, TwistKind, DEFAULT_MARGIN, DEFAULT_T_MAX};
use crate::initial_data::{approx_family, RoughKind, RoughPotentialSpec, DEFAULT_TAU0};
use crate::monitors::DataClass;

const SECTIONS: [&str; 7] = [
    "grid",
    "background",
    "initial",
    "flow",
    "monitors",
    "output",
    "study",
];

#[derive(Clone, Debug, PartialEq)]
pub struct GridConfig {
    pub n: usize,
    pub resolution: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackgroundConfig {
    pub twist_kind: TwistKind,
    pub twist_amplitude: f64,
    pub margin: f64,
    pub t_max: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitialConfig {
    pub kind: RoughKind,
    /// `None`: the kind's default amplitude.
    pub amplitude: Option<f64>,
    pub frequency: usize,
    pub gamma: f64,
    pub p: f64,
    pub axis: usize,
    /// Approximation parameter of the single-run start `phi0(s)`.
    pub s: f64,
    pub tau0: f64,
    /// Values of `s` for `sweep-s`, descending.
    pub s_list: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowSection {
    pub t_end: f64,
    pub dt_max: f64,
    pub dt_init: f64,
    pub kappa: f64,
    pub geometric: bool,
    pub ratio: f64,
    pub t_floor: Option<f64>,
    pub retry_shrink: f64,
    pub dt_min: f64,
    /// `None`: `t_end 2^-j` (j = 0..20) together with `t_end k / 10`.
    pub samples: Option<Vec<f64>>,
    pub refinement: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonitorConfig {
    pub p: f64,
    /// `None`: `4 (1 + sup |Hess rho|)`.
    pub lambda: Option<f64>,
    /// `None`: derived from the initial-data kind.
    pub data_class: Option<DataClass>,
    pub c0_tol: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputConfig {
    pub dir: String,
    pub snapshots: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyConfig {
    pub n_ladder: Vec<usize>,
    /// Number of time-grid levels, each bisecting the previous one.
    pub dt_levels: u32,
    pub s_ladder: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub background: BackgroundConfig,
    pub initial: InitialConfig,
    pub flow: FlowSection,
    pub monitors: MonitorConfig,
    pub output: OutputConfig,
    pub study: StudyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            grid: GridConfig {
                n: 1,
                resolution: 256,
            },
            background: BackgroundConfig {
                twist_kind: TwistKind::None,
                twist_amplitude: 0.0,
                margin: DEFAULT_MARGIN,
                t_max: DEFAULT_T_MAX,
            },
            initial: InitialConfig {
                kind: RoughKind::Zero,
                amplitude: None,
                frequency: 1,
                gamma: 0.3,
                p: 3.0,
                axis: 1,
                s: 0.0,
                tau0: DEFAULT_TAU0,
                s_list: (1..=6).map(|j| 2f64.powi(-j)).collect(),
            },
            flow: FlowSection {
                t_end: 0.1,
                dt_max: 1e-3,
                dt_init: 1e-3,
                kappa: 1.0,
                geometric: true,
                ratio: DEFAULT_RATIO,
                t_floor: None,
                retry_shrink: DEFAULT_RETRY_SHRINK,
                dt_min: DEFAULT_DT_MIN,
                samples: None,
                refinement: 0,
            },
            monitors: MonitorConfig {
                p: 3.0,
                lambda: None,
                data_class: None,
                c0_tol: 1e-6,
            },
            output: OutputConfig {
                dir: "out".into(),
                snapshots: true,
            },
            study: StudyConfig {
                n_ladder: Vec::new(),
                dt_levels: 1,
                s_ladder: Vec::new(),
            },
        }
    }
}

type SetResult = std::result::Result<(), String>;

fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse()
        .map_err(|_| format!("expected {}, got `{v}`", std::any::type_name::<T>()))
}

fn opt<T: std::str::FromStr>(v: &str) -> std::result::Result<Option<T>, String> {
    if v == "auto" {
        Ok(None)
    } else {
        num(v).map(Some)
    }
}

fn list<T: std::str::FromStr>(v: &str) -> std::result::Result<Vec<T>, String> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| num(x.trim())).collect()
}

fn boolean(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got `{v}`")),
    }
}

fn fmt_list<T: std::fmt::Debug>(v: &[T]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("auto".into(), |x| format!("{x:?}"))
}

impl RunConfig {
    fn set(&mut self, key: &str, v: &str) -> SetResult {
        match key {
            "grid.n" => self.grid.n = num(v)?,
            "grid.N" => self.grid.resolution = num(v)?,
            "background.twist_kind" => {
                self.background.twist_kind =
                    TwistKind::parse(v).ok_or(format!("unknown twist kind `{v}`"))?
            }
            "background.twist_amplitude" => self.background.twist_amplitude = num(v)?,
            "background.margin" => self.background.margin = num(v)?,
            "background.t_max" => self.background.t_max = num(v)?,
            "initial.kind" => {
                self.initial.kind =
                    RoughKind::parse(v).ok_or(format!("unknown initial-data kind `{v}`"))?
            }
            "initial.amplitude" => self.initial.amplitude = opt(v)?,
            "initial.frequency" => self.initial.frequency = num(v)?,
            "initial.gamma" => self.initial.gamma = num(v)?,
            "initial.p" => self.initial.p = num(v)?,
            "initial.axis" => self.initial.axis = num(v)?,
            "initial.s" => self.initial.s = num(v)?,
            "initial.tau0" => self.initial.tau0 = num(v)?,
            "initial.s_list" => self.initial.s_list = list(v)?,
            "flow.t_end" => self.flow.t_end = num(v)?,
            "flow.dt_max" => self.flow.dt_max = num(v)?,
            "flow.dt_init" => self.flow.dt_init = num(v)?,
            "flow.kappa" => self.flow.kappa = num(v)?,
            "flow.time_grid" => {
                self.flow.geometric = match v {
                    "geometric" => true,
                    "uniform" => false,
                    _ => return Err(format!("expected uniform or geometric, got `{v}`")),
                }
            }
            "flow.ratio" => self.flow.ratio = num(v)?,
            "flow.t_floor" => self.flow.t_floor = opt(v)?,
            "flow.retry_shrink" => self.flow.retry_shrink = num(v)?,
            "flow.dt_min" => self.flow.dt_min = num(v)?,
            "flow.samples" => {
                self.flow.samples = if v == "auto" { None } else { Some(list(v)?) }
            }
            "flow.refinement" => self.flow.refinement = num(v)?,
            "monitors.p" => self.monitors.p = num(v)?,
            "monitors.lambda" => self.monitors.lambda = opt(v)?,
            "monitors.data_class" => {
                self.monitors.data_class = if v == "auto" {
                    None
                } else {
                    Some(DataClass::parse(v).ok_or(format!("expected c11, linf or auto, got `{v}`"))?)
                }
            }
            "monitors.c0_tol" => self.monitors.c0_tol = num(v)?,
            "output.dir" => self.output.dir = v.to_string(),
            "output.snapshots" => self.output.snapshots = boolean(v)?,
            "study.n_ladder" => self.study.n_ladder = list(v)?,
            "study.dt_levels" => self.study.dt_levels = num(v)?,
            "study.s_ladder" => self.study.s_ladder = list(v)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Canonical text: every key, fixed order, shortest round-trip floats.
    pub fn to_canonical(&self) -> String {
        let mut s = String::new();
        let g = &self.grid;
        let b = &self.background;
        let i = &self.initial;
        let f = &self.flow;
        let m = &self.monitors;
        let _ = write!(
            s,
            "[grid]\nn = {}\nN = {}\n\n\
             [background]\ntwist_kind = {}\ntwist_amplitude = {:?}\nmargin = {:?}\nt_max = {:?}\n\n\
             [initial]\nkind = {}\namplitude = {}\nfrequency = {}\ngamma = {:?}\np = {:?}\naxis = {}\ns = {:?}\ntau0 = {:?}\ns_list = {}\n\n",
            g.n,
            g.resolution,
            b.twist_kind.name(),
            b.twist_amplitude,
            b.margin,
            b.t_max,
            i.kind.name(),
            fmt_opt(i.amplitude),
            i.frequency,
            i.gamma,
            i.p,
            i.axis,
            i.s,
            i.tau0,
            fmt_list(&i.s_list),
        );
        let _ = write!(
            s,
            "[flow]\nt_end = {:?}\ndt_max = {:?}\ndt_init = {:?}\nkappa = {:?}\ntime_grid = {}\nratio = {:?}\nt_floor = {}\nretry_shrink = {:?}\ndt_min = {:?}\nsamples = {}\nrefinement = {}\n\n\
             [monitors]\np = {:?}\nlambda = {}\ndata_class = {}\nc0_tol = {:?}\n\n\
             [output]\ndir = {}\nsnapshots = {}\n\n\
             [study]\nn_ladder = {}\ndt_levels = {}\ns_ladder = {}\n",
            f.t_end,
            f.dt_max,
            f.dt_init,
            f.kappa,
            if f.geometric { "geometric" } else { "uniform" },
            f.ratio,
            fmt_opt(f.t_floor),
            f.retry_shrink,
            f.dt_min,
            f.samples.as_deref().map_or("auto".into(), fmt_list),
            f.refinement,
            m.p,
            fmt_opt(m.lambda),
            m.data_class.map_or("auto", |c| c.name()),
            m.c0_tol,
            self.output.dir,
            self.output.snapshots,
            fmt_list(&self.study.n_ladder),
            self.study.dt_levels,
            fmt_list(&self.study.s_ladder),
        );
        s
    }

    /// First 16 hex digits of the SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_canonical().as_bytes());
        hex::encode(digest)[..16].to_string()
    }

    /// Checks every constraint; errors name the offending key.
    fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        let fail = |key, msg: String| Err((key, msg));
        if let Err(e) = PeriodicGrid::new(self.grid.n, self.grid.resolution) {
            return fail("grid.N", e.to_string());
        }
        let b = &self.background;
        if !b.twist_amplitude.is_finite() {
            return fail("background.twist_amplitude", "must be finite".into());
        }
        if !(b.margin > 0.0 && b.margin < 1.0) {
            return fail("background.margin", format!("must lie in (0, 1), got {}", b.margin));
        }
        if !(b.t_max > 0.0) {
            return fail("background.t_max", format!("must be positive, got {}", b.t_max));
        }
        let i = &self.initial;
        if let Err(e) = self.initial_spec().validate() {
            let key = match e {
                KrfError::HypothesisViolation(_) => "initial.gamma",
                _ if i.frequency == 0 => "initial.frequency",
                _ => "initial.amplitude",
            };
            return fail(key, e.to_string());
        }
        if i.axis == 0 || i.axis > 2 * self.grid.n {
            return fail("initial.axis", format!("must lie in [1, {}], got {}", 2 * self.grid.n, i.axis));
        }
        if !(0.0..=1.0).contains(&i.s) {
            return fail("initial.s", format!("must lie in [0, 1], got {}", i.s));
        }
        if !(i.tau0 > 0.0) {
            return fail("initial.tau0", format!("must be positive, got {}", i.tau0));
        }
        if i.s_list.iter().any(|&s| !(s > 0.0 && s <= 1.0)) || i.s_list.windows(2).any(|w| !(w[0] > w[1])) {
            return fail("initial.s_list", "values must lie in (0, 1] and strictly descend".into());
        }
        let f = &self.flow;
        if !(f.t_end > 0.0) {
            return fail("flow.t_end", format!("must be positive, got {}", f.t_end));
        }
        if f.t_end > b.t_max {
            return fail("flow.t_end", format!("exceeds background.t_max = {}", b.t_max));
        }
        for (key, v) in [("flow.dt_max", f.dt_max), ("flow.dt_init", f.dt_init), ("flow.dt_min", f.dt_min)] {
            if !(v > 0.0) {
                return fail(key, format!("must be positive, got {v}"));
            }
        }
        if !(f.kappa >= 0.0) {
            return fail("flow.kappa", format!("must be >= 0, got {}", f.kappa));
        }
        if !(f.ratio > 1.0) {
            return fail("flow.ratio", format!("must exceed 1, got {}", f.ratio));
        }
        if let Some(tf) = f.t_floor {
            if !(tf > 0.0 && tf < f.t_end) {
                return fail("flow.t_floor", format!("must lie in (0, t_end), got {tf}"));
            }
        }
        if !(f.retry_shrink > 0.0 && f.retry_shrink < 1.0) {
            return fail("flow.retry_shrink", format!("must lie in (0, 1), got {}", f.retry_shrink));
        }
        if let Some(s) = &f.samples {
            if s.iter().any(|&t| !(0.0..=f.t_end).contains(&t)) || s.windows(2).any(|w| !(w[0] < w[1])) {
                return fail("flow.samples", "times must lie in [0, t_end] and strictly increase".into());
            }
        }
        if !(self.monitors.p >= 1.0) {
            return fail("monitors.p", format!("must be >= 1, got {}", self.monitors.p));
        }
        if let Some(l) = self.monitors.lambda {
            if !(l > 0.0) {
                return fail("monitors.lambda", format!("must be positive, got {l}"));
            }
        }
        if !(self.monitors.c0_tol >= 0.0) {
            return fail("monitors.c0_tol", "must be >= 0".into());
        }
        if self.output.dir.is_empty() {
            return fail("output.dir", "must not be empty".into());
        }
        for &n in &self.study.n_ladder {
            if let Err(e) = PeriodicGrid::new(self.grid.n, n) {
                return fail("study.n_ladder", e.to_string());
            }
        }
        if self.study.dt_levels == 0 {
            return fail("study.dt_levels", "must be >= 1".into());
        }
        if self.study.s_ladder.iter().any(|&s| !(0.0..=1.0).contains(&s)) {
            return fail("study.s_ladder", "values must lie in [0, 1]".into());
        }
        Ok(())
    }

    pub fn initial_spec(&self) -> RoughPotentialSpec {
        let i = &self.initial;
        let mut spec = RoughPotentialSpec::new(i.kind);
        if let Some(a) = i.amplitude {
            spec.amplitude = a;
        }
        spec.frequency = i.frequency;
        spec.gamma = i.gamma;
        spec.p = i.p;
        spec.axis = i.axis;
        spec
    }

    pub fn grid(&self) -> Result<PeriodicGrid> {
        PeriodicGrid::new(self.grid.n, self.grid.resolution)
    }

    pub fn background(&self, grid: &PeriodicGrid) -> Result<BackgroundFamily> {
        let b = &self.background;
        let twist = twist_field(b.twist_kind, b.twist_amplitude, grid);
        BackgroundFamily::new(&twist, b.margin, b.t_max)
    }

    /// The rough potential `phi0`.
    pub fn rough_potential(&self, grid: &PeriodicGrid) -> Result<ScalarField> {
        self.initial_spec().generate(grid)
    }

    /// Flat volume ratio of `phi0`, the reference for `||f(t) - f0||`.
    pub fn reference_ratio(&self, rough: &ScalarField) -> Result<ScalarField> {
        volume_ratio(rough, &HermitianMatrixField::identity(rough.grid()))
    }

    /// Start of a single run: `phi0(s)`.
    pub fn start_potential(&self, rough: &ScalarField) -> Result<ScalarField> {
        approx_family(rough, self.initial.s, self.initial.tau0)
    }

    pub fn sample_times(&self) -> Vec<f64> {
        let t_end = self.flow.t_end;
        if let Some(s) = &self.flow.samples {
            return s.clone();
        }
        let mut s: Vec<f64> = (0..=20)
            .map(|j| t_end * 2f64.powi(-j))
            .chain((0..=10).map(|k| t_end * k as f64 / 10.0))
            .collect();
        s.sort_by(f64::total_cmp);
        s.dedup();
        s
    }

    pub fn flow_config(&self, background: BackgroundFamily) -> FlowConfig {
        let f = &self.flow;
        let mut cfg = FlowConfig::new(background, f.t_end);
        cfg.dt_max = f.dt_max;
        cfg.dt_init = f.dt_init;
        cfg.kappa = f.kappa;
        cfg.time_grid = if f.geometric {
            TimeGrid::Geometric {
                ratio: f.ratio,
                t_floor: f.t_floor,
            }
        } else {
            TimeGrid::Uniform
        };
        cfg.sample_times = self.sample_times();
        cfg.retry_shrink = f.retry_shrink;
        cfg.dt_min = f.dt_min;
        cfg.refinement = f.refinement;
        cfg
    }

    pub fn lambda(&self, background: &BackgroundFamily) -> f64 {
        self.monitors
            .lambda
            .unwrap_or_else(|| 4.0 * (1.0 + background.twist_hessian_sup()))
    }

    pub fn data_class(&self) -> DataClass {
        self.monitors.data_class.unwrap_or(match self.initial.kind {
            RoughKind::CuspLp => DataClass::Linf,
            _ => DataClass::C11,
        })
    }
}

/// Parses and validates a configuration.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut lines: HashMap<String, usize> = HashMap::new();
    let mut section: Option<&str> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let err = |key: &str, message: String| KrfError::Config {
            line: line_no,
            key: key.to_string(),
            message,
        };
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| err(line, "unterminated section header".into()))?
                .trim();
            section = Some(
                SECTIONS
                    .iter()
                    .find(|s| **s == name)
                    .ok_or_else(|| err(name, "unknown section".into()))?,
            );
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(line, "expected `key = value`".into()))?;
        let (key, value) = (key.trim(), value.trim());
        let full = if key.contains('.') {
            key.to_string()
        } else {
            match section {
                Some(s) => format!("{s}.{key}"),
                None => return Err(err(key, "key outside a section".into())),
            }
        };
        if lines.insert(full.clone(), line_no).is_some() {
            return Err(err(&full, "duplicate key".into()));
        }
        cfg.set(&full, value).map_err(|m| err(&full, m))?;
    }
    cfg.check().map_err(|(key, message)| KrfError::Config {
        line: lines.get(key).copied().unwrap_or(0),
        key: key.to_string(),
        message,
    })?;
    Ok(cfg)
}
