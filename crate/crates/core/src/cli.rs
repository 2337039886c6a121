//! Command-line front end: `krflow run|sweep-s|study|gen <config>`.
//!
//! Exit codes: 0 all monitors pass, 1 configuration error, 2 numerical
//! abort, 3 monitor failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crate::config::{parse_config, RunConfig};
use crate::error::{KrfError, Result};
use crate::fields::{integrate, snapshot, ScalarField};
use crate::flow::{run_observed, s_sweep_observed, AbortRecord, FlowState, SweepReport};
use crate::monitors::{
    self, relative_spread, CutoffField, DataClass, EstimateTrace, Recorder, SampleRow, Status,
    TraceMeta, Verdict, TRACE_COLUMNS,
};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_ABORT: i32 = 2;
pub const EXIT_MONITOR: i32 = 3;

/// Environment variable overriding `output.dir`.
pub const OUT_ENV: &str = "KRFLOW_OUT";

/// Stability tolerance of fitted constants across refinements.
pub const STABILITY_TOL: f64 = 0.10;
pub const THIRD_ORDER_STABILITY_TOL: f64 = 0.20;
pub const MIN_DT_ORDER: f64 = 0.9;

#[derive(Parser, Debug)]
#[command(name = "krflow", version, about = "Kahler-Ricci potential flow on the flat torus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one flow and all monitors.
    Run { config: PathBuf },
    /// Run the approximation sweep over `initial.s_list`.
    SweepS { config: PathBuf },
    /// Refinement study over the `[study]` ladders.
    Study { config: PathBuf },
    /// Write only the initial-data snapshot.
    Gen { config: PathBuf },
}

/// `%.17g` formatting as in C `printf`.
pub fn format_g17(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.into();
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0" } else { "0" }.into();
    }
    let sci = format!("{:.16e}", x.abs());
    let (mantissa, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    let digits: String = mantissa.chars().filter(|c| *c != '.').collect();
    let sign = if x < 0.0 { "-" } else { "" };
    let trim = |s: String| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    };
    if exp < -4 || exp >= 17 {
        let m = trim(format!("{}.{}", &digits[..1], &digits[1..]));
        let e_sign = if exp < 0 { '-' } else { '+' };
        format!("{sign}{m}e{e_sign}{:02}", exp.abs())
    } else if exp >= 0 {
        let split = exp as usize + 1;
        trim(format!("{sign}{}.{}", &digits[..split], &digits[split..]))
    } else {
        let zeros = "0".repeat((-exp - 1) as usize);
        trim(format!("{sign}0.{zeros}{digits}"))
    }
}

/// Writes `trace.csv`: a hash comment line, the fixed header, one row per
/// sample.
pub fn write_trace(path: &Path, trace: &EstimateTrace, extra: &[String]) -> Result<()> {
    let mut s = format!("# config_hash={}\n", trace.meta.config_hash);
    for line in extra {
        s.push_str(&format!("# {line}\n"));
    }
    s.push_str(&TRACE_COLUMNS.join(","));
    s.push('\n');
    for row in trace.rows() {
        let cells: Vec<String> = row.trace_values().iter().map(|v| format_g17(*v)).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

fn exit_code_for(err: &KrfError) -> i32 {
    match err {
        KrfError::PositivityLost { .. }
        | KrfError::GeometryDegenerate { .. }
        | KrfError::DegenerateMetric { .. }
        | KrfError::IllConditionedMetric { .. } => EXIT_ABORT,
        _ => EXIT_CONFIG,
    }
}

/// Everything derived once from a validated configuration.
pub struct Scenario {
    pub config: RunConfig,
    pub hash: String,
    pub background: crate::geometry::BackgroundFamily,
    pub rough: ScalarField,
    pub reference_ratio: ScalarField,
    pub recorder: Recorder,
}

impl Scenario {
    /// `hash` is normally `config.hash()`, computed before any output-dir
    /// override so the artifacts do not depend on where they are written.
    pub fn new(config: RunConfig, hash: String) -> Result<Self> {
        let grid = config.grid()?;
        let background = config.background(&grid)?;
        let rough = config.rough_potential(&grid)?;
        let reference_ratio = config.reference_ratio(&rough)?;
        let recorder = Recorder::new(
            background.clone(),
            reference_ratio.clone(),
            config.monitors.p,
            config.lambda(&background),
            CutoffField::standard(&grid),
        )?;
        Ok(Self {
            config,
            hash,
            background,
            rough,
            reference_ratio,
            recorder,
        })
    }

    pub fn meta(&self) -> TraceMeta {
        TraceMeta {
            config_hash: self.hash.clone(),
            complex_dim: self.config.grid.n,
            resolution: self.config.grid.resolution,
            initial: format!(
                "kind={} amplitude={} s={}",
                self.config.initial.kind.name(),
                self.config.initial_spec().amplitude,
                self.config.initial.s
            ),
        }
    }

    /// `t_end 2^-j`, `j = 1..8`: times used for the L2 convergence check.
    pub fn convergence_times(&self) -> Vec<f64> {
        (1..=8).map(|j| self.config.flow.t_end * 2f64.powi(-j)).collect()
    }

    /// Every per-trajectory monitor on the rows of a run started at `start`.
    pub fn evaluate(&self, rows: &[SampleRow], start: &ScalarField) -> Vec<Verdict> {
        let one = ScalarField::constant(start.grid(), 1.0);
        let dev = integrate(&self.reference_ratio.map(|f| (f - 1.0).powi(2)), &one).sqrt();
        let k = monitors::k_energy(rows, self.background.is_static()).unwrap_or_else(|_| Verdict {
            monitor: "k_energy",
            status: Status::Skipped,
            constants: Vec::new(),
            worst_margin: 0.0,
            anchor: "static background only",
        });
        vec![
            monitors::c0_bound(rows, start.inf(), start.sup(), self.config.monitors.c0_tol),
            monitors::volume_barriers(rows),
            monitors::lp_trace(&[rows]),
            monitors::claim_integrals(rows),
            monitors::l2_initial_convergence(rows, dev, &self.convergence_times()),
            monitors::laplacian_bound(rows, self.config.data_class(), self.config.grid.n),
            monitors::third_order_bound(rows),
            k,
            monitors::mass_identity(rows),
            monitors::positivity(rows),
        ]
    }
}

/// Outcome of a command, before conversion to an exit code.
#[derive(Debug, Default)]
pub struct Outcome {
    pub verdicts: Vec<Verdict>,
    pub aborts: Vec<AbortRecord>,
    /// Extra failures not carried by a verdict (Cauchy or stability checks).
    pub failed_checks: Vec<String>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if !self.aborts.is_empty() {
            EXIT_ABORT
        } else if !self.failed_checks.is_empty()
            || self.verdicts.iter().any(|v| v.status == Status::Fail)
        {
            EXIT_MONITOR
        } else {
            EXIT_PASS
        }
    }
}

fn abort_line(a: &AbortRecord) -> String {
    format!("abort at t={} dt={:e}: {}", a.t, a.dt, a.error)
}

fn write_report(path: &Path, scenario: &Scenario, lines: &[String], outcome: &Outcome) -> Result<()> {
    let meta = scenario.meta();
    let mut s = format!(
        "# krflow report\n# config_hash={}\n# grid n={} N={}\n# initial {}\n",
        meta.config_hash, meta.complex_dim, meta.resolution, meta.initial
    );
    for line in lines {
        s.push_str(line);
        s.push('\n');
    }
    for a in &outcome.aborts {
        s.push_str(&format!("# {}\n", abort_line(a)));
    }
    for c in &outcome.failed_checks {
        s.push_str(&format!("# failed: {c}\n"));
    }
    let result = match outcome.exit_code() {
        EXIT_PASS => "pass",
        EXIT_ABORT => "abort",
        _ => "fail",
    };
    s.push_str(&format!("# result: {result}\n"));
    fs::write(path, s)?;
    Ok(())
}

/// One trajectory: rows recorded at every sample, optional snapshots.
pub struct RunResult {
    pub trace: EstimateTrace,
    pub abort: Option<AbortRecord>,
    pub start: ScalarField,
}

pub fn simulate(scenario: &Scenario, snapshots: Option<&Path>) -> Result<RunResult> {
    let start = scenario.config.start_potential(&scenario.rough)?;
    let flow_cfg = scenario.config.flow_config(scenario.background.clone());
    let mut trace = EstimateTrace::new(scenario.meta());
    let mut index = 0;
    let log = run_observed(&flow_cfg, &start, |state: &FlowState| {
        trace.push(scenario.recorder.record(state)?)?;
        if let Some(dir) = snapshots {
            snapshot::write(&dir.join(format!("phi_{index:04}.krf")), &state.phi, state.t)?;
        }
        index += 1;
        Ok(())
    })?;
    Ok(RunResult {
        trace,
        abort: log.abort,
        start,
    })
}

pub fn cmd_run(scenario: &Scenario, out: &Path) -> Result<Outcome> {
    fs::create_dir_all(out)?;
    let snap_dir = out.join("snapshots");
    if scenario.config.output.snapshots {
        fs::create_dir_all(&snap_dir)?;
    }
    let result = simulate(scenario, scenario.config.output.snapshots.then_some(snap_dir.as_path()))?;
    write_trace(&out.join("trace.csv"), &result.trace, &[])?;
    let mut outcome = Outcome::default();
    if let Some(a) = result.abort {
        outcome.aborts.push(a);
    } else {
        outcome.verdicts = scenario.evaluate(result.trace.rows(), &result.start);
    }
    let lines: Vec<String> = outcome.verdicts.iter().map(|v| v.to_string()).collect();
    write_report(&out.join("report.txt"), scenario, &lines, &outcome)?;
    Ok(outcome)
}

pub fn cmd_sweep_s(scenario: &Scenario, out: &Path) -> Result<Outcome> {
    fs::create_dir_all(out)?;
    let cfg = &scenario.config;
    let s_list = &cfg.initial.s_list;
    if s_list.is_empty() {
        return Err(KrfError::Config {
            line: 0,
            key: "initial.s_list".into(),
            message: "sweep-s needs at least one s value".into(),
        });
    }
    let flow_cfg = cfg.flow_config(scenario.background.clone());
    let slots: Vec<Mutex<(EstimateTrace, Option<ScalarField>)>> = s_list
        .iter()
        .map(|_| Mutex::new((EstimateTrace::new(scenario.meta()), None)))
        .collect();
    let (report, _) = s_sweep_observed(
        &flow_cfg,
        &scenario.rough,
        s_list,
        cfg.initial.tau0,
        |s, start| {
            let slot = &slots[s_list.iter().position(|&x| x == s).unwrap()];
            slot.lock().unwrap().1 = Some(start.clone());
            move |state: &FlowState| {
                let row = scenario.recorder.record(state)?;
                slot.lock().unwrap().0.push(row)
            }
        },
    )?;
    let runs: Vec<(EstimateTrace, ScalarField)> = slots
        .into_iter()
        .map(|m| {
            let (trace, start) = m.into_inner().unwrap();
            (trace, start.unwrap())
        })
        .collect();

    let mut outcome = Outcome::default();
    let mut lines = Vec::new();
    for (i, ((trace, start), log)) in runs.iter().zip(&report.logs).enumerate() {
        let s = s_list[i];
        write_trace(&out.join(format!("trace_s{i}.csv")), trace, &[format!("s={s:?}")])?;
        if let Some(a) = &log.abort {
            outcome.aborts.push(a.clone());
            continue;
        }
        for v in scenario.evaluate(trace.rows(), start) {
            lines.push(format!("s={s:<10} {v}"));
            outcome.verdicts.push(v);
        }
    }
    if outcome.aborts.is_empty() {
        let rows: Vec<&[SampleRow]> = runs.iter().map(|(t, _)| t.rows()).collect();
        let pooled = monitors::lp_trace(&rows);
        lines.push(format!("pooled     {pooled}"));
        outcome.verdicts.push(pooled);
    }
    lines.push(format!(
        "cauchy                   {} monotone={}",
        if report.passed { "pass" } else { "fail" },
        report.monotone
    ));
    if !report.passed && outcome.aborts.is_empty() {
        outcome.failed_checks.push("uniform Cauchy property across s".into());
    }
    write_sweep_csv(&out.join("sweep.csv"), scenario, &report)?;
    write_report(&out.join("report.txt"), scenario, &lines, &outcome)?;
    Ok(outcome)
}

fn write_sweep_csv(path: &Path, scenario: &Scenario, report: &SweepReport) -> Result<()> {
    let mut s = format!(
        "# config_hash={}\n# class={} kind={}\ns_a,s_b,initial_gap,sup_gap,pass\n",
        scenario.hash,
        scenario.config.data_class().name(),
        scenario.config.initial.kind.name()
    );
    for g in &report.gaps {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            format_g17(g.s_a),
            format_g17(g.s_b),
            format_g17(g.initial),
            format_g17(g.sup_over_t),
            g.passed
        ));
    }
    s.push_str(&format!(
        "# cauchy={} monotone={}\n",
        if report.passed { "pass" } else { "fail" },
        report.monotone
    ));
    fs::write(path, s)?;
    Ok(())
}

/// Fitted constants of one rung of a refinement study.
#[derive(Clone, Debug, PartialEq)]
pub struct Rung {
    pub ladder: &'static str,
    pub value: f64,
    pub trace_c: f64,
    pub third_order_c: f64,
    pub b_plus: f64,
    pub b_minus: f64,
    pub phi_end_sup: f64,
}

fn rung(ladder: &'static str, value: f64, scenario: &Scenario) -> Result<(Rung, Option<AbortRecord>)> {
    let result = simulate(scenario, None)?;
    let rows = result.trace.rows();
    let verdicts = scenario.evaluate(rows, &result.start);
    let get = |name: &str, key: &str| {
        verdicts
            .iter()
            .find(|v| v.monitor == name)
            .and_then(|v| v.constant(key))
            .unwrap_or(f64::NAN)
    };
    let r = Rung {
        ladder,
        value,
        trace_c: get("laplacian_bound", "C"),
        third_order_c: get("third_order_bound", "C"),
        b_plus: get("volume_barriers", "B_plus"),
        b_minus: get("volume_barriers", "B_minus"),
        phi_end_sup: rows.last().map_or(f64::NAN, |r| r.sup_phi.abs().max(r.inf_phi.abs())),
    };
    Ok((r, result.abort))
}

fn spread(values: &[f64]) -> f64 {
    let reference = *values.last().unwrap();
    if values.iter().all(|&v| v == reference) {
        0.0
    } else {
        relative_spread(values, reference)
    }
}

/// Observed order `log2(|u0 - u1| / |u1 - u2|)` from the last three levels.
pub fn observed_order(values: &[f64]) -> f64 {
    let n = values.len();
    let (a, b, c) = (values[n - 3], values[n - 2], values[n - 1]);
    ((a - b).abs() / (b - c).abs()).log2()
}

pub fn cmd_study(scenario: &Scenario, out: &Path) -> Result<Outcome> {
    let cfg = &scenario.config;
    let study = &cfg.study;
    if study.n_ladder.is_empty() && study.s_ladder.is_empty() && study.dt_levels < 2 {
        return Err(KrfError::Config {
            line: 0,
            key: "study".into(),
            message: "study needs a non-empty n_ladder or s_ladder, or dt_levels >= 2".into(),
        });
    }
    fs::create_dir_all(out)?;
    let mut jobs: Vec<(&'static str, f64, RunConfig)> = Vec::new();
    for &n in &study.n_ladder {
        let mut c = cfg.clone();
        c.grid.resolution = n;
        jobs.push(("N", n as f64, c));
    }
    if study.dt_levels >= 2 {
        for level in 0..study.dt_levels {
            let mut c = cfg.clone();
            c.flow.refinement = cfg.flow.refinement + level;
            jobs.push(("dt", level as f64, c));
        }
    }
    for &s in &study.s_ladder {
        let mut c = cfg.clone();
        c.initial.s = s;
        jobs.push(("s", s, c));
    }
    let results: Vec<(Rung, Option<AbortRecord>)> = jobs
        .into_par_iter()
        .map(|(ladder, value, c)| {
            let sc = Scenario::new(c, scenario.hash.clone())?;
            rung(ladder, value, &sc)
        })
        .collect::<Result<_>>()?;

    let mut outcome = Outcome::default();
    let mut csv = format!(
        "# config_hash={}\nladder,value,trace_C,tS_C,B_plus,B_minus,phi_T_sup\n",
        scenario.hash
    );
    for (r, abort) in &results {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.ladder,
            format_g17(r.value),
            format_g17(r.trace_c),
            format_g17(r.third_order_c),
            format_g17(r.b_plus),
            format_g17(r.b_minus),
            format_g17(r.phi_end_sup)
        ));
        if let Some(a) = abort {
            outcome.aborts.push(a.clone());
        }
    }
    csv.push_str("# stability\nladder,constant,value,tolerance,verdict\n");
    let mut lines = Vec::new();
    for ladder in ["N", "dt", "s"] {
        let rungs: Vec<&Rung> = results.iter().map(|r| &r.0).filter(|r| r.ladder == ladder).collect();
        if rungs.len() < 2 {
            continue;
        }
        let mut checks: Vec<(&str, f64, f64, bool)> = Vec::new();
        let col = |f: fn(&Rung) -> f64| rungs.iter().map(|r| f(r)).collect::<Vec<f64>>();
        if cfg.data_class() == DataClass::C11 {
            let s = spread(&col(|r| r.trace_c));
            checks.push(("trace_C", s, STABILITY_TOL, s <= STABILITY_TOL));
        }
        let s = spread(&col(|r| r.b_plus));
        checks.push(("B_plus", s, STABILITY_TOL, s <= STABILITY_TOL));
        let s = spread(&col(|r| r.b_minus));
        checks.push(("B_minus", s, STABILITY_TOL, s <= STABILITY_TOL));
        if ladder == "dt" {
            let s = spread(&col(|r| r.third_order_c));
            checks.push(("tS_C", s, THIRD_ORDER_STABILITY_TOL, s <= THIRD_ORDER_STABILITY_TOL));
            if rungs.len() >= 3 {
                let order = observed_order(&col(|r| r.phi_end_sup));
                checks.push(("order", order, MIN_DT_ORDER, !(order < MIN_DT_ORDER)));
            }
        }
        for (name, value, tol, ok) in checks {
            let verdict = if ok { "pass" } else { "fail" };
            csv.push_str(&format!(
                "{ladder},{name},{},{},{verdict}\n",
                format_g17(value),
                format_g17(tol)
            ));
            lines.push(format!("stability {ladder:<3} {name:<8} {verdict:<5} value={value:.6e} tol={tol}"));
            if !ok {
                outcome.failed_checks.push(format!("{ladder} ladder: {name}"));
            }
        }
    }
    fs::write(out.join("study.csv"), csv)?;
    write_report(&out.join("report.txt"), scenario, &lines, &outcome)?;
    Ok(outcome)
}

pub fn cmd_gen(scenario: &Scenario, out: &Path) -> Result<Outcome> {
    fs::create_dir_all(out)?;
    let start = scenario.config.start_potential(&scenario.rough)?;
    snapshot::write(&out.join("phi0.krf"), &start, 0.0)?;
    Ok(Outcome::default())
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_PASS };
        }
    };
    let (path, command): (&Path, fn(&Scenario, &Path) -> Result<Outcome>) = match &cli.command {
        Command::Run { config } => (config, cmd_run),
        Command::SweepS { config } => (config, cmd_sweep_s),
        Command::Study { config } => (config, cmd_study),
        Command::Gen { config } => (config, cmd_gen),
    };
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("krflow: cannot read {}: {e}", path.display());
            return EXIT_CONFIG;
        }
    };
    let mut config = match parse_config(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("krflow: {}: {e}", path.display());
            return EXIT_CONFIG;
        }
    };
    let hash = config.hash();
    if let Ok(dir) = std::env::var(OUT_ENV) {
        if !dir.is_empty() {
            config.output.dir = dir;
        }
    }
    let out = PathBuf::from(&config.output.dir);
    let result = Scenario::new(config, hash).and_then(|sc| command(&sc, &out));
    match result {
        Ok(outcome) => {
            for a in &outcome.aborts {
                eprintln!("krflow: {}", abort_line(a));
            }
            for v in outcome.verdicts.iter().filter(|v| v.status == Status::Fail) {
                eprintln!("krflow: monitor failed: {v}");
            }
            for c in &outcome.failed_checks {
                eprintln!("krflow: check failed: {c}");
            }
            outcome.exit_code()
        }
        Err(e) => {
            eprintln!("krflow: {e}");
            exit_code_for(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g17_matches_printf() {
        // Reference strings from C printf("%.17g").
        let cases = [
            (0.1, "0.10000000000000001"),
            (1.0, "1"),
            (-2.5, "-2.5"),
            (1e-5, "1.0000000000000001e-05"),
            (123456.789, "123456.789"),
            (1e17, "1e+17"),
            (1e16, "10000000000000000"),
            (0.0001, "0.0001"),
            (std::f64::consts::PI, "3.1415926535897931"),
            (9.5367431640625e-08, "9.5367431640625005e-08"),
            (0.0, "0"),
        ];
        for (x, want) in cases {
            assert_eq!(format_g17(x), want, "{x:e}");
            assert_eq!(format_g17(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn observed_order_of_first_order_sequence() {
        let u = [1.0 + 0.4, 1.0 + 0.2, 1.0 + 0.1];
        assert!((observed_order(&u) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn outcome_codes() {
        let mut o = Outcome::default();
        assert_eq!(o.exit_code(), EXIT_PASS);
        o.failed_checks.push("x".into());
        assert_eq!(o.exit_code(), EXIT_MONITOR);
        assert_eq!(exit_code_for(&KrfError::PositivityLost { point: 0, value: 0.0 }), EXIT_ABORT);
        assert_eq!(exit_code_for(&KrfError::ConeViolation("a".into())), EXIT_CONFIG);
    }
}
