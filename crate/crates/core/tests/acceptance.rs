//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any fails.

use std::f64::consts::PI;
use std::process::Command;
use std::time::{Duration, Instant};

use krflow_core::fields::{
    complex_hessian, gradient_norm_sq, metric_trace, third_order_s, HermitianMatrixField,
    PeriodicGrid, ScalarField,
};
use krflow_core::flow::{
    comparison_run, run, run_observed, s_sweep_observed, FlowConfig, TimeGrid,
};
use krflow_core::geometry::{background_form, BackgroundFamily};
use krflow_core::initial_data::{approx_family, gen_cusp_lp, gen_ridge_c11, smooth_mode, DEFAULT_TAU0};
use krflow_core::monitors::{
    self, relative_spread, scalar_inequality_margin, CutoffField, DataClass, Recorder, SampleRow,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn flat_config(n: usize, res: usize, t_end: f64) -> FlowConfig {
    let grid = PeriodicGrid::new(n, res).unwrap();
    FlowConfig::new(BackgroundFamily::flat(&grid, 1.0), t_end)
}

/// `t_end 2^-j` for `j = 0..20` together with `t_end k / 10`.
fn auto_samples(t_end: f64) -> Vec<f64> {
    let mut s: Vec<f64> = (0..=20)
        .map(|j| t_end * 2f64.powi(-j))
        .chain((0..=10).map(|k| t_end * k as f64 / 10.0))
        .collect();
    s.sort_by(f64::total_cmp);
    s.dedup();
    s
}

fn recorder(cfg: &FlowConfig, rough: &ScalarField, lambda: f64) -> Recorder {
    let grid = rough.grid();
    let f0 = krflow_core::fields::volume_ratio(rough, &HermitianMatrixField::identity(grid)).unwrap();
    Recorder::new(cfg.background.clone(), f0, 3.0, lambda, CutoffField::standard(grid)).unwrap()
}

fn record(cfg: &FlowConfig, start: &ScalarField, rec: &Recorder) -> Vec<SampleRow> {
    let mut rows = Vec::new();
    let log = run_observed(cfg, start, |s| {
        rows.push(rec.record(s)?);
        Ok(())
    })
    .unwrap();
    assert!(log.abort.is_none(), "{:?}", log.abort);
    rows
}

fn max_err(a: impl Iterator<Item = f64>) -> f64 {
    a.fold(0.0, f64::max)
}

fn spectral_case(n: usize, res: usize, tol: f64) -> (bool, String) {
    let grid = PeriodicGrid::new(n, res).unwrap();
    let amp = 0.05;
    // theta = 2 pi (x1 + y1) for n = 1, 2 pi (x1 + y2) for n = 2.
    let second = if n == 1 { 1 } else { 3 };
    let theta = |x: &[f64]| 2.0 * PI * (x[0] + x[second]);
    let phi = ScalarField::from_fn(&grid, |x| amp * theta(x).cos());
    let coords = |p: usize| -> Vec<f64> { (0..grid.real_dim()).map(|a| grid.coordinate(p, a)).collect() };

    let hess = complex_hessian(&phi);
    let hess_err = max_err((0..grid.point_count()).map(|p| {
        let th = theta(&coords(p));
        let c = amp * PI * PI * th.cos();
        let h = hess.at(p);
        if n == 1 {
            // phi_{z zbar} = Delta phi / 4 with |xi|^2 = 2 (2 pi)^2
            (h.entry(0, 0).re + 2.0 * c).abs()
        } else {
            let off = h.entry(0, 1) - num_complex::Complex64::new(0.0, -c);
            (h.entry(0, 0).re + c).abs().max((h.entry(1, 1).re + c).abs()).max(off.norm())
        }
    }));

    let id = HermitianMatrixField::identity(&grid);
    let tr = metric_trace(&id, &phi).unwrap();
    let tr_err = max_err((0..grid.point_count()).map(|p| {
        let c = amp * PI * PI * theta(&coords(p)).cos();
        (tr.values()[p] - (n as f64 - 2.0 * c)).abs()
    }));

    let gn = gradient_norm_sq(&phi, &id).unwrap();
    let gn_err = max_err((0..grid.point_count()).map(|p| {
        let s = theta(&coords(p)).sin();
        let exact = if n == 1 { 4.0 } else { 4.0 } * PI * PI * amp * amp * s * s;
        (gn.values()[p] - exact).abs()
    }));

    // S for a mode along one real axis: eps^2 pi^6 sin^2 / (1 - eps pi^2 cos)^3.
    let axis = if n == 1 { 0 } else { 3 };
    let mode = ScalarField::from_fn(&grid, |x| amp * (2.0 * PI * x[axis]).cos());
    let s = third_order_s(&mode, &id).unwrap();
    let s_err = max_err((0..grid.point_count()).map(|p| {
        let u = 2.0 * PI * grid.coordinate(p, axis);
        let exact = amp * amp * PI.powi(6) * u.sin().powi(2) / (1.0 - amp * PI * PI * u.cos()).powi(3);
        (s.values()[p] - exact).abs()
    }));
    let worst = hess_err.max(tr_err).max(gn_err).max(s_err);
    (
        worst <= tol,
        format!(
            "n={n} N={res}: hessian {hess_err:.1e}, trace {tr_err:.1e}, grad {gn_err:.1e}, S {s_err:.1e} (tol {tol:.0e})"
        ),
    )
}

fn c1_spectral() -> Outcome {
    let (a, da) = spectral_case(1, 64, 1e-10);
    let (b, db) = spectral_case(2, 32, 1e-8);
    outcome(a && b, format!("{da}; {db}"))
}

fn c2_linear_decay() -> Outcome {
    let eps = 1e-3;
    let t_end = 0.1;
    let mut cfg = flat_config(1, 128, t_end);
    cfg.dt_max = 2.5e-4;
    let phi0 = smooth_mode(eps, 1, 1, cfg.background.grid()).unwrap();
    let amp = run(&cfg, &phi0).unwrap().last().phi.sup_abs() / eps;
    let exact = (-PI * PI * t_end).exp();
    let rel = (amp / exact - 1.0).abs();

    let mut levels = Vec::new();
    for refinement in 0..3 {
        let mut c = flat_config(1, 128, t_end);
        c.time_grid = TimeGrid::Uniform;
        c.dt_init = 4e-3;
        c.refinement = refinement;
        levels.push(run(&c, &phi0).unwrap().last().phi.sup_abs());
    }
    let order = ((levels[0] - levels[1]) / (levels[1] - levels[2])).abs().log2();
    outcome(
        rel <= 1e-2 && order >= 0.9,
        format!("sup|phi(T)|/eps = {amp:.6} vs e^(-pi^2 T) = {exact:.6} (rel {rel:.2e}), dt order {order:.3}"),
    )
}

fn c3_contraction() -> Outcome {
    let mut cfg = flat_config(1, 256, 0.1);
    cfg.sample_times = auto_samples(0.1);
    let a = gen_ridge_c11(2.0, 1, 1, cfg.background.grid()).unwrap();
    let b = approx_family(&a, 0.25, DEFAULT_TAU0).unwrap();
    let cmp = comparison_run(&cfg, &a, &b).unwrap();
    let d_max = cmp.distances.iter().copied().fold(0.0, f64::max);
    outcome(
        cmp.passed,
        format!(
            "d(0) = {:.6e}, max_t d(t) = {d_max:.6e}, bound {:.6e}",
            cmp.initial_distance(),
            cmp.bound()
        ),
    )
}

fn ridge_rows(res: usize, refinement: u32) -> (Vec<SampleRow>, ScalarField) {
    let mut cfg = flat_config(1, res, 0.1);
    cfg.sample_times = auto_samples(0.1);
    cfg.refinement = refinement;
    let phi0 = gen_ridge_c11(2.0, 1, 1, cfg.background.grid()).unwrap();
    let rec = recorder(&cfg, &phi0, 4.0);
    (record(&cfg, &phi0, &rec), phi0)
}

fn c4_c0_bound() -> Outcome {
    let (rows, phi0) = ridge_rows(256, 0);
    let v = monitors::c0_bound(&rows, phi0.inf(), phi0.sup(), 1e-6);
    outcome(v.passed(), format!("worst margin {:.3e} (tol 1e-6)", v.worst_margin))
}

fn barrier_constants(phi0: &ScalarField, refinement: u32) -> (f64, f64, f64) {
    let mut cfg = flat_config(1, phi0.grid().resolution(), 0.1);
    cfg.sample_times = auto_samples(0.1);
    cfg.refinement = refinement;
    let rec = recorder(&cfg, phi0, 4.0);
    let rows = record(&cfg, phi0, &rec);
    let v = monitors::volume_barriers(&rows);
    let late = rows
        .iter()
        .filter(|r| r.t >= monitors::BARRIER_T1)
        .map(|r| r.min_f)
        .fold(f64::INFINITY, f64::min);
    let b_plus = v.constant("B_plus").unwrap();
    let b_minus = v.constant("B_minus").unwrap();
    (if v.passed() { late } else { -1.0 }, b_plus, b_minus)
}

fn c5_volume_bounds() -> Outcome {
    let grid = PeriodicGrid::new(1, 256).unwrap();
    let data = [
        ("ridge(2)", gen_ridge_c11(2.0, 1, 1, &grid).unwrap()),
        ("cusp(0.5,0.3)", gen_cusp_lp(0.5, 0.3, 3.0, 1, &grid).unwrap()),
    ];
    let mut pass = true;
    let mut detail = Vec::new();
    for (name, phi0) in &data {
        let (m0, bp0, bm0) = barrier_constants(phi0, 0);
        let (m1, bp1, bm1) = barrier_constants(phi0, 1);
        let sp = relative_spread(&[bp0], bp1);
        let sm = relative_spread(&[bm0], bm1);
        let ok = m0 > 0.0 && m1 > 0.0 && sp <= 0.1 && sm <= 0.1;
        pass &= ok;
        detail.push(format!(
            "{name}: min f(t>=1e-3) {:.4}, B+ {bp1:.5} (spread {sp:.1e}), B- {bm1:.5} (spread {sm:.1e})",
            m0.min(m1)
        ));
    }
    outcome(pass, detail.join("; "))
}

fn c6_lp_trace() -> Outcome {
    let mut cfg = flat_config(1, 256, 0.1);
    cfg.sample_times = auto_samples(0.1);
    let grid = cfg.background.grid().clone();
    let rough = gen_cusp_lp(0.5, 0.3, 3.0, 1, &grid).unwrap();
    let rec = recorder(&cfg, &rough, 4.0);
    let s_list: Vec<f64> = (1..=6).map(|j| 2f64.powi(-j)).collect();
    let slots: Vec<std::sync::Mutex<Vec<SampleRow>>> = s_list.iter().map(|_| Default::default()).collect();
    let (report, _) = s_sweep_observed(&cfg, &rough, &s_list, DEFAULT_TAU0, |s, _| {
        let slot = &slots[s_list.iter().position(|&x| x == s).unwrap()];
        let rec = &rec;
        move |state: &krflow_core::flow::FlowState| {
            slot.lock().unwrap().push(rec.record(state)?);
            Ok(())
        }
    })
    .unwrap();
    let rows: Vec<Vec<SampleRow>> = slots.into_iter().map(|m| m.into_inner().unwrap()).collect();
    let refs: Vec<&[SampleRow]> = rows.iter().map(|r| r.as_slice()).collect();
    let pooled = monitors::lp_trace(&refs);
    let worst_single = refs
        .iter()
        .map(|r| monitors::lp_trace(&[r]).constant("residual").unwrap())
        .fold(0.0, f64::max);
    let aborted = report.logs.iter().any(|l| l.abort.is_some());
    outcome(
        pooled.passed() && worst_single <= monitors::LP_RESIDUAL_TOL && !aborted,
        format!(
            "pooled residual {:.3e}, worst per-s residual {worst_single:.3e}, K {:.3}, K' {:.3}, max I_3 {:.4}",
            pooled.constant("residual").unwrap(),
            pooled.constant("K").unwrap(),
            pooled.constant("K_prime").unwrap(),
            pooled.constant("I_p_max").unwrap()
        ),
    )
}

fn c7_l2_convergence() -> Outcome {
    let t_end = 0.1;
    let times: Vec<f64> = (1..=8).map(|j| t_end * 2f64.powi(-j)).collect();
    let mut cfg = flat_config(1, 256, t_end);
    let mut samples = times.clone();
    samples.extend([0.0, t_end]);
    samples.sort_by(f64::total_cmp);
    cfg.sample_times = samples;
    let phi0 = gen_ridge_c11(2.0, 1, 1, cfg.background.grid()).unwrap();
    let rec = recorder(&cfg, &phi0, 4.0);
    let rows = record(&cfg, &phi0, &rec);
    // ||f0 - 1|| = a / 4 for the two-level ratio 1 +- a/4.
    let dev = 0.5;
    let v = monitors::l2_initial_convergence(&rows, dev, &times);
    outcome(
        v.passed(),
        format!(
            "floor {:.3e} (limit {:.3e}), M_chi residual {:.2e}, worst increase {:.2e}",
            v.constant("e_floor").unwrap(),
            v.constant("floor_limit").unwrap(),
            v.constant("M_chi_residual").unwrap(),
            v.worst_margin
        ),
    )
}

/// `max_t sup tr_{omega_t} omega_phi` for the ridge started at `phi0(s)`.
fn trace_constant(n: usize, res: usize, s: f64) -> f64 {
    let mut cfg = flat_config(n, res, 0.1);
    cfg.sample_times = auto_samples(0.1);
    let rough = gen_ridge_c11(2.0, 1, 1, cfg.background.grid()).unwrap();
    let start = approx_family(&rough, s, DEFAULT_TAU0).unwrap();
    let mut c: f64 = 0.0;
    let log = run_observed(&cfg, &start, |st| {
        let g = background_form(&cfg.background, st.t)?;
        c = c.max(metric_trace(&g, &st.phi)?.sup());
        Ok(())
    })
    .unwrap();
    assert!(log.abort.is_none());
    c
}

fn c8_laplacian() -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    let ladders: [(usize, Vec<(usize, f64)>); 4] = [
        (1, vec![(64, 0.0), (128, 0.0), (256, 0.0)]),
        (1, vec![(256, 2f64.powi(-4)), (256, 2f64.powi(-6)), (256, 2f64.powi(-8))]),
        (2, vec![(16, 0.0), (32, 0.0)]),
        (2, vec![(16, 2f64.powi(-4)), (16, 2f64.powi(-6)), (16, 2f64.powi(-8))]),
    ];
    for (n, rungs) in ladders {
        let start = Instant::now();
        let cs: Vec<f64> = rungs.iter().map(|&(res, s)| trace_constant(n, res, s)).collect();
        let spread = relative_spread(&cs, *cs.last().unwrap());
        let elapsed = start.elapsed();
        let ok = spread <= 0.1 && (n == 1 || elapsed < Duration::from_secs(600));
        pass &= ok;
        let labels: Vec<String> = rungs
            .iter()
            .zip(&cs)
            .map(|((res, s), c)| format!("N={res},s={s}:{c:.4}"))
            .collect();
        detail.push(format!("n={n} [{}] spread {spread:.2e} ({:.0?})", labels.join(" "), elapsed));
    }
    outcome(pass, detail.join("; "))
}

fn c9_smoothing() -> Outcome {
    let t_end = 0.125;
    let mut cfg = flat_config(2, 16, t_end);
    let mut samples: Vec<f64> = (3..=8).map(|j| 2f64.powi(-j)).collect();
    samples.push(0.0);
    samples.sort_by(f64::total_cmp);
    cfg.sample_times = samples;
    let rough = gen_cusp_lp(0.5, 0.3, 3.0, 1, cfg.background.grid()).unwrap();
    let rec = recorder(&cfg, &rough, 4.0);
    let rows = record(&cfg, &rough, &rec);
    let lap = monitors::laplacian_bound(&rows, DataClass::Linf, 2);
    let alpha = lap.constant("alpha").unwrap_or(f64::NAN);

    let cs: Vec<f64> = (0..3)
        .map(|refinement| {
            let (rows, _) = ridge_rows(256, refinement);
            monitors::third_order_bound(&rows).constant("C").unwrap()
        })
        .collect();
    let spread = relative_spread(&cs, cs[2]);
    outcome(
        lap.passed() && spread <= 0.2,
        format!(
            "cusp n=2 N=16 trace exponent alpha = {alpha:.3} (limit 1.3); t sup S constants {:.4}/{:.4}/{:.4} spread {spread:.2e}",
            cs[0], cs[1], cs[2]
        ),
    )
}

/// `int_0^1 f log f` for the two-level ratio `f = 1 + (a/4) sign(cos 2 pi x)`
/// by midpoint quadrature.
fn two_level_entropy(a: f64) -> f64 {
    let m = 1_000_000;
    (0..m)
        .map(|i| {
            let x = (i as f64 + 0.5) / m as f64;
            let f = 1.0 + 0.25 * a * (2.0 * PI * x).cos().signum();
            f * f.ln()
        })
        .sum::<f64>()
        / m as f64
}

fn c10_k_energy() -> Outcome {
    let oracle = two_level_entropy(2.0);
    let (rows, _) = ridge_rows(256, 0);
    let v = monitors::k_energy(&rows, true).unwrap();
    let e0 = v.constant("E_0plus").unwrap();
    let rel = (e0 / oracle - 1.0).abs();
    outcome(
        v.passed() && rel <= 0.02 && (oracle - 0.1308).abs() < 1e-4,
        format!(
            "E(0+) = {e0:.6} vs quadrature {oracle:.6} (rel {rel:.2e}), max increment {:.2e}",
            v.constant("max_increment").unwrap()
        ),
    )
}

fn c11_scalar_inequality() -> Outcome {
    let m1 = scalar_inequality_margin(1);
    let m2 = scalar_inequality_margin(2);
    outcome(
        m1 >= -1e-9 && m2 >= -1e-9,
        format!("min margin n=1 {m1:.2e}, n=2 {m2:.2e}"),
    )
}

fn c12_reproducibility() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("ridge.cfg");
    std::fs::write(
        &cfg,
        "[grid]\nN = 64\n[initial]\nkind = ridge_c11\namplitude = 2\n[output]\nsnapshots = false\n",
    )
    .unwrap();
    let mut traces = Vec::new();
    for i in 0..2 {
        let out = dir.path().join(format!("run{i}"));
        let status = Command::new(env!("CARGO_BIN_EXE_krflow"))
            .arg("run")
            .arg(&cfg)
            .env("KRFLOW_OUT", &out)
            .status()
            .unwrap();
        traces.push((status.code(), std::fs::read(out.join("trace.csv")).unwrap_or_default()));
    }
    let same = !traces[0].1.is_empty() && traces[0].1 == traces[1].1;
    outcome(
        same,
        format!("exit codes {:?}/{:?}, {} bytes, identical: {same}", traces[0].0, traces[1].0, traces[0].1.len()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Option<u64>); 12] = [
        ("1 spectral correctness", c1_spectral, Some(10)),
        ("2 linearized decay", c2_linear_decay, Some(30)),
        ("3 sup-norm contraction", c3_contraction, Some(120)),
        ("4 C0 bound", c4_c0_bound, None),
        ("5 volume-ratio barriers", c5_volume_bounds, None),
        ("6 Lp trace growth", c6_lp_trace, None),
        ("7 L2 initial convergence", c7_l2_convergence, None),
        ("8 uniform Laplacian bound", c8_laplacian, None),
        ("9 smoothing rates", c9_smoothing, None),
        ("10 entropy decay", c10_k_energy, None),
        ("11 scalar inequality", c11_scalar_inequality, None),
        ("12 reproducibility", c12_reproducibility, None),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check, limit) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let o = check();
        let elapsed = start.elapsed();
        let in_time = limit.map_or(true, |s| elapsed < Duration::from_secs(s));
        let pass = o.pass && in_time;
        if !pass {
            failed += 1;
        }
        let budget = limit.map_or(String::new(), |s| format!(", limit {s}s"));
        println!(
            "criterion {name:<28} {} ({:.1?}{budget}) {}",
            if pass { "PASS" } else { "FAIL" },
            elapsed,
            o.detail
        );
    }
    if failed > 0 {
        println!("acceptance: {failed} criterion(s) failed");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
