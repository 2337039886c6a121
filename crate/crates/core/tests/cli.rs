use std::path::Path;
use std::process::Command;

fn krflow(args: &[&str], out: &Path) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_krflow"))
        .args(args)
        .env("KRFLOW_OUT", out)
        .status()
        .unwrap()
        .code()
        .unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.cfg");
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn defaults_pass() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[grid]\nN = 32\n");
    let out = dir.path().join("out");
    assert_eq!(krflow(&["run", &cfg], &out), 0);
    assert!(out.join("trace.csv").exists());
    assert!(out.join("snapshots").is_dir());
}

#[test]
fn ridge_report_lists_monitors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[grid]\nN = 64\n[initial]\nkind = ridge_c11\namplitude = 2\n[output]\nsnapshots = false\n",
    );
    let out = dir.path().join("out");
    assert_eq!(krflow(&["run", &cfg], &out), 0);
    let report = std::fs::read_to_string(out.join("report.txt")).unwrap();
    let verdicts = report.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()).count();
    assert!(verdicts >= 8, "{report}");
    assert!(report.contains("# result:"));
}

#[test]
fn lost_positivity_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[grid]\nN = 64\n[initial]\nkind = ridge_c11\namplitude = 2\n\
         [flow]\nkappa = 0\ntime_grid = uniform\ndt_init = 10\ndt_max = 10\ndt_min = 1\n\
         [output]\nsnapshots = false\n",
    );
    assert_eq!(krflow(&["run", &cfg], &dir.path().join("out")), 2);
}

#[test]
fn bad_config_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[grid]\nbogus = 3\n");
    assert_eq!(krflow(&["run", &cfg], &dir.path().join("out")), 1);
    let cfg = write_config(dir.path(), "[grid]\nN = 32\n");
    assert_eq!(krflow(&["study", &cfg], &dir.path().join("out")), 1);
}

#[test]
fn gen_writes_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[grid]\nN = 32\n[initial]\nkind = cusp_lp\namplitude = 0.5\n");
    let out = dir.path().join("out");
    assert_eq!(krflow(&["gen", &cfg], &out), 0);
    assert!(out.join("phi0.krf").exists());
}

#[test]
fn sweep_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[grid]\nN = 32\n[initial]\nkind = ridge_c11\namplitude = 2\ns_list = 0.25, 0.125\n[flow]\nt_end = 0.02\n",
    );
    let out = dir.path().join("out");
    let code = krflow(&["sweep-s", &cfg], &out);
    assert!(code == 0 || code == 3, "exit {code}");
    assert!(out.join("sweep.csv").exists());
    assert!(out.join("trace_s0.csv").exists());
}
