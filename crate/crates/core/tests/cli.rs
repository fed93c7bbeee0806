use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pucci-eigen"))
}

fn run(args: &[&str], config: Option<&str>, out: &Path) -> i32 {
    let mut cmd = bin();
    cmd.args(args).arg("--out").arg(out);
    if let Some(text) = config {
        let path = out.with_extension("toml");
        std::fs::write(&path, text).unwrap();
        cmd.arg("--config").arg(path);
    }
    cmd.output().unwrap().status.code().unwrap()
}

fn read(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const DISC: &str = "[domain]\nkind = \"ball\"\ncenter = [0.0, 0.0]\nradius = 1.0\n[grid]\nh = 0.03125\n";

#[test]
fn eigen_on_the_default_interval() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert_eq!(run(&["eigen"], None, &out), 0);
    let rec = read(&out.join("eigen.json"));
    let lam = rec["lambda_hat"].as_f64().unwrap();
    assert!((lam - 2.467).abs() < 0.02, "{lam}");
    assert_eq!(rec["config"]["operator"]["eps_reg"], 0.0);
    assert_eq!(rec["config"]["grid"]["stencil_width"], 1);
    for f in ["eigenfunction.csv", "eigenfunction.bin", "eigenfunction.dat", "meta.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert_eq!(rec["eigenfunction_path"], "eigenfunction.csv");
}

#[test]
fn axioms_hold_to_rounding() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ax");
    let cfg = "[operator]\na = 0.5\nA = 3.0\nalpha = -0.5\n[command]\nkind = \"verify-operator\"\nsamples = 20000\n";
    assert_eq!(run(&["verify-operator"], Some(cfg), &out), 0);
    let rec = read(&out.join("axioms.json"));
    assert!(rec["max_residual"].as_f64().unwrap() <= 1e-10);
    // eps_reg defaulted from h for a singular operator
    assert_eq!(rec["config"]["operator"]["eps_reg"], 1.0 / 128.0);
}

#[test]
fn radial_and_grid_estimates_agree() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("radial"), dir.path().join("grid"));
    assert_eq!(run(&["radial"], Some(DISC), &a), 0);
    let eig = format!("{DISC}[command]\nkind = \"eigen\"\nbracket_tol = 0.05\n");
    assert_eq!(run(&["eigen"], Some(&eig), &b), 0);
    let r = read(&a.join("radial.json"));
    let g = read(&b.join("eigen.json"));
    let (lr, lg) = (r["lambda_hat"].as_f64().unwrap(), g["lambda_hat"].as_f64().unwrap());
    assert!((lr - 5.783185962946784).abs() < 1e-6, "{lr}");
    // bracket widths plus the O(h^2) grid error
    assert!((lr - lg).abs() <= 0.05 + 0.15, "{lr} {lg}");
    assert!(a.join("profile.dat").exists());
}

#[test]
fn records_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let cfg = format!("{DISC}[command]\nkind = \"barrier\"\n");
    assert_eq!(run(&["barrier", "--seed", "11", "--threads", "1"], Some(&cfg), &a), 0);
    assert_eq!(run(&["barrier", "--seed", "11", "--threads", "4"], Some(&cfg), &b), 0);
    assert_eq!(std::fs::read(a.join("barrier.json")).unwrap(), std::fs::read(b.join("barrier.json")).unwrap());
    assert_eq!(read(&a.join("barrier.json"))["config"]["seed"], 11);
    assert_eq!(read(&a.join("meta.json"))["threads"], 1);
}

#[test]
fn unknown_key_exits_two_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bad");
    assert_eq!(run(&["eigen"], Some("[operator]\nalpa = 1.0\n"), &out), 2);
    let d = read(&out.join("error.json"));
    assert_eq!(d["error"], "config");
    assert!(d["message"].as_str().unwrap().contains("alpa"));
}

#[test]
fn alpha_at_the_limit_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bad");
    assert_eq!(run(&["solve"], Some("[operator]\nalpha = -1.0\n"), &out), 2);
    assert!(read(&out.join("error.json"))["message"].as_str().unwrap().contains("alpha"));
}

#[test]
fn failed_certificate_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bar");
    let cfg = "[command]\nkind = \"barrier\"\nwhich = \"boundary\"\ngamma = 0.99\ndelta = 0.05\n\
               [domain]\nkind = \"star\"\ncenter = [0.0, 0.0]\ncos = [1.0, 0.0, 0.0, 0.2]\n[grid]\nh = 0.03125\n";
    assert_eq!(run(&["barrier"], Some(cfg), &out), 4);
    let d = read(&out.join("error.json"));
    assert_eq!(d["error"], "barrier-failure");
    assert_eq!(d["point"].as_array().unwrap().len(), 2);
}

#[test]
fn stalled_solve_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("solve");
    let cfg = format!("{DISC}[operator]\nA = 2.0\nalpha = 1.0\n[command]\nkind = \"solve\"\nmax_steps = 1\ntol = 1e-12\n");
    assert_eq!(run(&["solve"], Some(&cfg), &out), 3);
    assert_eq!(read(&out.join("error.json"))["error"], "non-convergence");
}

#[test]
fn comparison_with_unordered_data_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (ok, bad) = (dir.path().join("ok"), dir.path().join("bad"));
    let base = format!("{DISC}[operator]\nA = 2.0\n");
    assert_eq!(run(&["compare"], Some(&format!("{base}[command]\nkind = \"compare\"\nlambda = 2.0\n")), &ok), 0);
    let rec = read(&ok.join("compare.json"));
    assert_eq!(rec["comparison"]["holds"], true);
    assert!(rec["uniqueness_gap"].as_f64().unwrap() <= rec["uniqueness_bound"].as_f64().unwrap());
    let swapped = format!("{base}[command]\nkind = \"compare\"\nf = -0.5\ng = -1.0\n");
    assert_eq!(run(&["compare"], Some(&swapped), &bad), 2);
    let rec = read(&bad.join("compare.json"));
    assert_eq!(rec["status"], "rejected");
    assert!(rec["comparison"]["rejected"].as_str().unwrap().contains("f ="));
}

#[test]
fn singular_operator_reports_a_second_regularization() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sing");
    let cfg = "[operator]\nalpha = -0.5\n[grid]\nh = 0.03125\n[command]\nkind = \"eigen\"\nbracket_tol = 0.02\n";
    assert_eq!(run(&["eigen"], Some(cfg), &out), 0);
    let rec = read(&out.join("eigen.json"));
    let alt = &rec["eps_sensitivity"];
    assert_eq!(alt["eps_reg"].as_f64().unwrap(), 0.5 * 0.03125);
    let (l1, l2) = (rec["lambda_hat"].as_f64().unwrap(), alt["lambda_hat"].as_f64().unwrap());
    assert!(l1.is_finite() && l2.is_finite() && l1 > 0.0 && l2 > 0.0, "{l1} {l2}");
    assert_eq!(alt["lambda_hat_shift"].as_f64().unwrap(), l2 - l1);

    let smooth = dir.path().join("smooth");
    assert_eq!(run(&["eigen"], Some("[grid]\nh = 0.03125\n"), &smooth), 0);
    assert!(read(&smooth.join("eigen.json")).get("eps_sensitivity").is_none());
}
