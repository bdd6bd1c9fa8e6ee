use jeans_cli::config::RunConfig;
use proptest::prelude::*;
use serde_json::Value;
use std::path::Path;
use std::process::{Command, Output};

fn jeans(args: &[&str], config: Option<&str>, dir: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_jeans"));
    if let Some(c) = config {
        let p = dir.join("config.json");
        std::fs::write(&p, c).unwrap();
        cmd.arg("--config").arg(p);
    }
    cmd.arg("--out").arg(dir.join("out")).args(args).output().unwrap()
}

fn summary(dir: &Path, cmd: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("out").join(cmd).join("summary.json")).unwrap()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn params_special_case() {
    let d = tempfile::tempdir().unwrap();
    let o = jeans(&["params", "--k-scan"], None, d.path());
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["constants"]["triangle"].as_f64().unwrap() - 5.0 / 3.0).abs() < 1e-12);
    let scan = std::fs::read_to_string(d.path().join("out/params/k_scan.csv")).unwrap();
    assert!(scan.starts_with("k,lambda1,lambda2,lambda3\n"));
    assert_eq!(scan.lines().count(), 200);
}

#[test]
fn invalid_c_exits_with_config_error() {
    let d = tempfile::tempdir().unwrap();
    let o = jeans(&["params"], Some(r#"{"params": {"a": 1.3333, "b": 0.6667, "c": 1.6, "k": 2}}"#), d.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("1<c<3/2"));
}

#[test]
fn unknown_keys_and_bad_json_are_rejected() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&jeans(&["params"], Some(r#"{"pde": {"nn": 3}}"#), d.path())), 2);
    assert_eq!(code(&jeans(&["params"], Some(r#"{"bogus": 1}"#), d.path())), 2);
    assert_eq!(code(&jeans(&["params"], Some("{"), d.path())), 2);
    assert_eq!(code(&jeans(&["pde"], Some(r#"{"pde": {"dim": 4}}"#), d.path())), 2);
}

#[test]
fn unreachable_stop_level_is_a_runtime_error() {
    let d = tempfile::tempdir().unwrap();
    let o = jeans(&["pde"], Some(r#"{"ode": {"y_max": 1e3}, "pde": {"n": 16}}"#), d.path());
    assert_eq!(code(&o), 1);
}

#[test]
fn thread_cap_must_be_positive() {
    let d = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_jeans")).env("JEANS_THREADS", "0").arg("params").arg("--out").arg(d.path()).output().unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn ode_finite_time_case() {
    let d = tempfile::tempdir().unwrap();
    let o = jeans(&["ode"], Some(r#"{"data": {"t0": 1, "f_ring": 1, "f0_ring": 3}}"#), d.path());
    assert_eq!(code(&o), 0);
    let s = summary(d.path(), "ode");
    assert!((s["t_upper_star"].as_f64().unwrap() - 27.0).abs() < 1e-10);
    assert!(s["blowup"]["t_m_est"].as_f64().unwrap() < 27.0);
}

#[test]
fn ode_bounds_and_determinism() {
    let d = tempfile::tempdir().unwrap();
    let cfg = r#"{"ode": {"y_max": 1e6}}"#;
    assert_eq!(code(&jeans(&["ode"], Some(cfg), d.path())), 0);
    let s = summary(d.path(), "ode");
    assert_eq!(s["bound_violations"].as_u64(), Some(0));
    let csv = d.path().join("out/ode/trajectory.csv");
    let first = std::fs::read(&csv).unwrap();
    assert!(first.starts_with(b"t,y,q0,G,f,f0,g,chi,xi,frakG,tau\n"));
    let sum1 = std::fs::read(d.path().join("out/ode/summary.json")).unwrap();
    assert_eq!(code(&jeans(&["ode"], Some(cfg), d.path())), 0);
    assert_eq!(first, std::fs::read(&csv).unwrap());
    assert_eq!(sum1, std::fs::read(d.path().join("out/ode/summary.json")).unwrap());
}

#[test]
fn pde_zero_data_is_homogeneous() {
    let d = tempfile::tempdir().unwrap();
    let o = jeans(&["pde"], Some(r#"{"pde": {"n": 32, "sigma": 0, "f_stop": 100}}"#), d.path());
    assert_eq!(code(&o), 0);
    assert_eq!(summary(d.path(), "pde")["homogeneous_consistency"], "pass");
}

#[test]
fn pde_small_data_stays_in_envelope() {
    let d = tempfile::tempdir().unwrap();
    let o = jeans(&["pde"], Some(r#"{"pde": {"n": 64, "sigma": 1e-3, "output_times": [2.0]}}"#), d.path());
    assert_eq!(code(&o), 0);
    let s = summary(d.path(), "pde");
    assert_eq!(s["stability"], "pass");
    assert_eq!(s["envelope_ok"], true);
    assert!(s["f_end"].as_f64().unwrap() >= 1e4 * (1.0 - 1e-9));
    let norms = std::fs::read_to_string(d.path().join("out/pde/norms.csv")).unwrap();
    assert!(norms.starts_with("t,hs_ratio_rho,hs_ratio_rho_t,hs_grad,sup_ratio_rho,sup_ratio_rho_t,envelope_ok\n"));
    let side: Value =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("out/pde/snapshots/snapshot_0000.json")).unwrap()).unwrap();
    assert_eq!(side["t"], 2.0);
    assert_eq!(side["N"], 64);
    assert_eq!(side["dim"], 1);
}

#[test]
fn pde_two_dimensional_smoke() {
    let d = tempfile::tempdir().unwrap();
    let cfg = r#"{"pde": {"dim": 2, "n": 64, "f_stop": 100, "modes": [{"k": [1, 2], "amplitude": 1.0}]}}"#;
    assert_eq!(code(&jeans(&["pde"], Some(cfg), d.path())), 0);
    let s = summary(d.path(), "pde");
    for key in ["hs_ratio_rho", "hs_ratio_rho_t", "hs_grad", "sup_ratio_rho"] {
        assert!(s["final_norms"][key].as_f64().unwrap().is_finite());
    }
}

#[test]
fn fuchsian_zero_data() {
    let d = tempfile::tempdir().unwrap();
    let o = jeans(&["fuchsian"], Some(r#"{"pde": {"n": 16, "sigma": 0, "f_stop": 1e3}, "fuchsian": {"tau_min": -1e-3}}"#), d.path());
    assert_eq!(code(&o), 0);
    let s = summary(d.path(), "fuchsian");
    assert_eq!(s["residual"]["all_zero"], true);
    assert_eq!(s["energy"]["all_ok"], true);
}

#[test]
fn fuchsian_special_case_reports_tail() {
    let d = tempfile::tempdir().unwrap();
    let o = jeans(&["fuchsian"], Some(r#"{"pde": {"n": 64}}"#), d.path());
    assert_eq!(code(&o), 0);
    let s = summary(d.path(), "fuchsian");
    assert!(s["condition_v"]["tau_delta"].as_f64().unwrap() < 0.0);
    assert_eq!(s["condition_v"]["in_gamma_after_tau_delta"], true);
    assert!(s["condition_v"]["tail_len"].as_u64().unwrap() > 0);
    assert_eq!(s["residual"]["below_threshold"], true);
    let eig = std::fs::read_to_string(d.path().join("out/fuchsian/eigen.csv")).unwrap();
    assert!(eig.starts_with("tau,lambda1,lambda2,lambda3,margin,in_gamma\n"));
    let en = std::fs::read_to_string(d.path().join("out/fuchsian/energy.csv")).unwrap();
    assert!(en.starts_with("tau,hs_norm,envelope,ok\n"));
}

#[test]
fn verify_quick_and_fault_injection() {
    let d = tempfile::tempdir().unwrap();
    let o = jeans(&["verify", "--quick"], None, d.path());
    let text = String::from_utf8_lossy(&o.stdout).to_string();
    assert_eq!(code(&o), 0, "{text}");
    assert_eq!(text.lines().filter(|l| l.starts_with("[PASS]")).count(), 11);
    let o = jeans(&["verify", "--quick", "--inject-fault", "constants"], None, d.path());
    assert_eq!(code(&o), 3);
    let text = String::from_utf8_lossy(&o.stdout).to_string();
    assert!(text.lines().any(|l| l.starts_with("[FAIL] criterion  1")), "{text}");
    assert_eq!(summary(d.path(), "verify")["all_pass"], false);
}

fn config_strategy() -> impl Strategy<Value = RunConfig> {
    (1.05f64..3.0, 0.1f64..2.0, 1.02f64..1.48, proptest::option::of(0.1f64..2.0), 16usize..256, 0.0f64..0.1, any::<u64>(), proptest::option::of(1e-3f64..1.0))
        .prop_map(|(a, b, c, gauge, n, sigma, seed, g_min)| {
            let mut cfg = RunConfig::default();
            cfg.params.a = a;
            cfg.params.b = b;
            cfg.params.c = c;
            cfg.params.gauge = gauge;
            cfg.pde.n = n;
            cfg.pde.sigma = sigma;
            cfg.ode.g_min = g_min;
            cfg.seed = seed;
            cfg
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_round_trip(cfg in config_strategy()) {
        let text = cfg.to_json();
        let back = RunConfig::from_json(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.to_json(), text);
    }
}

#[test]
fn empty_config_is_the_default() {
    assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    let d = RunConfig::default();
    assert_eq!(d.model_params().unwrap(), jeans_core::params::ModelParams::special());
}

#[test]
fn omitted_gauge_uses_midpoint() {
    let cfg = RunConfig::from_json(r#"{"params": {"a": 1.5, "b": 0.5, "c": 1.25, "k": 2}}"#).unwrap();
    assert_eq!(cfg.model_params().unwrap().gauge, 0.5 / 0.5);
}
