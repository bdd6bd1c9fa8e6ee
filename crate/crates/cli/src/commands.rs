use crate::config::{ConfigError, Resolved, RunConfig};
use crate::output::{ensure_dir, flag, num, write_json, Table};
use jeans_core::acceptance::{self, CheckOutcome, Fault, Settings};
use jeans_core::fuchsian::{
    condition_v_check, energy_monitor, fuchsian_residual, integrate_fuchsian, to_fuchsian, FuchsianConfig,
};
use jeans_core::params::{eigenvalues_tilde_unchecked, finite_time_condition, k_admissible_interval};
use jeans_core::pde_solver::{initial_fields, integrate_pde, FieldSet, PdeRun, PdeStop, PerturbationConfig};
use jeans_core::reference_ode::{
    check_bounds, estimate_blowup_time, eval_aux, integrate_reference, StopCriteria, Trajectory,
};
use jeans_core::torus_spectral::sup;
use rayon::prelude::*;
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn rt<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

const VERSION: &str = env!("CARGO_PKG_VERSION");

struct Timer(BTreeMap<&'static str, f64>, Instant);

impl Timer {
    fn new() -> Self {
        Timer(BTreeMap::new(), Instant::now())
    }
    fn lap(&mut self, name: &'static str) {
        self.0.insert(name, self.1.elapsed().as_secs_f64());
        self.1 = Instant::now();
    }
    fn write(&self, dir: &Path) -> Result<(), CliError> {
        write_json(&dir.join("timings.json"), &self.0)
    }
}

fn header(cmd: &str, r: &Resolved) -> Value {
    json!({ "command": cmd, "version": VERSION, "params": r.params, "data": r.data, "constants": r.constants })
}

pub fn cmd_params(cfg: &RunConfig, out: &Path, k_scan: bool) -> Result<Value, CliError> {
    let r = cfg.resolve()?;
    let dir = out.join("params");
    ensure_dir(&dir)?;
    let (klo, khi) = k_admissible_interval(r.params.c).map_err(rt)?;
    let mut summary = header("params", &r);
    summary["k_interval"] = json!([klo, khi]);
    summary["finite_time_condition"] = json!(finite_time_condition(&r.params, &r.data));
    summary["eigenvalues_tilde"] = json!(r.constants.lambda_tilde);
    if k_scan {
        let mut t = Table::create(&dir.join("k_scan.csv"), &["k", "lambda1", "lambda2", "lambda3"])?;
        let n = 200;
        for i in 1..n {
            let k = klo + (khi - klo) * i as f64 / n as f64;
            let l = eigenvalues_tilde_unchecked(r.params.b, r.params.c, k);
            t.row([num(k), num(l[0]), num(l[1]), num(l[2])])?;
        }
        t.finish()?;
    }
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

fn reference(r: &Resolved, stop: &StopCriteria) -> Result<Trajectory, CliError> {
    integrate_reference(&r.params, &r.data, &r.constants, stop).map_err(rt)
}

pub const TRAJECTORY_HEADER: [&str; 11] = ["t", "y", "q0", "G", "f", "f0", "g", "chi", "xi", "frakG", "tau"];

pub fn cmd_ode(cfg: &RunConfig, out: &Path) -> Result<Value, CliError> {
    let r = cfg.resolve()?;
    let dir = out.join("ode");
    ensure_dir(&dir)?;
    let mut tm = Timer::new();
    let tr = reference(&r, &cfg.ode)?;
    tm.lap("integrate");
    let aux = eval_aux(&tr);
    let mut t = Table::create(&dir.join("trajectory.csv"), &TRAJECTORY_HEADER)?;
    for (s, a) in tr.states.iter().zip(&aux) {
        let f0 = s.y * s.q0;
        t.row([s.t, s.y, s.q0, s.big_g, s.y - 1.0, f0, a.g, a.chi, a.xi, a.frak_g, a.tau].map(num))?;
    }
    t.finish()?;
    let bounds = check_bounds(&tr, &tr.constants, &tr.data);
    write_json(&dir.join("bounds.json"), &bounds)?;
    tm.lap("bounds");
    let blowup = match estimate_blowup_time(&tr, &tr.params) {
        Ok(e) => json!(e),
        Err(e) => json!({ "error": e.to_string() }),
    };
    let last = tr.last();
    let mut summary = header("ode", &r);
    summary["stop"] = json!(tr.stop);
    summary["samples"] = json!(tr.states.len());
    summary["t_end"] = json!(last.t);
    summary["y_end"] = json!(last.y);
    summary["t_star"] = json!(tr.constants.t_star);
    summary["t_upper_star"] = json!(tr.constants.t_upper_star);
    summary["blowup"] = blowup;
    summary["identity_defect"] = json!(tr.identity_defect());
    summary["bound_violations"] = json!(bounds.total_violations());
    summary["bounds"] = json!(bounds
        .records
        .iter()
        .map(|b| json!({ "bound_id": b.bound_id, "samples_checked": b.samples_checked, "violations": b.violations, "worst_margin": b.worst_margin }))
        .collect::<Vec<_>>());
    write_json(&dir.join("summary.json"), &summary)?;
    tm.write(&dir)?;
    Ok(summary)
}

pub const NORM_HEADER: [&str; 7] =
    ["t", "hs_ratio_rho", "hs_ratio_rho_t", "hs_grad", "sup_ratio_rho", "sup_ratio_rho_t", "envelope_ok"];

fn write_snapshot(dir: &Path, name: &str, fs: &FieldSet, tr: &Trajectory) -> Result<(), CliError> {
    let grid = fs.grid();
    let rp = tr.at(fs.t).map_err(rt)?;
    let mut head: Vec<String> = (1..=grid.dim).map(|a| format!("x{a}")).collect();
    head.extend(["w", "w0"].map(String::from));
    head.extend((1..=grid.dim).map(|a| format!("w_{a}")));
    head.extend(["rho", "rho_t"].map(String::from));
    let hr: Vec<&str> = head.iter().map(|s| s.as_str()).collect();
    let mut t = Table::create(&dir.join(format!("{name}.csv")), &hr)?;
    for i in 0..grid.len() {
        let x = grid.coords(i);
        let mut row: Vec<String> = x[..grid.dim].iter().map(|v| num(*v)).collect();
        row.push(num(fs.w.values[i]));
        row.push(num(fs.w0.values[i]));
        row.extend(fs.wi.iter().map(|f| num(f.values[i])));
        row.push(num(rp.f + fs.w.values[i]));
        row.push(num(rp.f0 + fs.w0.values[i]));
        t.row(row)?;
    }
    t.finish()?;
    write_json(&dir.join(format!("{name}.json")), &json!({ "t": fs.t, "N": grid.n, "dim": grid.dim, "tau": rp.tau }))
}

fn pde_verdicts(cfg: &PerturbationConfig, run: &PdeRun) -> (Value, Value) {
    let fs = &run.final_state;
    let homogeneous = if cfg.sigma == 0.0 {
        let zero = sup(&fs.w.values) == 0.0 && sup(&fs.w0.values) == 0.0 && fs.wi.iter().all(|f| sup(&f.values) == 0.0);
        json!(if zero && run.stop == PdeStop::ReachedTarget { "pass" } else { "fail" })
    } else {
        json!("not_applicable")
    };
    let stability = if cfg.sigma > 0.0 {
        let ok = run.stop == PdeStop::ReachedTarget
            && run.max_sup_ratio() <= 10.0 * cfg.sigma
            && run.records.iter().all(|r| r.envelope_ok);
        json!(if ok { "pass" } else { "fail" })
    } else {
        json!("not_applicable")
    };
    (homogeneous, stability)
}

pub fn cmd_pde(cfg: &RunConfig, out: &Path) -> Result<Value, CliError> {
    let r = cfg.resolve()?;
    let dir = out.join("pde");
    let snap_dir = dir.join("snapshots");
    ensure_dir(&snap_dir)?;
    let mut tm = Timer::new();
    let tr = reference(&r, &cfg.ode)?;
    tm.lap("reference");
    let run = integrate_pde(&r.pde, &tr, &r.params).map_err(rt)?;
    tm.lap("integrate");
    let mut t = Table::create(&dir.join("norms.csv"), &NORM_HEADER)?;
    for rec in &run.records {
        t.row([
            num(rec.t),
            num(rec.hs_ratio_rho),
            num(rec.hs_ratio_rho_t),
            num(rec.hs_grad),
            num(rec.sup_ratio_rho),
            num(rec.sup_ratio_rho_t),
            flag(rec.envelope_ok),
        ])?;
    }
    t.finish()?;
    for (i, s) in run.snapshots.iter().enumerate() {
        write_snapshot(&snap_dir, &format!("snapshot_{i:04}"), &s.state, &tr)?;
    }
    write_snapshot(&snap_dir, "final", &run.final_state, &tr)?;
    tm.lap("output");
    let (homogeneous, stability) = pde_verdicts(&r.pde, &run);
    let last = run.records.last().ok_or_else(|| rt("run produced no records"))?;
    let mut summary = header("pde", &r);
    summary["grid"] = json!({ "dim": r.pde.grid.dim, "N": r.pde.grid.n });
    summary["sigma"] = json!(r.pde.sigma);
    summary["stop"] = json!(run.stop);
    summary["steps"] = json!(run.steps);
    summary["t_end"] = json!(run.t_end);
    summary["f_end"] = json!(last.f);
    summary["max_sup_ratio"] = json!(run.max_sup_ratio());
    summary["max_grad_compat"] = json!(run.max_grad_compat());
    summary["final_norms"] = json!(last);
    summary["envelope_ok"] = json!(run.records.iter().all(|r| r.envelope_ok));
    summary["homogeneous_consistency"] = homogeneous;
    summary["stability"] = stability;
    summary["snapshots"] = json!(run.snapshots.len());
    write_json(&dir.join("summary.json"), &summary)?;
    tm.write(&dir)?;
    Ok(summary)
}

/// Residual threshold for the transformed physical-time run.
pub const RESIDUAL_TOL: f64 = 1e-6;

pub fn cmd_fuchsian(cfg: &RunConfig, out: &Path) -> Result<Value, CliError> {
    let r = cfg.resolve()?;
    let fc = &cfg.fuchsian;
    let dir = out.join("fuchsian");
    ensure_dir(&dir)?;
    let mut tm = Timer::new();
    // the compactified run needs the reference down to g = |tau_min|
    let stop = StopCriteria {
        y_max: cfg.ode.y_max.max(1e14),
        g_min: cfg.ode.g_min.or(Some(0.5 * fc.tau_min.abs())),
        ..cfg.ode
    };
    let tr = reference(&r, &stop)?;
    tm.lap("reference");
    let tau_end = fc.tau_min.min(tr.tau_range().1);
    let init = to_fuchsian(&initial_fields(&r.pde, &tr), &tr, &r.params).map_err(rt)?;
    let fcfg = FuchsianConfig {
        tau_end,
        rel_tol: fc.rel_tol,
        abs_tol: fc.abs_tol,
        c_cfl: fc.c_cfl,
        step_frac: fc.step_frac,
        sobolev_s: r.pde.sobolev_s,
        sample_every: fc.sample_every,
        output_taus: Vec::new(),
    };
    let run = integrate_fuchsian(&init, &tr, &r.params, &fcfg).map_err(rt)?;
    tm.lap("integrate");
    let lmin = r.constants.lambda_tilde.iter().cloned().fold(f64::INFINITY, f64::min);
    let eps = fc.eps.unwrap_or(0.5 * lmin);
    let cv = condition_v_check(&run.samples, &tr, &r.params, eps, fc.ball_radius).map_err(|e| {
        CliError::Config(ConfigError::Invalid(e.to_string()))
    })?;
    let en = energy_monitor(&run.records);
    tm.lap("diagnostics");

    let mut t = Table::create(&dir.join("energy.csv"), &["tau", "hs_norm", "envelope", "ok"])?;
    for e in &en.records {
        t.row([num(e.tau), num(e.hs_norm), num(e.envelope), flag(e.ok)])?;
    }
    t.finish()?;
    let mut t = Table::create(&dir.join("eigen.csv"), &["tau", "lambda1", "lambda2", "lambda3", "margin", "in_gamma"])?;
    for s in &cv.samples {
        t.row([num(s.tau), num(s.lambda[0]), num(s.lambda[1]), num(s.lambda[2]), num(s.margin), flag(s.in_gamma)])?;
    }
    t.finish()?;
    write_json(&dir.join("condition_v.json"), &cv)?;

    let mut summary = header("fuchsian", &r);
    summary["tau_end"] = json!(run.final_state.tau);
    summary["stop"] = json!(run.stop);
    summary["steps"] = json!(run.steps);
    summary["condition_v"] = json!({
        "eps": cv.eps,
        "tau_delta": cv.tau_delta,
        "tail_len": cv.tail_len,
        "samples": cv.samples.len(),
        "kappa": cv.kappa,
        "gamma2": cv.gamma2,
        "in_gamma_after_tau_delta": cv.samples.iter().filter(|s| cv.tau_delta.map_or(true, |d| s.tau > d)).all(|s| s.in_gamma),
    });
    summary["energy"] = json!({ "c1": en.c1, "c2": en.c2, "all_ok": en.all_ok, "norm0": en.norm0 });

    if fc.cross_check {
        let pcfg = PerturbationConfig { snapshot_every: r.pde.snapshot_every.max(25), ..r.pde.clone() };
        let pr = integrate_pde(&pcfg, &tr, &r.params).map_err(rt)?;
        let res = fuchsian_residual(&pr.snapshots, &tr, &r.params).map_err(rt)?;
        let mut t = Table::create(&dir.join("residual.csv"), &["tau", "t", "sup", "l2", "relative"])?;
        for x in &res {
            t.row([x.tau, x.t, x.sup, x.l2, x.relative].map(num))?;
        }
        t.finish()?;
        let worst = res.iter().map(|x| x.relative).fold(0.0, f64::max);
        summary["residual"] = json!({
            "samples": res.len(),
            "max_relative": worst,
            "all_zero": res.iter().all(|x| x.sup == 0.0),
            "below_threshold": worst < RESIDUAL_TOL,
        });
        tm.lap("cross_check");
    }
    write_json(&dir.join("summary.json"), &summary)?;
    tm.write(&dir)?;
    Ok(summary)
}

pub fn cmd_verify(cfg: &RunConfig, out: &Path, quick: bool, fault: Option<Fault>) -> Result<(Vec<CheckOutcome>, bool), CliError> {
    let dir = out.join("verify");
    ensure_dir(&dir)?;
    let settings = Settings { quick, fault, seed: cfg.seed };
    let results: Vec<CheckOutcome> =
        acceptance::CRITERIA.par_iter().map(|c| acceptance::run_check(c.0, &settings)).collect();
    let all = results.iter().all(|o| o.pass);
    let mut t = Table::create(&dir.join("verify.csv"), &["id", "name", "pass", "detail"])?;
    for o in &results {
        t.row([o.id.to_string(), o.name.clone(), flag(o.pass), o.detail.clone()])?;
    }
    t.finish()?;
    write_json(
        &dir.join("summary.json"),
        &json!({ "command": "verify", "version": VERSION, "quick": quick, "seed": cfg.seed, "all_pass": all, "checks": results }),
    )?;
    let timings: BTreeMap<String, f64> = results.iter().map(|o| (format!("criterion_{:02}", o.id), o.seconds)).collect();
    write_json(&dir.join("timings.json"), &timings)?;
    Ok((results, all))
}
