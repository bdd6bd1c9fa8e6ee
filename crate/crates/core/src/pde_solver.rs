//! Perturbation system for `w = rho - f`, `w0 = d_t w`, `w_i = d_i w` on the torus,
//! advanced in physical time against the interpolated reference solution.

use crate::params::ModelParams;
use crate::reference_ode::{OdeError, RefPoint, Trajectory};
use crate::rk::{Dopri5, Flow, RkError, StepControl, System};
use crate::torus_spectral::{sup, Field, GridError, Spectral, TorusGrid};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PdeError {
    #[error("vacuum crossing: min(1+w+f) = {min:e} at t = {t}")]
    VacuumCrossing { t: f64, min: f64 },
    #[error("step size {h:e} underflow at t = {t}")]
    StepUnderflow { t: f64, h: f64 },
    #[error("step budget exhausted at t = {0}")]
    TooManySteps(f64),
    #[error("non-finite state at t = {0}")]
    NonFinite(f64),
    #[error(transparent)]
    Reference(#[from] OdeError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("invalid perturbation config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSet {
    pub t: f64,
    pub w: Field,
    pub w0: Field,
    pub wi: Vec<Field>,
}

impl FieldSet {
    pub fn zeros(grid: TorusGrid, t: f64) -> Self {
        FieldSet { t, w: Field::zeros(grid), w0: Field::zeros(grid), wi: vec![Field::zeros(grid); grid.dim] }
    }

    pub fn grid(&self) -> TorusGrid {
        self.w.grid
    }

    /// Flat layout `[w, w0, w_1, .., w_n]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity((2 + self.wi.len()) * self.w.values.len());
        v.extend_from_slice(&self.w.values);
        v.extend_from_slice(&self.w0.values);
        for f in &self.wi {
            v.extend_from_slice(&f.values);
        }
        v
    }

    pub fn from_slice(grid: TorusGrid, t: f64, v: &[f64]) -> Self {
        let m = grid.len();
        let take = |j: usize| Field { grid, values: v[j * m..(j + 1) * m].to_vec() };
        FieldSet { t, w: take(0), w0: take(1), wi: (0..grid.dim).map(|a| take(2 + a)).collect() }
    }

    pub fn rho(&self, r: &RefPoint) -> Field {
        self.w.map(|w| r.f + w)
    }

    pub fn rho_t(&self, r: &RefPoint) -> Field {
        self.w0.map(|w| r.f0 + w)
    }

    /// `sup |w_i - d_i w| / max(1, sup |w|)`.
    pub fn grad_compat(&self, sp: &mut Spectral) -> f64 {
        let mut d = vec![0.0; self.w.values.len()];
        let mut e: f64 = 0.0;
        for (a, wi) in self.wi.iter().enumerate() {
            sp.diff_into(&self.w.values, a, &mut d);
            e = e.max(wi.values.iter().zip(&d).fold(0.0, |m, (x, y)| m.max((x - y).abs())));
        }
        e / sup(&self.w.values).max(1.0)
    }
}

pub fn metric_coef(t: f64, r: &Trajectory) -> Result<f64, OdeError> {
    let q0 = r.state_at(t)?.q0;
    Ok(r.params.m * r.params.m * q0 * q0)
}

pub fn source_f(t: f64, r: &Trajectory) -> Result<f64, OdeError> {
    let s = r.state_at(t)?;
    Ok(s.y * s.q0 * s.q0)
}

/// One Fourier mode `amplitude * cos(k.x + phase)` of the initial profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mode {
    pub k: Vec<i32>,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationConfig {
    pub grid: TorusGrid,
    pub sigma: f64,
    pub modes: Vec<Mode>,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub c_cfl: f64,
    pub sobolev_s: u32,
    /// The run ends when the reference `f` reaches this level.
    pub f_stop: f64,
    /// Stop early once a sup ratio exceeds this.
    pub ratio_guard: f64,
    /// Snapshot every this many accepted steps (0 disables cadence snapshots).
    pub snapshot_every: usize,
    /// Extra times at which the run lands exactly and stores a snapshot.
    pub output_times: Vec<f64>,
}

impl PerturbationConfig {
    pub fn single_mode(grid: TorusGrid, sigma: f64) -> Self {
        let mut k = vec![0; grid.dim];
        k[0] = 1;
        PerturbationConfig {
            grid,
            sigma,
            modes: vec![Mode { k, amplitude: 1.0, phase: 0.0 }],
            rel_tol: 1e-10,
            abs_tol: 1e-14,
            c_cfl: 0.5,
            sobolev_s: crate::torus_spectral::NormConfig::default_for(grid.dim).s,
            f_stop: 1e4,
            ratio_guard: 0.5,
            snapshot_every: 0,
            output_times: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), PdeError> {
        if !(self.sigma >= 0.0) {
            return Err(PdeError::Config("sigma >= 0".into()));
        }
        if self.modes.iter().any(|m| m.k.len() != self.grid.dim) {
            return Err(PdeError::Config("mode wavevector length must equal dim".into()));
        }
        crate::torus_spectral::NormConfig::new(self.sobolev_s, self.grid.dim)?;
        if !(self.c_cfl > 0.0 && self.rel_tol > 0.0 && self.abs_tol > 0.0 && self.f_stop > 0.0) {
            return Err(PdeError::Config("tolerances, c_cfl and f_stop must be positive".into()));
        }
        Ok(())
    }

    /// Spatial profile `sum_j amplitude_j cos(k_j . x + phase_j)`.
    pub fn profile(&self) -> Field {
        let modes = self.modes.clone();
        Field::from_fn(self.grid, move |x| {
            modes
                .iter()
                .map(|m| {
                    let kx: f64 = m.k.iter().enumerate().map(|(a, &k)| k as f64 * x[a]).sum();
                    m.amplitude * (kx + m.phase).cos()
                })
                .sum()
        })
    }
}

/// Data with `rho/f - 1 = d_t rho / f0 - 1 = sigma * profile` at `t0`.
pub fn initial_fields(cfg: &PerturbationConfig, r: &Trajectory) -> FieldSet {
    let d = r.data;
    let prof = cfg.profile();
    let mut sp = Spectral::new(cfg.grid);
    let w = prof.map(|p| cfg.sigma * d.f_ring * p);
    let w0 = prof.map(|p| cfg.sigma * d.f0_ring * p);
    let wi = (0..cfg.grid.dim)
        .map(|a| {
            let mut out = Field::zeros(cfg.grid);
            sp.diff_into(&w.values, a, &mut out.values);
            out
        })
        .collect();
    FieldSet { t: d.t0, w, w0, wi }
}

pub struct PerturbationSystem<'a> {
    pub reference: &'a Trajectory,
    pub params: ModelParams,
    pub grid: TorusGrid,
    sp: Spectral,
    tmp: Vec<f64>,
    div: Vec<f64>,
}

impl<'a> PerturbationSystem<'a> {
    pub fn new(reference: &'a Trajectory, grid: TorusGrid) -> Self {
        PerturbationSystem {
            reference,
            params: reference.params,
            grid,
            sp: Spectral::new(grid),
            tmp: vec![0.0; grid.len()],
            div: vec![0.0; grid.len()],
        }
    }

    pub fn spectral(&mut self) -> &mut Spectral {
        &mut self.sp
    }
}

impl System for PerturbationSystem<'_> {
    type Error = PdeError;

    fn dim(&self) -> usize {
        (2 + self.grid.dim) * self.grid.len()
    }

    fn rhs(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), PdeError> {
        let r = self.reference.at(t)?;
        let p = &self.params;
        let m = self.grid.len();
        let n = self.grid.dim;
        let (w, rest) = y.split_at(m);
        let (w0, wis) = rest.split_at(m);
        let (dw, drest) = dy.split_at_mut(m);
        let (dw0, dwis) = drest.split_at_mut(m);

        dw.copy_from_slice(w0);
        self.div.iter_mut().for_each(|v| *v = 0.0);
        for a in 0..n {
            self.sp.diff_into(w0, a, &mut dwis[a * m..(a + 1) * m]);
            self.sp.diff_into(&wis[a * m..(a + 1) * m], a, &mut self.tmp);
            for (d, v) in self.div.iter_mut().zip(&self.tmp) {
                *d += v;
            }
        }

        let coef = p.m * p.m * r.q0 * r.q0;
        let ck = p.c - p.k;
        let (f, f0) = (r.f, r.f0);
        let bt = p.b / (t * t);
        let at = p.a / t;
        let mut min_den = f64::INFINITY;
        for i in 0..m {
            let (wv, w0v) = (w[i], w0[i]);
            let den = 1.0 + wv + f;
            min_den = min_den.min(den);
            dw0[i] = coef * self.div[i] - at * w0v + bt * (wv + wv * wv + 2.0 * f * wv) + ck * w0v * w0v / den
                + 2.0 * ck * f0 * w0v / den
                - ck * f0 * f0 * wv / (den * (1.0 + f));
        }
        if !(min_den > 0.0) {
            return Err(PdeError::VacuumCrossing { t, min: min_den });
        }
        self.sp.dealias_in_place(dw0);
        if dw0.iter().any(|v| !v.is_finite()) {
            return Err(PdeError::NonFinite(t));
        }
        Ok(())
    }
}

/// `(dw, dw0, dw_i)` at the state `fs`.
pub fn rhs_perturbation(fs: &FieldSet, r: &Trajectory) -> Result<FieldSet, PdeError> {
    let g = fs.grid();
    let mut sys = PerturbationSystem::new(r, g);
    let y = fs.to_vec();
    let mut dy = vec![0.0; y.len()];
    sys.rhs(fs.t, &y, &mut dy)?;
    Ok(FieldSet::from_slice(g, fs.t, &dy))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormRecord {
    pub t: f64,
    pub f: f64,
    pub hs_ratio_rho: f64,
    pub hs_ratio_rho_t: f64,
    pub hs_grad: f64,
    pub sup_ratio_rho: f64,
    pub sup_ratio_rho_t: f64,
    pub sup_grad: f64,
    pub envelope_ok: bool,
    pub grad_compat: f64,
}

/// Ratio norms `rho/f - 1`, `d_t rho/f0 - 1`, `m d_i rho/(1+f)` in `H^s` and sup.
pub fn ratio_norms(fs: &FieldSet, r: &RefPoint, m: f64, s: u32, sp: &mut Spectral) -> NormRecord {
    let u = fs.w.map(|w| w / r.f);
    let u0 = fs.w0.map(|w| w / r.f0);
    let hs_rho = sp.sobolev_norm(&u.values, s);
    let hs_rho_t = sp.sobolev_norm(&u0.values, s);
    let mut g2 = 0.0;
    let mut sup_grad: f64 = 0.0;
    for wi in &fs.wi {
        let ui = wi.map(|w| m * w / (1.0 + r.f));
        let h = sp.sobolev_norm(&ui.values, s);
        g2 += h * h;
        sup_grad = sup_grad.max(sup(&ui.values));
    }
    let sr = sup(&u.values);
    let srt = sup(&u0.values);
    let rr = sr.max(srt);
    let slack = 1e-14;
    let env = rr < 1.0
        && fs.w.values.iter().all(|w| {
            let rho = r.f + w;
            rho >= (1.0 - rr) * r.f * (1.0 - slack) && rho <= (1.0 + rr) * r.f * (1.0 + slack)
        })
        && fs.w0.values.iter().all(|w| {
            let rt = r.f0 + w;
            rt >= (1.0 - rr) * r.f0 * (1.0 - slack) && rt <= (1.0 + rr) * r.f0 * (1.0 + slack)
        });
    NormRecord {
        t: fs.t,
        f: r.f,
        hs_ratio_rho: hs_rho,
        hs_ratio_rho_t: hs_rho_t,
        hs_grad: g2.sqrt(),
        sup_ratio_rho: sr,
        sup_ratio_rho_t: srt,
        sup_grad,
        envelope_ok: env,
        grad_compat: fs.grad_compat(sp),
    }
}

/// Pointwise residual of the second-order equation for `rho` with given
/// first and second time derivatives.
pub fn main_eq_residual(
    rho: &Field,
    rho_t: &Field,
    rho_tt: &Field,
    r: &RefPoint,
    p: &ModelParams,
    sp: &mut Spectral,
) -> Field {
    let t = r.t;
    let coef = p.m * p.m * r.q0 * r.q0;
    let src = r.y * r.q0 * r.q0;
    let mut lap = vec![0.0; rho.values.len()];
    sp.laplacian_into(&rho.values, &mut lap);
    let values = (0..rho.values.len())
        .map(|i| {
            let (q, qt) = (rho.values[i], rho_t.values[i]);
            rho_tt.values[i] - coef * lap[i] + p.a / t * qt
                - p.b / (t * t) * q * (1.0 + q)
                - (p.c - p.k) * qt * qt / (1.0 + q)
                - p.k * src
        })
        .collect();
    Field { grid: rho.grid, values }
}

/// Sup norm of the residual of the full equation on `rho = f + w`, with the
/// second time derivative taken from the perturbation right-hand side.
pub fn residual_main_eq(fs: &FieldSet, r: &Trajectory, p: &ModelParams) -> Result<f64, PdeError> {
    let rp = r.at(fs.t)?;
    let d = rhs_perturbation(fs, r)?;
    let rho_tt = d.w0.map(|v| rp.f0_dot + v);
    let mut sp = Spectral::new(fs.grid());
    let res = main_eq_residual(&fs.rho(&rp), &fs.rho_t(&rp), &rho_tt, &rp, p, &mut sp);
    Ok(sup(&res.values))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub state: FieldSet,
    /// Time derivatives of `(w, w0, w_i)` at the snapshot.
    pub rate: FieldSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PdeStop {
    ReachedTarget,
    RatioGuard,
}

#[derive(Debug, Clone)]
pub struct PdeRun {
    pub records: Vec<NormRecord>,
    pub snapshots: Vec<Snapshot>,
    pub final_state: FieldSet,
    pub t_end: f64,
    pub stop: PdeStop,
    pub steps: usize,
}

impl PdeRun {
    pub fn max_sup_ratio(&self) -> f64 {
        self.records.iter().map(|r| r.sup_ratio_rho.max(r.sup_ratio_rho_t)).fold(0.0, f64::max)
    }

    pub fn max_grad_compat(&self) -> f64 {
        self.records.iter().map(|r| r.grad_compat).fold(0.0, f64::max)
    }
}

pub fn integrate_pde(cfg: &PerturbationConfig, r: &Trajectory, p: &ModelParams) -> Result<PdeRun, PdeError> {
    cfg.validate()?;
    let init = initial_fields(cfg, r);
    integrate_pde_from(cfg, init, r, p)
}

pub fn integrate_pde_from(
    cfg: &PerturbationConfig,
    init: FieldSet,
    r: &Trajectory,
    p: &ModelParams,
) -> Result<PdeRun, PdeError> {
    let grid = cfg.grid;
    let t_end = r.t_of_f(cfg.f_stop)?;
    let mut targets: Vec<f64> = cfg.output_times.iter().copied().filter(|&t| t > init.t && t < t_end).collect();
    targets.sort_by(|a, b| a.partial_cmp(b).unwrap());
    targets.dedup();
    targets.push(t_end);

    let mut sys = PerturbationSystem::new(r, grid);
    let mut norm_sp = Spectral::new(grid);
    let ctl = StepControl { rel_tol: cfg.rel_tol, abs_tol: cfg.abs_tol, ..StepControl::default() };
    let mut rk = Dopri5::new(sys.dim(), ctl);
    let mut y = init.to_vec();
    let mut t = init.t;
    let mut records = Vec::new();
    let mut snapshots = Vec::new();
    let mut steps = 0usize;
    let mut guard_hit = false;
    let kmax = grid.k_max();
    let mut first = true;

    for (seg, &target) in targets.iter().enumerate() {
        let is_output = seg + 1 < targets.len() || !cfg.output_times.is_empty();
        let mut pending_err: Option<PdeError> = None;
        let res = rk.integrate(
            &mut sys,
            &mut t,
            &mut y,
            target,
            |tt, _| match r.state_at(tt) {
                Ok(s) => {
                    let c = p.m.abs() * s.q0;
                    if c > 0.0 {
                        cfg.c_cfl / (c * kmax)
                    } else {
                        f64::INFINITY
                    }
                }
                Err(_) => f64::INFINITY,
            },
            |a| {
                if a.h == 0.0 && !first {
                    return Ok(Flow::Continue);
                }
                first = false;
                if a.h > 0.0 {
                    steps += 1;
                }
                let fs = FieldSet::from_slice(grid, a.t, a.y);
                let rp = match r.at(a.t) {
                    Ok(rp) => rp,
                    Err(e) => {
                        pending_err = Some(e.into());
                        return Ok(Flow::Stop);
                    }
                };
                let rec = ratio_norms(&fs, &rp, p.m, cfg.sobolev_s, &mut norm_sp);
                let over = rec.sup_ratio_rho.max(rec.sup_ratio_rho_t) > cfg.ratio_guard;
                records.push(rec);
                let cadence = cfg.snapshot_every > 0 && steps % cfg.snapshot_every == 0;
                let landed = a.t == target && is_output;
                if cadence || landed || a.h == 0.0 && cfg.snapshot_every > 0 {
                    snapshots.push(Snapshot { state: fs, rate: FieldSet::from_slice(grid, a.t, a.dy) });
                }
                if over {
                    guard_hit = true;
                    return Ok(Flow::Stop);
                }
                Ok(Flow::Continue)
            },
        );
        if let Some(e) = pending_err {
            return Err(e);
        }
        match res {
            Ok(_) => {}
            Err(RkError::Rhs(e)) => return Err(e),
            Err(RkError::StepUnderflow { t, h }) => return Err(PdeError::StepUnderflow { t, h }),
            Err(RkError::TooManySteps(t)) => return Err(PdeError::TooManySteps(t)),
        }
        if guard_hit {
            break;
        }
    }
    let final_state = FieldSet::from_slice(grid, t, &y);
    Ok(PdeRun {
        records,
        snapshots,
        final_state,
        t_end: t,
        stop: if guard_hit { PdeStop::RatioGuard } else { PdeStop::ReachedTarget },
        steps,
    })
}
