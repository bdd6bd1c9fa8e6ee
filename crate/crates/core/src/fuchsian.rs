//! Compactified-time formulation: rescaled fields `u0 = w0/f0`, `u_i = m w_i/(1+f)`,
//! `u = w/f` evolved in `tau = -g(t)`, plus the singular-block and energy diagnostics.

use crate::params::ModelParams;
use crate::pde_solver::{FieldSet, Snapshot};
use crate::reference_ode::{OdeError, RefPoint, Trajectory};
use crate::rk::{Dopri5, Flow, RkError, StepControl, System};
use crate::torus_spectral::{sup, Field, Spectral, TorusGrid};
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FuchsianError {
    #[error("1 + 1/f + u vanishes at tau = {tau}")]
    RDenominatorVanishes { tau: f64 },
    #[error("eps = {eps} must lie in (0, {min})")]
    EpsTooLarge { eps: f64, min: f64 },
    #[error("non-finite state at tau = {0}")]
    NonFinite(f64),
    #[error("step budget exhausted at tau = {0}")]
    TooManySteps(f64),
    #[error("m = 0 leaves the gradient fields undetermined")]
    DegenerateMetric,
    #[error(transparent)]
    Reference(#[from] OdeError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuchsianState {
    pub tau: f64,
    pub u0: Field,
    pub ui: Vec<Field>,
    pub u: Field,
}

impl FuchsianState {
    pub fn zeros(grid: TorusGrid, tau: f64) -> Self {
        FuchsianState { tau, u0: Field::zeros(grid), ui: vec![Field::zeros(grid); grid.dim], u: Field::zeros(grid) }
    }

    pub fn grid(&self) -> TorusGrid {
        self.u.grid
    }

    /// Flat layout `[u0, u_1, .., u_n, u]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity((2 + self.ui.len()) * self.u.values.len());
        v.extend_from_slice(&self.u0.values);
        for f in &self.ui {
            v.extend_from_slice(&f.values);
        }
        v.extend_from_slice(&self.u.values);
        v
    }

    pub fn from_slice(grid: TorusGrid, tau: f64, v: &[f64]) -> Self {
        let m = grid.len();
        let n = grid.dim;
        let take = |j: usize| Field { grid, values: v[j * m..(j + 1) * m].to_vec() };
        FuchsianState { tau, u0: take(0), ui: (0..n).map(|a| take(1 + a)).collect(), u: take(1 + n) }
    }

    pub fn hs_norm(&self, s: u32, sp: &mut Spectral) -> f64 {
        let mut acc = sp.sobolev_norm(&self.u0.values, s).powi(2) + sp.sobolev_norm(&self.u.values, s).powi(2);
        for f in &self.ui {
            acc += sp.sobolev_norm(&f.values, s).powi(2);
        }
        acc.sqrt()
    }

    /// Pointwise sup of `(u0, u)`.
    pub fn sup_u0_u(&self) -> f64 {
        sup(&self.u0.values).max(sup(&self.u.values))
    }

    pub fn sup_all(&self) -> f64 {
        self.ui.iter().fold(self.sup_u0_u(), |m, f| m.max(sup(&f.values)))
    }
}

pub fn to_fuchsian_at(fs: &FieldSet, rp: &RefPoint, m: f64) -> FuchsianState {
    FuchsianState {
        tau: rp.tau,
        u0: fs.w0.map(|w| w / rp.f0),
        ui: fs.wi.iter().map(|wi| wi.map(|w| m * w / rp.y)).collect(),
        u: fs.w.map(|w| w / rp.f),
    }
}

pub fn to_fuchsian(fs: &FieldSet, r: &Trajectory, p: &ModelParams) -> Result<FuchsianState, FuchsianError> {
    let rp = r.at(fs.t)?;
    Ok(to_fuchsian_at(fs, &rp, p.m))
}

pub fn from_fuchsian_at(st: &FuchsianState, rp: &RefPoint, m: f64) -> Result<FieldSet, FuchsianError> {
    if m == 0.0 {
        return Err(FuchsianError::DegenerateMetric);
    }
    Ok(FieldSet {
        t: rp.t,
        w: st.u.map(|u| u * rp.f),
        w0: st.u0.map(|u| u * rp.f0),
        wi: st.ui.iter().map(|ui| ui.map(|u| u * rp.y / m)).collect(),
    })
}

pub fn from_fuchsian(st: &FuchsianState, r: &Trajectory, p: &ModelParams) -> Result<FieldSet, FuchsianError> {
    let rp = r.at_tau(st.tau)?;
    from_fuchsian_at(st, &rp, p.m)
}

/// `d tau / d t = A B g^(b/A+1) t^(a-2) f (1+f)^(1-c)`; its inverse converts `d_t` to `d_tau`.
pub fn dtau_dt(rp: &RefPoint, p: &ModelParams, b_const: f64) -> f64 {
    p.gauge * b_const * rp.g.powf(p.b / p.gauge + 1.0) * rp.t.powf(p.a - 2.0) * rp.f * rp.y.powf(1.0 - p.c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Remainders {
    pub r: f64,
    pub h: f64,
    pub f: f64,
    pub l: f64,
    pub k: f64,
}

/// Pointwise remainders at reference point `rp` (evaluated at `t = g^-1(-tau)`).
pub fn remainders_at(rp: &RefPoint, p: &ModelParams, b_const: f64, u0: f64, u: f64) -> Result<Remainders, FuchsianError> {
    let den = 1.0 + 1.0 / rp.f + u;
    if !(den.abs() > 1e-12) {
        return Err(FuchsianError::RDenominatorVanishes { tau: rp.tau });
    }
    let ck = p.c - p.k;
    let chi_b = rp.chi / b_const;
    let a = p.gauge;
    let r = u / den;
    let h = ck * chi_b * (-u0 + u0 * r + 2.0 * r);
    let f = -p.b * u - ck * chi_b * r;
    let bx = p.b * rp.xi / a;
    let cx = ck * rp.chi * rp.xi / (a * b_const);
    let l = bx * u * u + bx * u - cx * u + cx * u * r;
    let k = rp.chi * rp.xi * (1.0 + 1.0 / rp.f) / (a * b_const) * (u - u0);
    Ok(Remainders { r, h, f, l, k })
}

pub fn remainders(
    tau: f64,
    u0: &Field,
    u: &Field,
    r: &Trajectory,
    p: &ModelParams,
) -> Result<Vec<Remainders>, FuchsianError> {
    let rp = r.at_tau(tau)?;
    u0.values.iter().zip(&u.values).map(|(&a, &b)| remainders_at(&rp, p, r.constants.b_const, a, b)).collect()
}

/// Singular block at one point, unscaled by `1/tau`; order `(u0, u_1..u_n, u)`.
pub fn singular_block(n: usize, rp: &RefPoint, p: &ModelParams, b_const: f64, rem: &Remainders) -> DMatrix<f64> {
    let a = p.gauge;
    let chi_b = rp.chi / b_const;
    let ck = p.c - p.k;
    let d = n + 2;
    let mut m = DMatrix::zeros(d, d);
    m[(0, 0)] = (p.b + (2.0 * p.k - p.c) * chi_b + rem.h) / a;
    m[(0, d - 1)] = (-2.0 * p.b + ck * chi_b + rem.f) / a;
    for i in 1..=n {
        m[(i, i)] = chi_b / a;
    }
    m[(d - 1, 0)] = -chi_b / a;
    m[(d - 1, d - 1)] = chi_b / a;
    m
}

#[derive(Debug, Clone)]
pub struct SystemAssembly {
    pub tau: f64,
    /// Scalar `m chi / (A B tau)` multiplying the symmetric `u0 <-> u_i` coupling.
    pub transport_coef: f64,
    pub frak_b: Vec<DMatrix<f64>>,
    /// Flat `[-L, 0.., -K]` in state layout.
    pub source: Vec<f64>,
}

pub fn transport_matrix(n: usize, axis: usize, coef: f64) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(n + 2, n + 2);
    b[(0, 1 + axis)] = coef;
    b[(1 + axis, 0)] = coef;
    b
}

pub fn assemble(st: &FuchsianState, r: &Trajectory, p: &ModelParams) -> Result<SystemAssembly, FuchsianError> {
    let rp = r.at_tau(st.tau)?;
    let bc = r.constants.b_const;
    let g = st.grid();
    let m = g.len();
    let n = g.dim;
    let mut frak_b = Vec::with_capacity(m);
    let mut source = vec![0.0; (n + 2) * m];
    for i in 0..m {
        let rem = remainders_at(&rp, p, bc, st.u0.values[i], st.u.values[i])?;
        frak_b.push(singular_block(n, &rp, p, bc, &rem));
        source[i] = -rem.l;
        source[(n + 1) * m + i] = -rem.k;
    }
    Ok(SystemAssembly { tau: st.tau, transport_coef: p.m * rp.chi / (p.gauge * bc * st.tau), frak_b, source })
}

/// Right-hand side of the compactified system split as
/// `d_tau U = -transport + singular + source`.
pub struct FuchsianSystem<'a> {
    pub reference: &'a Trajectory,
    pub params: ModelParams,
    pub grid: TorusGrid,
    sp: Spectral,
    tmp: Vec<f64>,
    pub dealias: bool,
}

pub struct Terms {
    pub transport: Vec<f64>,
    pub singular: Vec<f64>,
    pub source: Vec<f64>,
}

impl<'a> FuchsianSystem<'a> {
    pub fn new(reference: &'a Trajectory, grid: TorusGrid) -> Self {
        FuchsianSystem {
            reference,
            params: reference.params,
            grid,
            sp: Spectral::new(grid),
            tmp: vec![0.0; grid.len()],
            dealias: true,
        }
    }

    pub fn terms_at(&mut self, rp: &RefPoint, u: &[f64]) -> Result<Terms, FuchsianError> {
        let p = self.params;
        let bc = self.reference.constants.b_const;
        let m = self.grid.len();
        let n = self.grid.dim;
        let tau = rp.tau;
        let len = (n + 2) * m;
        let mut transport = vec![0.0; len];
        let mut singular = vec![0.0; len];
        let mut source = vec![0.0; len];
        let tc = p.m * rp.chi / (p.gauge * bc * tau);
        let u0 = &u[..m];
        let uu = &u[(n + 1) * m..];
        for a in 0..n {
            let ua = &u[(1 + a) * m..(2 + a) * m];
            self.sp.diff_into(ua, a, &mut self.tmp);
            for i in 0..m {
                transport[i] += tc * self.tmp[i];
            }
            self.sp.diff_into(u0, a, &mut self.tmp);
            for i in 0..m {
                transport[(1 + a) * m + i] = tc * self.tmp[i];
            }
        }
        let ga = p.gauge * tau;
        let chi_b = rp.chi / bc;
        let ck = p.c - p.k;
        for i in 0..m {
            let rem = remainders_at(rp, &p, bc, u0[i], uu[i])?;
            singular[i] =
                ((p.b + (2.0 * p.k - p.c) * chi_b + rem.h) * u0[i] + (-2.0 * p.b + ck * chi_b + rem.f) * uu[i]) / ga;
            for a in 0..n {
                singular[(1 + a) * m + i] = chi_b * u[(1 + a) * m + i] / ga;
            }
            singular[(n + 1) * m + i] = chi_b * (uu[i] - u0[i]) / ga;
            source[i] = -rem.l;
            source[(n + 1) * m + i] = -rem.k;
        }
        Ok(Terms { transport, singular, source })
    }

    pub fn rate_at(&mut self, rp: &RefPoint, u: &[f64], out: &mut [f64]) -> Result<(), FuchsianError> {
        let t = self.terms_at(rp, u)?;
        for i in 0..out.len() {
            out[i] = -t.transport[i] + t.singular[i] + t.source[i];
        }
        if self.dealias {
            let m = self.grid.len();
            self.sp.dealias_in_place(&mut out[..m]);
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(FuchsianError::NonFinite(rp.tau));
        }
        Ok(())
    }
}

impl System for FuchsianSystem<'_> {
    type Error = FuchsianError;

    fn dim(&self) -> usize {
        (2 + self.grid.dim) * self.grid.len()
    }

    fn rhs(&mut self, tau: f64, y: &[f64], dy: &mut [f64]) -> Result<(), FuchsianError> {
        let mut rp = self.reference.at_tau(tau)?;
        rp.tau = tau;
        self.rate_at(&rp, y, dy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuchsianConfig {
    pub tau_end: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub c_cfl: f64,
    /// Step cap `h <= step_frac * |tau|`.
    pub step_frac: f64,
    pub sobolev_s: u32,
    /// Keep every this many accepted states as diagnostic samples.
    pub sample_every: usize,
    /// Extra `tau` values where the run lands exactly and keeps the state.
    pub output_taus: Vec<f64>,
}

impl Default for FuchsianConfig {
    fn default() -> Self {
        FuchsianConfig {
            tau_end: -1e-4,
            rel_tol: 1e-10,
            abs_tol: 1e-14,
            c_cfl: 0.5,
            step_frac: 0.1,
            sobolev_s: 4,
            sample_every: 10,
            output_taus: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FuchsianRecord {
    pub tau: f64,
    pub hs_norm: f64,
    pub sup_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FuchsianStop {
    ReachedEnd,
    StepUnderflow,
}

#[derive(Debug, Clone)]
pub struct FuchsianRun {
    pub records: Vec<FuchsianRecord>,
    pub samples: Vec<FuchsianState>,
    pub outputs: Vec<FuchsianState>,
    pub final_state: FuchsianState,
    pub stop: FuchsianStop,
    pub steps: usize,
}

pub fn integrate_fuchsian(
    init: &FuchsianState,
    r: &Trajectory,
    p: &ModelParams,
    cfg: &FuchsianConfig,
) -> Result<FuchsianRun, FuchsianError> {
    let grid = init.grid();
    let mut sys = FuchsianSystem::new(r, grid);
    let mut norm_sp = Spectral::new(grid);
    let ctl = StepControl { rel_tol: cfg.rel_tol, abs_tol: cfg.abs_tol, ..StepControl::default() };
    let mut rk = Dopri5::new(sys.dim(), ctl);
    let mut targets: Vec<f64> = cfg.output_taus.iter().copied().filter(|&t| t > init.tau && t < cfg.tau_end).collect();
    targets.sort_by(|a, b| a.partial_cmp(b).unwrap());
    targets.dedup();
    targets.push(cfg.tau_end);
    let n_out = targets.len() - 1;

    let mut tau = init.tau;
    let mut y = init.to_vec();
    let mut records = Vec::new();
    let mut samples = Vec::new();
    let mut outputs = Vec::new();
    let mut steps = 0usize;
    let mut first = true;
    let bc = r.constants.b_const;
    let kmax = grid.k_max();
    let mut stop = FuchsianStop::ReachedEnd;

    for (seg, &target) in targets.iter().enumerate() {
        let res = rk.integrate(
            &mut sys,
            &mut tau,
            &mut y,
            target,
            |tt, _| {
                let mut cap = cfg.step_frac * tt.abs();
                if let Ok(rp) = r.at_tau(tt) {
                    let speed = (p.m * rp.chi / (p.gauge * bc * tt)).abs();
                    if speed > 0.0 {
                        cap = cap.min(cfg.c_cfl / (speed * kmax));
                    }
                }
                cap
            },
            |a| {
                if a.h == 0.0 && !first {
                    return Ok(Flow::Continue);
                }
                first = false;
                if a.h > 0.0 {
                    steps += 1;
                }
                let st = FuchsianState::from_slice(grid, a.t, a.y);
                records.push(FuchsianRecord { tau: a.t, hs_norm: st.hs_norm(cfg.sobolev_s, &mut norm_sp), sup_norm: st.sup_all() });
                if seg < n_out && a.t == target {
                    outputs.push(st.clone());
                }
                if a.h == 0.0 || (cfg.sample_every > 0 && steps % cfg.sample_every == 0) || a.t == cfg.tau_end {
                    samples.push(st);
                }
                Ok(Flow::Continue)
            },
        );
        match res {
            Ok(_) => {}
            Err(RkError::Rhs(e)) => return Err(e),
            Err(RkError::StepUnderflow { .. }) => {
                stop = FuchsianStop::StepUnderflow;
                break;
            }
            Err(RkError::TooManySteps(t)) => return Err(FuchsianError::TooManySteps(t)),
        }
    }
    let final_state = FuchsianState::from_slice(grid, tau, &y);
    if samples.last().map(|s| s.tau) != Some(tau) {
        samples.push(final_state.clone());
    }
    Ok(FuchsianRun { records, samples, outputs, final_state, stop, steps })
}

/// `d_tau U` from a physical-time state and its time derivative.
pub fn tau_rate_from_snapshot(snap: &Snapshot, rp: &RefPoint, p: &ModelParams, b_const: f64) -> FuchsianState {
    let phi = 1.0 / dtau_dt(rp, p, b_const);
    let (s, d) = (&snap.state, &snap.rate);
    let m = p.m;
    let u = Field {
        grid: s.w.grid,
        values: s.w.values.iter().zip(&d.w.values).map(|(w, dw)| phi * (dw / rp.f - w * rp.f0 / (rp.f * rp.f))).collect(),
    };
    let u0 = Field {
        grid: s.w.grid,
        values: s
            .w0
            .values
            .iter()
            .zip(&d.w0.values)
            .map(|(w, dw)| phi * (dw / rp.f0 - w * rp.f0_dot / (rp.f0 * rp.f0)))
            .collect(),
    };
    let ui = s
        .wi
        .iter()
        .zip(&d.wi)
        .map(|(w, dw)| Field {
            grid: w.grid,
            values: w.values.iter().zip(&dw.values).map(|(w, dw)| phi * m * (dw / rp.y - w * rp.f0 / (rp.y * rp.y))).collect(),
        })
        .collect();
    FuchsianState { tau: rp.tau, u0, ui, u }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualSample {
    pub tau: f64,
    pub t: f64,
    pub sup: f64,
    pub l2: f64,
    /// Largest sup among `d_tau U`, the transport, singular and source terms.
    pub scale: f64,
    pub relative: f64,
}

/// Residual of the compactified system on physical-time snapshots.
pub fn fuchsian_residual(snaps: &[Snapshot], r: &Trajectory, p: &ModelParams) -> Result<Vec<ResidualSample>, FuchsianError> {
    let bc = r.constants.b_const;
    let mut out = Vec::with_capacity(snaps.len());
    let mut sys: Option<FuchsianSystem> = None;
    for snap in snaps {
        let grid = snap.state.grid();
        let sys = sys.get_or_insert_with(|| FuchsianSystem::new(r, grid));
        let rp = r.at(snap.state.t)?;
        let st = to_fuchsian_at(&snap.state, &rp, p.m);
        let lhs = tau_rate_from_snapshot(snap, &rp, p, bc).to_vec();
        let u = st.to_vec();
        let terms = sys.terms_at(&rp, &u)?;
        let mut rhs = vec![0.0; u.len()];
        sys.rate_at(&rp, &u, &mut rhs)?;
        let res: Vec<f64> = lhs.iter().zip(&rhs).map(|(a, b)| a - b).collect();
        let scale = sup(&lhs).max(sup(&terms.transport)).max(sup(&terms.singular)).max(sup(&terms.source));
        let w = grid.spacing().powi(grid.dim as i32);
        let l2 = (res.iter().map(|v| v * v).sum::<f64>() * w).sqrt();
        let s = sup(&res);
        out.push(ResidualSample { tau: rp.tau, t: rp.t, sup: s, l2, scale, relative: if scale > 0.0 { s / scale } else { s } });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionVSample {
    pub tau: f64,
    /// Eigenvalues (times `A`) matched to the three closed-form values, at the worst point.
    pub lambda: [f64; 3],
    pub max_dev: f64,
    pub margin: f64,
    pub pass: bool,
    pub sup_u0_u: f64,
    pub in_gamma: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionVReport {
    pub eps: f64,
    pub lambda_tilde: [f64; 3],
    pub ball_radius: f64,
    pub samples: Vec<ConditionVSample>,
    /// Largest failing `tau`; `None` when every sample passes.
    pub tau_delta: Option<f64>,
    pub tail_len: usize,
    pub kappa: f64,
    pub gamma2: f64,
}

/// Sorted eigenvalues of the symmetrized block, scaled by `A`.
pub fn symmetrized_eigenvalues(b: &DMatrix<f64>, gauge: f64) -> Vec<f64> {
    let sym = (b + b.transpose()) * 0.5;
    let mut ev: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().map(|v| v * gauge).collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

/// Closed-form targets with the third value repeated `n` times, sorted, with labels 0..3.
fn targets(lt: &[f64; 3], n: usize) -> Vec<(f64, usize)> {
    let mut t = vec![(lt[0], 0), (lt[1], 1)];
    for _ in 0..n {
        t.push((lt[2], 2));
    }
    t.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    t
}

pub fn condition_v_check(
    samples: &[FuchsianState],
    r: &Trajectory,
    p: &ModelParams,
    eps: f64,
    ball_radius: f64,
) -> Result<ConditionVReport, FuchsianError> {
    let lt = r.constants.lambda_tilde;
    let lmin = lt.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(eps > 0.0 && eps < lmin) {
        return Err(FuchsianError::EpsTooLarge { eps, min: lmin });
    }
    let bc = r.constants.b_const;
    let mut out = Vec::with_capacity(samples.len());
    for st in samples {
        let n = st.grid().dim;
        let tg = targets(&lt, n);
        let mut rp = r.at_tau(st.tau)?;
        rp.tau = st.tau;
        let mut worst = (f64::NEG_INFINITY, [f64::NAN; 3]);
        for i in 0..st.u.values.len() {
            let rem = remainders_at(&rp, p, bc, st.u0.values[i], st.u.values[i])?;
            let ev = symmetrized_eigenvalues(&singular_block(n, &rp, p, bc, &rem), p.gauge);
            let mut dev = 0.0f64;
            let mut lab = [f64::NAN; 3];
            let mut labdev = [f64::NEG_INFINITY; 3];
            for (e, (tv, l)) in ev.iter().zip(&tg) {
                let d = (e - tv).abs();
                dev = dev.max(d);
                if d > labdev[*l] {
                    labdev[*l] = d;
                    lab[*l] = *e;
                }
            }
            if dev > worst.0 {
                worst = (dev, lab);
            }
        }
        let pass = worst.0 < eps;
        let supu = st.sup_u0_u();
        out.push(ConditionVSample {
            tau: st.tau,
            lambda: worst.1,
            max_dev: worst.0,
            margin: eps - worst.0,
            pass,
            sup_u0_u: supu,
            in_gamma: false,
        });
    }
    let tau_delta = out.iter().filter(|s| !s.pass).map(|s| s.tau).fold(None, |m: Option<f64>, t| Some(m.map_or(t, |m| m.max(t))));
    for s in out.iter_mut() {
        s.in_gamma = tau_delta.map_or(true, |td| s.tau > td) && s.sup_u0_u < ball_radius;
    }
    let tail_len = out.iter().filter(|s| tau_delta.map_or(true, |td| s.tau > td)).count();
    let kappa = lt.iter().map(|l| l - eps).fold(f64::INFINITY, f64::min) / p.gauge;
    let gamma2 = lt.iter().map(|l| l + eps).fold(f64::NEG_INFINITY, f64::max) / (kappa * p.gauge);
    Ok(ConditionVReport { eps, lambda_tilde: lt, ball_radius, samples: out, tau_delta, tail_len, kappa, gamma2 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyRecord {
    pub tau: f64,
    pub hs_norm: f64,
    pub envelope: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub c1: f64,
    pub c2: f64,
    pub tau0: f64,
    pub norm0: f64,
    pub records: Vec<EnergyRecord>,
    pub all_ok: bool,
}

/// `e^(-c2 T0) (-T0)^c1 |U0| (-tau)^(-c1) e^(c2 tau)`.
pub fn energy_envelope(tau: f64, tau0: f64, norm0: f64, c1: f64, c2: f64) -> f64 {
    (-c2 * tau0).exp() * (-tau0).powf(c1) * norm0 * (-tau).powf(-c1) * (c2 * tau).exp()
}

/// Smallest `c1 + c2` (both `>= 0`) for which the envelope dominates every record.
pub fn fit_energy_constants(records: &[FuchsianRecord]) -> (f64, f64) {
    let Some(first) = records.first() else { return (0.0, 0.0) };
    let (t0, n0) = (first.tau, first.hs_norm);
    if n0 == 0.0 {
        return (0.0, 0.0);
    }
    // ln(|U|/|U0|) <= c1 s + c2 v with s = ln(T0/tau), v = tau - T0
    let pts: Vec<(f64, f64, f64)> = records
        .iter()
        .skip(1)
        .filter(|r| r.tau > t0)
        .map(|r| ((t0 / r.tau).ln(), r.tau - t0, (r.hs_norm / n0).ln()))
        .collect();
    let c2_for = |c1: f64| pts.iter().map(|&(s, v, q)| (q - c1 * s) / v).fold(0.0, f64::max);
    let c1_max = pts.iter().filter(|p| p.0 > 0.0).map(|&(s, _, q)| q / s).fold(0.0, f64::max);
    let obj = |c1: f64| c1 + c2_for(c1);
    let (mut a, mut b) = (0.0, c1_max);
    let gr = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..200 {
        if b - a < 1e-14 * b.max(1.0) {
            break;
        }
        let x1 = b - gr * (b - a);
        let x2 = a + gr * (b - a);
        if obj(x1) <= obj(x2) {
            b = x2;
        } else {
            a = x1;
        }
    }
    let c1 = 0.5 * (a + b);
    let c2 = c2_for(c1);
    // cover rounding in the fit
    (c1 * (1.0 + 1e-12) + 1e-14, c2 * (1.0 + 1e-12) + 1e-14)
}

pub fn energy_monitor(records: &[FuchsianRecord]) -> EnergyReport {
    let (c1, c2) = fit_energy_constants(records);
    let (tau0, norm0) = records.first().map_or((-1.0, 0.0), |r| (r.tau, r.hs_norm));
    let recs: Vec<EnergyRecord> = records
        .iter()
        .map(|r| {
            let env = energy_envelope(r.tau, tau0, norm0, c1, c2);
            EnergyRecord { tau: r.tau, hs_norm: r.hs_norm, envelope: env, ok: r.hs_norm <= env * (1.0 + 1e-12) }
        })
        .collect();
    let all_ok = recs.iter().all(|r| r.ok);
    EnergyReport { c1, c2, tau0, norm0, records: recs, all_ok }
}
