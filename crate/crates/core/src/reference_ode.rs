//! Spatially homogeneous reference solution in the variables `y = 1+f`,
//! `q0 = f0/(1+f)` and `G = g^(-b/A)`.

use crate::interp::Quintic;
use crate::params::{curve_f, curve_l, finite_time_condition, DerivedConstants, ModelParams, OdeData};
use crate::rk::{Dopri5, Flow, RkError, StepControl, System};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OdeError {
    #[error("non-finite right-hand side at t = {0}")]
    NonFinite(f64),
    #[error("t = {t} outside trajectory range [{lo}, {hi}]")]
    OutOfRange { t: f64, lo: f64, hi: f64 },
    #[error("only {have} samples past y = {threshold:e}, need {need}")]
    InsufficientTail { have: usize, need: usize, threshold: f64 },
    #[error("step budget exhausted at t = {0}")]
    TooManySteps(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdeState {
    pub t: f64,
    pub y: f64,
    pub q0: f64,
    #[serde(rename = "G")]
    pub big_g: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Threshold,
    GaugeFloor,
    MaxTime,
    StepUnderflow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StopCriteria {
    pub y_max: f64,
    /// `t_max = t_max_factor * t0`.
    pub t_max_factor: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Stop once `g` drops to this level.
    pub g_min: Option<f64>,
    /// Step cap `h <= max_growth / q0`, i.e. bounded relative growth of `y` per step.
    pub max_growth: f64,
}

impl Default for StopCriteria {
    fn default() -> Self {
        StopCriteria { y_max: 1e8, t_max_factor: 1e6, rel_tol: 1e-10, abs_tol: 1e-12, g_min: None, max_growth: 0.03 }
    }
}

/// `(dy, dq0, dG)`.
pub fn rhs(s: &OdeState, p: &ModelParams, dc: &DerivedConstants) -> Result<[f64; 3], OdeError> {
    let OdeState { t, y, q0, .. } = *s;
    let dy = y * q0;
    let dq0 = -(p.a / t) * q0 + (p.b / (t * t)) * (y - 1.0) - (1.0 - p.c) * q0 * q0;
    let dg = p.b * dc.b_const * t.powf(p.a - 2.0) * (y - 1.0) * y.powf(1.0 - p.c);
    if dy.is_finite() && dq0.is_finite() && dg.is_finite() {
        Ok([dy, dq0, dg])
    } else {
        Err(OdeError::NonFinite(t))
    }
}

/// Second derivatives `(y'', q0'', G'')` along the flow.
pub fn rhs_dot(s: &OdeState, d: &[f64; 3], p: &ModelParams, dc: &DerivedConstants) -> [f64; 3] {
    let OdeState { t, y, q0, .. } = *s;
    let [dy, dq0, _] = *d;
    let ddy = dy * q0 + y * dq0;
    let ddq0 = p.a / (t * t) * q0 - p.a / t * dq0 - 2.0 * p.b / t.powi(3) * (y - 1.0) + p.b / (t * t) * dy
        - 2.0 * (1.0 - p.c) * q0 * dq0;
    let bb = p.b * dc.b_const;
    let ddg = bb
        * ((p.a - 2.0) * t.powf(p.a - 3.0) * (y - 1.0) * y.powf(1.0 - p.c)
            + t.powf(p.a - 2.0) * (dy * y.powf(1.0 - p.c) + (y - 1.0) * (1.0 - p.c) * y.powf(-p.c) * dy));
    [ddy, ddq0, ddg]
}

struct Homogeneous<'a> {
    p: &'a ModelParams,
    dc: &'a DerivedConstants,
}

impl System for Homogeneous<'_> {
    type Error = OdeError;
    fn dim(&self) -> usize {
        3
    }
    fn rhs(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), OdeError> {
        let s = OdeState { t, y: y[0], q0: y[1], big_g: y[2] };
        let r = rhs(&s, self.p, self.dc)?;
        dy.copy_from_slice(&r);
        Ok(())
    }
}

/// Point values of the reference solution and its auxiliary quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RefPoint {
    pub t: f64,
    pub y: f64,
    pub q0: f64,
    pub big_g: f64,
    pub f: f64,
    pub f0: f64,
    /// `d f0 / dt`.
    pub f0_dot: f64,
    pub g: f64,
    pub chi: f64,
    pub xi: f64,
    pub frak_g: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuxSample {
    pub t: f64,
    pub g: f64,
    pub chi: f64,
    pub xi: f64,
    #[serde(rename = "frakG")]
    pub frak_g: f64,
    pub tau: f64,
}

pub fn aux_at(s: &OdeState, p: &ModelParams, dc: &DerivedConstants) -> AuxSample {
    let OdeState { t, y, big_g, .. } = *s;
    let g = big_g.powf(-p.gauge / p.b);
    let chi = big_g * big_g * t.powf(2.0 * (1.0 - p.a)) / (dc.b_const * (y - 1.0) * y.powf(2.0 * (1.0 - p.c)));
    let xi = 1.0 / (g * y);
    let frak_g = chi - 2.0 * p.b * dc.b_const / (3.0 - 2.0 * p.c);
    AuxSample { t, g, chi, xi, frak_g, tau: -g }
}

#[derive(Debug, Clone)]
struct Splines {
    y: Quintic,
    q0: Quintic,
    big_g: Quintic,
    tau: Quintic,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub params: ModelParams,
    pub data: OdeData,
    pub constants: DerivedConstants,
    pub states: Vec<OdeState>,
    pub stop: StopReason,
    splines: Splines,
}

pub fn initial_state(d: &OdeData) -> OdeState {
    let y = 1.0 + d.f_ring;
    OdeState { t: d.t0, y, q0: d.f0_ring / y, big_g: 1.0 }
}

pub fn integrate_reference(
    p: &ModelParams,
    d: &OdeData,
    dc: &DerivedConstants,
    stop: &StopCriteria,
) -> Result<Trajectory, OdeError> {
    let s0 = initial_state(d);
    let mut sys = Homogeneous { p, dc };
    let ctl = StepControl { rel_tol: stop.rel_tol, abs_tol: stop.abs_tol, ..StepControl::default() };
    let mut rk = Dopri5::new(3, ctl);
    let mut t = s0.t;
    let mut y = [s0.y, s0.q0, s0.big_g];
    let mut states = Vec::new();
    let mut hit = None;
    let g_exp = -p.gauge / p.b;
    let growth = stop.max_growth;
    let res = rk.integrate(
        &mut sys,
        &mut t,
        &mut y,
        stop.t_max_factor * d.t0,
        |_, y| growth / y[1].max(1e-300),
        |a| {
            let s = OdeState { t: a.t, y: a.y[0], q0: a.y[1], big_g: a.y[2] };
            states.push(s);
            if s.y >= stop.y_max {
                hit = Some(StopReason::Threshold);
                return Ok(Flow::Stop);
            }
            if let Some(gm) = stop.g_min {
                if s.big_g.powf(g_exp) <= gm {
                    hit = Some(StopReason::GaugeFloor);
                    return Ok(Flow::Stop);
                }
            }
            Ok(Flow::Continue)
        },
    );
    let stop_reason = match res {
        Ok(_) => hit.unwrap_or(StopReason::MaxTime),
        Err(RkError::StepUnderflow { .. }) => StopReason::StepUnderflow,
        Err(RkError::TooManySteps(t)) => return Err(OdeError::TooManySteps(t)),
        Err(RkError::Rhs(e)) => return Err(e),
    };
    Trajectory::from_states(*p, *d, dc.clone(), states, stop_reason)
}

impl Trajectory {
    /// Builds a trajectory (and its interpolants) from accepted states.
    pub fn from_states(
        params: ModelParams,
        data: OdeData,
        constants: DerivedConstants,
        states: Vec<OdeState>,
        stop: StopReason,
    ) -> Result<Self, OdeError> {
        let n = states.len();
        let mut ts = Vec::with_capacity(n);
        let mut cols: [[Vec<f64>; 3]; 4] = Default::default();
        for s in &states {
            let d1 = rhs(s, &params, &constants)?;
            let d2 = rhs_dot(s, &d1, &params, &constants);
            ts.push(s.t);
            let v = [s.y, s.q0, s.big_g];
            for j in 0..3 {
                cols[j][0].push(v[j]);
                cols[j][1].push(d1[j]);
                cols[j][2].push(d2[j]);
            }
            // tau = -G^e with e = -A/b
            let e = -params.gauge / params.b;
            let gp = s.big_g.powf(e - 1.0);
            cols[3][0].push(-s.big_g.powf(e));
            cols[3][1].push(-e * gp * d1[2]);
            cols[3][2].push(-e * ((e - 1.0) * s.big_g.powf(e - 2.0) * d1[2] * d1[2] + gp * d2[2]));
        }
        let mk = |c: &mut [Vec<f64>; 3]| {
            Quintic::new(ts.clone(), std::mem::take(&mut c[0]), std::mem::take(&mut c[1]), std::mem::take(&mut c[2]))
        };
        let [mut cy, mut cq, mut cg, mut ctau] = cols;
        let splines = Splines { y: mk(&mut cy), q0: mk(&mut cq), big_g: mk(&mut cg), tau: mk(&mut ctau) };
        Ok(Trajectory { params, data, constants, states, stop, splines })
    }

    pub fn t_range(&self) -> (f64, f64) {
        (self.states[0].t, self.states.last().unwrap().t)
    }

    pub fn last(&self) -> &OdeState {
        self.states.last().unwrap()
    }

    fn out_of_range(&self, t: f64) -> OdeError {
        let (lo, hi) = self.t_range();
        OdeError::OutOfRange { t, lo, hi }
    }

    /// Interpolated state at `t`.
    pub fn state_at(&self, t: f64) -> Result<OdeState, OdeError> {
        let e = || self.out_of_range(t);
        Ok(OdeState {
            t,
            y: self.splines.y.eval(t).ok_or_else(e)?,
            q0: self.splines.q0.eval(t).ok_or_else(e)?,
            big_g: self.splines.big_g.eval(t).ok_or_else(e)?,
        })
    }

    pub fn at(&self, t: f64) -> Result<RefPoint, OdeError> {
        let s = self.state_at(t)?;
        Ok(self.point(&s))
    }

    pub fn point(&self, s: &OdeState) -> RefPoint {
        let p = &self.params;
        let d = rhs(s, p, &self.constants).unwrap_or([f64::NAN; 3]);
        let aux = aux_at(s, p, &self.constants);
        RefPoint {
            t: s.t,
            y: s.y,
            q0: s.q0,
            big_g: s.big_g,
            f: s.y - 1.0,
            f0: s.y * s.q0,
            f0_dot: d[0] * s.q0 + s.y * d[1],
            g: aux.g,
            chi: aux.chi,
            xi: aux.xi,
            frak_g: aux.frak_g,
            tau: aux.tau,
        }
    }

    pub fn tau_of_t(&self, t: f64) -> Result<f64, OdeError> {
        self.splines.tau.eval(t).ok_or_else(|| self.out_of_range(t))
    }

    pub fn t_of_tau(&self, tau: f64) -> Result<f64, OdeError> {
        self.splines.tau.invert(tau).ok_or_else(|| {
            let v = self.splines.tau.values();
            OdeError::OutOfRange { t: tau, lo: v[0], hi: *v.last().unwrap() }
        })
    }

    pub fn tau_range(&self) -> (f64, f64) {
        let v = self.splines.tau.values();
        (v[0], *v.last().unwrap())
    }

    pub fn at_tau(&self, tau: f64) -> Result<RefPoint, OdeError> {
        self.at(self.t_of_tau(tau)?)
    }

    /// First time at which the interpolated `f` reaches `level`.
    pub fn t_of_f(&self, level: f64) -> Result<f64, OdeError> {
        self.splines.y.invert(1.0 + level).ok_or(OdeError::OutOfRange { t: level, lo: 0.0, hi: self.last().y - 1.0 })
    }

    /// First accepted sample with `y >= level`.
    pub fn first_sample_above(&self, level: f64) -> Option<&OdeState> {
        self.states.iter().find(|s| s.y >= level)
    }

    /// Largest relative mismatch between `y q0` and `t^(-a) G y^c / B`.
    pub fn identity_defect(&self) -> f64 {
        let p = &self.params;
        self.states
            .iter()
            .map(|s| {
                let lhs = s.y * s.q0;
                let rhs = s.t.powf(-p.a) * s.big_g * s.y.powf(p.c) / self.constants.b_const;
                ((lhs - rhs) / rhs).abs()
            })
            .fold(0.0, f64::max)
    }
}

pub fn eval_aux(traj: &Trajectory) -> Vec<AuxSample> {
    traj.states.iter().map(|s| aux_at(s, &traj.params, &traj.constants)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlowupEstimate {
    pub t_m_est: f64,
    pub window: (f64, f64),
    pub fit_residual: f64,
    pub slope: f64,
    pub threshold_y: f64,
}

pub const TAIL_SAMPLES: usize = 20;
pub const TAIL_THRESHOLD: f64 = 1e4;

/// Least-squares line through `z = y^(1-c)` over the last 20 samples.
pub fn estimate_blowup_time(traj: &Trajectory, p: &ModelParams) -> Result<BlowupEstimate, OdeError> {
    estimate_blowup_time_with(traj, p, TAIL_THRESHOLD)
}

pub fn estimate_blowup_time_with(traj: &Trajectory, p: &ModelParams, threshold: f64) -> Result<BlowupEstimate, OdeError> {
    let have = traj.states.iter().filter(|s| s.y >= threshold).count();
    if have < TAIL_SAMPLES {
        return Err(OdeError::InsufficientTail { have, need: TAIL_SAMPLES, threshold });
    }
    let tail = &traj.states[traj.states.len() - TAIL_SAMPLES..];
    let ts: Vec<f64> = tail.iter().map(|s| s.t).collect();
    let zs: Vec<f64> = tail.iter().map(|s| s.y.powf(1.0 - p.c)).collect();
    let (t_m, slope, resid) = fit_zero_crossing(&ts, &zs);
    Ok(BlowupEstimate { t_m_est: t_m, window: (ts[0], ts[TAIL_SAMPLES - 1]), fit_residual: resid, slope, threshold_y: threshold })
}

/// Fits `z = alpha + beta t`; returns `(-alpha/beta, beta, rms residual)`.
pub fn fit_zero_crossing(ts: &[f64], zs: &[f64]) -> (f64, f64, f64) {
    let n = ts.len() as f64;
    let tm = ts.iter().sum::<f64>() / n;
    let zm = zs.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxz = 0.0;
    for (t, z) in ts.iter().zip(zs) {
        sxx += (t - tm) * (t - tm);
        sxz += (t - tm) * (z - zm);
    }
    let beta = sxz / sxx;
    let alpha = zm - beta * tm;
    let rss: f64 = ts.iter().zip(zs).map(|(t, z)| (z - alpha - beta * t).powi(2)).sum();
    (-alpha / beta, beta, (rss / n).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundId {
    /// `exp(C t^((abar+tri)/2) + D/t) < y`
    LowerExp,
    /// `y < 1/F(t)` for `t < t_star`
    UpperRational,
    /// `y^cbar < L(t)`
    UpperL,
    /// `0 < f0 < -B tri t^((tri+abar)/2-1) y^2`
    DerivativeBand,
    /// `(1+f_ring)(1 - E t0^abar + E t^abar)^(1/cbar) < y` under the data condition
    ImprovedLower,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundRecord {
    pub bound_id: BoundId,
    pub samples_checked: usize,
    pub worst_margin: f64,
    pub worst_t: f64,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub tolerance: f64,
    pub records: Vec<BoundRecord>,
}

impl BoundReport {
    pub fn total_violations(&self) -> usize {
        self.records.iter().map(|r| r.violations).sum()
    }

    pub fn get(&self, id: BoundId) -> Option<&BoundRecord> {
        self.records.iter().find(|r| r.bound_id == id)
    }
}

pub const BOUND_TOL: f64 = 1e-8;

/// Signed relative margins (positive means the strict bound holds).
pub fn bound_margins(s: &OdeState, p: &ModelParams, dc: &DerivedConstants, d: &OdeData) -> Vec<(BoundId, f64)> {
    let t = s.t;
    let y = s.y;
    let f0 = s.y * s.q0;
    let hi = 0.5 * (dc.abar + dc.triangle);
    let mut out = Vec::with_capacity(5);

    let lower = (dc.c_c * t.powf(hi) + dc.c_d / t).exp();
    out.push((BoundId::LowerExp, (y - lower) / lower));

    if t < dc.t_star {
        let upper = 1.0 / curve_f(t, dc);
        out.push((BoundId::UpperRational, (upper - y) / upper));
    }

    let l = curve_l(t, dc, d);
    out.push((BoundId::UpperL, (l - y.powf(dc.cbar)) / l.abs()));

    let band = -dc.c_b * dc.triangle * t.powf(hi - 1.0) * y * y;
    let m = (f0 / band).min((band - f0) / band);
    out.push((BoundId::DerivativeBand, m));

    if finite_time_condition(p, d) {
        let base = 1.0 - dc.c_e * d.t0.powf(dc.abar) + dc.c_e * t.powf(dc.abar);
        if base > 0.0 {
            let lower = (1.0 + d.f_ring) * base.powf(1.0 / dc.cbar);
            out.push((BoundId::ImprovedLower, (y - lower) / lower));
        }
    }
    out
}

pub fn check_bounds(traj: &Trajectory, dc: &DerivedConstants, d: &OdeData) -> BoundReport {
    let mut ids = vec![BoundId::LowerExp, BoundId::UpperRational, BoundId::UpperL, BoundId::DerivativeBand];
    if finite_time_condition(&traj.params, d) {
        ids.push(BoundId::ImprovedLower);
    }
    let mut records: Vec<BoundRecord> = ids
        .iter()
        .map(|&id| BoundRecord { bound_id: id, samples_checked: 0, worst_margin: f64::INFINITY, worst_t: f64::NAN, violations: 0 })
        .collect();
    for s in traj.states.iter().filter(|s| s.t > d.t0) {
        for (id, m) in bound_margins(s, &traj.params, dc, d) {
            let r = records.iter_mut().find(|r| r.bound_id == id).unwrap();
            r.samples_checked += 1;
            if m < r.worst_margin || m.is_nan() {
                r.worst_margin = m;
                r.worst_t = s.t;
            }
            if !(m >= -BOUND_TOL) {
                r.violations += 1;
            }
        }
    }
    BoundReport { tolerance: BOUND_TOL, records }
}

/// Fixed-step solution at `t_end` with `n` equal steps.
pub fn fixed_step_solution(p: &ModelParams, d: &OdeData, dc: &DerivedConstants, t_end: f64, n: usize) -> Result<OdeState, OdeError> {
    let s0 = initial_state(d);
    let mut sys = Homogeneous { p, dc };
    let mut rk = Dopri5::new(3, StepControl::default());
    let mut y = [s0.y, s0.q0, s0.big_g];
    let h = (t_end - d.t0) / n as f64;
    for i in 0..n {
        rk.fixed_step(&mut sys, d.t0 + i as f64 * h, &mut y, h)?;
    }
    Ok(OdeState { t: t_end, y: y[0], q0: y[1], big_g: y[2] })
}

/// Observed orders from successive step halvings against a reference state.
pub fn observed_orders(
    p: &ModelParams,
    d: &OdeData,
    dc: &DerivedConstants,
    t_end: f64,
    steps: &[usize],
    reference: &OdeState,
) -> Result<Vec<f64>, OdeError> {
    let mut errs = Vec::new();
    for &n in steps {
        let s = fixed_step_solution(p, d, dc, t_end, n)?;
        let e = ((s.y - reference.y) / reference.y)
            .abs()
            .max(((s.q0 - reference.q0) / reference.q0).abs())
            .max(((s.big_g - reference.big_g) / reference.big_g).abs());
        errs.push(e);
    }
    Ok(errs
        .windows(2)
        .zip(steps.windows(2))
        .map(|(e, n)| (e[0] / e[1]).ln() / (n[1] as f64 / n[0] as f64).ln())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::derive_constants;

    fn setup(f0: f64) -> (ModelParams, OdeData, DerivedConstants) {
        let p = ModelParams::special();
        let d = OdeData::new(1.0, 1.0, f0).unwrap();
        let dc = derive_constants(&p, &d).unwrap();
        (p, d, dc)
    }

    #[test]
    fn rhs_at_initial_state() {
        let (p, d, dc) = setup(1.0);
        let s = initial_state(&d);
        assert_eq!((s.y, s.q0, s.big_g), (2.0, 0.5, 1.0));
        let r = rhs(&s, &p, &dc).unwrap();
        assert!((r[0] - 1.0).abs() < 1e-15);
        assert!((r[1] - 1.0 / 12.0).abs() < 1e-15);
        assert!((r[2] - 4.0 / 3.0).abs() < 1e-14);
        // f'' = (y q0)' = 2/3
        let dd = rhs_dot(&s, &r, &p, &dc);
        assert!((dd[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn aux_at_initial_state() {
        let (p, d, dc) = setup(1.0);
        let a = aux_at(&initial_state(&d), &p, &dc);
        assert_eq!(a.g, 1.0);
        assert_eq!(a.tau, -1.0);
        assert!((a.xi - 0.5).abs() < 1e-15);
        assert!((a.chi - 2f64.powf(-2.0 / 3.0)).abs() < 1e-14);
        assert!((a.chi - a.frak_g - 4.0 * 2f64.powf(4.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn second_derivatives_match_differences() {
        let (p, _, dc) = setup(1.0);
        let s = OdeState { t: 1.7, y: 3.1, q0: 0.8, big_g: 2.2 };
        let d1 = rhs(&s, &p, &dc).unwrap();
        let d2 = rhs_dot(&s, &d1, &p, &dc);
        let h = 1e-6;
        let shift = |e: f64| OdeState { t: s.t + e, y: s.y + e * d1[0], q0: s.q0 + e * d1[1], big_g: s.big_g + e * d1[2] };
        let fp = rhs(&shift(h), &p, &dc).unwrap();
        let fm = rhs(&shift(-h), &p, &dc).unwrap();
        for j in 0..3 {
            let fd = (fp[j] - fm[j]) / (2.0 * h);
            assert!((fd - d2[j]).abs() < 1e-6 * d2[j].abs().max(1.0), "{j}: {fd} {}", d2[j]);
        }
    }

    #[test]
    fn fit_recovers_synthetic_blowup() {
        let c: f64 = 4.0 / 3.0;
        let tm = 5.25;
        let ts: Vec<f64> = (0..20).map(|i| tm - 1e-3 * 0.8f64.powi(i)).collect();
        let zs: Vec<f64> = ts.iter().map(|t| ((tm - t).powf(1.0 / (1.0 - c))).powf(1.0 - c)).collect();
        let (est, slope, res) = fit_zero_crossing(&ts, &zs);
        assert!(((est - tm) / tm).abs() < 1e-6);
        assert!(slope < 0.0 && res < 1e-9);
    }
}
