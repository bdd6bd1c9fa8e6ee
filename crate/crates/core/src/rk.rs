//! Dormand-Prince 5(4) pair with a PI step controller.

use thiserror::Error;

pub trait System {
    type Error;
    fn dim(&self) -> usize;
    fn rhs(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), Self::Error>;
}

#[derive(Debug, Clone, Copy)]
pub struct StepControl {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub safety: f64,
    pub max_ratio: f64,
    pub min_ratio: f64,
    /// Steps below `h_min_rel * max(|t|, 1)` are an underflow.
    pub h_min_rel: f64,
    pub beta: f64,
    pub max_steps: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            safety: 0.9,
            max_ratio: 5.0,
            min_ratio: 0.2,
            h_min_rel: 1e-14,
            beta: 0.04,
            max_steps: 5_000_000,
        }
    }
}

#[derive(Debug, Error)]
pub enum RkError<E> {
    #[error(transparent)]
    Rhs(E),
    #[error("step size {h:e} underflow at t = {t}")]
    StepUnderflow { t: f64, h: f64 },
    #[error("step budget exhausted at t = {0}")]
    TooManySteps(f64),
}

/// Hook verdict after an accepted step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Finish {
    ReachedEnd,
    Stopped,
}

#[derive(Debug, Clone, Copy)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

/// Accepted step as seen by the observer; `dy` is the derivative at `(t, y)`.
pub struct Accepted<'a> {
    pub t: f64,
    pub h: f64,
    pub y: &'a [f64],
    pub dy: &'a [f64],
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A2: [f64; 1] = [1.0 / 5.0];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0];
const A6: [f64; 5] = [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0];
const B5: [f64; 6] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

pub struct Dopri5 {
    pub control: StepControl,
    k: [Vec<f64>; 7],
    ytmp: Vec<f64>,
    ynew: Vec<f64>,
    pub stats: Stats,
}

impl Dopri5 {
    pub fn new(dim: usize, control: StepControl) -> Self {
        Dopri5 {
            control,
            k: std::array::from_fn(|_| vec![0.0; dim]),
            ytmp: vec![0.0; dim],
            ynew: vec![0.0; dim],
            stats: Stats { accepted: 0, rejected: 0, rhs_evals: 0 },
        }
    }

    fn stage<S: System>(&mut self, sys: &mut S, t: f64, h: f64, y: &[f64], s: usize, a: &[f64]) -> Result<(), S::Error> {
        for i in 0..y.len() {
            let mut acc = 0.0;
            for (j, aj) in a.iter().enumerate() {
                acc += aj * self.k[j][i];
            }
            self.ytmp[i] = y[i] + h * acc;
        }
        self.stats.rhs_evals += 1;
        let (ytmp, k) = (&self.ytmp, &mut self.k);
        sys.rhs(t + C[s] * h, ytmp, &mut k[s])
    }

    /// Stages 2..7 given `k[0] = f(t, y)`; leaves the 5th-order update in `ynew`
    /// and the FSAL derivative in `k[6]`.
    fn attempt<S: System>(&mut self, sys: &mut S, t: f64, h: f64, y: &[f64]) -> Result<(), S::Error> {
        self.stage(sys, t, h, y, 1, &A2)?;
        self.stage(sys, t, h, y, 2, &A3)?;
        self.stage(sys, t, h, y, 3, &A4)?;
        self.stage(sys, t, h, y, 4, &A5)?;
        self.stage(sys, t, h, y, 5, &A6)?;
        for i in 0..y.len() {
            let mut acc = 0.0;
            for j in 0..6 {
                acc += B5[j] * self.k[j][i];
            }
            self.ynew[i] = y[i] + h * acc;
        }
        self.stats.rhs_evals += 1;
        let (ynew, k) = (&self.ynew, &mut self.k);
        sys.rhs(t + h, ynew, &mut k[6])
    }

    fn error_norm(&self, h: f64, y: &[f64]) -> f64 {
        let n = y.len();
        let mut sum = 0.0;
        for i in 0..n {
            let mut e = 0.0;
            for j in 0..7 {
                e += E[j] * self.k[j][i];
            }
            let sc = self.control.abs_tol + self.control.rel_tol * y[i].abs().max(self.ynew[i].abs());
            let r = h * e / sc;
            sum += r * r;
        }
        (sum / n.max(1) as f64).sqrt()
    }

    /// One explicit 5th-order step of size `h`, no error control.
    pub fn fixed_step<S: System>(&mut self, sys: &mut S, t: f64, y: &mut [f64], h: f64) -> Result<(), S::Error> {
        self.stats.rhs_evals += 1;
        sys.rhs(t, y, &mut self.k[0])?;
        self.attempt(sys, t, h, y)?;
        y.copy_from_slice(&self.ynew);
        Ok(())
    }

    fn initial_step<S: System>(&mut self, sys: &mut S, t: f64, y: &[f64]) -> Result<f64, S::Error> {
        let n = y.len().max(1) as f64;
        let sc = |v: f64, ctl: &StepControl| ctl.abs_tol + ctl.rel_tol * v.abs();
        let mut d0 = 0.0;
        let mut d1 = 0.0;
        for i in 0..y.len() {
            let s = sc(y[i], &self.control);
            d0 += (y[i] / s).powi(2);
            d1 += (self.k[0][i] / s).powi(2);
        }
        let (d0, d1) = ((d0 / n).sqrt(), (d1 / n).sqrt());
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        for i in 0..y.len() {
            self.ytmp[i] = y[i] + h0 * self.k[0][i];
        }
        self.stats.rhs_evals += 1;
        let (ytmp, k) = (&self.ytmp, &mut self.k);
        sys.rhs(t + h0, ytmp, &mut k[1])?;
        let mut d2 = 0.0;
        for i in 0..y.len() {
            let s = sc(y[i], &self.control);
            d2 += ((self.k[1][i] - self.k[0][i]) / s).powi(2);
        }
        let d2 = (d2 / n).sqrt() / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        Ok((100.0 * h0).min(h1))
    }

    /// Adaptive integration from `t` towards `t_end`. `h_cap(t, y)` bounds the
    /// next step; `observe` sees every accepted step (and the initial point with `h = 0`).
    pub fn integrate<S, Cap, Obs>(
        &mut self,
        sys: &mut S,
        t: &mut f64,
        y: &mut [f64],
        t_end: f64,
        mut h_cap: Cap,
        mut observe: Obs,
    ) -> Result<Finish, RkError<S::Error>>
    where
        S: System,
        Cap: FnMut(f64, &[f64]) -> f64,
        Obs: FnMut(&Accepted) -> Result<Flow, S::Error>,
    {
        let dir = if t_end >= *t { 1.0 } else { -1.0 };
        self.stats.rhs_evals += 1;
        sys.rhs(*t, y, &mut self.k[0]).map_err(RkError::Rhs)?;
        if observe(&Accepted { t: *t, h: 0.0, y, dy: &self.k[0] }).map_err(RkError::Rhs)? == Flow::Stop {
            return Ok(Finish::Stopped);
        }
        let mut h = self.initial_step(sys, *t, y).map_err(RkError::Rhs)?;
        let ctl = self.control;
        let alpha = 0.2 - 0.75 * ctl.beta;
        let mut err_old: f64 = 1e-4;
        let mut rejected_last = false;
        let mut steps = 0usize;
        loop {
            let remaining = (t_end - *t) * dir;
            if remaining <= 1e-15 * t.abs().max(1.0) {
                return Ok(Finish::ReachedEnd);
            }
            steps += 1;
            if steps > ctl.max_steps {
                return Err(RkError::TooManySteps(*t));
            }
            let cap = h_cap(*t, y);
            if cap.is_finite() && cap > 0.0 {
                h = h.min(cap);
            }
            let mut last = false;
            if h >= remaining {
                h = remaining;
                last = true;
            }
            if h < ctl.h_min_rel * t.abs().max(1.0) {
                return Err(RkError::StepUnderflow { t: *t, h });
            }
            self.attempt(sys, *t, h * dir, y).map_err(RkError::Rhs)?;
            let err = self.error_norm(h, y);
            if err <= 1.0 && err.is_finite() {
                let mut fac = ctl.safety * err.max(1e-10).powf(-alpha) * err_old.powf(ctl.beta);
                fac = fac.clamp(ctl.min_ratio, ctl.max_ratio);
                if rejected_last {
                    fac = fac.min(1.0);
                }
                err_old = err.max(1e-4);
                *t = if last { t_end } else { *t + h * dir };
                y.copy_from_slice(&self.ynew);
                self.k.swap(0, 6);
                self.stats.accepted += 1;
                rejected_last = false;
                let flow = observe(&Accepted { t: *t, h, y, dy: &self.k[0] }).map_err(RkError::Rhs)?;
                if flow == Flow::Stop {
                    return Ok(Finish::Stopped);
                }
                h *= fac;
            } else {
                let fac = if err.is_finite() {
                    (ctl.safety * err.powf(-alpha)).max(ctl.min_ratio)
                } else {
                    ctl.min_ratio
                };
                h *= fac;
                self.stats.rejected += 1;
                rejected_last = true;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Decay;
    impl System for Decay {
        type Error = ();
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&mut self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), ()> {
            dy[0] = -y[0];
            Ok(())
        }
    }

    struct Osc;
    impl System for Osc {
        type Error = ();
        fn dim(&self) -> usize {
            2
        }
        fn rhs(&mut self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), ()> {
            dy[0] = y[1];
            dy[1] = -y[0];
            Ok(())
        }
    }

    #[test]
    fn tableau_rows_sum_to_nodes() {
        let rows: [&[f64]; 5] = [&A2, &A3, &A4, &A5, &A6];
        for (i, r) in rows.iter().enumerate() {
            let s: f64 = r.iter().sum();
            assert!((s - C[i + 1]).abs() < 1e-14);
        }
        assert!((B5.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!(E.iter().sum::<f64>().abs() < 1e-16);
    }

    #[test]
    fn exponential_decay() {
        let mut rk = Dopri5::new(1, StepControl::default());
        let mut y = [1.0];
        let mut t = 0.0;
        let fin = rk.integrate(&mut Decay, &mut t, &mut y, 5.0, |_, _| f64::INFINITY, |_| Ok(Flow::Continue)).unwrap();
        assert_eq!(fin, Finish::ReachedEnd);
        assert_eq!(t, 5.0);
        assert!((y[0] - (-5f64).exp()).abs() < 1e-11);
    }

    #[test]
    fn harmonic_oscillator_backwards() {
        let mut rk = Dopri5::new(2, StepControl::default());
        let mut y = [0.0, 1.0];
        let mut t = 0.0;
        rk.integrate(&mut Osc, &mut t, &mut y, -3.0, |_, _| f64::INFINITY, |_| Ok(Flow::Continue)).unwrap();
        assert!((y[0] - (-3f64).sin()).abs() < 1e-9);
        assert!((y[1] - (-3f64).cos()).abs() < 1e-9);
    }

    #[test]
    fn fixed_step_order_five() {
        let run = |n: usize| {
            let mut rk = Dopri5::new(2, StepControl::default());
            let mut y = [0.0, 1.0];
            let h = 1.0 / n as f64;
            for i in 0..n {
                rk.fixed_step(&mut Osc, i as f64 * h, &mut y, h).unwrap();
            }
            (y[0] - 1f64.sin()).abs()
        };
        let p = (run(10) / run(20)).log2();
        assert!((p - 5.0).abs() < 0.3, "order {p}");
    }

    #[test]
    fn observer_can_stop() {
        let mut rk = Dopri5::new(1, StepControl::default());
        let mut y = [1.0];
        let mut t = 0.0;
        let fin = rk
            .integrate(&mut Decay, &mut t, &mut y, 10.0, |_, _| 0.1, |a| Ok(if a.y[0] < 0.5 { Flow::Stop } else { Flow::Continue }))
            .unwrap();
        assert_eq!(fin, Finish::Stopped);
        assert!(y[0] < 0.5 && y[0] > 0.45);
    }
}
