//! Parameter region, closed-form constants, barrier curves and critical times.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Inequalities that make up the admissible parameter region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Constraint {
    AAboveOne,
    BPositive,
    CRange,
    KLower,
    KUpper,
    GaugeRange,
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Constraint::AAboveOne => "a>1",
            Constraint::BPositive => "b>0",
            Constraint::CRange => "1<c<3/2",
            Constraint::KLower => "k-lower",
            Constraint::KUpper => "k-upper",
            Constraint::GaugeRange => "0<A<2b/(3-2c)",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("parameter out of region: {0} violated")]
    OutOfRegion(Constraint),
    #[error("c = {0} outside (1, 3/2)")]
    DomainError(f64),
    #[error("invalid data: {0}")]
    InvalidData(&'static str),
    #[error("no sign change of F up to t = {0}")]
    NoSignChange(f64),
    #[error("non-positive eigenvalue {0}")]
    NonPositiveEigenvalue(f64),
}

/// Coefficients `(a, b, c, k, m)` of the equation and the gauge constant `A`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub k: f64,
    pub m: f64,
    #[serde(rename = "A")]
    pub gauge: f64,
}

impl ModelParams {
    /// `a = 4/3, b = 2/3, c = 4/3, k = 2, m = 1, A = 1`.
    pub fn special() -> Self {
        ModelParams { a: 4.0 / 3.0, b: 2.0 / 3.0, c: 4.0 / 3.0, k: 2.0, m: 1.0, gauge: 1.0 }
    }

    /// Upper end of the gauge interval, `2b/(3-2c)`.
    pub fn gauge_max(&self) -> f64 {
        2.0 * self.b / (3.0 - 2.0 * self.c)
    }

    /// Midpoint `b/(3-2c)` of the gauge interval.
    pub fn default_gauge(b: f64, c: f64) -> f64 {
        b / (3.0 - 2.0 * c)
    }
}

/// Initial data `f(t0) = f_ring`, `f'(t0) = f0_ring`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdeData {
    pub t0: f64,
    pub f_ring: f64,
    pub f0_ring: f64,
}

impl OdeData {
    pub fn new(t0: f64, f_ring: f64, f0_ring: f64) -> Result<Self, ParamError> {
        let d = OdeData { t0, f_ring, f0_ring };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        if !(self.t0.is_finite() && self.t0 > 0.0) {
            return Err(ParamError::InvalidData("t0 > 0"));
        }
        if !(self.f_ring.is_finite() && self.f_ring > 0.0) {
            return Err(ParamError::InvalidData("f_ring > 0"));
        }
        if !(self.f0_ring.is_finite() && self.f0_ring > 0.0) {
            return Err(ParamError::InvalidData("f0_ring > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub t0: f64,
    pub abar: f64,
    pub cbar: f64,
    pub triangle: f64,
    #[serde(rename = "B")]
    pub b_const: f64,
    #[serde(rename = "cA")]
    pub c_a: f64,
    #[serde(rename = "cB")]
    pub c_b: f64,
    #[serde(rename = "cC")]
    pub c_c: f64,
    #[serde(rename = "cD")]
    pub c_d: f64,
    #[serde(rename = "cE")]
    pub c_e: f64,
    pub tri_tilde: f64,
    pub lambda_tilde: [f64; 3],
    pub t_star: f64,
    pub t_upper_star: Option<f64>,
}

/// Checks the region in the order a, b, c, k, A.
pub fn validate_params(a: f64, b: f64, c: f64, k: f64, m: f64, gauge: f64) -> Result<ModelParams, ParamError> {
    use Constraint::*;
    if !(a > 1.0) || !a.is_finite() {
        return Err(ParamError::OutOfRegion(AAboveOne));
    }
    if !(b > 0.0) || !b.is_finite() {
        return Err(ParamError::OutOfRegion(BPositive));
    }
    if !(c > 1.0 && c < 1.5) {
        return Err(ParamError::OutOfRegion(CRange));
    }
    let (lo, hi) = k_admissible_interval(c)?;
    if !(k > lo) {
        return Err(ParamError::OutOfRegion(KLower));
    }
    if !(k < hi) {
        return Err(ParamError::OutOfRegion(KUpper));
    }
    if !m.is_finite() {
        return Err(ParamError::InvalidData("m finite"));
    }
    let p = ModelParams { a, b, c, k, m, gauge };
    if !(gauge > 0.0 && gauge < p.gauge_max()) {
        return Err(ParamError::OutOfRegion(GaugeRange));
    }
    Ok(p)
}

/// Open interval of admissible `k` for a given `c`.
pub fn k_admissible_interval(c: f64) -> Result<(f64, f64), ParamError> {
    if !(c > 1.0 && c < 1.5) {
        return Err(ParamError::DomainError(c));
    }
    let r = 2f64.sqrt() * (8.0 * c - 5.0).sqrt();
    Ok((3.0 * c - r, 3.0 * c + r))
}

/// Data condition for the finite-time case: `f0_ring > abar (1+f_ring) / (cbar t0)`.
/// Equality counts as not satisfied.
pub fn finite_time_condition(p: &ModelParams, d: &OdeData) -> bool {
    let abar = 1.0 - p.a;
    let cbar = 1.0 - p.c;
    d.f0_ring > abar * (1.0 + d.f_ring) / (cbar * d.t0)
}

pub fn derive_constants(p: &ModelParams, d: &OdeData) -> Result<DerivedConstants, ParamError> {
    d.validate()?;
    let (t0, fr, f0r) = (d.t0, d.f_ring, d.f0_ring);
    let abar = 1.0 - p.a;
    let cbar = 1.0 - p.c;
    let tri = (abar * abar + 4.0 * p.b).sqrt();
    let y0 = 1.0 + fr;
    let lo = 0.5 * (abar - tri);
    let hi = 0.5 * (abar + tri);

    let b_const = y0.powf(p.c) / (t0.powf(p.a) * f0r);
    let s = t0 * f0r / (y0 * y0);
    let r = fr / y0;
    let c_a = t0.powf(-lo) / tri * (s - hi * r);
    let c_b = t0.powf(-hi) / tri * (lo * r - s);
    let ln_y0 = y0.ln();
    let q = t0 * f0r / y0;
    let c_c = 2.0 / (2.0 + abar + tri) * (ln_y0 + hi / p.b * q) * t0.powf(-hi);
    let c_d = (abar + tri) / (2.0 + abar + tri) * (ln_y0 - q / p.b) * t0;
    let c_e = cbar * f0r * t0.powf(1.0 - abar) / (abar * y0);

    let (tri_tilde, lambda_tilde) = eigenvalues_tilde(p)?;

    let mut dc = DerivedConstants {
        t0,
        abar,
        cbar,
        triangle: tri,
        b_const,
        c_a,
        c_b,
        c_c,
        c_d,
        c_e,
        tri_tilde,
        lambda_tilde,
        t_star: f64::NAN,
        t_upper_star: None,
    };
    dc.t_star = find_t_star(&dc, t0)?;
    let t0_abar = t0.powf(abar);
    if c_e * t0_abar > 1.0 {
        dc.t_upper_star = Some((t0_abar - 1.0 / c_e).powf(1.0 / abar));
    }
    Ok(dc)
}

/// Rational barrier `A t^((abar-tri)/2) + B t^((abar+tri)/2) + 1`.
pub fn curve_f(t: f64, dc: &DerivedConstants) -> f64 {
    let lo = 0.5 * (dc.abar - dc.triangle);
    let hi = 0.5 * (dc.abar + dc.triangle);
    dc.c_a * t.powf(lo) + dc.c_b * t.powf(hi) + 1.0
}

/// Upper barrier `(1+f_ring)^cbar (1 - E t0^abar + E t^abar)`.
pub fn curve_l(t: f64, dc: &DerivedConstants, d: &OdeData) -> f64 {
    (1.0 + d.f_ring).powf(dc.cbar) * (1.0 - dc.c_e * d.t0.powf(dc.abar) + dc.c_e * t.powf(dc.abar))
}

pub const T_STAR_CAP: f64 = 1e12;
pub const T_STAR_RTOL: f64 = 1e-12;

/// Smallest zero of `curve_f` in `(t0, inf)`.
pub fn find_t_star(dc: &DerivedConstants, t0: f64) -> Result<f64, ParamError> {
    find_t_star_capped(dc, t0, T_STAR_CAP * t0)
}

pub fn find_t_star_capped(dc: &DerivedConstants, t0: f64, cap: f64) -> Result<f64, ParamError> {
    // t * F'(t) is strictly decreasing, so F has at most one interior maximum
    // and exactly one zero past t0.
    let mut lo = t0;
    let mut hi = 2.0 * t0;
    while curve_f(hi, dc) >= 0.0 {
        if hi >= cap {
            return Err(ParamError::NoSignChange(hi));
        }
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > T_STAR_RTOL * hi {
        let mid = 0.5 * (lo + hi);
        if curve_f(mid, dc) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `(tri_tilde, [l1, l2, l3])`.
pub fn eigenvalues_tilde(p: &ModelParams) -> Result<(f64, [f64; 3]), ParamError> {
    let (b, c, k) = (p.b, p.c, p.k);
    let rad = 52.0 * c * c - 56.0 * c * k - 104.0 * c + 20.0 * k * k + 40.0 * k + 65.0;
    let tt = rad.sqrt();
    let den = 2.0 * (2.0 * c - 3.0);
    let base = 4.0 * c - 4.0 * k - 5.0;
    let l = [b * (base - tt) / den, b * (base + tt) / den, 2.0 * b / (3.0 - 2.0 * c)];
    for &v in &l {
        if !(v > 0.0) {
            return Err(ParamError::NonPositiveEigenvalue(v));
        }
    }
    Ok((tt, l))
}

/// Eigenvalue formulas without the positivity check, for scanning past the region.
pub fn eigenvalues_tilde_unchecked(b: f64, c: f64, k: f64) -> [f64; 3] {
    let rad = 52.0 * c * c - 56.0 * c * k - 104.0 * c + 20.0 * k * k + 40.0 * k + 65.0;
    let tt = rad.sqrt();
    let den = 2.0 * (2.0 * c - 3.0);
    let base = 4.0 * c - 4.0 * k - 5.0;
    [b * (base - tt) / den, b * (base + tt) / den, 2.0 * b / (3.0 - 2.0 * c)]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn special() -> (ModelParams, OdeData, DerivedConstants) {
        let p = ModelParams::special();
        let d = OdeData::new(1.0, 1.0, 1.0).unwrap();
        let dc = derive_constants(&p, &d).unwrap();
        (p, d, dc)
    }

    #[test]
    fn special_params_accepted() {
        let p = validate_params(4.0 / 3.0, 2.0 / 3.0, 4.0 / 3.0, 2.0, 1.0, 1.0).unwrap();
        assert_eq!(p, ModelParams::special());
    }

    #[test]
    fn rejections_name_the_inequality() {
        let e = validate_params(1.0, 2.0 / 3.0, 4.0 / 3.0, 2.0, 1.0, 1.0).unwrap_err();
        assert_eq!(e, ParamError::OutOfRegion(Constraint::AAboveOne));
        let e = validate_params(4.0 / 3.0, 2.0 / 3.0, 4.0 / 3.0, 8.0, 1.0, 1.0).unwrap_err();
        assert_eq!(e, ParamError::OutOfRegion(Constraint::KUpper));
        let e = validate_params(4.0 / 3.0, 2.0 / 3.0, 1.6, 2.0, 1.0, 1.0).unwrap_err();
        assert!(e.to_string().contains("1<c<3/2"));
        let e = validate_params(4.0 / 3.0, 2.0 / 3.0, 4.0 / 3.0, 0.5, 1.0, 1.0).unwrap_err();
        assert_eq!(e, ParamError::OutOfRegion(Constraint::KLower));
        let e = validate_params(4.0 / 3.0, 2.0 / 3.0, 4.0 / 3.0, 2.0, 1.0, 4.0).unwrap_err();
        assert_eq!(e, ParamError::OutOfRegion(Constraint::GaugeRange));
        let e = validate_params(4.0 / 3.0, 0.0, 4.0 / 3.0, 2.0, 1.0, 1.0).unwrap_err();
        assert_eq!(e, ParamError::OutOfRegion(Constraint::BPositive));
    }

    #[test]
    fn k_interval_values() {
        let (lo, hi) = k_admissible_interval(4.0 / 3.0).unwrap();
        let r = (34.0f64 / 3.0).sqrt();
        assert!((lo - (4.0 - r)).abs() < 1e-14 && (hi - (4.0 + r)).abs() < 1e-14);
        assert!((lo - 0.63350).abs() < 1e-5 && (hi - 7.36650).abs() < 1e-5);
        let (lo, hi) = k_admissible_interval(1.25).unwrap();
        assert!((lo - (3.75 - 10f64.sqrt())).abs() < 1e-14);
        assert!((hi - (3.75 + 10f64.sqrt())).abs() < 1e-14);
        assert!(k_admissible_interval(1.5).is_err());
        assert!(k_admissible_interval(1.0).is_err());
    }

    #[test]
    fn special_constants() {
        let (_, _, dc) = special();
        assert!((dc.triangle - 5.0 / 3.0).abs() < 1e-15);
        assert!((dc.abar + 1.0 / 3.0).abs() < 1e-15);
        assert!((dc.b_const - 2f64.powf(4.0 / 3.0)).abs() < 1e-14);
        assert!((dc.c_a + 0.05).abs() < 1e-15);
        assert!((dc.c_b + 0.45).abs() < 1e-15);
        assert!((dc.c_c - 0.6 * (2f64.ln() + 0.5)).abs() < 1e-15);
        assert!((dc.c_d - 0.4 * (2f64.ln() - 0.75)).abs() < 1e-15);
        assert!((dc.c_e - 0.5).abs() < 1e-15);
        assert!(dc.t_upper_star.is_none());
    }

    #[test]
    fn curve_f_values() {
        let (_, _, dc) = special();
        assert!((curve_f(1.0, &dc) - 0.5).abs() < 1e-15);
        let want = -0.05 / 2.0 - 0.45 * 2f64.powf(2.0 / 3.0) + 1.0;
        assert!((curve_f(2.0, &dc) - want).abs() < 1e-14);
        assert!((curve_f(2.0, &dc) - 0.260670).abs() < 1e-6);
        assert!(curve_f(10.0, &dc) < 0.0);
    }

    #[test]
    fn t_star_special() {
        let (_, _, dc) = special();
        assert!(curve_f(3.2, &dc) > 0.0 && curve_f(3.25, &dc) < 0.0);
        assert!((dc.t_star - 3.23).abs() < 0.01);
        assert!(curve_f(dc.t_star, &dc).abs() < 1e-11);
    }

    #[test]
    fn finite_time_case() {
        let p = ModelParams::special();
        let d = OdeData::new(1.0, 1.0, 3.0).unwrap();
        assert!(finite_time_condition(&p, &d));
        let dc = derive_constants(&p, &d).unwrap();
        assert!((dc.c_e - 1.5).abs() < 1e-15);
        let ts = dc.t_upper_star.unwrap();
        assert!((ts - 27.0).abs() < 1e-11);
        assert!(curve_l(ts, &dc, &d).abs() < 1e-13);
        assert!(dc.t_star < ts);
    }

    #[test]
    fn threshold_equality_is_not_finite_time() {
        let p = ModelParams::special();
        let d = OdeData::new(1.0, 1.0, 2.0).unwrap();
        assert!(!finite_time_condition(&p, &d));
        let dc = derive_constants(&p, &d).unwrap();
        assert!(dc.t_upper_star.is_none());
    }

    #[test]
    fn curve_l_start_and_decrease() {
        let (_, d, dc) = special();
        assert!((curve_l(1.0, &dc, &d) - 2f64.powf(-1.0 / 3.0)).abs() < 1e-15);
        let v: Vec<f64> = [1.0, 2.0, 4.0, 8.0].iter().map(|&t| curve_l(t, &dc, &d)).collect();
        assert!(v.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn eigenvalues_special() {
        let (tt, l) = eigenvalues_tilde(&ModelParams::special()).unwrap();
        assert!((tt - (265.0f64 / 9.0).sqrt()).abs() < 1e-14);
        assert!((l[0] - 13.0929).abs() < 1e-4);
        assert!((l[1] - 2.2404).abs() < 1e-4);
        assert!((l[2] - 4.0).abs() < 1e-14);
    }

    #[test]
    fn eigenvalue_turns_nonpositive_past_k_upper() {
        let c = 4.0 / 3.0;
        let (_, hi) = k_admissible_interval(c).unwrap();
        let l = eigenvalues_tilde_unchecked(2.0 / 3.0, c, hi + 0.1);
        assert!(l[0].min(l[1]) <= 0.0);
    }

    #[test]
    fn no_sign_change_with_small_cap() {
        let (_, _, dc) = special();
        assert!(matches!(find_t_star_capped(&dc, 1.0, 1.5), Err(ParamError::NoSignChange(_))));
    }
}
