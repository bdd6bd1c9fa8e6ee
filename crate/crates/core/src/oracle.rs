//! Multi-precision re-evaluation of the closed-form constants, used as an independent oracle.

use crate::params::{ModelParams, OdeData};
use astro_float::{BigFloat, Consts, Radix, RoundingMode};

const P: usize = 320;
const RM: RoundingMode = RoundingMode::ToEven;

struct Ctx {
    cc: Consts,
}

impl Ctx {
    fn n(&self, x: f64) -> BigFloat {
        BigFloat::from_f64(x, P)
    }
    fn f(&mut self, x: &BigFloat) -> f64 {
        x.format(Radix::Dec, RM, &mut self.cc).ok().and_then(|s| s.parse().ok()).unwrap_or(f64::NAN)
    }
    fn pow(&mut self, x: &BigFloat, e: &BigFloat) -> BigFloat {
        x.pow(e, P, RM, &mut self.cc)
    }
    fn ln(&mut self, x: &BigFloat) -> BigFloat {
        x.ln(P, RM, &mut self.cc)
    }
}

fn add(x: &BigFloat, y: &BigFloat) -> BigFloat {
    x.add(y, P, RM)
}
fn sub(x: &BigFloat, y: &BigFloat) -> BigFloat {
    x.sub(y, P, RM)
}
fn mul(x: &BigFloat, y: &BigFloat) -> BigFloat {
    x.mul(y, P, RM)
}
fn div(x: &BigFloat, y: &BigFloat) -> BigFloat {
    x.div(y, P, RM)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleConstants {
    pub abar: f64,
    pub cbar: f64,
    pub triangle: f64,
    pub b_const: f64,
    pub c_a: f64,
    pub c_b: f64,
    pub c_c: f64,
    pub c_d: f64,
    pub c_e: f64,
    pub tri_tilde: f64,
    pub lambda_tilde: [f64; 3],
    pub t_star: f64,
    pub t_upper_star: Option<f64>,
}

pub fn constants(p: &ModelParams, d: &OdeData) -> OracleConstants {
    let mut x = Ctx { cc: Consts::new().expect("constant cache") };
    let one = x.n(1.0);
    let two = x.n(2.0);
    let half = x.n(0.5);
    let (a, b, c, k) = (x.n(p.a), x.n(p.b), x.n(p.c), x.n(p.k));
    let (t0, fr, f0r) = (x.n(d.t0), x.n(d.f_ring), x.n(d.f0_ring));

    let abar = sub(&one, &a);
    let cbar = sub(&one, &c);
    let tri = add(&mul(&abar, &abar), &mul(&x.n(4.0), &b)).sqrt(P, RM);
    let e_lo = mul(&half, &sub(&abar, &tri));
    let e_hi = mul(&half, &add(&abar, &tri));
    let y0 = add(&one, &fr);
    let bconst = div(&x.pow(&y0, &c), &mul(&x.pow(&t0, &a), &f0r));
    let s = div(&mul(&t0, &f0r), &mul(&y0, &y0));
    let r = div(&fr, &y0);
    let ca = mul(&div(&x.pow(&t0, &e_lo.neg()), &tri), &sub(&s, &mul(&e_hi, &r)));
    let cb = mul(&div(&x.pow(&t0, &e_hi.neg()), &tri), &sub(&mul(&e_lo, &r), &s));
    let lny0 = x.ln(&y0);
    let q = div(&mul(&t0, &f0r), &y0);
    let denom = add(&two, &add(&abar, &tri));
    let cc_ = mul(
        &mul(&div(&two, &denom), &add(&lny0, &mul(&div(&add(&abar, &tri), &mul(&two, &b)), &q))),
        &x.pow(&t0, &e_hi.neg()),
    );
    let cd = mul(&mul(&div(&add(&abar, &tri), &denom), &sub(&lny0, &div(&q, &b))), &t0);
    let ce = div(&mul(&mul(&cbar, &f0r), &x.pow(&t0, &sub(&one, &abar))), &mul(&abar, &y0));

    // 52c^2 - 56ck - 104c + 20k^2 + 40k + 65
    let rad = [
        mul(&x.n(52.0), &mul(&c, &c)),
        mul(&x.n(-56.0), &mul(&c, &k)),
        mul(&x.n(-104.0), &c),
        mul(&x.n(20.0), &mul(&k, &k)),
        mul(&x.n(40.0), &k),
        x.n(65.0),
    ]
    .iter()
    .fold(x.n(0.0), |acc, v| add(&acc, v));
    let tt = rad.sqrt(P, RM);
    let base = sub(&sub(&mul(&x.n(4.0), &c), &mul(&x.n(4.0), &k)), &x.n(5.0));
    let den = mul(&two, &sub(&mul(&two, &c), &x.n(3.0)));
    let l1 = div(&mul(&b, &sub(&base, &tt)), &den);
    let l2 = div(&mul(&b, &add(&base, &tt)), &den);
    let l3 = div(&mul(&two, &b), &sub(&x.n(3.0), &mul(&two, &c)));

    // F(t) = A t^lo + B t^hi + 1
    let curve = |t: &BigFloat, x: &mut Ctx| add(&add(&mul(&ca, &x.pow(t, &e_lo)), &mul(&cb, &x.pow(t, &e_hi))), &one);
    let mut lo = t0.clone();
    let mut hi = mul(&two, &t0);
    while !curve(&hi, &mut x).is_negative() {
        lo = hi.clone();
        hi = mul(&two, &hi);
    }
    let tol = x.n(1e-22);
    while sub(&hi, &lo).cmp(&mul(&tol, &hi)).unwrap_or(0) > 0 {
        let mid = mul(&half, &add(&lo, &hi));
        if curve(&mid, &mut x).is_negative() {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let t_star = mul(&half, &add(&lo, &hi));

    let t0a = x.pow(&t0, &abar);
    let t_upper = if mul(&ce, &t0a).cmp(&one).unwrap_or(0) > 0 {
        let base = sub(&t0a, &div(&one, &ce));
        Some(x.pow(&base, &div(&one, &abar)))
    } else {
        None
    };

    OracleConstants {
        abar: x.f(&abar),
        cbar: x.f(&cbar),
        triangle: x.f(&tri),
        b_const: x.f(&bconst),
        c_a: x.f(&ca),
        c_b: x.f(&cb),
        c_c: x.f(&cc_),
        c_d: x.f(&cd),
        c_e: x.f(&ce),
        tri_tilde: x.f(&tt),
        lambda_tilde: [x.f(&l1), x.f(&l2), x.f(&l3)],
        t_star: x.f(&t_star),
        t_upper_star: t_upper.map(|v| x.f(&v)),
    }
}
