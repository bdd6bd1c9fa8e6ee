//! Piecewise quintic Hermite interpolation from values and two exact derivatives.

#[derive(Debug, Clone)]
pub struct Quintic {
    x: Vec<f64>,
    v: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
}

impl Quintic {
    /// Nodes must be strictly increasing.
    pub fn new(x: Vec<f64>, v: Vec<f64>, d1: Vec<f64>, d2: Vec<f64>) -> Self {
        assert!(x.len() >= 2 && x.len() == v.len() && v.len() == d1.len() && d1.len() == d2.len());
        debug_assert!(x.windows(2).all(|w| w[1] > w[0]));
        Quintic { x, v, d1, d2 }
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.x[0], *self.x.last().unwrap())
    }

    pub fn nodes(&self) -> &[f64] {
        &self.x
    }

    pub fn values(&self) -> &[f64] {
        &self.v
    }

    fn segment(&self, x: f64) -> usize {
        let n = self.x.len();
        match self.x.binary_search_by(|p| p.partial_cmp(&x).unwrap()) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        }
    }

    fn coeffs(&self, i: usize) -> (f64, [f64; 6]) {
        let h = self.x[i + 1] - self.x[i];
        let c0 = self.v[i];
        let c1 = h * self.d1[i];
        let c2 = 0.5 * h * h * self.d2[i];
        let d = self.v[i + 1] - c0 - c1 - c2;
        let dp = h * self.d1[i + 1] - c1 - 2.0 * c2;
        let dpp = h * h * self.d2[i + 1] - 2.0 * c2;
        let c3 = 10.0 * d - 4.0 * dp + 0.5 * dpp;
        let c4 = -15.0 * d + 7.0 * dp - dpp;
        let c5 = 6.0 * d - 3.0 * dp + 0.5 * dpp;
        (h, [c0, c1, c2, c3, c4, c5])
    }

    fn poly(c: &[f64; 6], s: f64) -> (f64, f64) {
        let v = c[0] + s * (c[1] + s * (c[2] + s * (c[3] + s * (c[4] + s * c[5]))));
        let d = c[1] + s * (2.0 * c[2] + s * (3.0 * c[3] + s * (4.0 * c[4] + s * 5.0 * c[5])));
        (v, d)
    }

    /// Value and first derivative; `None` outside the node range.
    pub fn eval2(&self, x: f64) -> Option<(f64, f64)> {
        let (lo, hi) = self.domain();
        if !(x >= lo && x <= hi) {
            return None;
        }
        let i = self.segment(x);
        if x == self.x[i] {
            return Some((self.v[i], self.d1[i]));
        }
        if x == self.x[i + 1] {
            return Some((self.v[i + 1], self.d1[i + 1]));
        }
        let (h, c) = self.coeffs(i);
        let (v, d) = Self::poly(&c, (x - self.x[i]) / h);
        Some((v, d / h))
    }

    pub fn eval(&self, x: f64) -> Option<f64> {
        self.eval2(x).map(|p| p.0)
    }

    /// Inverse of a strictly monotone interpolant: the `x` with `p(x) = target`.
    pub fn invert(&self, target: f64) -> Option<f64> {
        let n = self.v.len();
        let inc = self.v[n - 1] > self.v[0];
        let key = |v: f64| if inc { v } else { -v };
        let tk = key(target);
        if tk < key(self.v[0]) || tk > key(self.v[n - 1]) {
            return None;
        }
        let i = match self.v.binary_search_by(|p| key(*p).partial_cmp(&tk).unwrap()) {
            Ok(i) => return Some(self.x[i]),
            Err(i) => i - 1,
        };
        let (h, c) = self.coeffs(i);
        let (mut a, mut b) = (0.0f64, 1.0f64);
        let mut s = (target - self.v[i]) / (self.v[i + 1] - self.v[i]);
        for _ in 0..100 {
            let (v, d) = Self::poly(&c, s);
            let r = key(v) - tk;
            if r == 0.0 {
                break;
            }
            if r < 0.0 {
                a = s;
            } else {
                b = s;
            }
            let mut next = s - (v - target) / d;
            if !(next > a && next < b) || !next.is_finite() {
                next = 0.5 * (a + b);
            }
            if (next - s).abs() <= 4.0 * f64::EPSILON * s.abs().max(1e-300) || b - a <= f64::EPSILON {
                s = next;
                break;
            }
            s = next;
        }
        Some(self.x[i] + s * h)
    }
}
