//! Periodic grids on the torus `[0, 2pi)^n`, Fourier differentiation and norms.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("dimension {0} not in 1..=3")]
    Dim(usize),
    #[error("points per dimension {0} must be an even number >= 4")]
    Points(usize),
    #[error("Sobolev index {s} below n/2 + 3 for n = {dim}")]
    SobolevIndex { s: u32, dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TorusGrid {
    pub dim: usize,
    pub n: usize,
}

impl TorusGrid {
    pub fn new(dim: usize, n: usize) -> Result<Self, GridError> {
        if !(1..=3).contains(&dim) {
            return Err(GridError::Dim(dim));
        }
        if n < 4 || n % 2 != 0 {
            return Err(GridError::Points(n));
        }
        Ok(TorusGrid { dim, n })
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.n as f64
    }

    /// Signed wavenumber of FFT index `j`.
    pub fn wavenumber(&self, j: usize) -> i64 {
        if j <= self.n / 2 {
            j as i64
        } else {
            j as i64 - self.n as i64
        }
    }

    pub fn k_max(&self) -> f64 {
        (self.n / 2) as f64
    }

    /// Per-axis indices of the flat row-major index `idx` (last axis fastest).
    pub fn multi_index(&self, mut idx: usize) -> [usize; 3] {
        let mut out = [0; 3];
        for a in (0..self.dim).rev() {
            out[a] = idx % self.n;
            idx /= self.n;
        }
        out
    }

    pub fn coords(&self, idx: usize) -> [f64; 3] {
        let mi = self.multi_index(idx);
        let h = self.spacing();
        [mi[0] as f64 * h, mi[1] as f64 * h, mi[2] as f64 * h]
    }

    fn stride(&self, axis: usize) -> usize {
        self.n.pow((self.dim - 1 - axis) as u32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub grid: TorusGrid,
    pub values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: TorusGrid) -> Self {
        Field { grid, values: vec![0.0; grid.len()] }
    }

    pub fn constant(grid: TorusGrid, v: f64) -> Self {
        Field { grid, values: vec![v; grid.len()] }
    }

    pub fn from_fn(grid: TorusGrid, f: impl Fn([f64; 3]) -> f64) -> Self {
        Field { grid, values: (0..grid.len()).map(|i| f(grid.coords(i))).collect() }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormConfig {
    pub s: u32,
}

impl NormConfig {
    pub fn new(s: u32, dim: usize) -> Result<Self, GridError> {
        if (s as f64) < dim as f64 / 2.0 + 3.0 {
            return Err(GridError::SobolevIndex { s, dim });
        }
        Ok(NormConfig { s })
    }

    pub fn default_for(dim: usize) -> Self {
        NormConfig { s: (dim as u32 + 1) / 2 + 3 }
    }
}

/// FFT plans and scratch space for one grid.
pub struct Spectral {
    pub grid: TorusGrid,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    line: Vec<Complex64>,
    scratch: Vec<Complex64>,
    buf: Vec<Complex64>,
}

impl Spectral {
    pub fn new(grid: TorusGrid) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(grid.n);
        let inv = planner.plan_fft_inverse(grid.n);
        let sl = fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len());
        Spectral {
            grid,
            fwd,
            inv,
            line: vec![Complex64::new(0.0, 0.0); grid.n],
            scratch: vec![Complex64::new(0.0, 0.0); sl],
            buf: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    fn transform_axes(&mut self, data: &mut [Complex64], forward: bool) {
        let g = self.grid;
        let plan = if forward { self.fwd.clone() } else { self.inv.clone() };
        for axis in 0..g.dim {
            let stride = g.stride(axis);
            let block = stride * g.n;
            for base in (0..data.len()).step_by(block) {
                for off in 0..stride {
                    for j in 0..g.n {
                        self.line[j] = data[base + off + j * stride];
                    }
                    plan.process_with_scratch(&mut self.line, &mut self.scratch);
                    for j in 0..g.n {
                        data[base + off + j * stride] = self.line[j];
                    }
                }
            }
        }
    }

    /// Normalized Fourier coefficients `u_hat_k`.
    pub fn forward(&mut self, u: &[f64]) -> Vec<Complex64> {
        let mut c: Vec<Complex64> = u.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform_axes(&mut c, true);
        let s = 1.0 / self.grid.len() as f64;
        c.iter_mut().for_each(|z| *z *= s);
        c
    }

    /// Grid values from coefficients; the imaginary part must vanish.
    pub fn inverse_into(&mut self, coeffs: &mut [Complex64], out: &mut [f64]) {
        self.transform_axes(coeffs, false);
        let scale = coeffs.iter().map(|z| z.re.abs()).fold(1.0, f64::max);
        for (o, z) in out.iter_mut().zip(coeffs.iter()) {
            debug_assert!(z.im.abs() <= 1e-12 * scale, "imaginary residue {}", z.im);
            *o = z.re;
        }
    }

    fn multiply(&mut self, u: &[f64], out: &mut [f64], mult: impl Fn([i64; 3]) -> Complex64) {
        let g = self.grid;
        let mut c = std::mem::take(&mut self.buf);
        for (z, &v) in c.iter_mut().zip(u) {
            *z = Complex64::new(v, 0.0);
        }
        self.transform_axes(&mut c, true);
        let s = 1.0 / g.len() as f64;
        for (idx, z) in c.iter_mut().enumerate() {
            let mi = g.multi_index(idx);
            let k = [g.wavenumber(mi[0]), g.wavenumber(mi[1]), g.wavenumber(mi[2])];
            *z *= mult(k) * s;
        }
        self.inverse_into(&mut c, out);
        self.buf = c;
    }

    /// Spectral derivative along `axis`, Nyquist mode zeroed.
    pub fn diff_into(&mut self, u: &[f64], axis: usize, out: &mut [f64]) {
        let nyq = (self.grid.n / 2) as i64;
        self.multiply(u, out, |k| {
            if k[axis].abs() == nyq {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(0.0, k[axis] as f64)
            }
        });
    }

    pub fn laplacian_into(&mut self, u: &[f64], out: &mut [f64]) {
        let g = self.grid;
        let nyq = (g.n / 2) as i64;
        self.multiply(u, out, |k| {
            let mut s = 0.0;
            for a in 0..g.dim {
                if k[a].abs() != nyq {
                    s += (k[a] * k[a]) as f64;
                }
            }
            Complex64::new(-s, 0.0)
        });
    }

    /// Two-thirds rule: zero every mode with some `|k_a| > n/3`.
    pub fn dealias_in_place(&mut self, u: &mut [f64]) {
        let g = self.grid;
        let cut = (g.n / 3) as i64;
        let src = u.to_vec();
        self.multiply(&src, u, |k| {
            if (0..g.dim).any(|a| k[a].abs() > cut) {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(1.0, 0.0)
            }
        });
    }

    pub fn sobolev_norm(&mut self, u: &[f64], s: u32) -> f64 {
        let g = self.grid;
        let c = self.forward(u);
        let mut acc = 0.0;
        for (idx, z) in c.iter().enumerate() {
            let mi = g.multi_index(idx);
            let mut k2 = 0.0;
            for a in 0..g.dim {
                let k = g.wavenumber(mi[a]) as f64;
                k2 += k * k;
            }
            acc += (1.0 + k2).powi(s as i32) * z.norm_sqr();
        }
        (acc * (2.0 * PI).powi(g.dim as i32)).sqrt()
    }
}

pub fn diff(u: &Field, axis: usize) -> Field {
    assert!(axis < u.grid.dim);
    let mut out = Field::zeros(u.grid);
    Spectral::new(u.grid).diff_into(&u.values, axis, &mut out.values);
    out
}

pub fn laplacian(u: &Field) -> Field {
    let mut out = Field::zeros(u.grid);
    Spectral::new(u.grid).laplacian_into(&u.values, &mut out.values);
    out
}

pub fn dealias(u: &Field) -> Field {
    let mut out = u.clone();
    Spectral::new(u.grid).dealias_in_place(&mut out.values);
    out
}

pub fn sobolev_norm(u: &Field, cfg: NormConfig) -> f64 {
    Spectral::new(u.grid).sobolev_norm(&u.values, cfg.s)
}

/// Grid (trapezoidal) L2 norm.
pub fn l2_norm(u: &Field) -> f64 {
    let w = u.grid.spacing().powi(u.grid.dim as i32);
    (u.values.iter().map(|v| v * v).sum::<f64>() * w).sqrt()
}

pub fn sup(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn winf_norm(u: &Field) -> f64 {
    sup(&u.values)
}

/// Largest of the sup norms of the fields and of all their first derivatives.
pub fn w1inf_norm(fields: &[&Field]) -> f64 {
    let mut m: f64 = 0.0;
    for f in fields {
        m = m.max(winf_norm(f));
        let mut sp = Spectral::new(f.grid);
        let mut d = vec![0.0; f.grid.len()];
        for a in 0..f.grid.dim {
            sp.diff_into(&f.values, a, &mut d);
            m = m.max(sup(&d));
        }
    }
    m
}
