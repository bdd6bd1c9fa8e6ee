//! Run configuration: one JSON document, every section optional.

use jeans_core::params::{derive_constants, validate_params, DerivedConstants, ModelParams, OdeData};
use jeans_core::pde_solver::{Mode, PerturbationConfig};
use jeans_core::reference_ode::StopCriteria;
use jeans_core::torus_spectral::{NormConfig, TorusGrid};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSection {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub k: f64,
    #[serde(default = "one")]
    pub m: f64,
    /// Omitted: midpoint `b/(3-2c)` of the admissible interval.
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub gauge: Option<f64>,
}

fn one() -> f64 {
    1.0
}

impl Default for ParamsSection {
    fn default() -> Self {
        let p = ModelParams::special();
        ParamsSection { a: p.a, b: p.b, c: p.c, k: p.k, m: p.m, gauge: Some(p.gauge) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub t0: f64,
    pub f_ring: f64,
    pub f0_ring: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection { t0: 1.0, f_ring: 1.0, f0_ring: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PdeSection {
    pub dim: usize,
    pub n: usize,
    pub sigma: f64,
    /// Omitted: a single `cos(x_1)` mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub modes: Option<Vec<Mode>>,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub c_cfl: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sobolev_s: Option<u32>,
    pub f_stop: f64,
    pub ratio_guard: f64,
    pub snapshot_every: usize,
    pub output_times: Vec<f64>,
}

impl Default for PdeSection {
    fn default() -> Self {
        PdeSection {
            dim: 1,
            n: 128,
            sigma: 1e-3,
            modes: None,
            rel_tol: 1e-10,
            abs_tol: 1e-14,
            c_cfl: 0.5,
            sobolev_s: None,
            f_stop: 1e4,
            ratio_guard: 0.5,
            snapshot_every: 0,
            output_times: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FuchsianSection {
    pub tau_min: f64,
    /// Omitted: half the smallest closed-form eigenvalue.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    pub ball_radius: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub c_cfl: f64,
    pub step_frac: f64,
    pub sample_every: usize,
    /// Also run the physical-time solver and report the residual of its transformed states.
    pub cross_check: bool,
}

impl Default for FuchsianSection {
    fn default() -> Self {
        FuchsianSection {
            tau_min: -1e-4,
            eps: None,
            ball_radius: 0.5,
            rel_tol: 1e-10,
            abs_tol: 1e-14,
            c_cfl: 0.5,
            step_frac: 0.1,
            sample_every: 10,
            cross_check: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub params: ParamsSection,
    pub data: DataSection,
    pub ode: StopCriteria,
    pub pde: PdeSection,
    pub fuchsian: FuchsianSection,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            params: ParamsSection::default(),
            data: DataSection::default(),
            ode: StopCriteria::default(),
            pde: PdeSection::default(),
            fuchsian: FuchsianSection::default(),
            output_dir: PathBuf::from("out"),
            seed: 20240501,
        }
    }
}

/// Validated inputs for the numerical modules.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub params: ModelParams,
    pub data: OdeData,
    pub constants: DerivedConstants,
    pub pde: PerturbationConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn model_params(&self) -> Result<ModelParams, ConfigError> {
        let s = &self.params;
        let gauge = s.gauge.unwrap_or_else(|| ModelParams::default_gauge(s.b, s.c));
        validate_params(s.a, s.b, s.c, s.k, s.m, gauge).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn ode_data(&self) -> Result<OdeData, ConfigError> {
        OdeData::new(self.data.t0, self.data.f_ring, self.data.f0_ring).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn perturbation(&self) -> Result<PerturbationConfig, ConfigError> {
        let s = &self.pde;
        let grid = TorusGrid::new(s.dim, s.n).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let mut cfg = PerturbationConfig::single_mode(grid, s.sigma);
        if let Some(m) = &s.modes {
            cfg.modes = m.clone();
        }
        cfg.rel_tol = s.rel_tol;
        cfg.abs_tol = s.abs_tol;
        cfg.c_cfl = s.c_cfl;
        cfg.sobolev_s = s.sobolev_s.unwrap_or(NormConfig::default_for(s.dim).s);
        cfg.f_stop = s.f_stop;
        cfg.ratio_guard = s.ratio_guard;
        cfg.snapshot_every = s.snapshot_every;
        cfg.output_times = s.output_times.clone();
        cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }

    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        let params = self.model_params()?;
        let data = self.ode_data()?;
        let constants = derive_constants(&params, &data).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let pde = self.perturbation()?;
        let f = &self.fuchsian;
        if !(f.tau_min < 0.0 && f.tau_min > -1.0) {
            return Err(ConfigError::Invalid("fuchsian.tau_min must lie in (-1, 0)".into()));
        }
        if !(self.ode.y_max > 1.0 && self.ode.rel_tol > 0.0 && self.ode.abs_tol > 0.0 && self.ode.max_growth > 0.0) {
            return Err(ConfigError::Invalid("ode tolerances, y_max and max_growth must be positive".into()));
        }
        Ok(Resolved { params, data, constants, pde })
    }
}
