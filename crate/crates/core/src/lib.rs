//! Numerics for a reduced Jeans blowup model: closed-form constants, the
//! homogeneous reference solution, a pseudospectral perturbation solver on the
//! torus and the compactified-time (Fuchsian) formulation.

pub mod acceptance;
pub mod fuchsian;
pub mod interp;
pub mod oracle;
pub mod params;
pub mod pde_solver;
pub mod reference_ode;
pub mod rk;
pub mod torus_spectral;
