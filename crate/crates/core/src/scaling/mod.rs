//! Analytic scaling engine: exponents, Kibble-Zurek scales, the piecewise
//! coarsening scaling functions and the coarsening-case taxonomy.
//!
//! All lengths are in units of `l0` and all times in units of `t0`; the
//! scaled variables are `x = t / t_KZ`, `x_s = t_s / t_KZ` and
//! `y = g / g_KZ`. Every function here is pure.

mod classify;
mod exponents;
mod kz;
mod model;

pub use classify::{classify_case, CoarseningCase, StopSide};
pub use exponents::{CriticalExponents, ExponentRegistry, MicroScales, Z_BAR_ISING_2D};
pub use kz::{excess_energy_scale, growth_exponent, kz_scales, GrowthExponent, GrowthFlag, KzScales, RampProtocol};
pub use model::{Amplitudes, ScalingModel, StopRegime};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScalingError {
    #[error("exponent `{name}` must be finite and positive, got {value}")]
    InvalidExponent { name: &'static str, value: f64 },
    #[error("amplitude `{name}` must be finite and positive, got {value}")]
    InvalidAmplitude { name: &'static str, value: f64 },
    #[error("invalid ramp protocol: {0}")]
    InvalidProtocol(String),
    #[error("ramp timescale tau = {tau} is below the microscopic time t0 = {t0}; scaling regime not applicable")]
    TauBelowMicroscopic { tau: f64, t0: f64 },
    #[error("model parameter `{0}` must be set for this evaluation")]
    MissingParameter(&'static str),
    #[error("parameter `{name}` = {value} is out of range: {reason}")]
    OutOfRange { name: &'static str, value: f64, reason: &'static str },
    #[error("thermal correlation length diverges at y = y_c = {y_c}")]
    Divergent { y_c: f64 },
    #[error("scaling function produced an invalid length {value} at x = {x}, x_s = {x_s}")]
    InvalidLength { value: f64, x: f64, x_s: f64 },
    #[error("contradictory inputs: {0}")]
    Contradictory(String),
    #[error("unknown universality class `{0}`")]
    UnknownClass(String),
    #[error("exponent registry: {0}")]
    Registry(String),
}
