use serde::{Deserialize, Serialize};

use super::{CriticalExponents, MicroScales, ScalingError};

/// A drive through the critical point, `g(t) = sign(t) |t / tau|^p`,
/// optionally stopped at `g_s` and held for `t_hold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RampProtocol {
    pub tau: f64,
    #[serde(default = "one")]
    pub p: f64,
    #[serde(default)]
    pub g_s: Option<f64>,
    #[serde(default)]
    pub t_hold: Option<f64>,
}

fn one() -> f64 {
    1.0
}

impl RampProtocol {
    pub fn linear(tau: f64) -> Self {
        Self { tau, p: 1.0, g_s: None, t_hold: None }
    }

    pub fn stopped_at(mut self, g_s: f64) -> Self {
        self.g_s = Some(g_s);
        self
    }

    pub fn with_power(mut self, p: f64) -> Self {
        self.p = p;
        self
    }

    pub fn validate(&self) -> Result<(), ScalingError> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(ScalingError::InvalidProtocol(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.p.is_finite() && self.p >= 1.0) {
            return Err(ScalingError::InvalidProtocol(format!("sweep power must be >= 1, got {}", self.p)));
        }
        if let Some(g) = self.g_s {
            if !g.is_finite() {
                return Err(ScalingError::InvalidProtocol(format!("stop value must be finite, got {g}")));
            }
        }
        if let Some(h) = self.t_hold {
            if !(h.is_finite() && h >= 0.0) {
                return Err(ScalingError::InvalidProtocol(format!("hold time must be >= 0, got {h}")));
            }
        }
        Ok(())
    }

    /// Tuning parameter at time `t` (critical point at `t = 0`).
    pub fn g_at(&self, t: f64) -> f64 {
        t.signum() * (t / self.tau).abs().powf(self.p)
    }

    /// Inverse of [`Self::g_at`].
    pub fn time_of(&self, g: f64) -> f64 {
        g.signum() * self.tau * g.abs().powf(1.0 / self.p)
    }

    /// Stop time `t_s`, `None` for an indefinite ramp.
    pub fn stop_time(&self) -> Option<f64> {
        self.g_s.map(|g| self.time_of(g))
    }
}

/// Freeze-out scales of a ramp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KzScales {
    pub t_kz: f64,
    pub xi_kz: f64,
    pub g_kz: f64,
}

impl KzScales {
    pub fn scaled_time(&self, t: f64) -> f64 {
        t / self.t_kz
    }
}

/// Kibble-Zurek time, length and tuning-parameter window for a ramp.
pub fn kz_scales(
    exponents: &CriticalExponents,
    scales: &MicroScales,
    protocol: &RampProtocol,
) -> Result<KzScales, ScalingError> {
    exponents.validate()?;
    scales.validate()?;
    protocol.validate()?;
    if protocol.tau < scales.t0 {
        return Err(ScalingError::TauBelowMicroscopic { tau: protocol.tau, t0: scales.t0 });
    }
    let (nu, z, p) = (exponents.nu, exponents.z, protocol.p);
    let ratio = protocol.tau / scales.t0;
    let denom = p * nu * z + 1.0;
    let t_kz = scales.t0 * ratio.powf(p * nu * z / denom);
    let xi_kz = scales.l0 * ratio.powf(p * nu / denom);
    let g_kz = (xi_kz / scales.l0).powf(-1.0 / nu);
    Ok(KzScales { t_kz, xi_kz, g_kz })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthFlag {
    Growing,
    Logarithmic,
    Bounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthExponent {
    pub exponent: f64,
    pub flag: GrowthFlag,
}

/// Exponents closer to zero than this are treated as logarithmic coarsening.
const LOG_TOL: f64 = 1e-12;

/// Late-time exponent of `l(t)` during a continuing power-law sweep:
/// `-p nu + (p nu z + 1) / z_d`.
pub fn growth_exponent(exponents: &CriticalExponents, p: f64) -> GrowthExponent {
    let (nu, z, zd) = (exponents.nu, exponents.z, exponents.z_d);
    let exponent = -p * nu + (p * nu * z + 1.0) / zd;
    let flag = if exponent.abs() <= LOG_TOL {
        GrowthFlag::Logarithmic
    } else if exponent > 0.0 {
        GrowthFlag::Growing
    } else {
        GrowthFlag::Bounded
    };
    GrowthExponent { exponent, flag }
}

/// Excess energy density `xi_KZ^-(d+z)` in units of `J / l0^d`.
pub fn excess_energy_scale(exponents: &CriticalExponents, kz: &KzScales) -> f64 {
    kz.xi_kz.powf(-(exponents.d as f64 + exponents.z))
}
