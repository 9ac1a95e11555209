use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ScalingError;

/// Exponent tuple defining a universality class.
///
/// `nu` and `z` belong to the quantum critical point, `nu_bar` and `z_bar` to
/// the finite-energy-density (classical) transition line, and `z_d` to
/// noncritical domain growth in the ordered phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticalExponents {
    pub nu: f64,
    pub z: f64,
    pub nu_bar: f64,
    pub z_bar: f64,
    pub z_d: f64,
    pub d: u32,
}

impl CriticalExponents {
    pub fn new(nu: f64, z: f64, nu_bar: f64, z_bar: f64, z_d: f64, d: u32) -> Result<Self, ScalingError> {
        let e = Self { nu, z, nu_bar, z_bar, z_d, d };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<(), ScalingError> {
        let named = [
            ("nu", self.nu),
            ("z", self.z),
            ("nu_bar", self.nu_bar),
            ("z_bar", self.z_bar),
            ("z_d", self.z_d),
        ];
        for (name, v) in named {
            if !(v.is_finite() && v > 0.0) {
                return Err(ScalingError::InvalidExponent { name, value: v });
            }
        }
        if self.d < 1 {
            return Err(ScalingError::InvalidExponent { name: "d", value: self.d as f64 });
        }
        Ok(())
    }

    /// (2+1)D transverse-field Ising point with a 2D Ising finite-temperature line.
    pub fn ising_2p1d() -> Self {
        Self { nu: 0.629, z: 1.0, nu_bar: 1.0, z_bar: Z_BAR_ISING_2D, z_d: 2.0, d: 2 }
    }

    /// Classical 2D Ising under Model A dynamics. The "quantum" slots carry the
    /// classical values so that KZ scales can be computed for thermal ramps.
    pub fn ising_2d_classical() -> Self {
        Self { nu: 1.0, z: Z_BAR_ISING_2D, nu_bar: 1.0, z_bar: Z_BAR_ISING_2D, z_d: 2.0, d: 2 }
    }
}

/// Model-A dynamical exponent of the 2D Ising critical point.
pub const Z_BAR_ISING_2D: f64 = 2.17;

/// Named universality classes, loadable from a JSON object
/// `{ "<name>": { "nu": .., "z": .., "nu_bar": .., "z_bar": .., "z_d": .., "d": .. } }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExponentRegistry {
    classes: BTreeMap<String, CriticalExponents>,
}

impl Default for ExponentRegistry {
    fn default() -> Self {
        let mut classes = BTreeMap::new();
        classes.insert("ising-2+1d".to_string(), CriticalExponents::ising_2p1d());
        classes.insert("ising-2d-classical".to_string(), CriticalExponents::ising_2d_classical());
        Self { classes }
    }
}

impl ExponentRegistry {
    pub fn empty() -> Self {
        Self { classes: BTreeMap::new() }
    }

    pub fn from_json(text: &str) -> Result<Self, ScalingError> {
        let reg: Self = serde_json::from_str(text).map_err(|e| ScalingError::Registry(e.to_string()))?;
        for (name, e) in &reg.classes {
            e.validate().map_err(|err| ScalingError::Registry(format!("{name}: {err}")))?;
        }
        Ok(reg)
    }

    pub fn load(path: &Path) -> Result<Self, ScalingError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScalingError::Registry(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Built-in classes overlaid with the entries of `other`.
    pub fn merged(mut self, other: ExponentRegistry) -> Self {
        self.classes.extend(other.classes);
        self
    }

    pub fn get(&self, name: &str) -> Result<CriticalExponents, ScalingError> {
        self.classes
            .get(name)
            .copied()
            .ok_or_else(|| ScalingError::UnknownClass(name.to_string()))
    }

    pub fn insert(&mut self, name: impl Into<String>, exponents: CriticalExponents) -> Result<(), ScalingError> {
        exponents.validate()?;
        self.classes.insert(name.into(), exponents);
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.classes.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &CriticalExponents)> {
        self.classes.iter().map(|(k, v)| (k.as_str(), v))
    }
}

/// Microscopic length and time units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MicroScales {
    pub l0: f64,
    pub t0: f64,
}

impl Default for MicroScales {
    fn default() -> Self {
        Self { l0: 1.0, t0: 1.0 }
    }
}

impl MicroScales {
    pub fn validate(&self) -> Result<(), ScalingError> {
        if !(self.l0.is_finite() && self.l0 > 0.0 && self.t0.is_finite() && self.t0 > 0.0) {
            return Err(ScalingError::InvalidProtocol(format!(
                "micro scales must be positive (l0 = {}, t0 = {})",
                self.l0, self.t0
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_defaults() {
        let reg = ExponentRegistry::default();
        let q = reg.get("ising-2+1d").unwrap();
        assert_eq!((q.nu, q.z, q.z_d), (0.629, 1.0, 2.0));
        let c = reg.get("ising-2d-classical").unwrap();
        assert_eq!((c.nu_bar, c.z_bar), (1.0, 2.17));
        assert!(matches!(reg.get("xy-3d"), Err(ScalingError::UnknownClass(_))));
    }

    #[test]
    fn registry_json_roundtrip_and_validation() {
        let reg = ExponentRegistry::default();
        let text = serde_json::to_string(&reg).unwrap();
        assert_eq!(ExponentRegistry::from_json(&text).unwrap(), reg);

        let bad = r#"{"broken": {"nu": -1.0, "z": 1.0, "nu_bar": 1.0, "z_bar": 2.0, "z_d": 2.0, "d": 2}}"#;
        assert!(ExponentRegistry::from_json(bad).is_err());
        let unknown = r#"{"x": {"nu": 1.0, "z": 1.0, "nu_bar": 1.0, "z_bar": 2.0, "z_d": 2.0, "d": 2, "eta": 0.25}}"#;
        assert!(ExponentRegistry::from_json(unknown).is_err());
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(CriticalExponents::new(1.0, 1.0, 1.0, 2.0, 2.0, 0).is_err());
    }
}
