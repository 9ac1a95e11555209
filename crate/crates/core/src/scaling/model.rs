use serde::{Deserialize, Serialize};

use super::kz::{growth_exponent, GrowthFlag};
use super::{CriticalExponents, ScalingError};

/// The order-one prefactors that scaling arguments leave undetermined.
///
/// Branches are matched for continuity, so several of the constants that
/// appear in the asymptotic forms (the adiabatic prefactor, `C_s`, the
/// prefactor of `G(x_s)`) are derived from these rather than set directly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Amplitudes {
    /// `f(-1)`, the length at the adiabatic/impulse boundary.
    pub plateau_lo: f64,
    /// `f(+1)`, the length at the end of quantum critical coarsening.
    pub plateau_hi: f64,
    /// Amplitude of the late branch when it is logarithmic or bounded.
    pub late: f64,
    /// Rate constant `C` of noncritical coarsening after a stop.
    pub stop_rate: f64,
    /// Prefactor of `x*(x_s)`.
    pub crossover: f64,
    /// Prefactor of the smooth part of `h(y)`.
    pub thermal: f64,
    /// Prefactor of the classical critical divergence of `h(y)`.
    pub thermal_critical: f64,
}

impl Default for Amplitudes {
    fn default() -> Self {
        Self {
            plateau_lo: 1.0,
            plateau_hi: 1.0,
            late: 1.0,
            stop_rate: 1.0,
            crossover: 1.0,
            thermal: 1.0,
            thermal_critical: 1.0,
        }
    }
}

impl Amplitudes {
    pub fn validate(&self) -> Result<(), ScalingError> {
        let named = [
            ("plateau_lo", self.plateau_lo),
            ("plateau_hi", self.plateau_hi),
            ("late", self.late),
            ("stop_rate", self.stop_rate),
            ("crossover", self.crossover),
            ("thermal", self.thermal),
            ("thermal_critical", self.thermal_critical),
        ];
        for (name, value) in named {
            if !(value.is_finite() && value > 0.0) {
                return Err(ScalingError::InvalidAmplitude { name, value });
            }
        }
        Ok(())
    }
}

/// Which branches of `F(x, x_s)` a stop at `x_s` passes through.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "regime")]
pub enum StopRegime {
    /// No stop: `F = f`.
    Indefinite,
    /// Stopped while still adiabatic (`x_s <= -1`).
    Adiabatic,
    /// Ordered side, straight to noncritical coarsening.
    Noncritical,
    /// Ordered side, classical critical coarsening until `x*`, then noncritical.
    CriticalThenNoncritical { x_star: f64 },
    /// On the classical critical line; critical coarsening without end.
    Critical,
    /// Disordered side, classical critical coarsening until `x*`, then a plateau.
    CriticalThenDisordered { x_star: f64 },
    /// Disordered side without a classical critical interval.
    Disordered,
}

/// Piecewise universal scaling functions with their amplitude parameters.
///
/// `x_c` and `y_c` locate the classical critical line in the scaled stop
/// time and scaled tuning parameter; both are fit parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingModel {
    pub exponents: CriticalExponents,
    #[serde(default)]
    pub amplitudes: Amplitudes,
    #[serde(default)]
    pub x_c: Option<f64>,
    #[serde(default)]
    pub y_c: Option<f64>,
}

impl ScalingModel {
    pub fn new(exponents: CriticalExponents) -> Self {
        Self { exponents, amplitudes: Amplitudes::default(), x_c: None, y_c: None }
    }

    pub fn with_x_c(mut self, x_c: f64) -> Self {
        self.x_c = Some(x_c);
        self
    }

    pub fn with_y_c(mut self, y_c: f64) -> Self {
        self.y_c = Some(y_c);
        self
    }

    pub fn with_amplitudes(mut self, amplitudes: Amplitudes) -> Self {
        self.amplitudes = amplitudes;
        self
    }

    pub fn validate(&self) -> Result<(), ScalingError> {
        self.exponents.validate()?;
        self.amplitudes.validate()?;
        if let Some(x_c) = self.x_c {
            // The classical line sits past the adiabatic regime: a system still
            // in its ground state has no finite-energy-density transition to cross.
            if !(x_c.is_finite() && x_c > -1.0) {
                return Err(ScalingError::OutOfRange {
                    name: "x_c",
                    value: x_c,
                    reason: "must be finite and > -1",
                });
            }
        }
        if let Some(y_c) = self.y_c {
            if !y_c.is_finite() {
                return Err(ScalingError::OutOfRange { name: "y_c", value: y_c, reason: "must be finite" });
            }
        }
        Ok(())
    }

    fn require_x_c(&self) -> Result<f64, ScalingError> {
        self.x_c.ok_or(ScalingError::MissingParameter("x_c"))
    }

    /// Continuing-sweep scaling function `f_p(x)`.
    ///
    /// Adiabatic `f(-1) |x|^(-p nu)` for `x <= -1`, a geometric interpolation
    /// between `f(-1)` and `f(+1)` on the plateau, and the late branch for
    /// `x > 1` selected by the sign of the growth exponent.
    pub fn eval_f(&self, x: f64, p: f64) -> f64 {
        let a = &self.amplitudes;
        let nu = self.exponents.nu;
        if x <= -1.0 {
            return a.plateau_lo * (-x).powf(-p * nu);
        }
        if x <= 1.0 {
            let w = 0.5 * (1.0 + x);
            return a.plateau_lo.powf(1.0 - w) * a.plateau_hi.powf(w);
        }
        let growth = growth_exponent(&self.exponents, p);
        match growth.flag {
            GrowthFlag::Growing => a.plateau_hi * x.powf(growth.exponent),
            GrowthFlag::Logarithmic => a.plateau_hi * (1.0 + a.late * x.ln()),
            GrowthFlag::Bounded => a.plateau_hi + a.late * (1.0 - x.powf(growth.exponent)),
        }
    }

    /// `f(infinity)` for bounded sweeps, `None` when the late branch grows.
    pub fn f_limit(&self, p: f64) -> Option<f64> {
        match growth_exponent(&self.exponents, p).flag {
            GrowthFlag::Bounded => Some(self.amplitudes.plateau_hi + self.amplitudes.late),
            _ => None,
        }
    }

    /// Crossover time out of classical critical coarsening,
    /// `A |x_s - x_c|^(-nu_bar z_bar)`, infinite on the critical line.
    pub fn crossover_xstar(&self, x_s: f64) -> Result<f64, ScalingError> {
        let x_c = self.require_x_c()?;
        let sep = (x_s - x_c).abs();
        if sep == 0.0 {
            return Ok(f64::INFINITY);
        }
        let e = &self.exponents;
        Ok(self.amplitudes.crossover * sep.powf(-e.nu_bar * e.z_bar))
    }

    /// Regime structure of a stop at `x_s` (`+inf` for no stop).
    pub fn stop_regime(&self, x_s: f64) -> Result<StopRegime, ScalingError> {
        if x_s.is_nan() {
            return Err(ScalingError::OutOfRange { name: "x_s", value: x_s, reason: "must not be NaN" });
        }
        if x_s == f64::INFINITY {
            return Ok(StopRegime::Indefinite);
        }
        if x_s <= -1.0 {
            return Ok(StopRegime::Adiabatic);
        }
        let x_c = self.require_x_c()?;
        if x_s == x_c {
            return Ok(StopRegime::Critical);
        }
        let x_star = self.crossover_xstar(x_s)?;
        let critical_interval = x_star > plateau_end(x_s);
        Ok(match (x_s > x_c, critical_interval) {
            (true, true) => StopRegime::CriticalThenNoncritical { x_star },
            (true, false) => StopRegime::Noncritical,
            (false, true) => StopRegime::CriticalThenDisordered { x_star },
            (false, false) => StopRegime::Disordered,
        })
    }

    /// Stop-and-hold scaling function `F(x, x_s)` of a linear ramp.
    ///
    /// Equals `f(x)` for `x <= x_s`. After the stop the length holds its value
    /// until the quantum critical plateau ends at `max(x_s, 1)`, then follows
    /// the branch sequence of [`StopRegime`], each branch scaled to be
    /// continuous with the previous one.
    #[allow(non_snake_case)]
    pub fn eval_F(&self, x: f64, x_s: f64) -> Result<f64, ScalingError> {
        if x.is_nan() {
            return Err(ScalingError::OutOfRange { name: "x", value: x, reason: "must not be NaN" });
        }
        if x <= x_s {
            return self.checked(self.eval_f(x, 1.0), x, x_s);
        }
        let regime = self.stop_regime(x_s)?;
        let f_s = self.eval_f(x_s, 1.0);
        let x_q = plateau_end(x_s);
        let e = &self.exponents;
        let value = match regime {
            StopRegime::Indefinite => unreachable!("x <= +inf handled above"),
            StopRegime::Adiabatic | StopRegime::Disordered => f_s,
            _ if x <= x_q => f_s,
            StopRegime::Noncritical => {
                // l^z_d grows linearly at the rate xi_q^z_d Delta frozen at the stop.
                let rate = self.amplitudes.stop_rate * x_q.powf(-e.nu * e.z_d + e.nu * e.z);
                (f_s.powf(e.z_d) + rate * (x - x_q)).powf(1.0 / e.z_d)
            }
            StopRegime::Critical => f_s * (x / x_q).powf(1.0 / e.z_bar),
            StopRegime::CriticalThenNoncritical { x_star } => {
                let at_star = f_s * (x.min(x_star) / x_q).powf(1.0 / e.z_bar);
                if x <= x_star {
                    at_star
                } else {
                    at_star * (x / x_star).powf(1.0 / e.z_d)
                }
            }
            StopRegime::CriticalThenDisordered { x_star } => f_s * (x.min(x_star) / x_q).powf(1.0 / e.z_bar),
        };
        self.checked(value, x, x_s)
    }

    /// `C_s` implied by continuity of the deep-stop branch
    /// `x_s^(-nu + nu z / z_d) (C x - C_s x_s)^(1/z_d)` at `x = x_s`.
    pub fn stop_offset(&self, x_s: f64) -> f64 {
        let e = &self.exponents;
        let x_q = plateau_end(x_s);
        let growth = -e.nu + (e.nu * e.z + 1.0) / e.z_d;
        self.amplitudes.stop_rate - self.eval_f(x_q, 1.0).powf(e.z_d) / x_q.powf(e.z_d * growth)
    }

    /// Scaled thermal equilibrium correlation length `h(y)`.
    ///
    /// `|y|^-nu` outside `|y| < 1`, constant inside, plus a classical critical
    /// term `|y - y_c|^-nu_bar` under a unit Gaussian envelope centred on `y_c`.
    pub fn eval_h(&self, y: f64) -> Result<f64, ScalingError> {
        let y_c = self.y_c.ok_or(ScalingError::MissingParameter("y_c"))?;
        if y.is_nan() {
            return Err(ScalingError::OutOfRange { name: "y", value: y, reason: "must not be NaN" });
        }
        if y == y_c {
            return Err(ScalingError::Divergent { y_c });
        }
        let e = &self.exponents;
        let a = &self.amplitudes;
        let smooth = if y.abs() >= 1.0 { y.abs().powf(-e.nu) } else { 1.0 };
        let d = y - y_c;
        let critical = d.abs().powf(-e.nu_bar) * (-d * d).exp();
        Ok(a.thermal * smooth + a.thermal_critical * critical)
    }

    fn checked(&self, value: f64, x: f64, x_s: f64) -> Result<f64, ScalingError> {
        if value.is_nan() || value < 0.0 {
            return Err(ScalingError::InvalidLength { value, x, x_s });
        }
        Ok(value)
    }
}

/// End of the post-stop quantum critical plateau.
fn plateau_end(x_s: f64) -> f64 {
    x_s.max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn ising() -> ScalingModel {
        ScalingModel::new(CriticalExponents::ising_2p1d())
    }

    #[test]
    fn f_adiabatic_branch() {
        let m = ising();
        assert_relative_eq!(m.eval_f(-100.0, 1.0), 100f64.powf(-0.629), max_relative = 1e-14);
        let amp = ising().with_amplitudes(Amplitudes { plateau_lo: 2.5, ..Default::default() });
        assert_relative_eq!(amp.eval_f(-100.0, 1.0), 2.5 * 100f64.powf(-0.629), max_relative = 1e-14);
    }

    #[test]
    fn f_plateau_is_order_one() {
        let m = ising();
        assert_eq!(m.eval_f(0.0, 1.0), 1.0);
        let amp = ising().with_amplitudes(Amplitudes { plateau_lo: 0.5, plateau_hi: 2.0, ..Default::default() });
        assert_relative_eq!(amp.eval_f(0.0, 1.0), 1.0, max_relative = 1e-14);
        assert!(amp.eval_f(0.5, 1.0).is_finite());
    }

    #[test]
    fn f_late_ratio() {
        let m = ising();
        let ratio = m.eval_f(1e4, 1.0) / m.eval_f(1e2, 1.0);
        // (10^2)^0.1855
        assert_relative_eq!(ratio, 2.349_632_820_848_307, max_relative = 1e-12);
    }

    #[test]
    fn f_bounded_for_cubic_sweep() {
        let m = ising();
        let lim = m.f_limit(3.0).unwrap();
        let mut prev = m.eval_f(1.0, 3.0);
        for k in 1..60 {
            let x = 1.3f64.powi(k);
            let v = m.eval_f(x, 3.0);
            assert!(v > prev && v < lim);
            prev = v;
        }
        assert!(m.f_limit(1.0).is_none());
    }

    #[test]
    fn f_logarithmic_branch() {
        let m = ScalingModel::new(CriticalExponents::new(1.0, 1.0, 1.0, 2.0, 2.0, 2).unwrap());
        assert_relative_eq!(m.eval_f(std::f64::consts::E.powi(3), 1.0), 4.0, max_relative = 1e-14);
    }

    #[test]
    fn f_general_power_adiabatic() {
        let m = ising();
        assert_relative_eq!(m.eval_f(-10.0, 2.0), 10f64.powf(-2.0 * 0.629), max_relative = 1e-14);
    }

    #[test]
    fn big_f_reduces_before_stop() {
        let m = ising().with_x_c(0.2);
        assert_eq!(m.eval_F(-50.0, 3.0).unwrap(), m.eval_f(-50.0, 1.0));
    }

    #[test]
    fn big_f_continuous_at_deep_stop() {
        let m = ising().with_x_c(0.2);
        let at = m.eval_F(20.0, 20.0).unwrap();
        let above = m.eval_F(20.0 + 1e-9, 20.0).unwrap();
        assert_relative_eq!(at, above, max_relative = 1e-9);
        assert_eq!(at, m.eval_f(20.0, 1.0));
    }

    #[test]
    fn big_f_deep_stop_matches_offset_form() {
        let m = ising().with_x_c(0.2);
        let e = m.exponents;
        let x_s = 20.0;
        let c = m.amplitudes.stop_rate;
        let c_s = m.stop_offset(x_s);
        assert!(c > c_s);
        for x in [25.0, 100.0, 1e4] {
            let expected = x_s.powf(-e.nu + e.nu * e.z / e.z_d) * (c * x - c_s * x_s).powf(1.0 / e.z_d);
            assert_relative_eq!(m.eval_F(x, x_s).unwrap(), expected, max_relative = 1e-12);
        }
    }

    #[test]
    fn deeper_stop_coarsens_slower() {
        // z < z_d: the post-stop rate falls as x_s grows
        let m = ising().with_x_c(0.2);
        let hold = 1e3;
        let gain = |x_s: f64| m.eval_F(x_s + hold, x_s).unwrap() / m.eval_F(x_s, x_s).unwrap();
        assert!(gain(50.0) < gain(5.0));
    }

    #[test]
    fn big_f_on_critical_line() {
        let m = ising().with_x_c(0.0);
        let v = m.eval_F(1e3, 0.0).unwrap();
        // 1000^(1/2.17)
        assert_relative_eq!(v, 24.126_175_310_841_877, max_relative = 1e-12);
        assert_eq!(m.stop_regime(0.0).unwrap(), StopRegime::Critical);
    }

    #[test]
    fn big_f_disordered_plateau() {
        let m = ising().with_x_c(0.3);
        let x_s = 0.1;
        let expected = (0.3f64 - 0.1).powf(-1.0);
        for x in [1e4, 1e8, 1e12] {
            assert_relative_eq!(m.eval_F(x, x_s).unwrap(), expected, max_relative = 1e-12);
        }
    }

    #[test]
    fn big_f_adiabatic_stop_freezes() {
        let m = ising().with_x_c(0.3);
        let x_s = -20.0;
        let frozen = 20f64.powf(-0.629);
        assert_relative_eq!(m.eval_F(100.0, x_s).unwrap(), frozen, max_relative = 1e-14);
    }

    #[test]
    fn big_f_needs_x_c_for_stops() {
        let m = ising();
        assert!(matches!(m.eval_F(5.0, 0.5), Err(ScalingError::MissingParameter("x_c"))));
        assert!(m.eval_F(5.0, f64::INFINITY).is_ok());
        assert!(m.eval_F(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn xstar_examples() {
        let m = ising().with_x_c(0.4);
        assert_eq!(m.crossover_xstar(0.4).unwrap(), f64::INFINITY);
        assert_relative_eq!(m.crossover_xstar(0.5).unwrap(), 147.910_838_816_820_74, max_relative = 1e-9);
        assert_relative_eq!(m.crossover_xstar(1.4).unwrap(), 1.0, max_relative = 1e-14);
        let amp = m.with_amplitudes(Amplitudes { crossover: 3.0, ..Default::default() });
        assert_relative_eq!(amp.crossover_xstar(-0.6).unwrap(), 3.0, max_relative = 1e-14);
    }

    #[test]
    fn h_branches() {
        let m = ising().with_y_c(0.3);
        let expected = 10f64.powf(-0.629);
        assert_relative_eq!(m.eval_h(-10.0).unwrap(), expected, max_relative = 1e-12);
        assert_relative_eq!(m.eval_h(10.0).unwrap(), expected, max_relative = 1e-12);
        assert!(matches!(m.eval_h(0.3), Err(ScalingError::Divergent { .. })));
        let near = m.eval_h(0.3 + 1e-6).unwrap();
        // dominated by |y - y_c|^-nu_bar close to the line
        assert_relative_eq!(near, 1e6, max_relative = 1e-4);
        assert!(ising().eval_h(0.0).is_err());
    }

    #[test]
    fn invalid_models_rejected() {
        assert!(ising().with_x_c(-1.5).validate().is_err());
        assert!(ising().with_y_c(f64::NAN).validate().is_err());
        let bad = ising().with_amplitudes(Amplitudes { late: 0.0, ..Default::default() });
        assert!(matches!(bad.validate(), Err(ScalingError::InvalidAmplitude { name: "late", .. })));
    }

    fn amplitudes() -> impl Strategy<Value = Amplitudes> {
        (0.2f64..5.0, 0.2f64..5.0, 0.2f64..5.0, 0.2f64..5.0, 0.2f64..5.0).prop_map(|(lo, hi, late, c, a)| {
            Amplitudes { plateau_lo: lo, plateau_hi: hi, late, stop_rate: c, crossover: a, ..Default::default() }
        })
    }

    fn exponents() -> impl Strategy<Value = CriticalExponents> {
        (0.4f64..1.5, 0.5f64..2.5, 0.5f64..1.5, 1.5f64..3.0, 1.5f64..4.0, 1u32..4).prop_map(
            |(nu, z, nu_bar, z_bar, z_d, d)| CriticalExponents { nu, z, nu_bar, z_bar, z_d, d },
        )
    }

    fn model() -> impl Strategy<Value = ScalingModel> {
        (exponents(), amplitudes(), -0.9f64..2.0)
            .prop_map(|(e, a, x_c)| ScalingModel::new(e).with_amplitudes(a).with_x_c(x_c))
    }

    /// Largest relative jump across `x_b`.
    fn jump(m: &ScalingModel, x_b: f64, x_s: f64) -> f64 {
        let eps = 1e-9 * x_b.abs().max(1.0);
        let lo = m.eval_F(x_b, x_s).unwrap();
        let hi = m.eval_F(x_b + eps, x_s).unwrap();
        (hi - lo).abs() / lo.max(1e-300)
    }

    proptest! {
        #[test]
        fn reduction_before_stop(m in model(), x_s in -5.0f64..50.0, t in 0.0f64..1.0) {
            let x = x_s - t * 60.0;
            prop_assert_eq!(m.eval_F(x, x_s).unwrap().to_bits(), m.eval_f(x, 1.0).to_bits());
        }

        #[test]
        fn continuity_at_boundaries(m in model(), x_s in -3.0f64..30.0) {
            let mut boundaries = vec![-1.0, 1.0, x_s, x_s.max(1.0)];
            if let Ok(StopRegime::CriticalThenNoncritical { x_star } | StopRegime::CriticalThenDisordered { x_star }) =
                m.stop_regime(x_s)
            {
                boundaries.push(x_star);
            }
            for b in boundaries {
                prop_assert!(jump(&m, b, x_s) < 1e-6, "jump at {} for x_s = {}", b, x_s);
            }
        }

        #[test]
        fn lengths_nonnegative(m in model(), x_s in -3.0f64..30.0, x in -100.0f64..1e6) {
            let v = m.eval_F(x, x_s).unwrap();
            prop_assert!(v >= 0.0 && v.is_finite());
        }

        #[test]
        fn growing_late_regime_increasing(m in model(), x_s in 1.5f64..30.0) {
            prop_assume!(growth_exponent(&m.exponents, 1.0).flag == GrowthFlag::Growing);
            let mut prev = m.eval_F(x_s * 1.01, x_s).unwrap();
            for k in 1..40 {
                let x = x_s * 1.01 * 1.5f64.powi(k);
                let v = m.eval_F(x, x_s).unwrap();
                prop_assert!(v > prev);
                prev = v;
            }
        }

        #[test]
        fn bounded_sweep_below_limit(m in model(), p in 1.0f64..5.0) {
            prop_assume!(growth_exponent(&m.exponents, p).flag == GrowthFlag::Bounded);
            let lim = m.f_limit(p).unwrap();
            let mut prev = m.eval_f(1.0, p);
            for k in 1..50 {
                let v = m.eval_f(1.4f64.powi(k), p);
                prop_assert!(v >= prev && v <= lim);
                prev = v;
            }
        }

        #[test]
        fn h_finite_off_line(m in model(), y_c in -2.0f64..2.0, y in -50.0f64..50.0) {
            let m = m.with_y_c(y_c);
            prop_assume!(y != y_c);
            let v = m.eval_h(y).unwrap();
            prop_assert!(v.is_finite() && v > 0.0);
        }

        #[test]
        fn xstar_infinite_only_on_line(m in model(), dx in -3.0f64..3.0) {
            let x_c = m.x_c.unwrap();
            let xs = m.crossover_xstar(x_c + dx).unwrap();
            prop_assert_eq!(xs.is_infinite(), dx == 0.0);
            prop_assert!(m.crossover_xstar(x_c).unwrap().is_infinite());
        }
    }
}
