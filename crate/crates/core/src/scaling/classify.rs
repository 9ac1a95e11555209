use serde::{Deserialize, Serialize};

use super::{KzScales, RampProtocol, ScalingError, ScalingModel, StopRegime};

/// Sequence of coarsening regimes a protocol passes through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoarseningCase {
    /// Quantum critical, then noncritical coarsening.
    Case1QcNoncritical,
    /// Quantum critical, classical critical, noncritical.
    Case2QcClassicalCriticalNoncritical,
    /// Quantum critical, then classical critical without end.
    Case3QcClassicalCritical,
    /// Quantum critical, classical critical, then the disordered phase.
    Case4QcClassicalCriticalDisordered,
    /// Quantum critical, then the disordered phase.
    Case5QcDisordered,
    /// Stopped before freeze-out; the ground state is retained.
    Adiabatic,
}

impl CoarseningCase {
    pub fn label(self) -> &'static str {
        match self {
            Self::Case1QcNoncritical => "case1",
            Self::Case2QcClassicalCriticalNoncritical => "case2",
            Self::Case3QcClassicalCritical => "case3",
            Self::Case4QcClassicalCriticalDisordered => "case4",
            Self::Case5QcDisordered => "case5",
            Self::Adiabatic => "adiabatic",
        }
    }
}

/// Side of the finite-energy-density transition on which the ramp stops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopSide {
    Ordered,
    Critical,
    Disordered,
}

/// Classify a ramp protocol into one of the coarsening cases.
///
/// The scaled stop time `x_s = t_s / t_KZ` decides the case through the same
/// regime structure that [`ScalingModel::eval_F`] evaluates; `side` is the
/// caller's independent knowledge of where the stop lies and must agree.
pub fn classify_case(
    protocol: &RampProtocol,
    kz: &KzScales,
    model: &ScalingModel,
    side: StopSide,
) -> Result<CoarseningCase, ScalingError> {
    protocol.validate()?;
    model.validate()?;
    let Some(t_s) = protocol.stop_time() else {
        return Ok(CoarseningCase::Case1QcNoncritical);
    };
    let x_s = kz.scaled_time(t_s);
    let regime = model.stop_regime(x_s)?;

    let contradiction = |why: &str| {
        Err(ScalingError::Contradictory(format!("stop side {side:?} with x_s = {x_s}: {why}")))
    };
    match (side, regime) {
        (StopSide::Ordered, StopRegime::Adiabatic) => return contradiction("stop is still adiabatic"),
        (StopSide::Ordered, StopRegime::Disordered | StopRegime::CriticalThenDisordered { .. }) => {
            return contradiction("x_s < x_c lies on the disordered side")
        }
        (StopSide::Disordered, StopRegime::Noncritical | StopRegime::CriticalThenNoncritical { .. }) => {
            return contradiction("x_s > x_c lies on the ordered side")
        }
        (StopSide::Critical, StopRegime::Adiabatic | StopRegime::Noncritical | StopRegime::Disordered) => {
            return contradiction("no classical critical interval at this stop")
        }
        _ => {}
    }

    Ok(match regime {
        StopRegime::Indefinite | StopRegime::Noncritical => CoarseningCase::Case1QcNoncritical,
        StopRegime::CriticalThenNoncritical { .. } => CoarseningCase::Case2QcClassicalCriticalNoncritical,
        StopRegime::Critical => CoarseningCase::Case3QcClassicalCritical,
        StopRegime::CriticalThenDisordered { .. } => CoarseningCase::Case4QcClassicalCriticalDisordered,
        StopRegime::Disordered => CoarseningCase::Case5QcDisordered,
        StopRegime::Adiabatic => CoarseningCase::Adiabatic,
    })
}
