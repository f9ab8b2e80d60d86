//! Electrical and thermal constitutive laws of the Peltier module.
//!
//! Face A is the controlled face carrying the thermal mass, face B sits on the
//! heat sink. All functions here are pure and work in SI units with absolute
//! temperatures.
//!
//! Two heat-flow conventions are available:
//!
//! * [`SignConvention::PaperLiteral`] evaluates
//!   `Q_A = α·T_A·I − ½I²R + K(T_A − T_B)` and
//!   `Q_B = α·T_B·I − ½I²R + K(T_B − T_A)` term by term. `Q_A` is the heat
//!   leaving face A into the junction.
//! * [`SignConvention::EnergyConserving`] returns `q_a` as the heat delivered
//!   into face A and `q_b` as the heat drawn out of face B, with
//!   `q_a = −α·T_A·I + ½I²R − K(T_A − T_B)` and
//!   `q_b = −α·T_B·I − ½I²R − K(T_A − T_B)`, so that `q_a − q_b = V·I` for
//!   `V = α(T_B − T_A) + I·R`.
//!
//! Both conventions describe the same net heat into face A, see
//! [`heat_into_face_a`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::units::Kelvin;

/// Peltier module maximum voltage; bounds the supply rail.
pub const V_SUPPLY_MAX: f64 = 16.4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhysicsError {
    #[error("invalid Peltier parameters: {0}")]
    InvalidParams(String),
    #[error("temperature must be finite and above 0 K, got {0}")]
    BadTemperature(f64),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("time step must be positive, got {0}")]
    BadTimeStep(f64),
    #[error("duty ratio {0} outside [-1, 1]")]
    DutyOutOfRange(f64),
    #[error("supply voltage {0} outside [0, {V_SUPPLY_MAX}] V")]
    SupplyOutOfRange(f64),
}

/// The four identifiable physical parameters of the module.
///
/// Deserializes from either a table of the four fields or the name of a
/// built-in [`Preset`](crate::presets::Preset).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PeltierParams {
    /// Seebeck coefficient, V/K.
    pub alpha: f64,
    /// Electrical resistance, Ω.
    pub r: f64,
    /// Thermal conductance between the faces, W/K.
    pub k: f64,
    /// Lumped heat capacity of face A, J/K.
    pub c: f64,
}

impl PeltierParams {
    pub fn new(alpha: f64, r: f64, k: f64, c: f64) -> Result<Self, PhysicsError> {
        let p = Self { alpha, r, k, c };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), PhysicsError> {
        for (name, v) in self.named() {
            if !(v.is_finite() && v > 0.0) {
                return Err(PhysicsError::InvalidParams(format!(
                    "{name} must be finite and strictly positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.alpha, self.r, self.k, self.c]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        Self {
            alpha: v[0],
            r: v[1],
            k: v[2],
            c: v[3],
        }
    }

    pub fn named(&self) -> [(&'static str, f64); 4] {
        [
            ("alpha", self.alpha),
            ("r", self.r),
            ("k", self.k),
            ("c", self.c),
        ]
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsTable {
    alpha: f64,
    r: f64,
    k: f64,
    c: f64,
}

impl<'de> Deserialize<'de> for PeltierParams {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        struct Visitor;

        impl<'de> serde::de::Visitor<'de> for Visitor {
            type Value = PeltierParams;

            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a preset name or a table with alpha, r, k, c")
            }

            fn visit_str<E: serde::de::Error>(self, v: &str) -> Result<Self::Value, E> {
                crate::presets::preset_params(v).map_err(E::custom)
            }

            fn visit_map<A: serde::de::MapAccess<'de>>(self, map: A) -> Result<Self::Value, A::Error> {
                let t = ParamsTable::deserialize(serde::de::value::MapAccessDeserializer::new(map))?;
                PeltierParams::new(t.alpha, t.r, t.k, t.c).map_err(serde::de::Error::custom)
            }
        }

        de.deserialize_any(Visitor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermalState {
    /// Face A.
    pub t_hot: Kelvin,
    /// Face B, pinned to the heat-sink temperature.
    pub t_cold: Kelvin,
}

impl ThermalState {
    pub fn new(t_hot: Kelvin, t_cold: Kelvin) -> Self {
        Self { t_hot, t_cold }
    }

    fn check(&self) -> Result<(f64, f64), PhysicsError> {
        for t in [self.t_hot.0, self.t_cold.0] {
            if !(t.is_finite() && t > 0.0) {
                return Err(PhysicsError::BadTemperature(t));
            }
        }
        Ok((self.t_hot.0, self.t_cold.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignConvention {
    PaperLiteral,
    #[default]
    EnergyConserving,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SinkMode {
    /// Face B held at the ambient temperature.
    #[default]
    DirichletAtAmbient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EnvironmentRepr", into = "EnvironmentRepr")]
pub struct EnvironmentConditions {
    pub t_ambient: Kelvin,
    pub sink_mode: SinkMode,
}

impl EnvironmentConditions {
    pub fn at_celsius(t: f64) -> Self {
        Self {
            t_ambient: Kelvin::from_celsius(t),
            sink_mode: SinkMode::DirichletAtAmbient,
        }
    }

    pub fn validate(&self) -> Result<(), PhysicsError> {
        let t = self.t_ambient.0;
        if t.is_finite() && t > 0.0 {
            Ok(())
        } else {
            Err(PhysicsError::BadTemperature(t))
        }
    }
}

impl Default for EnvironmentConditions {
    fn default() -> Self {
        Self::at_celsius(20.0)
    }
}

/// File representation: ambient in Celsius.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvironmentRepr {
    t_ambient_c: f64,
    #[serde(default)]
    sink_mode: SinkMode,
}

impl TryFrom<EnvironmentRepr> for EnvironmentConditions {
    type Error = PhysicsError;

    fn try_from(r: EnvironmentRepr) -> Result<Self, Self::Error> {
        let env = Self {
            t_ambient: Kelvin::from_celsius(r.t_ambient_c),
            sink_mode: r.sink_mode,
        };
        env.validate()?;
        Ok(env)
    }
}

impl From<EnvironmentConditions> for EnvironmentRepr {
    fn from(e: EnvironmentConditions) -> Self {
        Self {
            t_ambient_c: e.t_ambient.celsius(),
            sink_mode: e.sink_mode,
        }
    }
}

/// H-bridge drive. Only `duty` and `v_supply` enter the averaged model;
/// the PWM frequency and current-sense threshold are kept as metadata.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ElectricalDrive {
    pub duty: f64,
    pub v_supply: f64,
    pub pwm_frequency: f64,
    pub sense_threshold: f64,
}

impl Default for ElectricalDrive {
    fn default() -> Self {
        Self {
            duty: 0.0,
            v_supply: 12.0,
            pwm_frequency: 500.0,
            sense_threshold: 0.1,
        }
    }
}

impl ElectricalDrive {
    pub fn with_duty(self, duty: f64) -> Self {
        Self { duty, ..self }
    }

    pub fn validate(&self) -> Result<(), PhysicsError> {
        if !self.duty.is_finite() || self.duty.abs() > 1.0 {
            return Err(PhysicsError::DutyOutOfRange(self.duty));
        }
        if !(self.v_supply.is_finite() && (0.0..=V_SUPPLY_MAX).contains(&self.v_supply)) {
            return Err(PhysicsError::SupplyOutOfRange(self.v_supply));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriveDirection {
    Heating,
    Cooling,
    /// Averaged voltage below the current-sense comparator threshold.
    Idle,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatFlows {
    pub q_a: f64,
    pub q_b: f64,
}

fn finite(v: f64, what: &'static str) -> Result<f64, PhysicsError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(PhysicsError::NonFinite(what))
    }
}

pub fn peltier_heat_flows(
    p: &PeltierParams,
    s: &ThermalState,
    i: f64,
    conv: SignConvention,
) -> Result<HeatFlows, PhysicsError> {
    p.validate()?;
    let (ta, tb) = s.check()?;
    let i = finite(i, "current")?;
    let joule = 0.5 * i * i * p.r;
    let flows = match conv {
        SignConvention::PaperLiteral => HeatFlows {
            q_a: p.alpha * ta * i - joule + p.k * (ta - tb),
            q_b: p.alpha * tb * i - joule + p.k * (tb - ta),
        },
        SignConvention::EnergyConserving => {
            let conduction = p.k * (ta - tb);
            HeatFlows {
                q_a: -p.alpha * ta * i + joule - conduction,
                q_b: -p.alpha * tb * i - joule - conduction,
            }
        }
    };
    Ok(flows)
}

/// Net heat delivered into face A, watts.
pub fn heat_into_face_a(
    p: &PeltierParams,
    s: &ThermalState,
    i: f64,
    conv: SignConvention,
) -> Result<f64, PhysicsError> {
    let HeatFlows { q_a, .. } = peltier_heat_flows(p, s, i, conv)?;
    Ok(match conv {
        SignConvention::PaperLiteral => -q_a,
        SignConvention::EnergyConserving => q_a,
    })
}

pub fn peltier_voltage(p: &PeltierParams, s: &ThermalState, i: f64) -> Result<f64, PhysicsError> {
    p.validate()?;
    let (ta, tb) = s.check()?;
    let i = finite(i, "current")?;
    Ok(p.alpha * (tb - ta) + i * p.r)
}

pub fn peltier_current(
    p: &PeltierParams,
    s: &ThermalState,
    v_applied: f64,
) -> Result<f64, PhysicsError> {
    p.validate()?;
    let (ta, tb) = s.check()?;
    let v = finite(v_applied, "voltage")?;
    Ok((v - p.alpha * (tb - ta)) / p.r)
}

/// `dT/dt` of the lumped thermal mass for a net heat flow.
pub fn thermal_rate(p: &PeltierParams, q_net: f64) -> f64 {
    q_net / p.c
}

/// One explicit-Euler update of the lumped thermal mass.
pub fn thermal_mass_step(
    p: &PeltierParams,
    t: Kelvin,
    q_net: f64,
    dt: f64,
) -> Result<Kelvin, PhysicsError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(PhysicsError::BadTimeStep(dt));
    }
    p.validate()?;
    let q = finite(q_net, "heat flow")?;
    Ok(Kelvin(t.0 + thermal_rate(p, q) * dt))
}

/// Duty-cycle averaged H-bridge output voltage.
pub fn hbridge_output(d: &ElectricalDrive) -> Result<f64, PhysicsError> {
    d.validate()?;
    Ok(d.duty * d.v_supply)
}

/// Current-sense comparator decision for the averaged drive voltage.
pub fn drive_direction(d: &ElectricalDrive) -> Result<DriveDirection, PhysicsError> {
    let v = hbridge_output(d)?;
    Ok(if v.abs() < d.sense_threshold {
        DriveDirection::Idle
    } else if v > 0.0 {
        DriveDirection::Heating
    } else {
        DriveDirection::Cooling
    })
}
