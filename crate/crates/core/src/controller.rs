//! Discrete PID with conditional-integration anti-windup, and setpoint profiles.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Plant-safe setpoint band, °C.
pub const SETPOINT_BAND: (f64, f64) = (-20.0, 90.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("controller fault: {0}")]
    Fault(String),
    #[error("invalid controller config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AntiWindup {
    #[default]
    Clamping,
    /// Integrate unconditionally. Only useful for comparisons.
    None,
}

/// Gains act on the error in °C and produce a duty ratio.
///
/// The defaults give a well damped 50 °C step on the datasheet plant with a
/// 1 s control period; they are not the gains of any particular rig.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PidConfig {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub anti_windup: AntiWindup,
    /// First-order derivative filter time constant, seconds. 0 disables.
    pub derivative_filter_tau: f64,
}

impl Default for PidConfig {
    fn default() -> Self {
        Self {
            kp: 0.04,
            ki: 0.004,
            kd: 0.0,
            u_min: -1.0,
            u_max: 1.0,
            anti_windup: AntiWindup::Clamping,
            derivative_filter_tau: 0.0,
        }
    }
}

impl PidConfig {
    pub fn validate(&self) -> Result<(), ControlError> {
        let all = [self.kp, self.ki, self.kd, self.u_min, self.u_max, self.derivative_filter_tau];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(ControlError::Config("gains and bounds must be finite".into()));
        }
        if self.u_min >= self.u_max {
            return Err(ControlError::Config(format!(
                "u_min ({}) must be below u_max ({})",
                self.u_min, self.u_max
            )));
        }
        if self.ki < 0.0 || self.kd < 0.0 {
            return Err(ControlError::Config("ki and kd must be non-negative".into()));
        }
        if self.derivative_filter_tau < 0.0 {
            return Err(ControlError::Config("derivative_filter_tau must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PidState {
    pub integrator: f64,
    pub prev_error: f64,
    pub prev_derivative: f64,
    /// False until the first step; suppresses the derivative kick.
    pub primed: bool,
}

pub fn pid_reset(_cfg: &PidConfig) -> PidState {
    PidState::default()
}

/// One controller update. Returns the saturated output and the next state.
pub fn pid_step(
    cfg: &PidConfig,
    st: &PidState,
    r: f64,
    y: f64,
    dt: f64,
) -> Result<(f64, PidState), ControlError> {
    if !r.is_finite() || !y.is_finite() {
        return Err(ControlError::Fault(format!("non-finite input r={r} y={y}")));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(ControlError::Fault(format!("non-positive time step {dt}")));
    }
    let e = r - y;

    let raw_derivative = if st.primed { (e - st.prev_error) / dt } else { 0.0 };
    let derivative = if cfg.derivative_filter_tau > 0.0 {
        let tau = cfg.derivative_filter_tau;
        (tau * st.prev_derivative + dt * raw_derivative) / (tau + dt)
    } else {
        raw_derivative
    };

    let candidate = st.integrator + e * dt;
    let unsaturated = cfg.kp * e + cfg.ki * candidate + cfg.kd * derivative;
    let winding_up = (unsaturated > cfg.u_max && e > 0.0) || (unsaturated < cfg.u_min && e < 0.0);
    let integrator = match cfg.anti_windup {
        AntiWindup::Clamping if winding_up => st.integrator,
        _ => candidate,
    };

    let u = (cfg.kp * e + cfg.ki * integrator + cfg.kd * derivative).clamp(cfg.u_min, cfg.u_max);
    if !u.is_finite() {
        return Err(ControlError::Fault("non-finite control output".into()));
    }
    Ok((
        u,
        PidState {
            integrator,
            prev_error: e,
            prev_derivative: derivative,
            primed: true,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    /// Start time, seconds.
    pub start: f64,
    /// Setpoint, °C.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SetpointProfile {
    Constant { value: f64 },
    StepSequence { segments: Vec<Segment> },
}

impl Default for SetpointProfile {
    fn default() -> Self {
        SetpointProfile::Constant { value: 50.0 }
    }
}

fn in_band(v: f64) -> bool {
    v.is_finite() && (SETPOINT_BAND.0..=SETPOINT_BAND.1).contains(&v)
}

impl SetpointProfile {
    pub fn steps(segments: &[(f64, f64)]) -> Self {
        SetpointProfile::StepSequence {
            segments: segments
                .iter()
                .map(|&(start, value)| Segment { start, value })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        match self {
            SetpointProfile::Constant { value } => {
                if !in_band(*value) {
                    return Err(ControlError::Config(format!("setpoint {value} outside safe band")));
                }
            }
            SetpointProfile::StepSequence { segments } => {
                let first = segments
                    .first()
                    .ok_or_else(|| ControlError::Config("empty setpoint profile".into()))?;
                if first.start != 0.0 {
                    return Err(ControlError::Config("first segment must start at t=0".into()));
                }
                if segments.windows(2).any(|w| !(w[1].start > w[0].start)) {
                    return Err(ControlError::Config(
                        "segment start times must be strictly increasing".into(),
                    ));
                }
                if let Some(s) = segments.iter().find(|s| !in_band(s.value)) {
                    return Err(ControlError::Config(format!(
                        "setpoint {} outside safe band",
                        s.value
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Setpoint active at time `t`; segments are left-closed.
pub fn setpoint_at(profile: &SetpointProfile, t: f64) -> Result<f64, ControlError> {
    match profile {
        SetpointProfile::Constant { value } => Ok(*value),
        SetpointProfile::StepSequence { segments } => {
            if segments.is_empty() {
                return Err(ControlError::Config("empty setpoint profile".into()));
            }
            if !(t >= 0.0) {
                return Err(ControlError::Config(format!("negative time {t}")));
            }
            let idx = segments.partition_point(|s| s.start <= t);
            segments
                .get(idx.wrapping_sub(1))
                .map(|s| s.value)
                .ok_or_else(|| ControlError::Config(format!("no segment active at t={t}")))
        }
    }
}
