//! Fixed-step closed-loop simulation of the Peltier plant.
//!
//! Each control tick measures the face temperature, runs the PID, converts
//! the duty ratio to an averaged bridge voltage and then integrates the face
//! temperature with classical RK4 at `dt_physics` until the next tick. The
//! bridge feeds the module in reverse polarity with respect to the
//! thermoelectric voltage law, so a positive duty ratio heats face A.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{self, pid_step, ControlError, PidConfig, PidState, SetpointProfile};
use crate::physics::{
    self, ElectricalDrive, EnvironmentConditions, PeltierParams, PhysicsError, SignConvention,
    ThermalState,
};
use crate::plant::{sense, SensorModel};
use crate::presets::Preset;
use crate::runlog::{DataError, RunLog, Source, TelemetrySample};
use crate::units::Kelvin;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("simulation diverged at t={t} s")]
    Diverged { t: f64 },
    #[error("invalid scenario: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub params: PeltierParams,
    pub env: EnvironmentConditions,
    pub drive: ElectricalDrive,
    pub pid: PidConfig,
    pub profile: SetpointProfile,
    pub convention: SignConvention,
    pub dt_physics: f64,
    pub dt_control: f64,
    pub duration: f64,
    pub seed: u64,
    pub sensor: SensorModel,
    /// Initial face temperature, °C. Defaults to ambient.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_t_a: Option<f64>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            params: Preset::Datasheet.params(),
            env: EnvironmentConditions::default(),
            drive: ElectricalDrive::default(),
            pid: PidConfig::default(),
            profile: SetpointProfile::default(),
            convention: SignConvention::default(),
            dt_physics: 0.05,
            dt_control: 1.0,
            duration: 300.0,
            seed: 0,
            sensor: SensorModel::default(),
            initial_t_a: None,
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SimError> {
        self.params.validate()?;
        self.env.validate()?;
        self.drive.validate()?;
        self.pid.validate()?;
        self.profile.validate()?;
        self.sensor.validate().map_err(SimError::Config)?;
        if !(self.dt_physics.is_finite() && self.dt_physics > 0.0) {
            return Err(SimError::Config(format!("dt_physics must be > 0, got {}", self.dt_physics)));
        }
        if !(self.dt_control.is_finite() && self.dt_control > 0.0) {
            return Err(SimError::Config(format!("dt_control must be > 0, got {}", self.dt_control)));
        }
        let ratio = self.dt_control / self.dt_physics;
        if ratio.round() < 1.0 || (ratio - ratio.round()).abs() > 1e-9 * ratio {
            return Err(SimError::Config(format!(
                "dt_control ({}) must be an integer multiple of dt_physics ({})",
                self.dt_control, self.dt_physics
            )));
        }
        if !(self.duration.is_finite() && self.duration >= 0.0) {
            return Err(SimError::Config(format!("duration must be >= 0, got {}", self.duration)));
        }
        if let Some(t) = self.initial_t_a {
            if !(t.is_finite() && t > -273.15) {
                return Err(SimError::Config(format!("initial_t_a {t} is not a valid temperature")));
            }
        }
        Ok(())
    }

    /// Number of samples `simulate` produces.
    pub fn tick_count(&self) -> usize {
        (self.duration / self.dt_control + 1e-9).floor() as usize + 1
    }

    pub fn initial_face_temperature(&self) -> Kelvin {
        self.initial_t_a
            .map(Kelvin::from_celsius)
            .unwrap_or(self.env.t_ambient)
    }

    pub fn twin_model(&self) -> TwinModel {
        TwinModel {
            params: self.params,
            convention: self.convention,
            drive: self.drive,
            pid: self.pid,
            dt_physics: self.dt_physics,
        }
    }
}

/// Everything needed to run the twin apart from the recorded inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TwinModel {
    pub params: PeltierParams,
    pub convention: SignConvention,
    pub drive: ElectricalDrive,
    pub pid: PidConfig,
    pub dt_physics: f64,
}

impl Default for TwinModel {
    fn default() -> Self {
        Scenario::default().twin_model()
    }
}

impl TwinModel {
    pub fn with_params(params: PeltierParams) -> Self {
        Self {
            params,
            ..Self::default()
        }
    }
}

fn module_current(
    p: &PeltierParams,
    s: &ThermalState,
    v_drive: f64,
) -> Result<f64, PhysicsError> {
    physics::peltier_current(p, s, -v_drive)
}

fn face_rate(
    p: &PeltierParams,
    t_face: f64,
    t_sink: Kelvin,
    v_drive: f64,
    conv: SignConvention,
) -> Result<f64, PhysicsError> {
    let s = ThermalState::new(Kelvin(t_face), t_sink);
    let i = module_current(p, &s, v_drive)?;
    let q = physics::heat_into_face_a(p, &s, i, conv)?;
    Ok(physics::thermal_rate(p, q))
}

/// One RK4 step of the face temperature with face B pinned to ambient.
pub fn step_physics(
    state: ThermalState,
    drive_voltage: f64,
    params: &PeltierParams,
    env: &EnvironmentConditions,
    convention: SignConvention,
    dt: f64,
) -> Result<ThermalState, PhysicsError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(PhysicsError::BadTimeStep(dt));
    }
    let sink = env.t_ambient;
    let f = |t: f64| face_rate(params, t, sink, drive_voltage, convention);
    let y = state.t_hot.0;
    let k1 = f(y)?;
    let k2 = f(y + 0.5 * dt * k1)?;
    let k3 = f(y + 0.5 * dt * k2)?;
    let k4 = f(y + dt * k3)?;
    let next = y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if !next.is_finite() {
        return Err(PhysicsError::NonFinite("face temperature"));
    }
    Ok(ThermalState::new(Kelvin(next), sink))
}

/// Sub-steps used to cover `span` seconds at nominal step `dt`.
fn substeps(span: f64, dt: f64) -> usize {
    ((span / dt) - 1e-9).ceil().max(1.0) as usize
}

#[derive(Debug, Clone, Copy)]
struct Hold {
    t: f64,
    v_drive: f64,
    ambient: Kelvin,
}

/// Face temperature integrated under zero-order-held drive and ambient.
#[derive(Debug, Clone)]
struct FaceIntegrator {
    params: PeltierParams,
    convention: SignConvention,
    dt_physics: f64,
    t_face: Kelvin,
    hold: Option<Hold>,
}

impl FaceIntegrator {
    fn advance_to(&mut self, t: f64) -> Result<(), SimError> {
        let Some(h) = self.hold else { return Ok(()) };
        let span = t - h.t;
        if !(span > 0.0) {
            return Err(DataError::NonMonotoneTime { index: 0, t }.into());
        }
        let n = substeps(span, self.dt_physics);
        let dt = span / n as f64;
        let env = EnvironmentConditions {
            t_ambient: h.ambient,
            ..EnvironmentConditions::default()
        };
        let mut s = ThermalState::new(self.t_face, h.ambient);
        for k in 0..n {
            s = step_physics(s, h.v_drive, &self.params, &env, self.convention, dt).map_err(|_| {
                SimError::Diverged {
                    t: h.t + (k + 1) as f64 * dt,
                }
            })?;
        }
        self.t_face = s.t_hot;
        Ok(())
    }

    fn electrical(&self, v_drive: f64, ambient: Kelvin) -> Result<(f64, f64), SimError> {
        let s = ThermalState::new(self.t_face, ambient);
        let i = -module_current(&self.params, &s, v_drive)?;
        Ok((i, v_drive))
    }
}

/// A closed loop (controller + plant physics + sensor) sampled at
/// caller-chosen tick times.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    face: FaceIntegrator,
    drive: ElectricalDrive,
    pid: PidConfig,
    pid_state: PidState,
    sensor: SensorModel,
    rng: ChaCha8Rng,
    nominal_dt: f64,
}

impl ClosedLoop {
    pub fn new(model: &TwinModel, sensor: SensorModel, seed: u64, initial: Kelvin) -> Self {
        Self {
            face: FaceIntegrator {
                params: model.params,
                convention: model.convention,
                dt_physics: model.dt_physics,
                t_face: initial,
                hold: None,
            },
            drive: model.drive,
            pid: model.pid,
            pid_state: controller::pid_reset(&model.pid),
            sensor,
            rng: ChaCha8Rng::seed_from_u64(seed),
            nominal_dt: 1.0,
        }
    }

    /// Controller period assumed for the first tick.
    pub fn with_nominal_dt(mut self, dt: f64) -> Self {
        self.nominal_dt = dt;
        self
    }

    pub fn face_temperature(&self) -> Kelvin {
        self.face.t_face
    }

    pub fn set_params(&mut self, params: PeltierParams) {
        self.face.params = params;
    }

    /// Integrates up to `t`, then measures, controls and records the tick.
    pub fn sample(&mut self, t: f64, setpoint: f64, ambient: Kelvin) -> Result<TelemetrySample, SimError> {
        let prev = self.face.hold.map(|h| h.t);
        self.face.advance_to(t)?;
        let y = sense(self.face.t_face.celsius(), &self.sensor, &mut self.rng);
        let dt = prev.map_or(self.nominal_dt, |p| t - p);
        let (u, next) = pid_step(&self.pid, &self.pid_state, setpoint, y, dt)?;
        self.pid_state = next;
        let v_drive = physics::hbridge_output(&self.drive.with_duty(u))?;
        let (i, v) = self.face.electrical(v_drive, ambient)?;
        self.face.hold = Some(Hold { t, v_drive, ambient });
        Ok(TelemetrySample {
            t,
            setpoint,
            u,
            y,
            t_env: ambient.celsius(),
            i,
            v,
        })
    }
}

/// The twin driven open-loop by recorded duty ratios and ambient readings.
#[derive(Debug, Clone)]
pub struct OpenLoopTwin {
    face: FaceIntegrator,
    drive: ElectricalDrive,
}

/// Twin output at one recorded tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwinPoint {
    pub y: f64,
    pub i: f64,
    pub v: f64,
}

impl OpenLoopTwin {
    pub fn new(model: &TwinModel, initial: Kelvin) -> Self {
        Self {
            face: FaceIntegrator {
                params: model.params,
                convention: model.convention,
                dt_physics: model.dt_physics,
                t_face: initial,
                hold: None,
            },
            drive: model.drive,
        }
    }

    pub fn params(&self) -> PeltierParams {
        self.face.params
    }

    /// New parameters apply from the next interval on.
    pub fn set_params(&mut self, params: PeltierParams) {
        self.face.params = params;
    }

    /// Advances the twin to `t` under the previously held inputs, reports its
    /// output there and holds `u` and `t_env_c` until the next call.
    pub fn observe(&mut self, t: f64, u: f64, t_env_c: f64) -> Result<TwinPoint, SimError> {
        self.face.advance_to(t)?;
        let ambient = Kelvin::from_celsius(t_env_c);
        let v_drive = physics::hbridge_output(&self.drive.with_duty(u))?;
        let (i, v) = self.face.electrical(v_drive, ambient)?;
        self.face.hold = Some(Hold { t, v_drive, ambient });
        Ok(TwinPoint {
            y: self.face.t_face.celsius(),
            i,
            v,
        })
    }
}

/// Runs the closed loop described by `sc`.
pub fn simulate(sc: &Scenario) -> Result<RunLog, SimError> {
    sc.validate()?;
    let mut cl = ClosedLoop::new(&sc.twin_model(), sc.sensor, sc.seed, sc.initial_face_temperature())
        .with_nominal_dt(sc.dt_control);
    let samples = (0..sc.tick_count())
        .map(|k| {
            let t = k as f64 * sc.dt_control;
            let r = controller::setpoint_at(&sc.profile, t)?;
            cl.sample(t, r, sc.env.t_ambient)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RunLog::new(Source::Simulated, Some(sc.clone()), samples))
}

/// Drives the twin open-loop with the recorded `u` and `t_env`, returning
/// the twin's trace on the same time grid.
pub fn replay(run: &RunLog, model: &TwinModel) -> Result<RunLog, SimError> {
    run.validate()?;
    let initial = run.initial_temperature().ok_or(DataError::Empty)?;
    let mut twin = OpenLoopTwin::new(model, initial);
    let samples = run
        .samples
        .iter()
        .map(|s| {
            let p = twin.observe(s.t, s.u, s.t_env)?;
            Ok(TelemetrySample {
                y: p.y,
                i: p.i,
                v: p.v,
                ..*s
            })
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    Ok(RunLog::new(Source::Simulated, None, samples))
}

/// Re-runs the twin's own controller against the recorded setpoints and
/// ambient readings, with an ideal sensor.
pub fn rerun_closed_loop(reference: &RunLog, model: &TwinModel) -> Result<RunLog, SimError> {
    reference.validate()?;
    let initial = reference.initial_temperature().ok_or(DataError::Empty)?;
    let nominal = match reference.samples.as_slice() {
        [a, b, ..] => b.t - a.t,
        _ => 1.0,
    };
    let mut cl = ClosedLoop::new(model, SensorModel::ideal(), 0, initial).with_nominal_dt(nominal);
    let samples = reference
        .samples
        .iter()
        .map(|s| cl.sample(s.t, s.setpoint, Kelvin::from_celsius(s.t_env)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RunLog::new(Source::Simulated, None, samples))
}
