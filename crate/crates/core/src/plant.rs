//! The emulated physical rig: sensor model, hidden ground truth and the
//! plant's own closed loop. Networking lives in the runtime crate.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::physics::PeltierParams;
use crate::runlog::{RunLog, Source, TelemetrySample};
use crate::sim::{ClosedLoop, Scenario, SimError};
use crate::units::Kelvin;

/// Thermal camera reduced to one scalar reading: uniform noise of
/// ±`accuracy` followed by rounding to `quantum`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorModel {
    pub accuracy: f64,
    pub quantum: f64,
    pub enabled: bool,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self {
            accuracy: 0.5,
            quantum: 0.1,
            enabled: true,
        }
    }
}

impl SensorModel {
    pub fn ideal() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.accuracy.is_finite() && self.accuracy >= 0.0) {
            return Err(format!("sensor accuracy must be >= 0, got {}", self.accuracy));
        }
        if !(self.quantum.is_finite() && self.quantum >= 0.0) {
            return Err(format!("sensor quantum must be >= 0, got {}", self.quantum));
        }
        Ok(())
    }
}

fn round_to(x: f64, quantum: f64) -> f64 {
    if quantum > 0.0 {
        (x / quantum).round() * quantum
    } else {
        x
    }
}

/// Reads the true face temperature (°C) through the sensor model.
pub fn sense(t_true: f64, m: &SensorModel, rng: &mut ChaCha8Rng) -> f64 {
    if !m.enabled {
        return t_true;
    }
    let noise = if m.accuracy > 0.0 {
        rng.random_range(-m.accuracy..=m.accuracy)
    } else {
        0.0
    };
    round_to(t_true + noise, m.quantum)
}

/// Piecewise-constant ambient temperature, °C.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmbientProfile {
    /// `(start time s, ambient °C)`, the first starting at 0.
    pub segments: Vec<(f64, f64)>,
}

impl AmbientProfile {
    pub fn constant(t_c: f64) -> Self {
        Self {
            segments: vec![(0.0, t_c)],
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self.segments.first() {
            None => return Err("empty ambient profile".into()),
            Some(&(start, _)) if start != 0.0 => {
                return Err("ambient profile must start at t=0".into())
            }
            _ => {}
        }
        if self.segments.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err("ambient segment times must be strictly increasing".into());
        }
        if self.segments.iter().any(|&(_, v)| !(v.is_finite() && v > -273.15)) {
            return Err("ambient temperature must be above absolute zero".into());
        }
        Ok(())
    }

    pub fn at(&self, t: f64) -> f64 {
        let idx = self.segments.partition_point(|&(s, _)| s <= t);
        self.segments[idx.saturating_sub(1)].1
    }
}

/// Hidden ground truth of the emulated rig.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantTruth {
    pub params: PeltierParams,
    pub ambient_profile: AmbientProfile,
    pub seed: u64,
}

/// The plant's closed loop, advanced one control tick at a time.
///
/// With a constant ambient profile equal to the scenario ambient and the
/// sensor disabled, the produced samples equal [`crate::sim::simulate`] of the
/// truth scenario.
pub struct PlantLoop {
    truth: PlantTruth,
    scenario: Scenario,
    engine: ClosedLoop,
    tick: u64,
    max_ticks: Option<u64>,
    setpoint_override: Option<f64>,
    log: Vec<TelemetrySample>,
}

impl PlantLoop {
    pub fn new(truth: PlantTruth, scenario: Scenario) -> Result<Self, SimError> {
        scenario.validate()?;
        truth.params.validate()?;
        truth.ambient_profile.validate().map_err(SimError::Config)?;
        let mut model = scenario.twin_model();
        model.params = truth.params;
        let initial = match scenario.initial_t_a {
            Some(c) => Kelvin::from_celsius(c),
            None => Kelvin::from_celsius(truth.ambient_profile.at(0.0)),
        };
        let engine = ClosedLoop::new(&model, scenario.sensor, truth.seed, initial);
        let max_ticks = Some(scenario.tick_count() as u64);
        Ok(Self {
            truth,
            scenario,
            engine,
            tick: 0,
            max_ticks,
            setpoint_override: None,
            log: Vec::new(),
        })
    }

    /// Runs until stopped instead of for the scenario duration.
    pub fn unbounded(mut self) -> Self {
        self.max_ticks = None;
        self
    }

    pub fn dt(&self) -> f64 {
        self.scenario.dt_control
    }

    pub fn ticks_done(&self) -> u64 {
        self.tick
    }

    pub fn finished(&self) -> bool {
        self.max_ticks.is_some_and(|m| self.tick >= m)
    }

    /// Takes effect at the next tick.
    pub fn set_setpoint(&mut self, value: f64) {
        self.setpoint_override = Some(value);
    }

    pub fn step(&mut self) -> Result<Option<TelemetrySample>, SimError> {
        if self.finished() {
            return Ok(None);
        }
        let t = self.tick as f64 * self.scenario.dt_control;
        let setpoint = match self.setpoint_override {
            Some(v) => v,
            None => crate::controller::setpoint_at(&self.scenario.profile, t)?,
        };
        let ambient = Kelvin::from_celsius(self.truth.ambient_profile.at(t));
        let sample = self.engine.sample(t, setpoint, ambient)?;
        self.tick += 1;
        self.log.push(sample);
        Ok(Some(sample))
    }

    /// Ground-truth record of everything the plant did so far.
    pub fn run_log(&self) -> RunLog {
        let mut sc = self.scenario.clone();
        sc.params = self.truth.params;
        RunLog::new(Source::EmulatedPlant, Some(sc), self.log.clone())
    }
}
