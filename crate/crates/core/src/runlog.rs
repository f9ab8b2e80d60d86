//! Recorded telemetry: the unit of recording, replay and cost evaluation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::Scenario;
use crate::units::Kelvin;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("run log has no samples")]
    Empty,
    #[error("time not strictly increasing at sample {index} (t={t})")]
    NonMonotoneTime { index: usize, t: f64 },
    #[error("sample {index} has a non-finite field")]
    NonFinite { index: usize },
    #[error("sample {index} duty ratio {u} outside [-1, 1]")]
    DutyOutOfRange { index: usize, u: f64 },
    #[error("time grids differ: {0}")]
    GridMismatch(String),
    #[error("need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
}

/// One control-period record. Temperatures in °C. `i` and `v` are the module
/// current and the bridge voltage, both positive when face A is heated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TelemetrySample {
    pub t: f64,
    pub setpoint: f64,
    pub u: f64,
    pub y: f64,
    pub t_env: f64,
    pub i: f64,
    pub v: f64,
}

impl TelemetrySample {
    pub fn fields(&self) -> [f64; 7] {
        [self.t, self.setpoint, self.u, self.y, self.t_env, self.i, self.v]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Simulated,
    EmulatedPlant,
    LiveTwin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub source: Source,
    /// Scenario that produced the run, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<Scenario>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub meta: RunMeta,
    pub samples: Vec<TelemetrySample>,
}

impl RunLog {
    pub fn new(source: Source, scenario: Option<Scenario>, samples: Vec<TelemetrySample>) -> Self {
        Self {
            meta: RunMeta { source, scenario },
            samples,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.samples.is_empty() {
            return Err(DataError::Empty);
        }
        for (index, s) in self.samples.iter().enumerate() {
            if s.fields().iter().any(|v| !v.is_finite()) {
                return Err(DataError::NonFinite { index });
            }
            if s.u.abs() > 1.0 {
                return Err(DataError::DutyOutOfRange { index, u: s.u });
            }
            if s.t < 0.0 {
                return Err(DataError::NonMonotoneTime { index, t: s.t });
            }
        }
        if let Some(index) = self.samples.windows(2).position(|w| !(w[1].t > w[0].t)) {
            return Err(DataError::NonMonotoneTime {
                index: index + 1,
                t: self.samples[index + 1].t,
            });
        }
        Ok(())
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.t)
    }

    /// Face temperature the twin should start from: the scenario's initial
    /// condition when recorded, otherwise the first measurement.
    pub fn initial_temperature(&self) -> Option<Kelvin> {
        match &self.meta.scenario {
            Some(sc) => Some(sc.initial_face_temperature()),
            None => self.samples.first().map(|s| Kelvin::from_celsius(s.y)),
        }
    }

    pub fn same_grid(&self, other: &RunLog) -> Result<(), DataError> {
        if self.len() != other.len() {
            return Err(DataError::GridMismatch(format!(
                "{} vs {} samples",
                self.len(),
                other.len()
            )));
        }
        for (a, b) in self.samples.iter().zip(&other.samples) {
            if a.t != b.t {
                return Err(DataError::GridMismatch(format!("t={} vs t={}", a.t, b.t)));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(t: f64) -> TelemetrySample {
        TelemetrySample {
            t,
            setpoint: 50.0,
            u: 0.1,
            y: 20.0,
            t_env: 20.0,
            i: 0.0,
            v: 0.0,
        }
    }

    #[test]
    fn validation() {
        let ok = RunLog::new(Source::Simulated, None, vec![sample(0.0), sample(1.0)]);
        assert!(ok.validate().is_ok());
        let empty = RunLog::new(Source::Simulated, None, vec![]);
        assert_eq!(empty.validate(), Err(DataError::Empty));
        let shuffled = RunLog::new(Source::Simulated, None, vec![sample(1.0), sample(0.0)]);
        assert!(matches!(
            shuffled.validate(),
            Err(DataError::NonMonotoneTime { index: 1, .. })
        ));
        let mut bad = sample(2.0);
        bad.y = f64::NAN;
        let nan = RunLog::new(Source::Simulated, None, vec![sample(0.0), bad]);
        assert_eq!(nan.validate(), Err(DataError::NonFinite { index: 1 }));
    }

    #[test]
    fn initial_temperature_falls_back_to_first_measurement() {
        let mut s = sample(0.0);
        s.y = 31.5;
        let log = RunLog::new(Source::LiveTwin, None, vec![s]);
        assert!((log.initial_temperature().unwrap().celsius() - 31.5).abs() < 1e-12);
    }
}
