//! The single human-editable TOML document behind every CLI verb.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matching::{GaConfig, ParamBounds};
use crate::physics::PeltierParams;
use crate::plant::{AmbientProfile, PlantTruth};
use crate::presets::Preset;
use crate::sim::Scenario;

pub const ENV_PLANT_ADDR: &str = "THERMOTWIN_PLANT_ADDR";
pub const ENV_API_ADDR: &str = "THERMOTWIN_API_ADDR";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config error at `{key}` (line {line}): {msg}")]
    Parse { key: String, line: usize, msg: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    /// Advance one tick per client STEP request.
    #[default]
    Emulated,
    /// Advance on a wall-clock timer.
    Wall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantSection {
    /// Hidden ground truth.
    pub params: PeltierParams,
    /// Defaults to the scenario ambient, held constant.
    pub ambient_profile: Option<AmbientProfile>,
    pub seed: u64,
    pub clock: ClockMode,
    /// Wall-clock acceleration factor; 1 is real time.
    pub speedup: f64,
    /// Ignore the scenario duration and run until stopped.
    pub run_forever: bool,
    /// Per-client outgoing message queue length.
    pub queue_capacity: usize,
}

impl Default for PlantSection {
    fn default() -> Self {
        Self {
            params: Preset::Matched.params(),
            ambient_profile: None,
            seed: 0,
            clock: ClockMode::Emulated,
            speedup: 1.0,
            run_forever: false,
            queue_capacity: 256,
        }
    }
}

impl PlantSection {
    pub fn truth(&self, scenario: &Scenario) -> PlantTruth {
        PlantTruth {
            params: self.params,
            ambient_profile: self
                .ambient_profile
                .clone()
                .unwrap_or_else(|| AmbientProfile::constant(scenario.env.t_ambient.celsius())),
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TwinMode {
    /// Replay the plant's control action.
    #[default]
    Shadow,
    /// Run the twin's own controller against the plant's setpoint.
    Mirror,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TwinSection {
    pub params: PeltierParams,
    pub mode: TwinMode,
    /// Seconds without telemetry before the session faults.
    pub telemetry_timeout: f64,
}

impl Default for TwinSection {
    fn default() -> Self {
        Self {
            params: Preset::Datasheet.params(),
            mode: TwinMode::Shadow,
            telemetry_timeout: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Endpoints {
    pub plant: String,
    pub api: String,
}

impl Default for Endpoints {
    fn default() -> Self {
        Self {
            plant: "127.0.0.1:7878".into(),
            api: "127.0.0.1:8080".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfigFile {
    pub scenario: Scenario,
    pub plant: PlantSection,
    pub twin: TwinSection,
    pub ga: GaConfig,
    pub bounds: ParamBounds,
    pub endpoints: Endpoints,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::parse(text).map_err(|e| ConfigError::Parse {
            key: String::new(),
            line: e.span().map_or(1, |s| line_of(text, s.start)),
            msg: e.message().to_string(),
        })?;
        let cfg: ConfigFile = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            let inner = e.into_inner();
            ConfigError::Parse {
                key,
                line: inner.span().map_or(1, |s| line_of(text, s.start)),
                msg: inner.message().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::parse(&text)?;
        cfg.apply_env_overrides();
        Ok(cfg)
    }

    pub fn apply_env_overrides(&mut self) {
        if let Ok(v) = std::env::var(ENV_PLANT_ADDR) {
            self.endpoints.plant = v;
        }
        if let Ok(v) = std::env::var(ENV_API_ADDR) {
            self.endpoints.api = v;
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| ConfigError::Invalid(m);
        self.scenario.validate().map_err(|e| invalid(format!("scenario: {e}")))?;
        self.ga.validate().map_err(|e| invalid(format!("ga: {e}")))?;
        self.bounds.validate().map_err(|e| invalid(format!("bounds: {e}")))?;
        if let Some(p) = &self.plant.ambient_profile {
            p.validate().map_err(|e| invalid(format!("plant.ambient_profile: {e}")))?;
        }
        if !(self.plant.speedup.is_finite() && self.plant.speedup > 0.0) {
            return Err(invalid("plant.speedup must be positive".into()));
        }
        if self.plant.queue_capacity == 0 {
            return Err(invalid("plant.queue_capacity must be positive".into()));
        }
        if !(self.twin.telemetry_timeout > 0.0) {
            return Err(invalid("twin.telemetry_timeout must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::SetpointProfile;

    #[test]
    fn empty_document_is_all_defaults() {
        assert_eq!(ConfigFile::parse("").unwrap(), ConfigFile::default());
    }

    #[test]
    fn full_document() {
        let text = r#"
[scenario]
params = "experience"
duration = 120.0
seed = 3
profile = { kind = "step_sequence", segments = [{ start = 0.0, value = 30.0 }, { start = 60.0, value = 50.0 }] }
env = { t_ambient_c = 22.5 }

[scenario.sensor]
enabled = false

[plant]
params = { alpha = 0.04, r = 3.0, k = 0.3, c = 20.0 }
clock = "wall"
speedup = 10.0

[ga]
generations = 5

[endpoints]
plant = "127.0.0.1:9000"
"#;
        let cfg = ConfigFile::parse(text).unwrap();
        assert_eq!(cfg.scenario.params, Preset::Experience.params());
        assert_eq!(cfg.scenario.duration, 120.0);
        assert!(!cfg.scenario.sensor.enabled);
        assert!((cfg.scenario.env.t_ambient.celsius() - 22.5).abs() < 1e-12);
        assert_eq!(cfg.scenario.profile, SetpointProfile::steps(&[(0.0, 30.0), (60.0, 50.0)]));
        assert_eq!(cfg.plant.clock, ClockMode::Wall);
        assert_eq!(cfg.plant.params.c, 20.0);
        assert_eq!(cfg.ga.generations, 5);
        assert_eq!(cfg.ga.parent_pool, 3);
        assert_eq!(cfg.endpoints.plant, "127.0.0.1:9000");
    }

    #[test]
    fn unknown_key_has_path_and_line() {
        let text = "[scenario]\nduration = 10.0\n\n[ga]\ngenerations = 4\nmutation = 0.5\n";
        match ConfigFile::parse(text) {
            Err(ConfigError::Parse { key, line, msg }) => {
                assert!(key.starts_with("ga"), "{key}");
                assert_eq!(line, 6);
                assert!(msg.contains("mutation"), "{msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_type_has_path_and_line() {
        let text = "[scenario]\n\n[scenario.pid]\nkp = \"fast\"\n";
        match ConfigFile::parse(text) {
            Err(ConfigError::Parse { key, line, .. }) => {
                assert_eq!(key, "scenario.pid.kp");
                assert_eq!(line, 4);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn bad_preset_name() {
        let err = ConfigFile::parse("[twin]\nparams = \"nope\"\n").unwrap_err();
        assert!(err.to_string().contains("twin.params"), "{err}");
    }

    #[test]
    fn semantic_validation() {
        let err = ConfigFile::parse("[scenario]\ndt_physics = 0.3\n").unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)));
    }

    #[test]
    fn default_round_trips_through_toml() {
        let text = toml::to_string(&ConfigFile::default()).unwrap();
        assert_eq!(ConfigFile::parse(&text).unwrap(), ConfigFile::default());
    }
}
