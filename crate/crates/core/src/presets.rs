//! Built-in parameter sets for the TEC1-12706 module.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::physics::PeltierParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Manufacturer datasheet values.
    Datasheet,
    /// Direct measurement on the module.
    Measurement,
    /// Operator experience.
    Experience,
    /// Result of a GA behavioral match on the real rig.
    Matched,
}

impl Preset {
    pub const ALL: [Preset; 4] = [
        Preset::Datasheet,
        Preset::Measurement,
        Preset::Experience,
        Preset::Matched,
    ];

    pub fn params(self) -> PeltierParams {
        let (alpha, r, k, c) = match self {
            Preset::Datasheet => (0.053, 1.8, 0.5555, 15.0),
            Preset::Measurement => (0.040, 6.0, 0.3333, 15.0),
            Preset::Experience => (0.075, 2.90, 0.3808, 31.4173),
            Preset::Matched => (0.0358, 3.35, 0.2882, 15.0),
        };
        PeltierParams { alpha, r, k, c }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Datasheet => "datasheet",
            Preset::Measurement => "measurement",
            Preset::Experience => "experience",
            Preset::Matched => "matched",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("unknown preset `{0}` (expected datasheet, measurement, experience or matched)")]
pub struct UnknownPreset(pub String);

impl FromStr for Preset {
    type Err = UnknownPreset;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| UnknownPreset(s.to_string()))
    }
}

pub fn preset_params(name: &str) -> Result<PeltierParams, UnknownPreset> {
    name.parse::<Preset>().map(Preset::params)
}
