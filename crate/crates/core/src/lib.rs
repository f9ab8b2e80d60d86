//! Digital twin of a PID-controlled Peltier temperature plant.
//!
//! The crate is pure computation: thermoelectric physics, the discrete
//! controller, fixed-step closed-loop simulation, the sensor and plant
//! emulation loop, GA behavioral matching, divergence metrics and file
//! formats. Networking lives in `thermotwin-runtime`.

pub mod config;
pub mod controller;
pub mod divergence;
pub mod matching;
pub mod physics;
pub mod plant;
pub mod presets;
pub mod runlog;
pub mod sim;
pub mod storage;
pub mod units;

pub use controller::{PidConfig, PidState, SetpointProfile};
pub use divergence::{DivergenceReport, DivergenceTracker};
pub use matching::{GaConfig, GaResult, ParamBounds};
pub use physics::{ElectricalDrive, EnvironmentConditions, PeltierParams, SignConvention, ThermalState};
pub use plant::{PlantLoop, PlantTruth, SensorModel};
pub use presets::Preset;
pub use runlog::{RunLog, Source, TelemetrySample};
pub use sim::{Scenario, SimError, TwinModel};
pub use units::{Celsius, Kelvin};
