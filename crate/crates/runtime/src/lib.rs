//! Live deployment: the emulated plant served over TCP, twin sessions that
//! shadow it, and the operator HTTP API.

pub mod api;
pub mod plant_server;
pub mod protocol;
pub mod session;

use thermotwin_core::controller::SetpointProfile;
use thermotwin_core::{PeltierParams, RunLog, SensorModel, SimError, Scenario};
use thiserror::Error;

pub use api::{ApiContext, ApiServer};
pub use plant_server::{PlantOptions, PlantServer, PlantStats};
pub use protocol::{Message, PROTOCOL_VERSION};
pub use session::{PairedSample, SessionConfig, SessionStatus, TwinSession};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("handshake failed: {0}")]
    Handshake(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{0}")]
    BadRequest(String),
    #[error("session is not running")]
    NotLive,
    #[error("session stopped before the first sample; no report")]
    NoSamples,
    #[error("task failed: {0}")]
    Task(String),
}

/// The scenario an offline what-if run uses: the template with the given
/// profile, twin parameters and duration, and a noise-free sensor.
pub fn offline_scenario(
    template: &Scenario,
    profile: SetpointProfile,
    params: PeltierParams,
    duration: f64,
) -> Scenario {
    Scenario {
        profile,
        params,
        duration,
        sensor: SensorModel::ideal(),
        ..template.clone()
    }
}

pub fn run_offline(
    template: &Scenario,
    profile: SetpointProfile,
    params: PeltierParams,
    duration: f64,
) -> Result<RunLog, SimError> {
    thermotwin_core::sim::simulate(&offline_scenario(template, profile, params, duration))
}
