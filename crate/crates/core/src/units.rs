//! Temperature newtypes. The thermoelectric equations need absolute
//! temperatures, every file and wire format uses Celsius.

use serde::{Deserialize, Serialize};

pub const ZERO_CELSIUS_K: f64 = 273.15;

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Kelvin(pub f64);

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Celsius(pub f64);

impl From<Celsius> for Kelvin {
    fn from(c: Celsius) -> Self {
        Kelvin(c.0 + ZERO_CELSIUS_K)
    }
}

impl From<Kelvin> for Celsius {
    fn from(k: Kelvin) -> Self {
        Celsius(k.0 - ZERO_CELSIUS_K)
    }
}

impl Kelvin {
    pub fn celsius(self) -> f64 {
        self.0 - ZERO_CELSIUS_K
    }

    pub fn from_celsius(c: f64) -> Self {
        Kelvin(c + ZERO_CELSIUS_K)
    }
}
