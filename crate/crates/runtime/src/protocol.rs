//! Newline-delimited JSON messages exchanged between the plant and its
//! clients.
//!
//! A client opens with `HELLO`; the server answers with its own `HELLO`
//! carrying the control period and clock mode. `TELEMETRY` flows from the
//! plant once per tick. `SETPOINT` flows to the plant and applies from the
//! next tick on. With the emulated clock a client requests each tick with
//! `STEP`, and the plant announces the end of a bounded run with `END`.
//! Unknown fields are ignored; malformed lines are answered with `ERROR`.

use serde::{Deserialize, Serialize};
use thermotwin_core::config::ClockMode;
use thermotwin_core::TelemetrySample;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "UPPERCASE")]
pub enum Message {
    Hello {
        version: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dt: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        clock: Option<ClockMode>,
    },
    Setpoint {
        value: f64,
    },
    Telemetry(TelemetrySample),
    Error {
        msg: String,
    },
    Step,
    End,
}

impl Message {
    pub fn hello() -> Self {
        Message::Hello {
            version: PROTOCOL_VERSION,
            dt: None,
            clock: None,
        }
    }

    pub fn error(msg: impl Into<String>) -> Self {
        Message::Error { msg: msg.into() }
    }

    /// One wire line including the trailing newline.
    pub fn encode(&self) -> String {
        let mut s = serde_json::to_string(self).expect("protocol messages always serialize");
        s.push('\n');
        s
    }

    pub fn decode(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line.trim_end())
    }
}

/// Serde adapter writing a sample as a tagged `TELEMETRY` object.
pub mod tagged_telemetry {
    use super::*;
    use serde::de::Error as _;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: &TelemetrySample, ser: S) -> Result<S::Ok, S::Error> {
        Message::Telemetry(*s).serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<TelemetrySample, D::Error> {
        match Message::deserialize(de)? {
            Message::Telemetry(s) => Ok(s),
            _ => Err(D::Error::custom("expected a TELEMETRY object")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hello_shape() {
        let m = Message::Hello {
            version: 1,
            dt: Some(1.0),
            clock: None,
        };
        assert_eq!(m.encode(), "{\"type\":\"HELLO\",\"version\":1,\"dt\":1.0}\n");
        assert_eq!(Message::decode("{\"type\":\"HELLO\",\"version\":1}").unwrap(), Message::hello());
    }

    #[test]
    fn telemetry_field_names() {
        let s = TelemetrySample {
            t: 3.0,
            setpoint: 50.0,
            u: 0.25,
            y: 41.7,
            t_env: 20.0,
            i: 0.5,
            v: 3.0,
        };
        let v: serde_json::Value = serde_json::from_str(&Message::Telemetry(s).encode()).unwrap();
        assert_eq!(v["type"], "TELEMETRY");
        for key in ["t", "setpoint", "u", "y", "t_env", "i", "v"] {
            assert!(v[key].is_number(), "{key}");
        }
        assert_eq!(Message::decode(&Message::Telemetry(s).encode()).unwrap(), Message::Telemetry(s));
    }

    #[test]
    fn unknown_fields_ignored() {
        let m = Message::decode("{\"type\":\"SETPOINT\",\"value\":50,\"origin\":\"ui\"}").unwrap();
        assert_eq!(m, Message::Setpoint { value: 50.0 });
    }

    #[test]
    fn malformed_lines_fail() {
        assert!(Message::decode("{\"type\":\"SETPOINT\"}").is_err());
        assert!(Message::decode("{\"type\":\"WARP\"}").is_err());
        assert!(Message::decode("not json").is_err());
    }

    #[test]
    fn floats_round_trip_exactly() {
        let x = 0.1 + 0.2;
        let m = Message::Setpoint { value: x };
        assert_eq!(Message::decode(&m.encode()).unwrap(), m);
    }
}
