#![allow(dead_code)]

use std::time::Duration;

use thermotwin_core::config::ClockMode;
use thermotwin_core::plant::AmbientProfile;
use thermotwin_core::{PeltierParams, PlantTruth, Scenario, SensorModel, SetpointProfile};
use thermotwin_runtime::{Message, PlantOptions, PlantServer};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader, Lines};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::TcpStream;

/// Deliberately odd values so they are easy to spot in serialized traffic.
pub fn hidden_truth() -> PeltierParams {
    PeltierParams::new(0.0612345, 2.4567891, 0.3456789, 21.234567).unwrap()
}

pub fn scenario(duration: f64, noisy: bool) -> Scenario {
    Scenario {
        duration,
        profile: SetpointProfile::Constant { value: 50.0 },
        sensor: if noisy { SensorModel::default() } else { SensorModel::ideal() },
        ..Scenario::default()
    }
}

pub fn truth(params: PeltierParams, seed: u64) -> PlantTruth {
    PlantTruth {
        params,
        ambient_profile: AmbientProfile::constant(20.0),
        seed,
    }
}

pub fn emulated(queue_capacity: usize) -> PlantOptions {
    PlantOptions {
        clock: ClockMode::Emulated,
        speedup: 1.0,
        run_forever: false,
        queue_capacity,
    }
}

pub async fn plant(params: PeltierParams, duration: f64, noisy: bool) -> PlantServer {
    PlantServer::bind(truth(params, 7), scenario(duration, noisy), emulated(4096), "127.0.0.1:0")
        .await
        .unwrap()
}

/// A scripted protocol client.
pub struct Client {
    lines: Lines<BufReader<OwnedReadHalf>>,
    writer: OwnedWriteHalf,
    /// Every line received, verbatim.
    pub transcript: Vec<String>,
}

impl Client {
    pub async fn connect(addr: std::net::SocketAddr) -> Self {
        let (rd, writer) = TcpStream::connect(addr).await.unwrap().into_split();
        Self {
            lines: BufReader::new(rd).lines(),
            writer,
            transcript: Vec::new(),
        }
    }

    pub async fn send_raw(&mut self, line: &str) {
        self.writer.write_all(line.as_bytes()).await.unwrap();
        self.writer.write_all(b"\n").await.unwrap();
    }

    pub async fn send(&mut self, m: &Message) {
        self.writer.write_all(m.encode().as_bytes()).await.unwrap();
    }

    /// Next line, or `None` on EOF. Panics after 5 s of silence.
    pub async fn recv_line(&mut self) -> Option<String> {
        let line = tokio::time::timeout(Duration::from_secs(5), self.lines.next_line())
            .await
            .expect("no message within 5 s")
            .unwrap_or(None)?;
        self.transcript.push(line.clone());
        Some(line)
    }

    pub async fn recv(&mut self) -> Message {
        let line = self.recv_line().await.expect("connection closed");
        Message::decode(&line).unwrap_or_else(|e| panic!("bad line {line}: {e}"))
    }

    pub async fn hello(&mut self) -> Message {
        self.send(&Message::hello()).await;
        self.recv().await
    }

    pub async fn step(&mut self) -> Message {
        self.send(&Message::Step).await;
        self.recv().await
    }
}
