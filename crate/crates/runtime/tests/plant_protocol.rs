mod common;

use common::*;
use thermotwin_core::config::ClockMode;
use thermotwin_core::sim::simulate;
use thermotwin_core::TelemetrySample;
use thermotwin_runtime::{Message, PlantOptions, PlantServer, PROTOCOL_VERSION};

fn telemetry(m: Message) -> TelemetrySample {
    match m {
        Message::Telemetry(s) => s,
        other => panic!("expected TELEMETRY, got {other:?}"),
    }
}

#[tokio::test]
async fn handshake_reports_version_and_period() {
    let plant = plant(hidden_truth(), 10.0, false).await;
    let mut c = Client::connect(plant.local_addr()).await;
    c.send_raw("{\"type\":\"HELLO\",\"version\":1}").await;
    let line = c.recv_line().await.unwrap();
    assert!(line.starts_with("{\"type\":\"HELLO\",\"version\":1,\"dt\":1.0"), "{line}");
    match Message::decode(&line).unwrap() {
        Message::Hello { version, dt, clock } => {
            assert_eq!(version, PROTOCOL_VERSION);
            assert_eq!(dt, Some(1.0));
            assert_eq!(clock, Some(ClockMode::Emulated));
        }
        other => panic!("{other:?}"),
    }
    plant.shutdown().await.unwrap();
}

#[tokio::test]
async fn messages_before_hello_are_refused() {
    let plant = plant(hidden_truth(), 10.0, false).await;
    let mut c = Client::connect(plant.local_addr()).await;
    assert!(matches!(c.step().await, Message::Error { .. }));
    assert!(matches!(c.hello().await, Message::Hello { .. }));
    assert_eq!(telemetry(c.step().await).t, 0.0);
    plant.shutdown().await.unwrap();
}

#[tokio::test]
async fn wrong_version_is_refused_but_connection_kept() {
    let plant = plant(hidden_truth(), 10.0, false).await;
    let mut c = Client::connect(plant.local_addr()).await;
    c.send_raw("{\"type\":\"HELLO\",\"version\":2}").await;
    match c.recv().await {
        Message::Error { msg } => assert!(msg.contains("version"), "{msg}"),
        other => panic!("{other:?}"),
    }
    assert!(matches!(c.hello().await, Message::Hello { .. }));
    plant.shutdown().await.unwrap();
}

#[tokio::test]
async fn malformed_message_gets_error_and_connection_survives() {
    let plant = plant(hidden_truth(), 10.0, false).await;
    let mut c = Client::connect(plant.local_addr()).await;
    c.hello().await;
    for bad in ["{not json", "{\"type\":\"SETPOINT\"}", "{\"type\":\"WARP\"}", "[]"] {
        c.send_raw(bad).await;
        assert!(matches!(c.recv().await, Message::Error { .. }), "{bad}");
    }
    c.send_raw("{\"type\":\"SETPOINT\",\"value\":300}").await;
    assert!(matches!(c.recv().await, Message::Error { .. }));
    assert_eq!(telemetry(c.step().await).t, 0.0);
    plant.shutdown().await.unwrap();
}

#[tokio::test]
async fn unknown_fields_are_ignored() {
    let plant = plant(hidden_truth(), 10.0, false).await;
    let mut c = Client::connect(plant.local_addr()).await;
    c.send_raw("{\"type\":\"HELLO\",\"version\":1,\"client\":\"probe\"}").await;
    assert!(matches!(c.recv().await, Message::Hello { .. }));
    c.send_raw("{\"type\":\"STEP\",\"note\":1}").await;
    assert_eq!(telemetry(c.recv().await).t, 0.0);
    plant.shutdown().await.unwrap();
}

#[tokio::test]
async fn setpoint_applies_at_next_tick() {
    let plant = plant(hidden_truth(), 30.0, false).await;
    let mut c = Client::connect(plant.local_addr()).await;
    c.hello().await;
    let mut seen = Vec::new();
    for _ in 0..5 {
        seen.push(telemetry(c.step().await));
    }
    c.send(&Message::Setpoint { value: 35.0 }).await;
    for _ in 0..3 {
        seen.push(telemetry(c.step().await));
    }
    assert!(seen[..5].iter().all(|s| s.setpoint == 50.0));
    assert!(seen[5..].iter().all(|s| s.setpoint == 35.0));
    assert_eq!(seen[5].t, 5.0);
    plant.shutdown().await.unwrap();
}

#[tokio::test]
async fn bounded_run_emits_exact_tick_count_then_end() {
    let plant = plant(hidden_truth(), 299.0, true).await;
    let mut c = Client::connect(plant.local_addr()).await;
    c.hello().await;
    let mut ts = Vec::new();
    loop {
        match c.step().await {
            Message::Telemetry(s) => ts.push(s.t),
            Message::End => break,
            other => panic!("{other:?}"),
        }
    }
    assert_eq!(ts.len(), 300);
    for (k, w) in ts.windows(2).enumerate() {
        assert_eq!(w[1] - w[0], 1.0, "at {k}");
    }
    // Further steps keep answering END.
    assert_eq!(c.step().await, Message::End);
    plant.wait_finished().await;
    assert_eq!(plant.stats().ticks, 300);
    let log = plant.shutdown().await.unwrap();
    assert_eq!(log.len(), 300);
}

async fn transcript(seed_duration: f64) -> Vec<String> {
    let plant = plant(hidden_truth(), seed_duration, true).await;
    let mut c = Client::connect(plant.local_addr()).await;
    c.hello().await;
    c.send(&Message::Setpoint { value: 42.5 }).await;
    while c.step().await != Message::End {}
    plant.shutdown().await.unwrap();
    c.transcript
}

#[tokio::test]
async fn sessions_are_byte_identical() {
    let a = transcript(120.0).await;
    let b = transcript(120.0).await;
    assert_eq!(a.len(), 123);
    assert_eq!(a, b);
}

#[tokio::test]
async fn hidden_parameters_never_on_the_wire() {
    let text = transcript(60.0).await.join("\n");
    let p = hidden_truth();
    for v in [p.alpha, p.r, p.k, p.c] {
        let needle = format!("{v}");
        assert!(!text.contains(&needle), "{needle} leaked");
    }
    for key in ["alpha", "\"r\"", "\"k\"", "\"c\"", "params"] {
        assert!(!text.contains(key), "{key} leaked");
    }
}

#[tokio::test]
async fn noise_free_plant_equals_simulation_of_truth() {
    let plant = plant(hidden_truth(), 120.0, false).await;
    let mut c = Client::connect(plant.local_addr()).await;
    c.hello().await;
    let mut got = Vec::new();
    while let Message::Telemetry(s) = c.step().await {
        got.push(s);
    }
    let log = plant.shutdown().await.unwrap();
    let expected = simulate(&thermotwin_core::Scenario {
        params: hidden_truth(),
        ..scenario(120.0, false)
    })
    .unwrap();
    assert_eq!(got, expected.samples);
    assert_eq!(log.samples, expected.samples);
}

#[tokio::test]
async fn wall_clock_ticks_on_its_own() {
    let opts = PlantOptions {
        clock: ClockMode::Wall,
        speedup: 50.0,
        run_forever: false,
        queue_capacity: 64,
    };
    let plant = PlantServer::bind(truth(hidden_truth(), 3), scenario(9.0, false), opts, "127.0.0.1:0")
        .await
        .unwrap();
    let mut c = Client::connect(plant.local_addr()).await;
    match c.hello().await {
        Message::Hello { clock, .. } => assert_eq!(clock, Some(ClockMode::Wall)),
        other => panic!("{other:?}"),
    }
    c.send(&Message::Step).await;
    let mut got_error = false;
    let mut ticks = Vec::new();
    loop {
        match c.recv().await {
            Message::Telemetry(s) => ticks.push(s.t),
            Message::Error { .. } => got_error = true,
            Message::End => break,
            other => panic!("{other:?}"),
        }
    }
    assert!(got_error, "STEP must be refused in wall mode");
    assert!(ticks.windows(2).all(|w| w[1] - w[0] == 1.0));
    assert_eq!(*ticks.last().unwrap(), 9.0);
    plant.wait_finished().await;
    assert_eq!(plant.shutdown().await.unwrap().len(), 10);
}

#[tokio::test]
async fn bind_failure_is_reported() {
    let plant = plant(hidden_truth(), 1.0, false).await;
    let addr = plant.local_addr().to_string();
    let err = PlantServer::bind(truth(hidden_truth(), 0), scenario(1.0, false), emulated(8), &addr)
        .await
        .err()
        .expect("second bind must fail");
    assert!(err.to_string().contains(&addr), "{err}");
    plant.shutdown().await.unwrap();
}
