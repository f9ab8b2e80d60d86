mod common;

use std::time::Duration;

use common::*;
use thermotwin_core::config::TwinMode;
use thermotwin_core::sim::replay;
use thermotwin_core::{DivergenceReport, Preset, TwinModel};
use thermotwin_runtime::session::EventKind;
use thermotwin_runtime::{RuntimeError, SessionConfig, SessionStatus, TwinSession};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::TcpListener;

fn cfg(addr: std::net::SocketAddr, params: thermotwin_core::PeltierParams) -> SessionConfig {
    SessionConfig::new(addr.to_string(), TwinModel::with_params(params))
}

async fn wait_for(session: &TwinSession, n: usize) {
    tokio::time::timeout(Duration::from_secs(10), async {
        while session.len() < n {
            tokio::time::sleep(Duration::from_millis(2)).await;
        }
    })
    .await
    .expect("session stalled");
}

#[tokio::test]
async fn self_shadow_tracks_plant() {
    let plant = plant(hidden_truth(), 299.0, false).await;
    let session = TwinSession::connect(cfg(plant.local_addr(), hidden_truth())).await.unwrap();
    session.finished().await;
    assert_eq!(session.status(), SessionStatus::Stopped);
    assert_eq!(session.len(), 300);
    let r = session.report().unwrap();
    assert!(r.rmse_y < 0.01, "{r:?}");
    assert_eq!(r.rmse_u, 0.0);
    assert_eq!(r.samples, 300);
    assert_eq!(r.horizon, 299.0);
    assert!(matches!(session.events().last().unwrap().kind, EventKind::Ended));
    let truth_log = plant.shutdown().await.unwrap();
    assert_eq!(session.plant_log().samples, truth_log.samples);
}

#[tokio::test]
async fn pairing_is_lossless_and_report_matches_post_hoc() {
    let plant = plant(hidden_truth(), 149.0, true).await;
    let session = TwinSession::connect(cfg(plant.local_addr(), Preset::Datasheet.params()))
        .await
        .unwrap();
    session.finished().await;
    let (p, t) = (session.plant_log(), session.twin_log());
    assert_eq!(p.len(), 150);
    assert_eq!(t.len(), 150);
    assert!(session.gaps().is_empty());
    let live = session.report().unwrap();
    let post = DivergenceReport::between(&p, &t).unwrap();
    assert_eq!(live, post);
    assert!(live.rmse_y > 0.1);
    plant.shutdown().await.unwrap();
}

#[tokio::test]
async fn live_twin_equals_offline_replay() {
    let plant = plant(hidden_truth(), 200.0, true).await;
    let session = TwinSession::connect(cfg(plant.local_addr(), Preset::Experience.params()))
        .await
        .unwrap();
    session.finished().await;
    let again = replay(&session.plant_log(), &session.model()).unwrap();
    let live = session.twin_log();
    for (a, b) in live.samples.iter().zip(&again.samples) {
        assert_eq!(a.y, b.y, "t={}", a.t);
        assert_eq!((a.i, a.v), (b.i, b.v));
    }
    plant.shutdown().await.unwrap();
}

#[tokio::test]
async fn stopping_before_first_sample_gives_no_report() {
    // A plant that answers HELLO and then stays silent.
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let server = tokio::spawn(async move {
        let (s, _) = listener.accept().await.unwrap();
        let (rd, mut wr) = s.into_split();
        let mut lines = BufReader::new(rd).lines();
        lines.next_line().await.unwrap();
        wr.write_all(b"{\"type\":\"HELLO\",\"version\":1,\"dt\":1.0}\n").await.unwrap();
        while let Ok(Some(_)) = lines.next_line().await {}
    });
    let session = TwinSession::connect(cfg(addr, Preset::Datasheet.params())).await.unwrap();
    assert!(matches!(session.stop().await, Err(RuntimeError::NoSamples)));
    assert_eq!(session.status(), SessionStatus::Stopped);
    server.abort();
}

#[tokio::test]
async fn version_mismatch_is_fatal() {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        let (s, _) = listener.accept().await.unwrap();
        let (rd, mut wr) = s.into_split();
        BufReader::new(rd).lines().next_line().await.unwrap();
        wr.write_all(b"{\"type\":\"HELLO\",\"version\":2}\n").await.unwrap();
    });
    match TwinSession::connect(cfg(addr, Preset::Datasheet.params())).await {
        Err(RuntimeError::Handshake(msg)) => assert!(msg.contains("version 2"), "{msg}"),
        Err(e) => panic!("unexpected {e}"),
        Ok(_) => panic!("handshake should fail"),
    }
}

#[tokio::test]
async fn silence_faults_the_session_and_keeps_the_report() {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let server = tokio::spawn(async move {
        let (s, _) = listener.accept().await.unwrap();
        let (rd, mut wr) = s.into_split();
        let mut lines = BufReader::new(rd).lines();
        lines.next_line().await.unwrap();
        wr.write_all(b"{\"type\":\"HELLO\",\"version\":1,\"dt\":1.0,\"clock\":\"wall\"}\n")
            .await
            .unwrap();
        for k in 0..3 {
            let line = format!(
                "{{\"type\":\"TELEMETRY\",\"t\":{k}.0,\"setpoint\":50.0,\"u\":0.5,\"y\":30.0,\"t_env\":20.0,\"i\":1.0,\"v\":6.0}}\n"
            );
            wr.write_all(line.as_bytes()).await.unwrap();
        }
        while let Ok(Some(_)) = lines.next_line().await {}
    });
    let mut c = cfg(addr, Preset::Datasheet.params());
    c.telemetry_timeout = Duration::from_millis(300);
    let session = TwinSession::connect(c).await.unwrap();
    session.finished().await;
    let snap = session.snapshot();
    assert_eq!(snap.status, SessionStatus::Faulted);
    assert_eq!(snap.fault.as_deref(), Some("telemetry timeout"));
    assert_eq!(snap.samples, 3);
    assert!(session.stop().await.is_ok());
    assert_eq!(session.status(), SessionStatus::Faulted);
    server.abort();
}

#[tokio::test]
async fn reconnect_resumes_and_records_the_gap() {
    let plant = plant(hidden_truth(), 99.0, false).await;
    let session = TwinSession::connect(cfg(plant.local_addr(), hidden_truth())).await.unwrap();
    wait_for(&session, 20).await;
    plant.outage(5).await;
    session.finished().await;
    assert_eq!(session.status(), SessionStatus::Stopped);

    let gaps = session.gaps();
    assert_eq!(gaps.len(), 1, "{gaps:?}");
    let g = gaps[0];
    assert!(g.missed >= 5, "{g:?}");
    assert_eq!(g.resumed - g.after, (g.missed + 1) as f64);
    assert_eq!(session.len() as u64 + g.missed, 100);

    let kinds: Vec<_> = session.events().into_iter().map(|e| e.kind).collect();
    assert!(kinds.iter().any(|k| matches!(k, EventKind::Disconnected { .. })));
    assert_eq!(kinds.iter().filter(|k| matches!(k, EventKind::Connected)).count(), 2);

    // Across the gap the twin holds the last control action, exactly as replay does.
    let again = replay(&session.plant_log(), &session.model()).unwrap();
    assert_eq!(again.samples, session.twin_log().samples);
    plant.shutdown().await.unwrap();
}

#[tokio::test]
async fn hot_swap_applies_at_next_tick_and_keeps_history() {
    let plant = plant(hidden_truth(), 99.0, false).await;
    let mut c = cfg(plant.local_addr(), Preset::Datasheet.params());
    c.step_pace = Duration::from_millis(5);
    let session = TwinSession::connect(c).await.unwrap();
    wait_for(&session, 10).await;
    let before = session.trace_since(0.0);
    session.swap_params(hidden_truth());
    session.finished().await;
    let after = session.trace_since(0.0);
    assert_eq!(&after[..before.len()], &before[..]);
    let swap = session
        .events()
        .into_iter()
        .find(|e| matches!(e.kind, EventKind::ParamsSwapped { .. }))
        .expect("swap event");
    let at = swap.at.unwrap();
    assert!(at >= before.last().unwrap().plant.t);
    assert_eq!(session.model().params, hidden_truth());
    plant.shutdown().await.unwrap();
}

#[tokio::test]
async fn setpoints_reach_the_plant() {
    let plant = plant(hidden_truth(), 60.0, false).await;
    let mut c = cfg(plant.local_addr(), hidden_truth());
    c.step_pace = Duration::from_millis(5);
    let session = TwinSession::connect(c).await.unwrap();
    wait_for(&session, 5).await;
    let n = session.len();
    session.send_setpoint(35.0).unwrap();
    assert!(matches!(session.send_setpoint(120.0), Err(RuntimeError::BadRequest(_))));
    session.finished().await;
    let trace = session.trace_since(0.0);
    let first = trace.iter().position(|p| p.plant.setpoint == 35.0).unwrap();
    assert!(first <= n + 2, "{first} vs {n}");
    assert!(trace[first..].iter().all(|p| p.plant.setpoint == 35.0));
    assert!(matches!(session.send_setpoint(40.0), Err(RuntimeError::NotLive)));
    plant.shutdown().await.unwrap();
}

#[tokio::test]
async fn mirror_mode_runs_its_own_controller() {
    let plant = plant(hidden_truth(), 120.0, false).await;
    let mut c = cfg(plant.local_addr(), hidden_truth());
    c.mode = TwinMode::Mirror;
    let session = TwinSession::connect(c).await.unwrap();
    session.finished().await;
    let r = session.report().unwrap();
    assert!(r.rmse_y < 1e-9, "{r:?}");
    assert!(r.rmse_u < 1e-9, "{r:?}");
    plant.shutdown().await.unwrap();

    let plant = common::plant(hidden_truth(), 120.0, false).await;
    let mut c = cfg(plant.local_addr(), Preset::Datasheet.params());
    c.mode = TwinMode::Mirror;
    let session = TwinSession::connect(c).await.unwrap();
    session.finished().await;
    assert!(session.report().unwrap().rmse_u > 1e-3);
    plant.shutdown().await.unwrap();
}

#[tokio::test]
async fn unreachable_plant_is_an_error() {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    assert!(matches!(
        TwinSession::connect(cfg(addr, Preset::Datasheet.params())).await,
        Err(RuntimeError::Io(_))
    ));
}

#[tokio::test]
async fn twin_step_fits_the_control_period_in_wall_mode() {
    let opts = thermotwin_runtime::PlantOptions {
        clock: thermotwin_core::config::ClockMode::Wall,
        speedup: 20.0,
        run_forever: false,
        queue_capacity: 64,
    };
    let plant = thermotwin_runtime::PlantServer::bind(truth(hidden_truth(), 3), scenario(30.0, true), opts, "127.0.0.1:0")
        .await
        .unwrap();
    let session = TwinSession::connect(cfg(plant.local_addr(), Preset::Datasheet.params())).await.unwrap();
    session.finished().await;
    let snap = session.snapshot();
    assert_eq!(snap.samples, 31);
    assert!(snap.max_step_seconds > 0.0);
    // A tenth of the one-second period.
    assert!(snap.max_step_seconds < 0.1, "{}", snap.max_step_seconds);
    plant.shutdown().await.unwrap();
}
