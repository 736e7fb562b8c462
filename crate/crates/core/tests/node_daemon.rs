mod common;

use std::time::Duration;

use common::cluster::*;
use edgemesh::clock::VirtualClock;
use edgemesh::node::api::{ActuateRequest, StartRequest, StopRequest};
use edgemesh::node::{ClientError, NodeClient, NodeConfig, NodeError};
use edgemesh::policy::PolicyEvent;
use serde_json::json;

fn client() -> NodeClient {
    NodeClient::new(Duration::from_secs(2))
}

fn start_req(source: std::net::SocketAddr) -> StartRequest {
    StartRequest {
        image_ref: IMAGE.into(),
        source_service: source,
        sensor_id: Some("camera".into()),
        actuator_id: Some("deterrent".into()),
    }
}

fn api_kind(e: &ClientError) -> (u16, &str) {
    match e {
        ClientError::Api { status, body } => (*status, body.error.as_str()),
        other => panic!("expected an API error, got {other:?}"),
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn local_start_runs_the_workload_end_to_end() {
    let clock = VirtualClock::new(1_000);
    let a = single("a", &clock, 90.0).await;
    let me = a.daemon.node_ref();
    let c = client();

    let handle = c.start(me.controller_address, &start_req(me.service_address)).await.unwrap();
    assert_eq!(handle.image_ref, IMAGE);
    assert_eq!(a.daemon.subscriber_count("camera"), 1);
    let again = c.start(me.controller_address, &start_req(me.service_address)).await.unwrap();
    assert_eq!(again.runtime_id, handle.runtime_id);

    let deliveries = a.daemon.sample_sensor("camera").await.unwrap();
    assert_eq!(deliveries.len(), 1);
    assert!(deliveries[0].delivered && deliveries[0].accepted);
    assert!(eventually(Duration::from_secs(2), || a.daemon.actuation_log("deterrent").len() == 1).await);
    let record = &a.daemon.actuation_log("deterrent")[0];
    assert_eq!(record.command, "deter");
    assert_eq!(record.sample_seq, Some(1));
    assert_eq!(record.workload_id, handle.runtime_id);
    assert!(a.daemon.actuation_log("siren").is_empty());
    a.daemon.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn remote_start_is_refused_below_gamma() {
    let clock = VirtualClock::new(0);
    let a = single("a", &clock, 90.0).await;
    let b = single("b", &clock, 40.0).await;
    let src = a.daemon.node_ref().service_address;
    let host = b.daemon.node_ref().controller_address;
    let c = client();

    let err = c.start(host, &start_req(src)).await.unwrap_err();
    assert_eq!(api_kind(&err), (409, "Refused"));
    assert!(b.daemon.handles().is_empty());

    b.battery.set_pct(70.0);
    let err = c.start(host, &start_req(src)).await.unwrap_err();
    assert_eq!(api_kind(&err), (409, "Refused"), "gamma itself is not enough");

    b.battery.set_pct(80.0);
    c.start(host, &start_req(src)).await.unwrap();
    assert_eq!(b.daemon.handles().len(), 1);
    assert_eq!(a.daemon.subscriber_count("camera"), 1);
    let state = c.state(b.daemon.node_ref().service_address).await.unwrap();
    assert_eq!(state.workloads, 1);
    assert_eq!(state.cpu_pct, b.daemon.config().cpu.utilization(true, 1));
    a.daemon.shutdown().await;
    b.daemon.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn remote_admission_caps_hosted_workloads() {
    let clock = VirtualClock::new(0);
    let host = single("host", &clock, 95.0).await;
    let mut sources = Vec::new();
    for id in ["s1", "s2", "s3"] {
        sources.push(single(id, &clock, 90.0).await);
    }
    let c = client();
    let ctl = host.daemon.node_ref().controller_address;
    for s in &sources[..2] {
        c.start(ctl, &start_req(s.daemon.node_ref().service_address)).await.unwrap();
    }
    let err = c
        .start(ctl, &start_req(sources[2].daemon.node_ref().service_address))
        .await
        .unwrap_err();
    assert_eq!(api_kind(&err), (409, "Refused"));
    // the cap only applies to offloaded work
    let own = host.daemon.node_ref().service_address;
    c.start(ctl, &start_req(own)).await.unwrap();
    assert_eq!(host.daemon.handles().len(), 3);
    host.daemon.shutdown().await;
    for s in sources {
        s.daemon.shutdown().await;
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn stop_removes_the_workload_and_its_subscription() {
    let clock = VirtualClock::new(0);
    let a = single("a", &clock, 90.0).await;
    let me = a.daemon.node_ref();
    let c = client();
    c.start(me.controller_address, &start_req(me.service_address)).await.unwrap();

    let stop = StopRequest {
        image_ref: IMAGE.into(),
        source_service: me.service_address,
    };
    c.stop(me.controller_address, &stop).await.unwrap();
    assert!(a.daemon.handles().is_empty());
    assert_eq!(a.daemon.subscriber_count("camera"), 0);
    let err = c.stop(me.controller_address, &stop).await.unwrap_err();
    assert_eq!(api_kind(&err), (404, "NotFound"));
    a.daemon.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn state_and_presence_reflect_the_node() {
    let clock = VirtualClock::new(42_000);
    let a = single("a", &clock, 50.0).await;
    let me = a.daemon.node_ref();
    let c = client();

    let idle = c.state(me.service_address).await.unwrap();
    assert_eq!(idle.node_id, "a");
    assert_eq!(idle.battery_pct, 50.0);
    assert_eq!(idle.workloads, 0);
    assert_eq!(idle.timestamp_ms, 42_000);
    assert!((0.0..=100.0).contains(&idle.mem_pct));

    let presence = c.presence(me.service_address, Duration::from_secs(1)).await.unwrap();
    assert!(presence.alive);
    assert_eq!(presence.controller_address, me.controller_address);
    assert!(presence.exec_status.is_empty());

    c.start(me.controller_address, &start_req(me.service_address)).await.unwrap();
    let busy = c.state(me.service_address).await.unwrap();
    assert!(busy.cpu_pct > idle.cpu_pct);
    let presence = c.presence(me.service_address, Duration::from_secs(1)).await.unwrap();
    assert_eq!(presence.exec_status, vec![format!("{IMAGE}@{}", me.service_address)]);
    a.daemon.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn sensor_pull_distinguishes_missing_and_unknown() {
    let clock = VirtualClock::new(5);
    let a = single("a", &clock, 90.0).await;
    let svc = a.daemon.node_ref().service_address;
    let c = client();

    assert_eq!(api_kind(&c.sensor(svc, "camera").await.unwrap_err()), (409, "NoSampleYet"));
    assert_eq!(api_kind(&c.sensor(svc, "radar").await.unwrap_err()), (404, "UnknownSensor"));
    a.daemon.sample_sensor("camera").await.unwrap();
    clock.advance(100);
    a.daemon.sample_sensor("camera").await.unwrap();
    let sample = c.sensor(svc, "camera").await.unwrap();
    assert_eq!((sample.seq, sample.timestamp_ms, sample.payload_bytes), (2, 105, 25000));
    assert!(a.daemon.sample_sensor("radar").await.is_err());
    a.daemon.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn subscriptions_deduplicate_and_deliver_in_order() {
    let clock = VirtualClock::new(0);
    let a = single("a", &clock, 90.0).await;
    let svc = a.daemon.node_ref().service_address;
    let rx = receiver().await;
    let c = client();

    let first = c.subscribe(svc, "camera", &rx.url).await.unwrap();
    let second = c.subscribe(svc, "camera", &rx.url).await.unwrap();
    assert_eq!(first.subscription_id, second.subscription_id);
    assert_eq!(a.daemon.subscriber_count("camera"), 1);

    for _ in 0..5 {
        a.daemon.sample_sensor("camera").await.unwrap();
        clock.advance(100);
    }
    assert_eq!(*rx.seqs.lock().unwrap(), vec![1, 2, 3, 4, 5]);

    c.unsubscribe(svc, &first.subscription_id).await.unwrap();
    a.daemon.sample_sensor("camera").await.unwrap();
    assert_eq!(rx.seqs.lock().unwrap().len(), 5);
    let err = c.unsubscribe(svc, &first.subscription_id).await.unwrap_err();
    assert_eq!(api_kind(&err), (404, "UnknownSubscription"));

    let err = c.subscribe(svc, "radar", &rx.url).await.unwrap_err();
    assert_eq!(api_kind(&err), (404, "UnknownSensor"));
    let err = c.subscribe(svc, "camera", "not a url").await.unwrap_err();
    assert_eq!(api_kind(&err), (400, "BadRequest"));
    a.daemon.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn actuators_keep_separate_logs() {
    let clock = VirtualClock::new(7);
    let a = single("a", &clock, 90.0).await;
    let svc = a.daemon.node_ref().service_address;
    let c = client();
    let req = |cmd: &str| ActuateRequest {
        command: cmd.into(),
        workload_id: "manual".into(),
        sample_seq: None,
        sample_timestamp_ms: None,
    };

    let reply = c.actuate(svc, "deterrent", &req("deter")).await.unwrap();
    assert_eq!(reply.completed_at, 7);
    c.actuate(svc, "siren", &req("wail")).await.unwrap();
    c.actuate(svc, "siren", &req("wail")).await.unwrap();
    assert_eq!(c.actuations(svc, "deterrent").await.unwrap().len(), 1);
    let siren = c.actuations(svc, "siren").await.unwrap();
    assert_eq!(siren.len(), 2);
    assert!(siren.iter().all(|r| r.command == "wail" && r.actuator_id == "siren"));

    let err = c.actuate(svc, "sprinkler", &req("spray")).await.unwrap_err();
    assert_eq!(api_kind(&err), (404, "UnknownActuator"));
    a.daemon.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn policy_offloads_and_repatriates_over_http() {
    let clock = VirtualClock::new(0);
    let nodes = loopback_cluster(&clock, &[40.0, 90.0]).await;
    let (a, b) = (&nodes[0], &nodes[1]);

    let events = a.daemon.policy_once().await;
    assert!(events.contains(&PolicyEvent::Offload {
        destination: "rpi2".into()
    }));
    assert!(a.daemon.policy_flags().remote);
    assert_eq!(b.daemon.handles().len(), 1);
    assert!(a.daemon.handles().is_empty());

    let deliveries = a.daemon.sample_sensor("camera").await.unwrap();
    assert!(deliveries[0].accepted);
    assert!(eventually(Duration::from_secs(2), || a.daemon.actuation_log("deterrent").len() == 1).await);
    assert!(b.daemon.actuation_log("deterrent").is_empty());

    a.battery.set_pct(65.0);
    let events = a.daemon.policy_once().await;
    assert!(events.contains(&PolicyEvent::Repatriate { from: "rpi2".into() }));
    assert!(b.daemon.handles().is_empty());
    assert_eq!(a.daemon.handles().len(), 1);
    let flags = a.daemon.policy_flags();
    assert!(flags.local && !flags.remote);
    for n in nodes {
        n.daemon.shutdown().await;
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn lost_host_falls_back_to_local_execution() {
    let clock = VirtualClock::new(0);
    let mut nodes = loopback_cluster(&clock, &[40.0, 90.0]).await;
    nodes[0].daemon.policy_once().await;
    assert_eq!(nodes[1].daemon.handles().len(), 1);

    let b = nodes.pop().unwrap();
    b.daemon.shutdown().await;
    let a = nodes.pop().unwrap();
    clock.advance(500);
    a.daemon.sample_sensor("camera").await.unwrap();
    assert!(a.daemon.policy_once().await.is_empty(), "still inside the remote timeout");

    clock.advance(1_000);
    let events = a.daemon.policy_once().await;
    assert!(events.contains(&PolicyEvent::RemoteLost { from: "rpi2".into() }));
    assert!(a.daemon.policy_flags().is_idle());
    let events = a.daemon.policy_once().await;
    assert!(events.contains(&PolicyEvent::Fallback));
    assert_eq!(a.daemon.handles().len(), 1);
    a.daemon.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn heartbeats_populate_the_registry() {
    let clock = VirtualClock::new(10_000);
    let nodes = loopback_cluster(&clock, &[90.0, 90.0, 90.0]).await;
    for n in &nodes {
        assert_eq!(n.daemon.heartbeat_once().await, 2);
    }
    let live: Vec<String> = nodes[0].daemon.live_peers().into_iter().map(|n| n.node_id).collect();
    assert_eq!(live, vec!["rpi2", "rpi3"]);

    let entries = client()
        .registry(nodes[0].daemon.node_ref().controller_address)
        .await
        .unwrap();
    assert_eq!(entries.len(), 2);
    clock.advance(601);
    assert!(nodes[0].daemon.live_peers().is_empty());
    for n in nodes {
        n.daemon.shutdown().await;
    }
}

#[test]
fn config_rejects_inconsistent_files() {
    let mut bad = config_json("a", "127.0.0.1", 0, json!({ "kind": "endpoints", "endpoints": [] }));
    bad["owned_workload"]["sensor_id"] = json!("radar");
    assert!(matches!(NodeConfig::from_json(&bad.to_string()), Err(NodeError::ConfigInvalid(m)) if m.contains("radar")));

    let mut bad = config_json("a", "127.0.0.1", 0, json!({ "kind": "endpoints", "endpoints": [] }));
    bad["policy"]["alpha"] = json!(80.0);
    assert!(NodeConfig::from_json(&bad.to_string()).is_err());

    assert!(NodeConfig::from_json("{").is_err());
    assert!(NodeConfig::load(std::path::Path::new("/nonexistent/node.json")).is_err());
}

#[tokio::test(flavor = "multi_thread")]
async fn subprocess_runtime_runs_workers_as_child_processes() {
    use edgemesh::node::SubprocessRuntime;
    use std::sync::Arc;

    let clock = VirtualClock::new(0);
    let battery = Arc::new(edgemesh::node::VirtualBattery::with_pct(90.0));
    let runtime = Arc::new(SubprocessRuntime::new(env!("CARGO_BIN_EXE_edgemesh").into()));
    let cfg = config(config_json("sub", "127.0.0.1", 0, json!({ "kind": "endpoints", "endpoints": [] })));
    let daemon = edgemesh::node::NodeDaemon::start_with(cfg, Arc::new(clock.clone()), battery, runtime)
        .await
        .unwrap();
    let me = daemon.node_ref();
    let c = client();

    let handle = c.start(me.controller_address, &start_req(me.service_address)).await.unwrap();
    assert!(handle.callback.starts_with("http://127.0.0.1:"));
    let deliveries = daemon.sample_sensor("camera").await.unwrap();
    assert!(deliveries[0].accepted);
    assert!(eventually(Duration::from_secs(5), || daemon.actuation_log("deterrent").len() == 1).await);
    assert_eq!(daemon.actuation_log("deterrent")[0].workload_id, handle.runtime_id);

    let stop = StopRequest {
        image_ref: IMAGE.into(),
        source_service: me.service_address,
    };
    c.stop(me.controller_address, &stop).await.unwrap();
    let gone = reqwest::Client::new().post(&handle.callback).json(&json!({})).send().await;
    assert!(gone.is_err(), "worker process still answering");
    daemon.shutdown().await;
}
