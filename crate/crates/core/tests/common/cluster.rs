//! Loopback daemons with virtual batteries and a shared virtual clock.

use std::net::{SocketAddr, TcpListener};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::routing::post;
use axum::{Json, Router};
use edgemesh::clock::{SharedClock, VirtualClock};
use edgemesh::node::api::{DeliveryAck, Sample};
use edgemesh::node::{InprocRuntime, NodeConfig, NodeDaemon, VirtualBattery};
use serde_json::{json, Value};

pub const IMAGE: &str = "bird-deterrent:1.0";

pub fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

/// A node owning a `camera` sensor, a `deterrent` and a `siren` actuator and
/// the bird-deterrent workload.
pub fn config_json(id: &str, ip: &str, service_port: u16, peers: Value) -> Value {
    json!({
        "node_id": id,
        "controller_bind": format!("{ip}:0"),
        "service_bind": format!("{ip}:{service_port}"),
        "policy": { "alpha": 50.0, "beta": 60.0, "gamma": 70.0, "loop_period_ms": 200, "remote_timeout_ms": 1000 },
        "discovery": { "heartbeat_interval_ms": 200, "probe_timeout_ms": 150 },
        "peers": peers,
        "adapters": {
            "energy": { "kind": "virtual", "capacity": 100.0, "initial_charge": 100.0 },
            "runtime": { "kind": "inproc" }
        },
        "sensors": [ { "id": "camera", "period_ms": 100, "payload_bytes": 25000 } ],
        "actuators": [ { "id": "deterrent" }, { "id": "siren" } ],
        "workloads": { IMAGE: { "service_time_ms": 40 } },
        "owned_workload": { "image_ref": IMAGE, "sensor_id": "camera", "actuator_id": "deterrent" },
        "request_timeout_ms": 1000
    })
}

pub fn config(value: Value) -> NodeConfig {
    NodeConfig::from_json(&value.to_string()).unwrap()
}

pub struct TestNode {
    pub daemon: NodeDaemon,
    pub battery: Arc<VirtualBattery>,
}

pub async fn spawn(config: NodeConfig, clock: &VirtualClock, pct: f64) -> TestNode {
    let battery = Arc::new(VirtualBattery::with_pct(pct));
    let shared: SharedClock = Arc::new(clock.clone());
    let daemon = NodeDaemon::start_with(config, shared, battery.clone(), Arc::new(InprocRuntime::default()))
        .await
        .unwrap();
    TestNode { daemon, battery }
}

/// A standalone node on 127.0.0.1 that knows no peers.
pub async fn single(id: &str, clock: &VirtualClock, pct: f64) -> TestNode {
    spawn(config(config_json(id, "127.0.0.1", 0, json!({ "kind": "endpoints", "endpoints": [] }))), clock, pct).await
}

/// Nodes on 127.0.0.1, 127.0.0.2, ... sharing one service port and scanning
/// the enclosing /29.
pub async fn loopback_cluster(clock: &VirtualClock, pcts: &[f64]) -> Vec<TestNode> {
    assert!(pcts.len() <= 6);
    'attempt: for _ in 0..10 {
        let port = free_port();
        let mut nodes = Vec::new();
        for (i, pct) in pcts.iter().enumerate() {
            let ip = format!("127.0.0.{}", i + 1);
            let peers = json!({ "kind": "subnet", "interface": ip, "netmask": "255.255.255.248", "service_port": port });
            let battery = Arc::new(VirtualBattery::with_pct(*pct));
            let shared: SharedClock = Arc::new(clock.clone());
            let started = NodeDaemon::start_with(
                config(config_json(&format!("rpi{}", i + 1), &ip, port, peers)),
                shared,
                battery.clone(),
                Arc::new(InprocRuntime::default()),
            )
            .await;
            match started {
                Ok(daemon) => nodes.push(TestNode { daemon, battery }),
                Err(_) => {
                    for n in nodes {
                        n.daemon.shutdown().await;
                    }
                    continue 'attempt;
                }
            }
        }
        return nodes;
    }
    panic!("no free service port on the loopback range");
}

/// An HTTP endpoint that records the sequence numbers pushed to it.
pub struct Receiver {
    pub url: String,
    pub seqs: Arc<Mutex<Vec<u64>>>,
}

pub async fn receiver() -> Receiver {
    let seqs = Arc::new(Mutex::new(Vec::new()));
    let store = seqs.clone();
    let app = Router::new().route(
        "/sample",
        post(move |Json(s): Json<Sample>| {
            let store = store.clone();
            async move {
                store.lock().unwrap().push(s.seq);
                Json(DeliveryAck { accepted: true })
            }
        }),
    );
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr: SocketAddr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        let _ = axum::serve(listener, app).await;
    });
    Receiver {
        url: format!("http://{addr}/sample"),
        seqs,
    }
}

/// Polls `cond` every 10 ms for up to `limit`.
pub async fn eventually(limit: Duration, mut cond: impl FnMut() -> bool) -> bool {
    let deadline = tokio::time::Instant::now() + limit;
    while tokio::time::Instant::now() < deadline {
        if cond() {
            return true;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    cond()
}
