use std::collections::{BTreeMap, HashMap};
use std::net::{IpAddr, SocketAddr};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use futures::future::join_all;
use tokio::net::TcpListener;
use tokio::runtime::Handle;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;
use tokio::time::MissedTickBehavior;

use super::api::*;
use super::client::{ClientError, NodeClient};
use super::config::{EnergyAdapterConfig, NodeConfig, RuntimeAdapterConfig, SensorConfig};
use super::energy::{EnergySource, FileProbe, VirtualBattery};
use super::runtime::{EngineRuntime, InprocRuntime, SubprocessRuntime, WorkerSpec, WorkloadRuntime};
use super::server::{controller_router, service_router};
use super::NodeError;
use crate::clock::SharedClock;
use crate::discovery::{
    assemble_scan, OffloadOutcome, PresenceReply, PresenceReport, Registry,
};
use crate::model::{EnergyState, LoadState, NodeRef};
use crate::policy::{
    EnergyAwarePolicy, EnvError, ExecutionFlags, PolicyEnv, PolicyEvent, RemoteExecStatus, ResourcePolicy,
};

/// Sensor a remote start reads when the request names none.
pub const DEFAULT_SENSOR: &str = "camera";
/// Actuator a remote start drives when the request names none.
pub const DEFAULT_ACTUATOR: &str = "deterrent";

#[derive(Debug)]
struct SensorState {
    config: SensorConfig,
    latest: Option<Sample>,
    /// Subscription id to callback URL.
    subscribers: BTreeMap<String, String>,
}

#[derive(Debug)]
pub(crate) struct Sensors {
    by_id: BTreeMap<String, SensorState>,
    next_subscription: u64,
    owner: HashMap<String, String>,
}

impl Sensors {
    fn new(configs: &[SensorConfig]) -> Self {
        let by_id = configs
            .iter()
            .map(|c| {
                (
                    c.id.clone(),
                    SensorState {
                        config: c.clone(),
                        latest: None,
                        subscribers: BTreeMap::new(),
                    },
                )
            })
            .collect();
        Self {
            by_id,
            next_subscription: 0,
            owner: HashMap::new(),
        }
    }

    fn get(&self, id: &str) -> Result<&SensorState, ApiError> {
        self.by_id.get(id).ok_or_else(|| ApiError::UnknownSensor(id.to_string()))
    }

    pub(crate) fn latest(&self, id: &str) -> Result<Sample, ApiError> {
        self.get(id)?
            .latest
            .clone()
            .ok_or_else(|| ApiError::NoSampleYet(id.to_string()))
    }

    /// Returns the existing subscription when `callback` already listens to `id`.
    pub(crate) fn subscribe(&mut self, id: &str, callback: &str) -> Result<String, ApiError> {
        self.get(id)?;
        let sensor = self.by_id.get_mut(id).expect("checked above");
        if let Some((sub, _)) = sensor.subscribers.iter().find(|(_, cb)| *cb == callback) {
            return Ok(sub.clone());
        }
        self.next_subscription += 1;
        let sub = format!("sub-{}", self.next_subscription);
        sensor.subscribers.insert(sub.clone(), callback.to_string());
        self.owner.insert(sub.clone(), id.to_string());
        Ok(sub)
    }

    pub(crate) fn unsubscribe(&mut self, subscription: &str) -> Result<(), ApiError> {
        let sensor = self
            .owner
            .remove(subscription)
            .ok_or_else(|| ApiError::UnknownSubscription(subscription.to_string()))?;
        if let Some(s) = self.by_id.get_mut(&sensor) {
            s.subscribers.remove(subscription);
        }
        Ok(())
    }

    fn next_sample(&mut self, id: &str, now: u64) -> Result<(Sample, Vec<(String, String)>), ApiError> {
        let sensor = self
            .by_id
            .get_mut(id)
            .ok_or_else(|| ApiError::UnknownSensor(id.to_string()))?;
        let seq = sensor.latest.as_ref().map_or(1, |s| s.seq + 1);
        let sample = Sample {
            sensor_id: id.to_string(),
            seq,
            timestamp_ms: now,
            payload_bytes: sensor.config.payload_bytes,
        };
        sensor.latest = Some(sample.clone());
        let subs = sensor
            .subscribers
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Ok((sample, subs))
    }

    fn subscriber_count(&self, id: &str) -> usize {
        self.by_id.get(id).map_or(0, |s| s.subscribers.len())
    }
}

/// Result of pushing one sample to one subscriber.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub subscription_id: String,
    pub delivered: bool,
    /// Whether the workload took the sample rather than dropping it as busy.
    pub accepted: bool,
}

/// State shared by the handlers and the periodic tasks of one daemon.
#[derive(Debug)]
pub(crate) struct Shared {
    pub config: NodeConfig,
    pub me: NodeRef,
    pub clock: SharedClock,
    pub energy: Arc<dyn EnergySource>,
    pub runtime: Arc<dyn WorkloadRuntime>,
    pub client: NodeClient,
    /// Serializes starts and stops so admission sees a consistent table.
    ops: tokio::sync::Mutex<()>,
    pub handles: Mutex<BTreeMap<(String, SocketAddr), WorkloadHandle>>,
    pub registry: Mutex<Registry>,
    pub sensors: Mutex<Sensors>,
    pub actuations: Mutex<BTreeMap<String, Vec<ActuationRecord>>>,
    /// Last sign of life from wherever this node's workload runs.
    pub contact: Mutex<RemoteExecStatus>,
    policy: Mutex<Option<EnergyAwarePolicy>>,
    flags: Mutex<ExecutionFlags>,
    policy_log: Mutex<Vec<(u64, PolicyEvent)>>,
    next_workload: AtomicU64,
}

impl Shared {
    pub(crate) fn node_state(&self) -> NodeState {
        let workloads = self.handles.lock().unwrap().len();
        NodeState {
            node_id: self.me.node_id.clone(),
            battery_pct: self.energy.battery_pct(),
            cpu_pct: self.config.cpu.utilization(true, workloads),
            mem_pct: host_memory_pct(),
            location: self.config.location.clone(),
            bandwidth: self.config.bandwidth,
            workloads,
            timestamp_ms: self.clock.now_ms(),
        }
    }

    fn exec_status(&self) -> Vec<String> {
        self.handles.lock().unwrap().values().map(WorkloadHandle::descriptor).collect()
    }

    pub(crate) fn presence(&self) -> PresenceReply {
        PresenceReply {
            alive: true,
            node_id: self.me.node_id.clone(),
            controller_address: self.me.controller_address,
            service_address: self.me.service_address,
            exec_status: self.exec_status(),
        }
    }

    pub(crate) fn record_actuation(&self, actuator: &str, req: ActuateRequest) -> Result<ActuateReply, ApiError> {
        let now = self.clock.now_ms();
        let mut logs = self.actuations.lock().unwrap();
        let log = logs
            .get_mut(actuator)
            .ok_or_else(|| ApiError::UnknownActuator(actuator.to_string()))?;
        log.push(ActuationRecord {
            actuator_id: actuator.to_string(),
            command: req.command,
            workload_id: req.workload_id,
            sample_seq: req.sample_seq,
            sample_timestamp_ms: req.sample_timestamp_ms,
            received_at: now,
        });
        drop(logs);
        self.contact.lock().unwrap().touch(now);
        Ok(ActuateReply { completed_at: now })
    }

    async fn subscribe_at(&self, source: SocketAddr, sensor: &str, callback: &str) -> Result<String, String> {
        if source == self.me.service_address {
            return self
                .sensors
                .lock()
                .unwrap()
                .subscribe(sensor, callback)
                .map_err(|e| e.to_string());
        }
        self.client
            .subscribe(source, sensor, callback)
            .await
            .map(|r| r.subscription_id)
            .map_err(|e| e.to_string())
    }

    async fn unsubscribe_at(&self, source: SocketAddr, subscription: &str) {
        let result = if source == self.me.service_address {
            self.sensors
                .lock()
                .unwrap()
                .unsubscribe(subscription)
                .map_err(|e| e.to_string())
        } else {
            self.client.unsubscribe(source, subscription).await.map_err(|e| e.to_string())
        };
        if let Err(e) = result {
            tracing::warn!(%source, subscription, error = %e, "unsubscribe failed");
        }
    }

    pub(crate) async fn start_workload(&self, req: StartRequest) -> Result<WorkloadHandle, ApiError> {
        let _guard = self.ops.lock().await;
        let key = (req.image_ref.clone(), req.source_service);
        if let Some(existing) = self.handles.lock().unwrap().get(&key) {
            return Ok(existing.clone());
        }
        if req.source_service != self.me.service_address {
            let pct = self.energy.battery_pct();
            let gamma = self.config.policy.gamma;
            if pct <= gamma {
                return Err(ApiError::Refused(format!("battery {pct:.1}% is not above {gamma}%")));
            }
            let hosted = self.handles.lock().unwrap().len();
            if hosted >= self.config.max_workloads {
                return Err(ApiError::Refused(format!("already hosting {hosted} workloads")));
            }
        }
        let sensor_id = req.sensor_id.clone().unwrap_or_else(|| DEFAULT_SENSOR.into());
        let actuator_id = req.actuator_id.clone().unwrap_or_else(|| DEFAULT_ACTUATOR.into());
        let n = self.next_workload.fetch_add(1, Ordering::Relaxed) + 1;
        let spec = WorkerSpec {
            workload_id: format!("{}-w{n}", self.me.node_id),
            image_ref: req.image_ref.clone(),
            source_service: req.source_service,
            sensor_id: sensor_id.clone(),
            actuator_id,
            service_time_ms: self.config.service_time_ms(&req.image_ref),
            bind_ip: self.me.controller_address.ip(),
        };
        let launched = self
            .runtime
            .launch(spec)
            .await
            .map_err(|e| ApiError::RuntimeFailure(e.to_string()))?;
        let subscription_id = match self.subscribe_at(req.source_service, &sensor_id, &launched.callback).await {
            Ok(id) => id,
            Err(e) => {
                let _ = self.runtime.stop(&launched.runtime_id).await;
                return Err(ApiError::RuntimeFailure(format!("subscribing at the source failed: {e}")));
            }
        };
        let handle = WorkloadHandle {
            image_ref: req.image_ref,
            source_service_address: req.source_service,
            runtime_id: launched.runtime_id,
            started_at: self.clock.now_ms(),
            callback: launched.callback,
            subscription_id,
        };
        tracing::info!(workload = %handle.runtime_id, source = %handle.source_service_address, "workload started");
        self.handles.lock().unwrap().insert(key, handle.clone());
        Ok(handle)
    }

    pub(crate) async fn stop_workload(&self, req: &StopRequest) -> Result<(), ApiError> {
        let _guard = self.ops.lock().await;
        let handle = self
            .handles
            .lock()
            .unwrap()
            .remove(&(req.image_ref.clone(), req.source_service))
            .ok_or_else(|| ApiError::NotFound(format!("{}@{}", req.image_ref, req.source_service)))?;
        self.unsubscribe_at(handle.source_service_address, &handle.subscription_id)
            .await;
        if let Err(e) = self.runtime.stop(&handle.runtime_id).await {
            tracing::warn!(workload = %handle.runtime_id, error = %e, "runtime stop failed");
        }
        tracing::info!(workload = %handle.runtime_id, "workload stopped");
        Ok(())
    }

    async fn stop_all(&self) {
        let all: Vec<StopRequest> = self
            .handles
            .lock()
            .unwrap()
            .keys()
            .map(|(image_ref, source_service)| StopRequest {
                image_ref: image_ref.clone(),
                source_service: *source_service,
            })
            .collect();
        for req in all {
            let _ = self.stop_workload(&req).await;
        }
    }

    async fn deliver(&self, callback: &str, sample: &Sample) -> Option<DeliveryAck> {
        for _ in 0..2 {
            let sent = self.client.http().post(callback).json(sample).send().await;
            if let Ok(resp) = sent {
                if resp.status().is_success() {
                    return Some(resp.json().await.unwrap_or(DeliveryAck { accepted: true }));
                }
            }
        }
        None
    }

    pub(crate) async fn sample_sensor(&self, sensor: &str) -> Result<Vec<Delivery>, ApiError> {
        let now = self.clock.now_ms();
        let (sample, subscribers) = self.sensors.lock().unwrap().next_sample(sensor, now)?;
        let mut out = Vec::with_capacity(subscribers.len());
        for (subscription_id, callback) in subscribers {
            let ack = self.deliver(&callback, &sample).await;
            if ack.is_some() {
                self.contact.lock().unwrap().touch(self.clock.now_ms());
            } else {
                tracing::debug!(subscription = %subscription_id, seq = sample.seq, "sample dropped after retry");
            }
            out.push(Delivery {
                subscription_id,
                delivered: ack.is_some(),
                accepted: ack.is_some_and(|a| a.accepted),
            });
        }
        Ok(out)
    }

    pub(crate) async fn discover(&self) -> Vec<NodeRef> {
        let space = self.config.address_space(self.me.service_address);
        let timeout = self.config.discovery.probe_timeout();
        let replies = join_all(
            space
                .candidates()
                .iter()
                .map(|c| async move { self.client.presence(*c, timeout).await.ok() }),
        )
        .await;
        let now = self.clock.now_ms();
        {
            let mut registry = self.registry.lock().unwrap();
            for reply in replies.iter().flatten().filter(|r| r.alive) {
                let _ = registry.ingest(PresenceReport {
                    node_id: reply.node_id.clone(),
                    controller_address: reply.controller_address,
                    service_address: reply.service_address,
                    timestamp_ms: now,
                    exec_status: reply.exec_status.clone(),
                });
            }
        }
        assemble_scan(&self.me, &space, replies)
    }

    pub(crate) async fn heartbeat(&self) -> usize {
        let report = PresenceReport {
            node_id: self.me.node_id.clone(),
            controller_address: self.me.controller_address,
            service_address: self.me.service_address,
            timestamp_ms: self.clock.now_ms(),
            exec_status: self.exec_status(),
        };
        let space = self.config.address_space(self.me.service_address);
        let timeout = self.config.discovery.probe_timeout();
        let results = join_all(
            space
                .candidates()
                .iter()
                .map(|c| self.client.report_presence(*c, &report, timeout)),
        )
        .await;
        results.iter().filter(|r| r.is_ok()).count()
    }

    fn load(&self) -> LoadState {
        let handles = self.handles.lock().unwrap();
        let local = handles
            .keys()
            .filter(|(_, source)| *source == self.me.service_address)
            .count();
        LoadState {
            hosted_count: handles.len() as u32,
            locally_initiated_count: local as u32,
        }
    }

    /// One policy iteration; blocks on HTTP calls, so run it off the runtime.
    fn policy_iteration(self: &Arc<Self>, rt: Handle) -> Vec<PolicyEvent> {
        let Some(mut policy) = self.policy.lock().unwrap().take() else {
            return Vec::new();
        };
        let pct = self.energy.battery_pct();
        let mut env = HttpEnv {
            shared: self.clone(),
            rt,
        };
        let events = policy.iterate(pct, &mut env);
        let now = self.clock.now_ms();
        *self.flags.lock().unwrap() = policy.flags().clone();
        *self.policy.lock().unwrap() = Some(policy);
        let mut log = self.policy_log.lock().unwrap();
        for event in &events {
            if !matches!(event, PolicyEvent::Scan { .. }) {
                tracing::info!(node = %self.me.node_id, battery_pct = pct, event = ?event, "policy");
            }
            log.push((now, event.clone()));
        }
        events
    }
}

fn host_memory_pct() -> f64 {
    let Ok(info) = std::fs::read_to_string("/proc/meminfo") else {
        return 0.0;
    };
    let field = |name: &str| {
        info.lines()
            .find(|l| l.starts_with(name))
            .and_then(|l| l.split_whitespace().nth(1))
            .and_then(|v| v.parse::<f64>().ok())
    };
    match (field("MemTotal:"), field("MemAvailable:")) {
        (Some(total), Some(avail)) if total > 0.0 => (100.0 * (1.0 - avail / total)).clamp(0.0, 100.0),
        _ => 0.0,
    }
}

/// The policy's view of the cluster through the HTTP APIs.
struct HttpEnv {
    shared: Arc<Shared>,
    rt: Handle,
}

fn env_error(node: &NodeRef, e: ClientError) -> EnvError {
    match e {
        ClientError::Unreachable(..) => EnvError::PeerUnreachable(node.node_id.clone()),
        ClientError::Api { ref body, .. } if body.error == "Refused" => EnvError::Refused {
            node: node.node_id.clone(),
            reason: body.message.clone(),
        },
        other => EnvError::StartFailed {
            node: node.node_id.clone(),
            reason: other.to_string(),
        },
    }
}

impl PolicyEnv for HttpEnv {
    fn source(&self) -> &NodeRef {
        &self.shared.me
    }

    fn discover(&mut self) -> Vec<NodeRef> {
        self.rt.block_on(self.shared.discover())
    }

    fn battery_of(&mut self, peer: &NodeRef) -> Result<f64, EnvError> {
        self.rt
            .block_on(self.shared.client.state(peer.service_address))
            .map(|s| s.battery_pct)
            .map_err(|_| EnvError::PeerUnreachable(peer.node_id.clone()))
    }

    fn start(&mut self, host: &NodeRef, image_ref: &str) -> Result<(), EnvError> {
        let owned = self.shared.config.owned_workload.clone();
        let req = StartRequest {
            image_ref: image_ref.to_string(),
            source_service: self.shared.me.service_address,
            sensor_id: owned.as_ref().map(|o| o.sensor_id.clone()),
            actuator_id: owned.as_ref().map(|o| o.actuator_id.clone()),
        };
        if host.node_id == self.shared.me.node_id {
            return self
                .rt
                .block_on(self.shared.start_workload(req))
                .map(|_| ())
                .map_err(|e| EnvError::StartFailed {
                    node: host.node_id.clone(),
                    reason: e.to_string(),
                });
        }
        let began = self.shared.clock.now_ms();
        let result = self.rt.block_on(self.shared.client.start(host.controller_address, &req));
        let now = self.shared.clock.now_ms();
        self.shared.registry.lock().unwrap().record_outcome(
            &host.node_id,
            OffloadOutcome {
                success: result.is_ok(),
                duration_ms: now.saturating_sub(began),
                at_ms: now,
            },
        );
        match result {
            Ok(_) => {
                *self.shared.contact.lock().unwrap() = RemoteExecStatus::new(now);
                Ok(())
            }
            Err(e) => Err(env_error(host, e)),
        }
    }

    fn stop(&mut self, host: &NodeRef, image_ref: &str) -> Result<(), EnvError> {
        let req = StopRequest {
            image_ref: image_ref.to_string(),
            source_service: self.shared.me.service_address,
        };
        let result = if host.node_id == self.shared.me.node_id {
            self.rt
                .block_on(self.shared.stop_workload(&req))
                .map_err(|e| EnvError::StopFailed {
                    node: host.node_id.clone(),
                    reason: e.to_string(),
                })
        } else {
            self.rt
                .block_on(self.shared.client.stop(host.controller_address, &req))
                .map_err(|e| match env_error(host, e) {
                    EnvError::StartFailed { node, reason } | EnvError::Refused { node, reason } => {
                        EnvError::StopFailed { node, reason }
                    }
                    other => other,
                })
        };
        result
    }

    fn remote_healthy(&mut self) -> bool {
        let timeout = self.shared.config.policy.remote_timeout();
        let now = self.shared.clock.now_ms();
        self.shared.contact.lock().unwrap().refresh(timeout, now)
    }
}

struct Server {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    task: Option<JoinHandle<()>>,
}

impl Server {
    async fn spawn(bind: SocketAddr, app: axum::Router) -> std::io::Result<Self> {
        let listener = TcpListener::bind(bind).await?;
        let addr = listener.local_addr()?;
        let (tx, rx) = oneshot::channel();
        let task = tokio::spawn(async move {
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
        Ok(Self {
            addr,
            shutdown: Some(tx),
            task: Some(task),
        })
    }

    async fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(task) = self.task.take() {
            let abort = task.abort_handle();
            if tokio::time::timeout(Duration::from_secs(2), task).await.is_err() {
                abort.abort();
            }
        }
    }
}

fn advertised(bound: SocketAddr, advertise: Option<IpAddr>) -> SocketAddr {
    match advertise {
        Some(ip) => SocketAddr::new(ip, bound.port()),
        None => bound,
    }
}

/// A running node: controller and service endpoints plus the periodic
/// sensor, heartbeat, energy and policy tasks.
pub struct NodeDaemon {
    shared: Arc<Shared>,
    controller: Server,
    service: Server,
    tasks: Vec<JoinHandle<()>>,
}

impl NodeDaemon {
    /// Binds both endpoints with the adapters named in `config`.
    pub async fn start(config: NodeConfig, clock: SharedClock) -> Result<Self, NodeError> {
        let energy: Arc<dyn EnergySource> = match &config.adapters.energy {
            EnergyAdapterConfig::Virtual {
                capacity,
                initial_charge,
                phi,
                varphi,
                solar,
                ..
            } => {
                let state = EnergyState::new(*initial_charge, *capacity, *phi, *varphi)
                    .map_err(|e| NodeError::ConfigInvalid(e.to_string()))?;
                Arc::new(VirtualBattery::new(state, solar.clone()))
            }
            EnergyAdapterConfig::Probe { path } => Arc::new(FileProbe::new(path)),
        };
        let runtime: Arc<dyn WorkloadRuntime> = match &config.adapters.runtime {
            RuntimeAdapterConfig::Inproc => Arc::new(InprocRuntime::default()),
            RuntimeAdapterConfig::Subprocess { program } => {
                let program = match program {
                    Some(p) => p.clone(),
                    None => std::env::current_exe()?,
                };
                Arc::new(SubprocessRuntime::new(program))
            }
            RuntimeAdapterConfig::Engine { command, extra_args } => {
                Arc::new(EngineRuntime::new(command.clone(), extra_args.clone()))
            }
        };
        Self::start_with(config, clock, energy, runtime).await
    }

    /// Like [`NodeDaemon::start`] with caller-supplied adapters.
    pub async fn start_with(
        config: NodeConfig,
        clock: SharedClock,
        energy: Arc<dyn EnergySource>,
        runtime: Arc<dyn WorkloadRuntime>,
    ) -> Result<Self, NodeError> {
        config.validate()?;
        let controller_listener = TcpListener::bind(config.controller_bind).await?;
        let service_listener = TcpListener::bind(config.service_bind).await?;
        let me = NodeRef::new(
            config.node_id.clone(),
            advertised(controller_listener.local_addr()?, config.advertise_ip),
            advertised(service_listener.local_addr()?, config.advertise_ip),
        )
        .map_err(|e| NodeError::ConfigInvalid(e.to_string()))?;
        drop((controller_listener, service_listener));

        let policy = config
            .owned_workload
            .as_ref()
            .map(|w| EnergyAwarePolicy::new(config.policy.clone(), w.image_ref.clone()));
        let actuations = config.actuators.iter().map(|a| (a.id.clone(), Vec::new())).collect();
        let shared = Arc::new(Shared {
            me: me.clone(),
            clock: clock.clone(),
            energy,
            runtime,
            client: NodeClient::new(Duration::from_millis(config.request_timeout_ms)),
            ops: tokio::sync::Mutex::new(()),
            handles: Mutex::new(BTreeMap::new()),
            registry: Mutex::new(Registry::new(config.discovery.liveness_window_ms())),
            sensors: Mutex::new(Sensors::new(&config.sensors)),
            actuations: Mutex::new(actuations),
            contact: Mutex::new(RemoteExecStatus::new(clock.now_ms())),
            policy: Mutex::new(policy),
            flags: Mutex::new(ExecutionFlags::default()),
            policy_log: Mutex::new(Vec::new()),
            next_workload: AtomicU64::new(0),
            config,
        });
        let bind_c = SocketAddr::new(shared.config.controller_bind.ip(), me.controller_address.port());
        let bind_s = SocketAddr::new(shared.config.service_bind.ip(), me.service_address.port());
        let controller = Server::spawn(bind_c, controller_router(shared.clone())).await?;
        let service = Server::spawn(bind_s, service_router(shared.clone())).await?;
        tracing::info!(node = %me.node_id, controller = %controller.addr, service = %service.addr, "node up");
        Ok(Self {
            shared,
            controller,
            service,
            tasks: Vec::new(),
        })
    }

    pub fn node_ref(&self) -> NodeRef {
        self.shared.me.clone()
    }

    pub fn config(&self) -> &NodeConfig {
        &self.shared.config
    }

    /// Starts the sensor samplers, heartbeat, energy ticks and policy loop on
    /// wall-clock intervals.
    pub fn spawn_periodic(&mut self) {
        let every = |ms: u64| {
            let mut iv = tokio::time::interval(Duration::from_millis(ms));
            iv.set_missed_tick_behavior(MissedTickBehavior::Skip);
            iv
        };
        for sensor in self.shared.config.sensors.clone() {
            let shared = self.shared.clone();
            self.tasks.push(tokio::spawn(async move {
                let mut iv = every(sensor.period_ms);
                loop {
                    iv.tick().await;
                    let _ = shared.sample_sensor(&sensor.id).await;
                }
            }));
        }
        let shared = self.shared.clone();
        self.tasks.push(tokio::spawn(async move {
            let mut iv = every(shared.config.discovery.heartbeat_interval_ms);
            loop {
                iv.tick().await;
                shared.heartbeat().await;
            }
        }));
        if let EnergyAdapterConfig::Virtual { slot_ms: Some(slot), .. } = shared_energy(&self.shared) {
            let shared = self.shared.clone();
            self.tasks.push(tokio::spawn(async move {
                let mut iv = every(slot);
                iv.tick().await;
                loop {
                    iv.tick().await;
                    shared.energy.advance_slot(shared.load());
                }
            }));
        }
        if self.shared.config.owned_workload.is_some() {
            let shared = self.shared.clone();
            self.tasks.push(tokio::spawn(async move {
                let mut iv = every(shared.config.policy.loop_period_ms);
                loop {
                    iv.tick().await;
                    let s = shared.clone();
                    let rt = Handle::current();
                    let _ = tokio::task::spawn_blocking(move || s.policy_iteration(rt)).await;
                }
            }));
        }
    }

    pub async fn heartbeat_once(&self) -> usize {
        self.shared.heartbeat().await
    }

    pub async fn sample_sensor(&self, sensor: &str) -> Result<Vec<Delivery>, ApiError> {
        self.shared.sample_sensor(sensor).await
    }

    pub async fn policy_once(&self) -> Vec<PolicyEvent> {
        let shared = self.shared.clone();
        let rt = Handle::current();
        tokio::task::spawn_blocking(move || shared.policy_iteration(rt))
            .await
            .unwrap_or_default()
    }

    pub async fn discover(&self) -> Vec<NodeRef> {
        self.shared.discover().await
    }

    /// Peers whose heartbeats are still within the liveness window.
    pub fn live_peers(&self) -> Vec<NodeRef> {
        let now = self.shared.clock.now_ms();
        self.shared.registry.lock().unwrap().live(now)
    }

    pub fn battery_pct(&self) -> f64 {
        self.shared.energy.battery_pct()
    }

    pub fn handles(&self) -> Vec<WorkloadHandle> {
        self.shared.handles.lock().unwrap().values().cloned().collect()
    }

    pub fn actuation_log(&self, actuator: &str) -> Vec<ActuationRecord> {
        self.shared
            .actuations
            .lock()
            .unwrap()
            .get(actuator)
            .cloned()
            .unwrap_or_default()
    }

    pub fn subscriber_count(&self, sensor: &str) -> usize {
        self.shared.sensors.lock().unwrap().subscriber_count(sensor)
    }

    pub fn policy_flags(&self) -> ExecutionFlags {
        self.shared.flags.lock().unwrap().clone()
    }

    pub fn policy_log(&self) -> Vec<(u64, PolicyEvent)> {
        self.shared.policy_log.lock().unwrap().clone()
    }

    pub fn last_contact(&self) -> u64 {
        self.shared.contact.lock().unwrap().last_contact
    }

    /// Takes the controller endpoint down while the service, the workloads
    /// and the periodic tasks keep running.
    pub async fn shutdown_controller(&mut self) {
        self.controller.stop().await;
    }

    /// Stops every task, workload and endpoint.
    pub async fn shutdown(mut self) {
        for task in self.tasks.drain(..) {
            task.abort();
        }
        self.shared.stop_all().await;
        self.controller.stop().await;
        self.service.stop().await;
        tracing::info!(node = %self.shared.me.node_id, "node down");
    }

    /// Runs the periodic tasks until SIGINT or SIGTERM, then shuts down.
    pub async fn run_until_ctrl_c(mut self) -> Result<(), NodeError> {
        self.spawn_periodic();
        #[cfg(unix)]
        {
            let mut term = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate())?;
            tokio::select! {
                r = tokio::signal::ctrl_c() => r?,
                _ = term.recv() => {}
            }
        }
        #[cfg(not(unix))]
        tokio::signal::ctrl_c().await?;
        self.shutdown().await;
        Ok(())
    }
}

fn shared_energy(shared: &Shared) -> EnergyAdapterConfig {
    shared.config.adapters.energy.clone()
}
