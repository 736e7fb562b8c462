//! Workload runtimes: where a started microservice actually executes.
//!
//! Every runtime ends up running the same worker contract. The worker listens
//! for pushed samples, drops a sample that arrives while it is still busy,
//! and after the service time sends one actuation command back to the source.

use std::collections::HashMap;
use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::Stdio;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::routing::post;
use axum::{Json, Router};
use futures::future::BoxFuture;
use thiserror::Error;
use tokio::io::{AsyncBufReadExt, BufReader};
use tokio::net::TcpListener;
use tokio::process::{Child, Command};
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use super::api::{ActuateRequest, DeliveryAck, Sample};
use super::client::NodeClient;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuntimeError {
    #[error("failed to launch {image}: {reason}")]
    Launch { image: String, reason: String },
    #[error("no running workload {0}")]
    Unknown(String),
    #[error("failed to stop {id}: {reason}")]
    Stop { id: String, reason: String },
}

/// Startup arguments handed to a workload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkerSpec {
    pub workload_id: String,
    pub image_ref: String,
    pub source_service: SocketAddr,
    pub sensor_id: String,
    pub actuator_id: String,
    pub service_time_ms: u64,
    /// Interface the worker listens on for pushed samples.
    pub bind_ip: IpAddr,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Launched {
    pub runtime_id: String,
    /// URL the source pushes samples to.
    pub callback: String,
}

pub trait WorkloadRuntime: Send + Sync + std::fmt::Debug {
    fn launch(&self, spec: WorkerSpec) -> BoxFuture<'_, Result<Launched, RuntimeError>>;
    fn stop<'a>(&'a self, runtime_id: &'a str) -> BoxFuture<'a, Result<(), RuntimeError>>;
}

/// Command a worker sends for every processed sample.
pub const DETER_COMMAND: &str = "deter";

#[derive(Debug)]
struct WorkerState {
    spec: WorkerSpec,
    busy: AtomicBool,
    stopped: AtomicBool,
    client: NodeClient,
}

async fn on_sample(State(state): State<Arc<WorkerState>>, Json(sample): Json<Sample>) -> Json<DeliveryAck> {
    if state.stopped.load(Ordering::SeqCst) || state.busy.swap(true, Ordering::SeqCst) {
        return Json(DeliveryAck { accepted: false });
    }
    let worker = state.clone();
    tokio::spawn(async move {
        tokio::time::sleep(Duration::from_millis(worker.spec.service_time_ms)).await;
        if !worker.stopped.load(Ordering::SeqCst) {
            let request = ActuateRequest {
                command: DETER_COMMAND.into(),
                workload_id: worker.spec.workload_id.clone(),
                sample_seq: Some(sample.seq),
                sample_timestamp_ms: Some(sample.timestamp_ms),
            };
            if let Err(e) = worker
                .client
                .actuate(worker.spec.source_service, &worker.spec.actuator_id, &request)
                .await
            {
                tracing::warn!(workload = %worker.spec.workload_id, error = %e, "actuation not delivered");
            }
        }
        worker.busy.store(false, Ordering::SeqCst);
    });
    Json(DeliveryAck { accepted: true })
}

/// A worker serving its sample endpoint on a tokio task.
#[derive(Debug)]
pub struct Worker {
    pub addr: SocketAddr,
    state: Arc<WorkerState>,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<()>,
}

impl Worker {
    pub async fn spawn(spec: WorkerSpec) -> std::io::Result<Self> {
        let listener = TcpListener::bind(SocketAddr::new(spec.bind_ip, 0)).await?;
        let addr = listener.local_addr()?;
        let state = Arc::new(WorkerState {
            spec,
            busy: AtomicBool::new(false),
            stopped: AtomicBool::new(false),
            client: NodeClient::new(Duration::from_secs(2)),
        });
        let app = Router::new().route("/sample", post(on_sample)).with_state(state.clone());
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
            state,
            shutdown: Some(tx),
            task,
        })
    }

    pub fn callback(&self) -> String {
        format!("http://{}/sample", self.addr)
    }

    pub async fn stop(mut self) {
        self.state.stopped.store(true, Ordering::SeqCst);
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        self.task.abort();
        let _ = self.task.await;
    }
}

/// Runs workers as tasks of the daemon itself.
#[derive(Debug, Default)]
pub struct InprocRuntime {
    workers: Mutex<HashMap<String, Worker>>,
}

impl WorkloadRuntime for InprocRuntime {
    fn launch(&self, spec: WorkerSpec) -> BoxFuture<'_, Result<Launched, RuntimeError>> {
        Box::pin(async move {
            let id = spec.workload_id.clone();
            let image = spec.image_ref.clone();
            let worker = Worker::spawn(spec).await.map_err(|e| RuntimeError::Launch {
                image,
                reason: e.to_string(),
            })?;
            let callback = worker.callback();
            self.workers.lock().unwrap().insert(id.clone(), worker);
            Ok(Launched {
                runtime_id: id,
                callback,
            })
        })
    }

    fn stop<'a>(&'a self, runtime_id: &'a str) -> BoxFuture<'a, Result<(), RuntimeError>> {
        Box::pin(async move {
            let worker = self
                .workers
                .lock()
                .unwrap()
                .remove(runtime_id)
                .ok_or_else(|| RuntimeError::Unknown(runtime_id.to_string()))?;
            worker.stop().await;
            Ok(())
        })
    }
}

/// First stdout line of a worker process.
pub const LISTENING_PREFIX: &str = "listening ";

/// Runs each worker as `<program> workload ...`.
#[derive(Debug)]
pub struct SubprocessRuntime {
    program: PathBuf,
    children: Mutex<HashMap<String, Child>>,
}

impl SubprocessRuntime {
    pub fn new(program: PathBuf) -> Self {
        Self {
            program,
            children: Mutex::new(HashMap::new()),
        }
    }

    pub fn worker_args(spec: &WorkerSpec) -> Vec<String> {
        vec![
            "workload".into(),
            "--workload-id".into(),
            spec.workload_id.clone(),
            "--image".into(),
            spec.image_ref.clone(),
            "--source".into(),
            spec.source_service.to_string(),
            "--sensor".into(),
            spec.sensor_id.clone(),
            "--actuator".into(),
            spec.actuator_id.clone(),
            "--service-time-ms".into(),
            spec.service_time_ms.to_string(),
            "--bind".into(),
            SocketAddr::new(spec.bind_ip, 0).to_string(),
        ]
    }
}

impl WorkloadRuntime for SubprocessRuntime {
    fn launch(&self, spec: WorkerSpec) -> BoxFuture<'_, Result<Launched, RuntimeError>> {
        Box::pin(async move {
            let fail = |reason: String| RuntimeError::Launch {
                image: spec.image_ref.clone(),
                reason,
            };
            let mut child = Command::new(&self.program)
                .args(Self::worker_args(&spec))
                .stdin(Stdio::null())
                .stdout(Stdio::piped())
                .stderr(Stdio::null())
                .kill_on_drop(true)
                .spawn()
                .map_err(|e| fail(e.to_string()))?;
            let stdout = child.stdout.take().expect("stdout is piped");
            let mut lines = BufReader::new(stdout).lines();
            let first = tokio::time::timeout(Duration::from_secs(10), lines.next_line()).await;
            let callback = match first {
                Ok(Ok(Some(line))) if line.starts_with(LISTENING_PREFIX) => line[LISTENING_PREFIX.len()..].trim().to_string(),
                other => {
                    let _ = child.kill().await;
                    return Err(fail(format!("worker did not announce its endpoint: {other:?}")));
                }
            };
            // keep draining so the child never blocks on a full pipe
            tokio::spawn(async move { while let Ok(Some(_)) = lines.next_line().await {} });
            let id = spec.workload_id.clone();
            self.children.lock().unwrap().insert(id.clone(), child);
            Ok(Launched {
                runtime_id: id,
                callback,
            })
        })
    }

    fn stop<'a>(&'a self, runtime_id: &'a str) -> BoxFuture<'a, Result<(), RuntimeError>> {
        Box::pin(async move {
            let mut child = self
                .children
                .lock()
                .unwrap()
                .remove(runtime_id)
                .ok_or_else(|| RuntimeError::Unknown(runtime_id.to_string()))?;
            child.kill().await.map_err(|e| RuntimeError::Stop {
                id: runtime_id.to_string(),
                reason: e.to_string(),
            })
        })
    }
}

/// Runs each worker as a container through an engine CLI such as docker or
/// podman. The image must run `edgemesh workload`, which reads its arguments
/// from the `EDGEMESH_*` environment variables set here.
#[derive(Debug)]
pub struct EngineRuntime {
    command: String,
    extra_args: Vec<String>,
    containers: Mutex<HashMap<String, String>>,
}

impl EngineRuntime {
    pub fn new(command: impl Into<String>, extra_args: Vec<String>) -> Self {
        Self {
            command: command.into(),
            extra_args,
            containers: Mutex::new(HashMap::new()),
        }
    }

    pub fn run_args(&self, spec: &WorkerSpec, port: u16) -> Vec<String> {
        let env = [
            ("EDGEMESH_WORKLOAD_ID", spec.workload_id.clone()),
            ("EDGEMESH_IMAGE", spec.image_ref.clone()),
            ("EDGEMESH_SOURCE", spec.source_service.to_string()),
            ("EDGEMESH_SENSOR", spec.sensor_id.clone()),
            ("EDGEMESH_ACTUATOR", spec.actuator_id.clone()),
            ("EDGEMESH_SERVICE_TIME_MS", spec.service_time_ms.to_string()),
            ("EDGEMESH_BIND", SocketAddr::new(spec.bind_ip, port).to_string()),
        ];
        let mut args: Vec<String> = ["run", "-d", "--rm", "--network", "host"].map(String::from).into();
        for (k, v) in env {
            args.push("-e".into());
            args.push(format!("{k}={v}"));
        }
        args.extend(self.extra_args.iter().cloned());
        args.push(spec.image_ref.clone());
        args
    }

    fn free_port(ip: IpAddr) -> std::io::Result<u16> {
        Ok(std::net::TcpListener::bind(SocketAddr::new(ip, 0))?.local_addr()?.port())
    }
}

impl WorkloadRuntime for EngineRuntime {
    fn launch(&self, spec: WorkerSpec) -> BoxFuture<'_, Result<Launched, RuntimeError>> {
        Box::pin(async move {
            let fail = |reason: String| RuntimeError::Launch {
                image: spec.image_ref.clone(),
                reason,
            };
            let port = Self::free_port(spec.bind_ip).map_err(|e| fail(e.to_string()))?;
            let out = Command::new(&self.command)
                .args(self.run_args(&spec, port))
                .output()
                .await
                .map_err(|e| fail(e.to_string()))?;
            if !out.status.success() {
                return Err(fail(String::from_utf8_lossy(&out.stderr).trim().to_string()));
            }
            let container = String::from_utf8_lossy(&out.stdout).trim().to_string();
            self.containers
                .lock()
                .unwrap()
                .insert(spec.workload_id.clone(), container);
            Ok(Launched {
                runtime_id: spec.workload_id.clone(),
                callback: format!("http://{}/sample", SocketAddr::new(spec.bind_ip, port)),
            })
        })
    }

    fn stop<'a>(&'a self, runtime_id: &'a str) -> BoxFuture<'a, Result<(), RuntimeError>> {
        Box::pin(async move {
            let container = self
                .containers
                .lock()
                .unwrap()
                .remove(runtime_id)
                .ok_or_else(|| RuntimeError::Unknown(runtime_id.to_string()))?;
            let out = Command::new(&self.command)
                .args(["stop", &container])
                .output()
                .await
                .map_err(|e| RuntimeError::Stop {
                    id: runtime_id.to_string(),
                    reason: e.to_string(),
                })?;
            if out.status.success() {
                Ok(())
            } else {
                Err(RuntimeError::Stop {
                    id: runtime_id.to_string(),
                    reason: String::from_utf8_lossy(&out.stderr).trim().to_string(),
                })
            }
        })
    }
}

/// Serves one worker until ctrl-c. Used by the `workload` subcommand, which
/// announces the sample endpoint on stdout.
pub async fn serve_worker(spec: WorkerSpec, bind_port: u16) -> std::io::Result<()> {
    let listener = TcpListener::bind(SocketAddr::new(spec.bind_ip, bind_port)).await?;
    let addr = listener.local_addr()?;
    let state = Arc::new(WorkerState {
        spec,
        busy: AtomicBool::new(false),
        stopped: AtomicBool::new(false),
        client: NodeClient::new(Duration::from_secs(2)),
    });
    let app = Router::new().route("/sample", post(on_sample)).with_state(state);
    println!("{LISTENING_PREFIX}http://{addr}/sample");
    use std::io::Write as _;
    std::io::stdout().flush()?;
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
