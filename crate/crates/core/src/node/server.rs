//! HTTP handlers of the controller and the service.

use std::sync::Arc;

use axum::extract::{Path, State};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde_json::{json, Value};

use super::api::*;
use super::daemon::Shared;
use crate::discovery::{PresenceReply, PresenceReport, RegistryEntry};

type Shd = State<Arc<Shared>>;

pub(crate) fn controller_router(shared: Arc<Shared>) -> Router {
    Router::new()
        .route("/container/start", post(start_container))
        .route("/container/stop", post(stop_container))
        .route("/registry", get(registry))
        .with_state(shared)
}

pub(crate) fn service_router(shared: Arc<Shared>) -> Router {
    Router::new()
        .route("/state", get(state))
        .route("/presence", get(presence).post(ingest_presence))
        .route("/sensor/{id}", get(sensor_pull))
        .route("/sensor/{id}/subscribe", post(subscribe))
        .route("/subscription/{id}", delete(unsubscribe))
        .route("/actuate/{id}", post(actuate).get(actuation_log))
        .with_state(shared)
}

async fn start_container(State(s): Shd, Json(req): Json<StartRequest>) -> Result<Json<WorkloadHandle>, ApiError> {
    s.start_workload(req).await.map(Json)
}

async fn stop_container(State(s): Shd, Json(req): Json<StopRequest>) -> Result<Json<Value>, ApiError> {
    s.stop_workload(&req).await?;
    Ok(Json(json!({ "stopped": req.image_ref })))
}

async fn registry(State(s): Shd) -> Json<Vec<RegistryEntry>> {
    let now = s.clock.now_ms();
    Json(s.registry.lock().unwrap().entries(now))
}

async fn state(State(s): Shd) -> Json<NodeState> {
    Json(s.node_state())
}

async fn presence(State(s): Shd) -> Json<PresenceReply> {
    Json(s.presence())
}

async fn ingest_presence(State(s): Shd, Json(report): Json<PresenceReport>) -> Result<Json<Value>, ApiError> {
    let update = s
        .registry
        .lock()
        .unwrap()
        .ingest(report)
        .map_err(|e| ApiError::BadRequest(e.to_string()))?;
    Ok(Json(json!({ "update": format!("{update:?}") })))
}

async fn sensor_pull(State(s): Shd, Path(id): Path<String>) -> Result<Json<Sample>, ApiError> {
    s.sensors.lock().unwrap().latest(&id).map(Json)
}

async fn subscribe(State(s): Shd, Path(id): Path<String>, Json(req): Json<SubscribeRequest>) -> Result<Json<SubscribeReply>, ApiError> {
    let url = reqwest::Url::parse(&req.callback).map_err(|e| ApiError::BadRequest(format!("callback: {e}")))?;
    if !matches!(url.scheme(), "http" | "https") {
        return Err(ApiError::BadRequest("callback must be an http url".into()));
    }
    let subscription_id = s.sensors.lock().unwrap().subscribe(&id, &req.callback)?;
    Ok(Json(SubscribeReply { subscription_id }))
}

async fn unsubscribe(State(s): Shd, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    s.sensors.lock().unwrap().unsubscribe(&id)?;
    Ok(Json(json!({ "unsubscribed": id })))
}

async fn actuate(State(s): Shd, Path(id): Path<String>, Json(req): Json<ActuateRequest>) -> Result<Json<ActuateReply>, ApiError> {
    s.record_actuation(&id, req).map(Json)
}

async fn actuation_log(State(s): Shd, Path(id): Path<String>) -> Result<Json<Vec<ActuationRecord>>, ApiError> {
    s.actuations
        .lock()
        .unwrap()
        .get(&id)
        .cloned()
        .map(Json)
        .ok_or(ApiError::UnknownActuator(id))
}
