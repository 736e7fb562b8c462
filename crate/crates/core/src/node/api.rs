//! Wire types of the controller and service HTTP APIs.

use std::net::SocketAddr;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartRequest {
    pub image_ref: String,
    /// Service endpoint of the node owning the sensors and actuators.
    pub source_service: SocketAddr,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensor_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actuator_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopRequest {
    pub image_ref: String,
    pub source_service: SocketAddr,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadHandle {
    pub image_ref: String,
    pub source_service_address: SocketAddr,
    pub runtime_id: String,
    pub started_at: u64,
    /// Where the workload receives pushed samples.
    pub callback: String,
    /// Subscription held at the source on the workload's behalf.
    pub subscription_id: String,
}

impl WorkloadHandle {
    pub fn descriptor(&self) -> String {
        format!("{}@{}", self.image_ref, self.source_service_address)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bandwidth {
    pub uplink_mbps: f64,
    pub downlink_mbps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeState {
    pub node_id: String,
    pub battery_pct: f64,
    pub cpu_pct: f64,
    pub mem_pct: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<Bandwidth>,
    pub workloads: usize,
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub sensor_id: String,
    pub seq: u64,
    pub timestamp_ms: u64,
    pub payload_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubscribeRequest {
    pub callback: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubscribeReply {
    pub subscription_id: String,
}

/// Reply of a workload to a pushed sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryAck {
    /// False when the workload was still busy and dropped the sample.
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActuateRequest {
    pub command: String,
    #[serde(default)]
    pub workload_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_seq: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_timestamp_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActuationRecord {
    pub actuator_id: String,
    pub command: String,
    pub workload_id: String,
    pub sample_seq: Option<u64>,
    pub sample_timestamp_ms: Option<u64>,
    pub received_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActuateReply {
    pub completed_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ApiError {
    #[error("{0}")]
    Refused(String),
    #[error("runtime failure: {0}")]
    RuntimeFailure(String),
    #[error("no workload {0}")]
    NotFound(String),
    #[error("unknown sensor {0}")]
    UnknownSensor(String),
    #[error("sensor {0} has not produced a sample yet")]
    NoSampleYet(String),
    #[error("unknown subscription {0}")]
    UnknownSubscription(String),
    #[error("unknown actuator {0}")]
    UnknownActuator(String),
    #[error("bad request: {0}")]
    BadRequest(String),
}

impl ApiError {
    pub fn kind(&self) -> &'static str {
        match self {
            ApiError::Refused(_) => "Refused",
            ApiError::RuntimeFailure(_) => "RuntimeFailure",
            ApiError::NotFound(_) => "NotFound",
            ApiError::UnknownSensor(_) => "UnknownSensor",
            ApiError::NoSampleYet(_) => "NoSampleYet",
            ApiError::UnknownSubscription(_) => "UnknownSubscription",
            ApiError::UnknownActuator(_) => "UnknownActuator",
            ApiError::BadRequest(_) => "BadRequest",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::Refused(_) | ApiError::NoSampleYet(_) => StatusCode::CONFLICT,
            ApiError::RuntimeFailure(_) => StatusCode::BAD_GATEWAY,
            ApiError::NotFound(_)
            | ApiError::UnknownSensor(_)
            | ApiError::UnknownSubscription(_)
            | ApiError::UnknownActuator(_) => StatusCode::NOT_FOUND,
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
        }
    }

    /// Rebuilds the error from a response body.
    pub fn from_body(body: &ErrorBody) -> Self {
        let m = body.message.clone();
        match body.error.as_str() {
            "Refused" => ApiError::Refused(m),
            "RuntimeFailure" => ApiError::RuntimeFailure(m),
            "NotFound" => ApiError::NotFound(m),
            "UnknownSensor" => ApiError::UnknownSensor(m),
            "NoSampleYet" => ApiError::NoSampleYet(m),
            "UnknownSubscription" => ApiError::UnknownSubscription(m),
            "UnknownActuator" => ApiError::UnknownActuator(m),
            _ => ApiError::BadRequest(m),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.kind().to_string(),
            message: self.to_string(),
        };
        (self.status(), Json(body)).into_response()
    }
}
